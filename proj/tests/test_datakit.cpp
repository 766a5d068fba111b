#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "streamline/datakit.hpp"
#include "streamline/error.hpp"
#include "streamline/io.hpp"

using namespace streamline;
using namespace fixtures;

namespace {

Corpus two_domain_corpus(std::size_t per_domain) {
    Corpus c;
    c.id = "ab";
    for (std::size_t i = 0; i < per_domain; ++i) {
        c.documents.push_back({"A", "alpha " + std::to_string(i)});
        c.documents.push_back({"B", "beta " + std::to_string(i)});
    }
    return c;
}

FormatError::Kind load_error_kind(const std::filesystem::path& path) {
    try {
        load_pairs(path);
    } catch (const FormatError& e) {
        return e.kind();
    }
    FAIL("load_pairs accepted a corrupt file");
    return FormatError::Kind::Io;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t u32_at(const std::string& bytes, std::size_t off) {
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(bytes[off + k]);
    return v;
}

} // namespace

TEST_CASE("tokenizer") {
    CHECK(tokenize("", 16) == std::vector<int>{kBosId});
    CHECK(tokenize("AB", 16) == std::vector<int>{kBosId, 68, 69});
    CHECK(tokenize("ABCDEF", 3) == std::vector<int>{kBosId, 68, 69});
    CHECK(detokenize(std::vector<int>{kBosId, 68, 69, kEosId, kPadId}) == "AB");

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::string s(rng.below(40), '\0');
        for (char& ch : s) ch = static_cast<char>(rng.below(256));
        const std::vector<int> ids = tokenize(s, 64);
        CHECK(ids.size() == s.size() + 1);
        for (int id : ids) CHECK((id >= 1 && id < static_cast<int>(kByteVocab)));
        CHECK(detokenize(ids) == s);
    }
}

TEST_CASE("domain mixes") {
    SUBCASE("largest-remainder counts for the pruning mix") {
        const DomainMix mix = DomainMix::pruning_default();
        mix.validate();
        using Counts = std::map<std::string, std::size_t>;
        CHECK(mix_counts(mix, 1000) == Counts{{"ArXiv", 7}, {"Book", 91}, {"C4", 492}, {"CC", 361},
                                              {"GitHub", 8}, {"StackExchange", 10}, {"Wiki", 31}});
        CHECK(mix_counts(mix, 100) == Counts{{"ArXiv", 1}, {"Book", 9}, {"C4", 49}, {"CC", 36},
                                             {"GitHub", 1}, {"StackExchange", 1}, {"Wiki", 3}});
        CHECK(mix_counts(mix, 7) == Counts{{"ArXiv", 0}, {"Book", 1}, {"C4", 3}, {"CC", 3},
                                           {"GitHub", 0}, {"StackExchange", 0}, {"Wiki", 0}});
        for (std::size_t n : {0u, 1u, 13u, 499u, 30000u}) {
            std::size_t total = 0;
            for (const auto& [tag, k] : mix_counts(mix, n)) {
                total += k;
                CHECK(std::abs(static_cast<double>(k) - n * mix.weights.at(tag)) < 1.0);
            }
            CHECK(total == n);
        }
    }
    SUBCASE("ties go to domain name order") {
        const DomainMix thirds{{{"x", 1.0 / 3}, {"y", 1.0 / 3}, {"z", 1.0 / 3}}};
        CHECK(mix_counts(thirds, 4) == std::map<std::string, std::size_t>{{"x", 2}, {"y", 1}, {"z", 1}});
        CHECK(mix_counts(thirds, 5) == std::map<std::string, std::size_t>{{"x", 2}, {"y", 2}, {"z", 1}});
    }
    SUBCASE("invalid mixes") {
        CHECK_THROWS_AS((DomainMix{{{"A", 0.5}, {"B", 0.4}}}.validate()), ConfigError);
        CHECK_THROWS_AS((DomainMix{{{"A", 1.5}, {"B", -0.5}}}.validate()), ConfigError);
        CHECK_THROWS_AS(DomainMix{}.validate(), ConfigError);
        CHECK_NOTHROW((DomainMix{{{"A", 0.1}, {"B", 0.2}, {"C", 0.7}}}.validate()));
    }
    SUBCASE("JSON round trip") {
        const DomainMix mix = DomainMix::pruning_default();
        CHECK(mix_from_json(json::parse(mix_to_json(mix).dump())).weights == mix.weights);
        CHECK_THROWS_AS(mix_from_json(json{{"A", "half"}}), ConfigError);
    }
}

TEST_CASE("sample_mix") {
    const Corpus corpus = two_domain_corpus(10);
    SUBCASE("single domain") {
        const Corpus s = sample_mix(corpus, DomainMix{{{"A", 1.0}}}, 3, 1);
        CHECK(s.documents.size() == 3);
        for (const auto& d : s.documents) CHECK(d.domain == "A");
    }
    SUBCASE("even split, without replacement, reproducible") {
        const DomainMix half{{{"A", 0.5}, {"B", 0.5}}};
        const Corpus s = sample_mix(corpus, half, 4, 7);
        std::map<std::string, int> per;
        for (const auto& d : s.documents) ++per[d.domain];
        CHECK(per["A"] == 2);
        CHECK(per["B"] == 2);

        const Corpus all = sample_mix(corpus, half, 20, 7);
        std::set<std::string> texts;
        for (const auto& d : all.documents) texts.insert(d.text);
        CHECK(texts.size() == 20);

        const Corpus again = sample_mix(corpus, half, 4, 7);
        CHECK(again.id == s.id);
        for (std::size_t i = 0; i < 4; ++i) CHECK(again.documents[i].text == s.documents[i].text);
        bool differs = false;
        for (std::uint64_t seed = 8; seed < 20 && !differs; ++seed) {
            const Corpus other = sample_mix(corpus, half, 4, seed);
            for (std::size_t i = 0; i < 4; ++i) differs |= other.documents[i].text != s.documents[i].text;
        }
        CHECK(differs);
    }
    SUBCASE("underfull and missing domains") {
        try {
            sample_mix(corpus, DomainMix{{{"A", 1.0}}}, 12, 1);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("'A'") != std::string::npos);
            CHECK(msg.find("12") != std::string::npos);
        }
        CHECK_THROWS_AS(sample_mix(corpus, DomainMix{{{"C", 1.0}}}, 1, 1), DataError);
    }
    SUBCASE("pruning mix over the synthetic corpus") {
        const Corpus syn = synthetic_corpus(600, 4);
        const Corpus s = sample_mix(syn, DomainMix::pruning_default(), 1000, 2);
        std::map<std::string, std::size_t> per;
        for (const auto& d : s.documents) ++per[d.domain];
        CHECK(per == mix_counts(DomainMix::pruning_default(), 1000));
    }
}

TEST_CASE("corpus JSONL round trip") {
    const auto dir = temp_dir("corpus");
    Corpus c = two_domain_corpus(3);
    c.documents.push_back({"A", "line\nbreak \"quoted\" \xc3\xa9"});
    save_corpus_jsonl(c, dir / "c.jsonl");
    const Corpus back = load_corpus_jsonl(dir / "c.jsonl", "ab");
    REQUIRE(back.documents.size() == c.documents.size());
    for (std::size_t i = 0; i < c.documents.size(); ++i) {
        CHECK(back.documents[i].domain == c.documents[i].domain);
        CHECK(back.documents[i].text == c.documents[i].text);
    }
    write_text(dir / "bad.jsonl", "{\"domain\": \"A\", \"text\": \"ok\"}\n{not json}\n");
    CHECK_THROWS_AS(load_corpus_jsonl(dir / "bad.jsonl"), DataError);
    CHECK_THROWS_AS(Corpus{}.validate(), DataError);
    CHECK_THROWS_AS((Corpus{"x", {{"", "text"}}}.validate()), DataError);
}

TEST_CASE("capture_pairs") {
    ModelConfig c = small_config(6, 259);
    const TransformerModel m = lively_model(c, 51, 0.2f);
    const Corpus corpus = synthetic_corpus(3, 9);

    SUBCASE("pairs are the forward taps, bit for bit") {
        const HiddenPairDataset ds = capture_pairs(m, corpus, 1, 3, 10);
        CHECK(ds.pairs.size() == 10);
        CHECK(ds.block_start == 1);
        CHECK(ds.block_n == 3);
        CHECK(ds.d_model == c.d_model);
        CHECK(ds.model_fingerprint == model_fingerprint(m));
        CHECK(ds.source_corpus == corpus.id);
        for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
            const std::vector<int> ids = tokenize(corpus.documents[i].text, c.max_seq_len);
            ForwardOptions o;
            o.capture_all = true;
            const ForwardResult r = forward(m, ids, o);
            CHECK(ds.pairs[i].input.bit_equal(*r.trace.taps[1]));
            CHECK(ds.pairs[i].target.bit_equal(*r.trace.taps[4]));
            CHECK(ds.pairs[i].input.rows() == ids.size());
        }
        CHECK(ds.token_count() > 0);
    }
    SUBCASE("targets are the intervening layers applied to the input") {
        const HiddenPairDataset ds = capture_pairs(m, corpus, 2, 2, 5);
        for (const HiddenPair& p : ds.pairs) {
            oracle::Mat x = oracle::to_mat(p.input);
            for (std::size_t l = 2; l < 4; ++l) x = oracle::layer(x, to_oracle(m.layers[l]), c.n_heads, c.norm_eps).out;
            const oracle::Vec target = to_vec(p.target);
            CHECK(oracle::relative_error(target, x.v) < 1e-5);
        }
    }
    SUBCASE("zero-effect block gives identical input and target") {
        TransformerModel z = m;
        make_zero_effect(z, 3);
        const HiddenPairDataset ds = capture_pairs(z, corpus, 3, 1, 6);
        for (const HiddenPair& p : ds.pairs) CHECK(p.target.bit_equal(p.input));
    }
    SUBCASE("threads do not change the result") {
        CHECK(capture_pairs(m, corpus, 0, 2, 12, 1) == capture_pairs(m, corpus, 0, 2, 12, 3));
    }
    SUBCASE("edge cases") {
        CHECK(capture_pairs(m, corpus, 0, 1, 0).pairs.empty());
        CHECK(capture_pairs(m, corpus, 0, 6, 1000).pairs.size() == corpus.documents.size());
        CHECK_THROWS_AS(capture_pairs(m, corpus, 4, 3, 1), ContractError);
        CHECK_THROWS_AS(capture_pairs(m, corpus, 0, 0, 1), ContractError);
    }
}

TEST_CASE("pair files") {
    const auto dir = temp_dir("pairs");
    ModelConfig c = small_config(4, 259);
    const TransformerModel m = lively_model(c, 52, 0.2f);
    const HiddenPairDataset ds = capture_pairs(m, synthetic_corpus(40, 3), 1, 2, 200);
    const auto path = dir / "pairs.bin";
    save_pairs(ds, path);

    SUBCASE("bit-exact round trip and streaming") {
        CHECK(load_pairs(path) == ds);
        PairReader reader(path);
        CHECK(reader.count() == ds.pairs.size());
        CHECK(reader.header().model_fingerprint == ds.model_fingerprint);
        HiddenPair p;
        std::size_t i = 0;
        while (reader.next(p)) CHECK(p == ds.pairs.at(i++));
        CHECK(i == ds.pairs.size());
    }
    SUBCASE("file size is header plus records plus trailer") {
        const std::string bytes = slurp(path);
        const std::size_t header_len = u32_at(bytes, 0);
        std::size_t records = 0;
        for (const HiddenPair& p : ds.pairs) records += 4 + 2 * p.input.rows() * c.d_model * 4;
        CHECK(bytes.size() == 4 + header_len + records + 4);
        CHECK(ds.token_count() * c.d_model * 8 + 4 * ds.pairs.size() == records);
    }
    SUBCASE("corruption is reported by kind") {
        const std::string bytes = slurp(path);
        const std::size_t header_len = u32_at(bytes, 0);

        std::string bad = bytes;
        bad[4 + header_len] = '\xff';  // first record length
        bad[4 + header_len + 3] = '\x7f';
        spit(dir / "len.bin", bad);
        CHECK(load_error_kind(dir / "len.bin") == FormatError::Kind::Truncated);

        bad = bytes;
        bad[3] = '\x7f';
        spit(dir / "hdr.bin", bad);
        CHECK(load_error_kind(dir / "hdr.bin") == FormatError::Kind::Truncated);

        bad = bytes;
        bad[5] = '#';
        spit(dir / "json.bin", bad);
        CHECK(load_error_kind(dir / "json.bin") == FormatError::Kind::Manifest);

        bad = bytes;
        bad[bytes.size() / 2] ^= 0x10;
        spit(dir / "flip.bin", bad);
        CHECK(load_error_kind(dir / "flip.bin") == FormatError::Kind::Checksum);

        spit(dir / "short.bin", bytes.substr(0, bytes.size() - 9));
        CHECK(load_error_kind(dir / "short.bin") == FormatError::Kind::Truncated);

        spit(dir / "long.bin", bytes + "xx");
        CHECK(load_error_kind(dir / "long.bin") == FormatError::Kind::BlobMismatch);

        CHECK(load_error_kind(dir / "missing.bin") == FormatError::Kind::Io);
    }
    SUBCASE("fingerprint policy") {
        TransformerModel other = m;
        other.layers[0].wq[0] += 1e-3f;
        const std::string fp = model_fingerprint(other);
        CHECK(fp != ds.model_fingerprint);
        CHECK(load_pairs(path, fp, FingerprintPolicy::Ignore) == ds);
        CHECK(load_pairs(path, fp, FingerprintPolicy::Warn) == ds);
        try {
            load_pairs(path, fp, FingerprintPolicy::Fail);
            FAIL("expected a fingerprint error");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatError::Kind::Fingerprint);
        }
        CHECK(load_pairs(path, ds.model_fingerprint, FingerprintPolicy::Fail) == ds);
    }
    SUBCASE("mismatched pair shapes are rejected on save") {
        HiddenPairDataset bad = ds;
        bad.pairs[0].target = Tensor({1, c.d_model});
        CHECK_THROWS_AS(save_pairs(bad, dir / "bad.bin"), DimensionError);
    }
}
