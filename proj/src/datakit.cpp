#include "streamline/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "streamline/io.hpp"
#include "streamline/parallel.hpp"
#include "streamline/rng.hpp"

namespace streamline {

namespace {

using Kind = FormatError::Kind;

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t decode_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void append_floats(std::vector<unsigned char>& out, std::span<const float> values) {
    const std::size_t off = out.size();
    out.resize(off + values.size() * sizeof(float));
    std::memcpy(out.data() + off, values.data(), values.size() * sizeof(float));
}

HiddenPairDataset header_from_json(const json& h, const std::string& path, std::size_t& count) {
    try {
        if (h.at("version").get<int>() != kPairFormatVersion) {
            throw FormatError(Kind::Manifest, path + ": unsupported pair file version " + h.at("version").dump());
        }
        HiddenPairDataset ds;
        ds.d_model = h.at("d_model").get<std::size_t>();
        ds.block_start = h.at("block").at(0).get<std::size_t>();
        ds.block_n = h.at("block").at(1).get<std::size_t>();
        ds.model_fingerprint = h.at("model_fingerprint").get<std::string>();
        ds.source_corpus = h.value("source_corpus", std::string());
        count = h.at("count").get<std::size_t>();
        if (ds.d_model == 0) throw FormatError(Kind::Manifest, path + ": d_model must be positive");
        return ds;
    } catch (const json::exception& e) {
        throw FormatError(Kind::Manifest, path + ": malformed pair header: " + e.what());
    }
}

} // namespace

void Corpus::validate() const {
    if (documents.empty()) throw DataError("corpus '" + id + "' has no documents");
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (documents[i].domain.empty()) {
            throw DataError("corpus '" + id + "' document " + std::to_string(i) + " has an empty domain tag");
        }
    }
}

Corpus load_corpus_jsonl(const std::filesystem::path& path, std::string id) {
    Corpus corpus;
    corpus.id = id.empty() ? path.stem().string() : std::move(id);
    std::istringstream lines(read_text(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            corpus.documents.push_back({j.at("domain").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw FormatError(Kind::Manifest, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    corpus.validate();
    return corpus;
}

void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::string out;
    for (const Document& d : corpus.documents) {
        out += json{{"domain", d.domain}, {"text", d.text}}.dump(-1, ' ', false, json::error_handler_t::replace);
        out += '\n';
    }
    write_text(path, out);
}

void DomainMix::validate() const {
    if (weights.empty()) throw ConfigError("domain mix is empty");
    double total = 0.0;
    for (const auto& [tag, w] : weights) {
        if (tag.empty()) throw ConfigError("domain mix has an empty domain tag");
        if (!(w >= 0.0)) throw ConfigError("domain mix weight for '" + tag + "' is negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("domain mix proportions sum to " + std::to_string(total) + ", expected 1");
    }
}

DomainMix DomainMix::pruning_default() {
    return DomainMix{{{"CC", 0.361},
                      {"GitHub", 0.008},
                      {"Book", 0.091},
                      {"StackExchange", 0.010},
                      {"Wiki", 0.031},
                      {"ArXiv", 0.007},
                      {"C4", 0.492}}};
}

json mix_to_json(const DomainMix& mix) { return json(mix.weights); }

DomainMix mix_from_json(const json& j) {
    try {
        DomainMix mix{j.get<std::map<std::string, double>>()};
        mix.validate();
        return mix;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid domain mix: ") + e.what());
    }
}

std::map<std::string, std::size_t> mix_counts(const DomainMix& mix, std::size_t n) {
    mix.validate();
    struct Share {
        std::string tag;
        std::size_t floor;
        double frac;
    };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (const auto& [tag, w] : mix.weights) {
        double quota = static_cast<double>(n) * w;
        // Products such as 1000 * 0.361 land one ulp off the integer.
        const double nearest = std::round(quota);
        if (std::abs(quota - nearest) <= 1e-9 * std::max(1.0, quota)) quota = nearest;
        const auto fl = static_cast<std::size_t>(std::floor(quota));
        shares.push_back({tag, fl, quota - static_cast<double>(fl)});
        assigned += fl;
    }
    std::vector<std::size_t> order(shares.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return shares[a].frac > shares[b].frac; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++shares[order[i % order.size()]].floor;

    std::map<std::string, std::size_t> counts;
    for (const Share& s : shares) counts[s.tag] = s.floor;
    return counts;
}

Corpus sample_mix(const Corpus& corpus, const DomainMix& mix, std::size_t n_docs, std::uint64_t seed) {
    corpus.validate();
    const auto counts = mix_counts(mix, n_docs);
    std::map<std::string, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) by_domain[corpus.documents[i].domain].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> picked;
    picked.reserve(n_docs);
    for (const auto& [tag, want] : counts) {
        auto it = by_domain.find(tag);
        const std::size_t have = it == by_domain.end() ? 0 : it->second.size();
        if (it == by_domain.end() && want == 0) continue;
        if (have < want) {
            throw DataError("domain '" + tag + "' is underfull: need " + std::to_string(want) + " documents, corpus has " +
                            std::to_string(have) + " (short by " + std::to_string(want - have) + ")");
        }
        // Partial Fisher-Yates: the first `want` slots become the sample.
        std::vector<std::size_t>& pool = it->second;
        for (std::size_t k = 0; k < want; ++k) {
            const std::size_t j = k + rng.below(pool.size() - k);
            std::swap(pool[k], pool[j]);
            picked.push_back(pool[k]);
        }
    }
    rng.shuffle(std::span<std::size_t>(picked));

    Corpus out;
    out.id = corpus.id + "/mix-n" + std::to_string(n_docs) + "-s" + std::to_string(seed);
    out.documents.reserve(picked.size());
    for (std::size_t i : picked) out.documents.push_back(corpus.documents[i]);
    return out;
}

std::vector<int> tokenize(std::string_view text, std::size_t max_len) {
    std::vector<int> ids;
    if (max_len == 0) return ids;
    ids.reserve(std::min(text.size() + 1, max_len));
    ids.push_back(kBosId);
    for (char c : text) {
        if (ids.size() >= max_len) break;
        ids.push_back(static_cast<int>(static_cast<unsigned char>(c)) + kByteOffset);
    }
    return ids;
}

std::string detokenize(std::span<const int> ids) {
    std::string out;
    for (int id : ids) {
        if (id >= kByteOffset && id < static_cast<int>(kByteVocab)) out.push_back(static_cast<char>(id - kByteOffset));
    }
    return out;
}

std::size_t HiddenPairDataset::token_count() const {
    std::size_t n = 0;
    for (const HiddenPair& p : pairs) n += p.input.rows();
    return n;
}

HiddenPairDataset capture_pairs(const TransformerModel& model, const Corpus& corpus, std::size_t start, std::size_t n,
                                std::size_t limit, std::size_t threads) {
    if (n < 1 || start + n > model.n_layers()) {
        throw ContractError("capture_pairs: block (start=" + std::to_string(start) + ", n=" + std::to_string(n) +
                            ") is invalid for a model with " + std::to_string(model.n_layers()) + " layers");
    }
    HiddenPairDataset ds;
    ds.d_model = model.config.d_model;
    ds.block_start = start;
    ds.block_n = n;
    ds.source_corpus = corpus.id;
    ds.model_fingerprint = model_fingerprint(model);
    const std::size_t count = std::min(limit, corpus.documents.size());
    if (count == 0) {
        std::cerr << "warning: capture_pairs produced an empty dataset (limit=" << limit << ")\n";
        return ds;
    }
    ds.pairs.resize(count);
    ForwardOptions opts;
    opts.capture = {start, start + n};
    opts.stop_at = start + n;
    parallel_for(count, threads, [&](std::size_t i) {
        const std::vector<int> ids = tokenize(corpus.documents[i].text, model.config.max_seq_len);
        ForwardResult r = forward(model, ids, opts);
        ds.pairs[i] = HiddenPair{std::move(*r.trace.taps[start]), std::move(*r.trace.taps[start + n])};
    });
    return ds;
}

void save_pairs(const HiddenPairDataset& ds, const std::filesystem::path& path) {
    const json header{{"version", kPairFormatVersion},
                      {"d_model", ds.d_model},
                      {"block", {ds.block_start, ds.block_n}},
                      {"count", ds.pairs.size()},
                      {"model_fingerprint", ds.model_fingerprint},
                      {"source_corpus", ds.source_corpus}};
    const std::string text = header.dump();
    std::vector<unsigned char> out;
    append_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const HiddenPair& p : ds.pairs) {
        if (p.input.shape() != p.target.shape() || p.input.cols() != ds.d_model || p.input.rank() != 2) {
            throw DimensionError("pair shapes " + shape_string(p.input.shape()) + " / " +
                                 shape_string(p.target.shape()) + " do not match d_model " +
                                 std::to_string(ds.d_model));
        }
        append_u32(out, static_cast<std::uint32_t>(p.input.rows()));
        append_floats(out, p.input.data());
        append_floats(out, p.target.data());
    }
    append_u32(out, crc32_of(out));
    write_file(path, out);
}

HiddenPairDataset load_pairs(const std::filesystem::path& path, const std::optional<std::string>& expected_fingerprint,
                             FingerprintPolicy policy) {
    PairReader reader(path);
    HiddenPairDataset ds = reader.header();
    ds.pairs.reserve(reader.count());
    HiddenPair pair;
    while (reader.next(pair)) ds.pairs.push_back(std::move(pair));

    if (expected_fingerprint && *expected_fingerprint != ds.model_fingerprint && policy != FingerprintPolicy::Ignore) {
        const std::string msg = path.string() + ": model fingerprint " + ds.model_fingerprint +
                                " does not match expected " + *expected_fingerprint;
        if (policy == FingerprintPolicy::Fail) throw FormatError(Kind::Fingerprint, msg);
        std::cerr << "warning: " << msg << "\n";
    }
    return ds;
}

PairReader::PairReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw FormatError(Kind::Io, "cannot open " + path_);
    std::error_code ec;
    file_size_ = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError(Kind::Io, "cannot stat " + path_);
    crc_ = crc32(0L, Z_NULL, 0);

    unsigned char len_bytes[4];
    read_exact(len_bytes, 4);
    const std::uint32_t header_len = decode_u32(len_bytes);
    if (header_len == 0 || header_len > file_size_ - offset_) {
        throw FormatError(Kind::Truncated, path_ + ": header length " + std::to_string(header_len) +
                                               " exceeds file size " + std::to_string(file_size_));
    }
    std::string text(header_len, '\0');
    read_exact(text.data(), header_len);
    json h;
    try {
        h = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(Kind::Manifest, path_ + ": pair header is not valid JSON: " + e.what());
    }
    header_ = header_from_json(h, path_, count_);
}

void PairReader::read_exact(void* dst, std::size_t n) {
    if (n > file_size_ - offset_) {
        throw FormatError(Kind::Truncated, path_ + ": unexpected end of file at byte " + std::to_string(offset_) +
                                               " (need " + std::to_string(n) + " more bytes)");
    }
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError(Kind::Io, path_ + ": read failed at byte " + std::to_string(offset_));
    crc_ = crc32(crc_, static_cast<const unsigned char*>(dst), static_cast<uInt>(n));
    offset_ += n;
}

bool PairReader::next(HiddenPair& out) {
    if (read_ == count_) return false;
    const std::size_t d = header_.d_model;
    unsigned char len_bytes[4];
    read_exact(len_bytes, 4);
    const std::uint32_t L = decode_u32(len_bytes);
    const std::uint64_t need = static_cast<std::uint64_t>(L) * d * sizeof(float) * 2;
    if (L == 0 || need > file_size_ - offset_) {
        throw FormatError(Kind::Truncated, path_ + ": record " + std::to_string(read_) + " has corrupt length header " +
                                               std::to_string(L) + " at byte " + std::to_string(offset_ - 4));
    }
    out.input = Tensor({L, d});
    out.target = Tensor({L, d});
    read_exact(out.input.data().data(), L * d * sizeof(float));
    read_exact(out.target.data().data(), L * d * sizeof(float));
    ++read_;
    if (read_ == count_) {
        const auto expected = static_cast<std::uint32_t>(crc_);
        unsigned char crc_bytes[4];
        read_exact(crc_bytes, 4);
        if (decode_u32(crc_bytes) != expected) throw FormatError(Kind::Checksum, path_ + ": crc32 trailer mismatch");
        if (offset_ != file_size_) {
            throw FormatError(Kind::BlobMismatch, path_ + ": " + std::to_string(file_size_ - offset_) +
                                                      " trailing bytes after the crc32 trailer");
        }
    }
    return true;
}

} // namespace streamline
