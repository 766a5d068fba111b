#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "streamline/model.hpp"
#include "streamline/tensor.hpp"

namespace streamline {

struct Document {
    std::string domain;
    std::string text;
};

struct Corpus {
    std::string id;
    std::vector<Document> documents;

    void validate() const;
};

// JSON-lines, one {"domain": ..., "text": ...} object per line.
Corpus load_corpus_jsonl(const std::filesystem::path& path, std::string id = {});
void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

struct DomainMix {
    std::map<std::string, double> weights;

    // All proportions >= 0 and summing to 1 within 1e-9.
    void validate() const;

    // Domain proportions used for the pruning/replacement data: CC 36.1%,
    // GitHub 0.8%, Book 9.1%, StackExchange 1.0%, Wiki 3.1%, ArXiv 0.7%,
    // C4 49.2%.
    static DomainMix pruning_default();
};

nlohmann::json mix_to_json(const DomainMix& mix);
DomainMix mix_from_json(const nlohmann::json& j);

// Per-domain document counts for n draws by largest-remainder rounding:
// floor(n*w) each, then the leftover units go to the largest fractional
// parts (ties -> domain name order). Counts always sum to n.
std::map<std::string, std::size_t> mix_counts(const DomainMix& mix, std::size_t n);

// Draws mix_counts(...) documents per domain uniformly without replacement,
// then shuffles the result. Deterministic in (corpus, mix, n, seed).
Corpus sample_mix(const Corpus& corpus, const DomainMix& mix, std::size_t n_docs, std::uint64_t seed);

// Byte-level vocabulary: 0 pad, 1 bos, 2 eos, byte b -> b + 3 (259 ids).
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kByteOffset = 3;
inline constexpr std::size_t kByteVocab = 259;

// [bos] + bytes, truncated to max_len ids.
std::vector<int> tokenize(std::string_view text, std::size_t max_len);
// Drops special ids.
std::string detokenize(std::span<const int> ids);

struct HiddenPair {
    Tensor input;   // [L x d], stream entering the block
    Tensor target;  // [L x d], stream leaving the block

    friend bool operator==(const HiddenPair&, const HiddenPair&) = default;
};

struct HiddenPairDataset {
    std::size_t d_model = 0;
    std::size_t block_start = 0;
    std::size_t block_n = 0;
    std::vector<HiddenPair> pairs;
    std::string source_corpus;
    std::string model_fingerprint;

    std::size_t token_count() const;
    friend bool operator==(const HiddenPairDataset&, const HiddenPairDataset&) = default;
};

// Records (tap[start], tap[start+n]) for the first `limit` documents in
// corpus order, each tokenized to the model's max_seq_len. limit == 0
// returns an empty dataset with a warning on stderr.
HiddenPairDataset capture_pairs(const TransformerModel& model, const Corpus& corpus, std::size_t start, std::size_t n,
                                std::size_t limit, std::size_t threads = 1);

// Pair dataset file:
//   u32 header_len | header JSON {version, d_model, block: [start, n], count,
//                                  model_fingerprint, source_corpus}
//   count x (u32 L | f32 input[L*d] | f32 target[L*d])
//   u32 crc32 of every preceding byte
// All integers and floats little-endian.
inline constexpr int kPairFormatVersion = 1;

void save_pairs(const HiddenPairDataset& dataset, const std::filesystem::path& path);

enum class FingerprintPolicy { Ignore, Warn, Fail };

// Reads and verifies the whole file (crc32 included). If `expected_fingerprint`
// is given and differs, warns or throws FormatError(Fingerprint) per policy.
HiddenPairDataset load_pairs(const std::filesystem::path& path,
                             const std::optional<std::string>& expected_fingerprint = std::nullopt,
                             FingerprintPolicy policy = FingerprintPolicy::Warn);

// Streaming access to a pair file without materialising every record.
class PairReader {
public:
    explicit PairReader(const std::filesystem::path& path);

    // Header fields; `pairs` is left empty.
    const HiddenPairDataset& header() const { return header_; }
    std::size_t count() const { return count_; }
    // Reads the next record; false once `count` records were read, at which
    // point the trailing crc32 has been verified.
    bool next(HiddenPair& out);

private:
    void read_exact(void* dst, std::size_t n);

    std::ifstream in_;
    std::string path_;
    HiddenPairDataset header_;
    std::size_t count_ = 0;
    std::size_t read_ = 0;
    std::uint64_t offset_ = 0;
    std::uint64_t file_size_ = 0;
    unsigned long crc_ = 0;
};

} // namespace streamline
