#pragma once

// Stage implementations behind the `streamline` command line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "streamline/datakit.hpp"
#include "streamline/io.hpp"
#include "streamline/pruner.hpp"
#include "streamline/replacement.hpp"
#include "streamline/trainer.hpp"

namespace streamline::cli {

namespace fs = std::filesystem;

struct ReplacementChoice {
    ReplacementKind kind = ReplacementKind::FFN;
    InitStrategy strategy = InitStrategy::Random;
    std::size_t d_inner = 0;
    bool residual = true;
};

struct PipelineConfig {
    fs::path model_path;
    fs::path corpus_path;
    std::optional<DomainMix> mix;          // none: take documents in corpus order
    std::size_t n_profile_samples = 500;
    std::size_t n_train_docs = 30000;
    double scale = 1.0;                    // multiplies the two counts above
    std::size_t prune_n = 2;
    Metric metric = Metric::Cosine;
    ReplacementChoice replacement;
    json train = json::object();           // overrides of the kind's TrainConfig defaults
    std::vector<fs::path> tasks;
    fs::path out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool std_normalize = false;
    FingerprintPolicy fingerprint_policy = FingerprintPolicy::Warn;

    std::size_t profile_samples() const;
    std::size_t train_docs() const;
    TrainConfig train_config() const;
    void validate() const;
};

// Paths inside the JSON are resolved against `base`. Missing keys keep
// their defaults; unknown keys are a ConfigError.
PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base = {});
PipelineConfig load_pipeline_config(const fs::path& path);
// out_dir and threads do not affect results and are left out.
json pipeline_config_to_json(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

std::size_t threads_from_env(std::size_t fallback = 1);

// Throws DataError naming the stage that produces `path` when it is absent.
void require_artifact(const fs::path& path, const std::string& stage);

// Records a stage in <out_dir>/manifest.json: the config hash plus digests
// of the stage's inputs and outputs.
void record_stage(const PipelineConfig& cfg, const std::string& stage, const std::vector<fs::path>& inputs,
                  const std::vector<fs::path>& outputs, const json& params);

// Digest of a file, or of every file under a directory in sorted order.
std::string artifact_digest(const fs::path& path);

// Standard artifact names under out_dir.
struct Layout {
    fs::path out;
    fs::path profile() const { return out / "profile.json"; }
    fs::path profile_csv() const { return out / "profile_layers.csv"; }
    fs::path spec() const { return out / "prune_spec.json"; }
    fs::path pruned() const { return out / "pruned"; }
    fs::path pairs() const { return out / "pairs.bin"; }
    fs::path train_report() const { return out / "train_report.json"; }
    fs::path final_model() const { return out / "final"; }
    fs::path eval_json() const { return out / "eval.json"; }
    fs::path eval_csv() const { return out / "eval.csv"; }
    fs::path ppl() const { return out / "ppl.json"; }
    fs::path compare() const { return out / "compare.json"; }
};

struct ToyInitOptions {
    fs::path out;
    std::size_t n_layers = 8;
    std::vector<std::size_t> zero_effect;
    std::size_t pretrain_steps = 150;
    std::size_t docs_per_domain = 300;
    std::size_t task_samples = 40;
    std::uint64_t seed = 7;
    bool pretrain = true;
};

void toy_init(const ToyInitOptions& options);

void cmd_profile(const PipelineConfig& cfg);
void cmd_prune(const PipelineConfig& cfg, const fs::path& profile_path);
void cmd_capture(const PipelineConfig& cfg, const fs::path& spec_path);
void cmd_train(const PipelineConfig& cfg, const fs::path& spec_path, const fs::path& pairs_path);
void cmd_eval(const PipelineConfig& cfg, const fs::path& dense_path, const fs::path& pruned_path);
void cmd_compare(const PipelineConfig& cfg, const fs::path& corpus_b);
void cmd_pipeline(const PipelineConfig& cfg);

} // namespace streamline::cli
