#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamline/model.hpp"

namespace streamline {

struct McSample {
    std::string question;
    std::vector<std::string> choices;  // k >= 2
    std::size_t answer = 0;
};

struct ClassificationTask {
    std::string name;
    std::vector<McSample> samples;

    void validate() const;
};

// JSON-lines {question, choices: [...], answer: int}. The task name
// defaults to the file stem.
ClassificationTask load_task_jsonl(const std::filesystem::path& path, std::string name = {});
void save_task_jsonl(const ClassificationTask& task, const std::filesystem::path& path);

struct EvalRecord {
    std::size_t sample_id = 0;
    std::vector<double> ppl_dense;
    std::vector<double> ppl_pruned;
    std::size_t pred_dense = 0;
    std::size_t pred_pruned = 0;
    std::size_t gold = 0;
    double ppl_mean_dense = 0.0;
    double std_dense = 0.0;
};

struct Confusion {
    std::size_t tp = 0, fn = 0, fp = 0, tn = 0;

    std::size_t total() const { return tp + fn + fp + tn; }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct StabilityReport {
    std::string task;
    Confusion counts;
    double accuracy_dense = 0.0;   // fraction in [0, 1]
    double accuracy_pruned = 0.0;
    double stability = 0.0;
    std::optional<double> rp;      // percent; empty when dense accuracy is 0

    friend bool operator==(const StabilityReport&, const StabilityReport&) = default;
};

// Question bytes followed by choice bytes, [bos]-prefixed. When the pair
// exceeds max_len, bytes are dropped from the left of the question only.
std::vector<int> choice_tokens(const std::string& question, const std::string& choice, std::size_t max_len);

// PPL of every (sample, choice) sequence.
std::vector<std::vector<double>> choice_ppl(const TransformerModel& model, const ClassificationTask& task,
                                            std::size_t threads = 1);

// Index of the smallest value; ties go to the lowest index.
std::size_t argmin_choice(const std::vector<double>& ppl);

// Sample standard deviation (k - 1 denominator).
double ppl_std(const std::vector<double>& ppl);

// std_normalize divides the std by the mean PPL of the sample.
EvalRecord make_record(std::size_t sample_id, std::vector<double> ppl_dense, std::vector<double> ppl_pruned,
                       std::size_t gold, bool std_normalize = false);

Confusion confusion_partition(const std::vector<EvalRecord>& records);

// sum exp(std_i) [i consistent] / sum exp(std_i), over all records.
double stability(const std::vector<EvalRecord>& records);

// 100 * pruned / dense.
double retained_performance(double avg_dense, double avg_pruned);

struct ReportOptions {
    bool std_normalize = false;
    std::size_t threads = 1;
};

struct EvalSummary {
    std::vector<StabilityReport> per_task;
    StabilityReport macro;  // unweighted mean over tasks; rp from the mean accuracies
    std::vector<std::vector<EvalRecord>> records;
};

EvalSummary report(const std::vector<ClassificationTask>& tasks, const TransformerModel& dense,
                   const TransformerModel& pruned, const ReportOptions& options = {});

nlohmann::json summary_to_json(const EvalSummary& summary);
// Per-task reports come back in task-name order, without records. Throws
// DataError on a malformed summary.
EvalSummary summary_from_json(const nlohmann::json& j);
// One row per task plus a "macro" row: task, acc_dense, acc_pruned, rp,
// stability, tp, fn, fp, tn.
std::string summary_to_csv(const EvalSummary& summary);

} // namespace streamline
