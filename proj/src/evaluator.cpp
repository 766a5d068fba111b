#include "streamline/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "streamline/datakit.hpp"
#include "streamline/error.hpp"
#include "streamline/io.hpp"
#include "streamline/parallel.hpp"

namespace streamline {

void ClassificationTask::validate() const {
    if (samples.empty()) throw DataError("task '" + name + "' has no samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const McSample& s = samples[i];
        if (s.choices.size() < 2) {
            throw DataError("task '" + name + "' sample " + std::to_string(i) + " has fewer than 2 choices");
        }
        if (s.answer >= s.choices.size()) {
            throw DataError("task '" + name + "' sample " + std::to_string(i) + " answer index " +
                            std::to_string(s.answer) + " out of range");
        }
    }
}

ClassificationTask load_task_jsonl(const std::filesystem::path& path, std::string name) {
    ClassificationTask task;
    task.name = name.empty() ? path.stem().string() : std::move(name);
    std::istringstream lines(read_text(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            McSample s;
            s.question = j.at("question").get<std::string>();
            s.choices = j.at("choices").get<std::vector<std::string>>();
            const long long answer = j.at("answer").get<long long>();
            if (answer < 0) throw DataError("negative answer index");
            s.answer = static_cast<std::size_t>(answer);
            task.samples.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw FormatError(FormatError::Kind::Manifest, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    task.validate();
    return task;
}

void save_task_jsonl(const ClassificationTask& task, const std::filesystem::path& path) {
    std::string out;
    for (const McSample& s : task.samples) {
        out += json{{"question", s.question}, {"choices", s.choices}, {"answer", s.answer}}.dump(
            -1, ' ', false, json::error_handler_t::replace);
        out += '\n';
    }
    write_text(path, out);
}

std::vector<int> choice_tokens(const std::string& question, const std::string& choice, std::size_t max_len) {
    if (choice.empty()) throw DataError("choice text is empty");
    // bos + choice must fit, and PPL needs at least two tokens.
    if (choice.size() + 1 > max_len) {
        throw DataError("choice of " + std::to_string(choice.size()) + " bytes does not fit max_seq_len " +
                        std::to_string(max_len));
    }
    const std::size_t room = max_len - 1 - choice.size();
    const std::size_t keep = std::min(room, question.size());
    std::string text = question.substr(question.size() - keep);
    text += choice;
    return tokenize(text, max_len);
}

std::vector<std::vector<double>> choice_ppl(const TransformerModel& model, const ClassificationTask& task,
                                            std::size_t threads) {
    task.validate();
    std::vector<std::vector<double>> out(task.samples.size());
    parallel_for(task.samples.size(), threads, [&](std::size_t i) {
        const McSample& s = task.samples[i];
        out[i].reserve(s.choices.size());
        for (const std::string& c : s.choices) {
            out[i].push_back(sentence_ppl(model, choice_tokens(s.question, c, model.config.max_seq_len)));
        }
    });
    return out;
}

std::size_t argmin_choice(const std::vector<double>& ppl) {
    if (ppl.empty()) throw ContractError("argmin_choice: no choices");
    std::size_t best = 0;
    for (std::size_t j = 1; j < ppl.size(); ++j) {
        if (ppl[j] < ppl[best]) best = j;
    }
    return best;
}

double ppl_std(const std::vector<double>& ppl) {
    if (ppl.size() < 2) throw ContractError("ppl_std: need at least 2 choices");
    double mean = 0.0;
    for (double v : ppl) mean += v;
    mean /= static_cast<double>(ppl.size());
    double ss = 0.0;
    for (double v : ppl) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(ppl.size() - 1));
}

EvalRecord make_record(std::size_t sample_id, std::vector<double> ppl_dense, std::vector<double> ppl_pruned,
                       std::size_t gold, bool std_normalize) {
    if (ppl_dense.size() != ppl_pruned.size()) throw DimensionError("make_record: choice counts differ");
    if (gold >= ppl_dense.size()) throw ContractError("make_record: gold index out of range");
    EvalRecord r;
    r.sample_id = sample_id;
    r.pred_dense = argmin_choice(ppl_dense);
    r.pred_pruned = argmin_choice(ppl_pruned);
    r.gold = gold;
    for (double v : ppl_dense) r.ppl_mean_dense += v;
    r.ppl_mean_dense /= static_cast<double>(ppl_dense.size());
    r.std_dense = ppl_std(ppl_dense);
    if (std_normalize) r.std_dense /= r.ppl_mean_dense;
    r.ppl_dense = std::move(ppl_dense);
    r.ppl_pruned = std::move(ppl_pruned);
    return r;
}

Confusion confusion_partition(const std::vector<EvalRecord>& records) {
    Confusion c;
    for (const EvalRecord& r : records) {
        const bool dense_ok = r.pred_dense == r.gold, pruned_ok = r.pred_pruned == r.gold;
        if (dense_ok && pruned_ok) ++c.tp;
        else if (dense_ok) ++c.fn;
        else if (pruned_ok) ++c.fp;
        else ++c.tn;
    }
    return c;
}

double stability(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw ContractError("stability: no records");
    double top = records.front().std_dense;
    for (const EvalRecord& r : records) {
        if (!(r.std_dense >= 0.0) || !std::isfinite(r.std_dense)) {
            throw NumericError("stability: sample " + std::to_string(r.sample_id) + " has an invalid std");
        }
        top = std::max(top, r.std_dense);
    }
    // Shifting every exponent by the max leaves the ratio unchanged and keeps
    // exp() finite for large raw-PPL stds.
    double num = 0.0, den = 0.0;
    for (const EvalRecord& r : records) {
        const double w = std::exp(r.std_dense - top);
        den += w;
        if ((r.pred_dense == r.gold) == (r.pred_pruned == r.gold)) num += w;
    }
    return num / den;
}

double retained_performance(double avg_dense, double avg_pruned) {
    if (!(avg_dense > 0.0)) throw ContractError("retained_performance: dense average must be > 0");
    return 100.0 * (avg_pruned / avg_dense);  // exactly 100 when equal
}

EvalSummary report(const std::vector<ClassificationTask>& tasks, const TransformerModel& dense,
                   const TransformerModel& pruned, const ReportOptions& options) {
    if (tasks.empty()) throw ContractError("report: no tasks");
    if (dense.config.vocab_size != pruned.config.vocab_size) {
        throw ContractError("report: dense vocab " + std::to_string(dense.config.vocab_size) +
                            " and pruned vocab " + std::to_string(pruned.config.vocab_size) + " differ");
    }
    EvalSummary out;
    out.macro.task = "macro";
    for (const ClassificationTask& task : tasks) {
        const auto pd = choice_ppl(dense, task, options.threads);
        const auto pp = choice_ppl(pruned, task, options.threads);
        std::vector<EvalRecord> records;
        records.reserve(task.samples.size());
        for (std::size_t i = 0; i < task.samples.size(); ++i) {
            records.push_back(make_record(i, pd[i], pp[i], task.samples[i].answer, options.std_normalize));
        }
        StabilityReport r;
        r.task = task.name;
        r.counts = confusion_partition(records);
        const double n = static_cast<double>(records.size());
        r.accuracy_dense = static_cast<double>(r.counts.tp + r.counts.fn) / n;
        r.accuracy_pruned = static_cast<double>(r.counts.tp + r.counts.fp) / n;
        r.stability = stability(records);
        if (r.accuracy_dense > 0.0) r.rp = retained_performance(r.accuracy_dense, r.accuracy_pruned);

        out.macro.accuracy_dense += r.accuracy_dense;
        out.macro.accuracy_pruned += r.accuracy_pruned;
        out.macro.stability += r.stability;
        out.macro.counts.tp += r.counts.tp;
        out.macro.counts.fn += r.counts.fn;
        out.macro.counts.fp += r.counts.fp;
        out.macro.counts.tn += r.counts.tn;
        out.per_task.push_back(r);
        out.records.push_back(std::move(records));
    }
    const double k = static_cast<double>(tasks.size());
    out.macro.accuracy_dense /= k;
    out.macro.accuracy_pruned /= k;
    out.macro.stability /= k;
    if (out.macro.accuracy_dense > 0.0) {
        out.macro.rp = retained_performance(out.macro.accuracy_dense, out.macro.accuracy_pruned);
    }
    return out;
}

namespace {

json report_json(const StabilityReport& r) {
    return {{"task", r.task},
            {"accuracy_dense", r.accuracy_dense},
            {"accuracy_pruned", r.accuracy_pruned},
            {"stability", r.stability},
            {"rp", r.rp ? json(*r.rp) : json(nullptr)},
            {"counts", {{"tp", r.counts.tp}, {"fn", r.counts.fn}, {"fp", r.counts.fp}, {"tn", r.counts.tn}}}};
}

StabilityReport report_from(const json& j) {
    StabilityReport r;
    r.task = j.at("task").get<std::string>();
    r.accuracy_dense = j.at("accuracy_dense").get<double>();
    r.accuracy_pruned = j.at("accuracy_pruned").get<double>();
    r.stability = j.at("stability").get<double>();
    if (!j.at("rp").is_null()) r.rp = j.at("rp").get<double>();
    const json& c = j.at("counts");
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fn").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                c.at("tn").get<std::size_t>()};
    return r;
}

} // namespace

EvalSummary summary_from_json(const nlohmann::json& j) {
    EvalSummary s;
    try {
        for (const auto& [name, r] : j.at("per_task").items()) s.per_task.push_back(report_from(r));
        s.macro = report_from(j.at("macro"));
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid eval summary: ") + e.what());
    }
    return s;
}

nlohmann::json summary_to_json(const EvalSummary& s) {
    json per_task = json::object();
    for (const StabilityReport& r : s.per_task) per_task[r.task] = report_json(r);
    return {{"per_task", per_task}, {"macro", report_json(s.macro)}};
}

std::string summary_to_csv(const EvalSummary& s) {
    std::ostringstream out;
    out.precision(17);
    out << "task,acc_dense,acc_pruned,rp,stability,tp,fn,fp,tn\n";
    auto row = [&](const StabilityReport& r) {
        out << r.task << ',' << r.accuracy_dense << ',' << r.accuracy_pruned << ',';
        if (r.rp) out << *r.rp;
        out << ',' << r.stability << ',' << r.counts.tp << ',' << r.counts.fn << ',' << r.counts.fp << ','
            << r.counts.tn << '\n';
    };
    for (const StabilityReport& r : s.per_task) row(r);
    row(s.macro);
    return out.str();
}

} // namespace streamline
