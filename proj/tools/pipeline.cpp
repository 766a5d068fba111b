#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "streamline/container.hpp"
#include "streamline/digest.hpp"
#include "streamline/error.hpp"
#include "streamline/evaluator.hpp"
#include "streamline/profiler.hpp"
#include "streamline/toy.hpp"

namespace streamline::cli {

namespace {

std::string_view to_string(FingerprintPolicy p) {
    switch (p) {
    case FingerprintPolicy::Ignore: return "ignore";
    case FingerprintPolicy::Warn: return "warn";
    case FingerprintPolicy::Fail: return "fail";
    }
    return "warn";
}

FingerprintPolicy parse_policy(const std::string& s) {
    if (s == "ignore") return FingerprintPolicy::Ignore;
    if (s == "warn") return FingerprintPolicy::Warn;
    if (s == "fail") return FingerprintPolicy::Fail;
    throw ConfigError("unknown fingerprint policy '" + s + "' (expected ignore|warn|fail)");
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

class Timer {
public:
    explicit Timer(std::string stage) : stage_(std::move(stage)), t0_(std::chrono::steady_clock::now()) {
        std::cerr << "[" << stage_ << "] start\n";
    }
    ~Timer() {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        std::cerr << "[" << stage_ << "] done in " << s << " s\n";
    }

private:
    std::string stage_;
    std::chrono::steady_clock::time_point t0_;
};

void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << "\n"; }

TransformerModel load_model_for(const fs::path& path, const std::string& stage) {
    require_artifact(path / "manifest.json", stage);
    return load_model(path);
}

Corpus load_corpus_checked(const fs::path& path) {
    if (path.empty()) throw ConfigError("no corpus given (corpus_path / --corpus)");
    if (!fs::exists(path)) throw DataError("corpus not found: " + path.string());
    Corpus c = load_corpus_jsonl(path);
    c.validate();
    return c;
}

// Mix-weighted draw, or the first n documents in corpus order.
Corpus draw_documents(const Corpus& corpus, const PipelineConfig& cfg, std::size_t n, std::uint64_t seed) {
    if (cfg.mix) return sample_mix(corpus, *cfg.mix, n, seed);
    Corpus out;
    out.id = corpus.id + "/head-" + std::to_string(n);
    const std::size_t k = std::min(n, corpus.documents.size());
    if (k < n) std::cerr << "warning: corpus has " << corpus.documents.size() << " documents, " << n << " requested\n";
    out.documents.assign(corpus.documents.begin(), corpus.documents.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

std::vector<std::vector<int>> tokenize_all(const Corpus& c, std::size_t max_len) {
    std::vector<std::vector<int>> out;
    out.reserve(c.documents.size());
    for (const Document& d : c.documents) {
        std::vector<int> ids = tokenize(d.text, max_len);
        if (ids.size() >= 2) out.push_back(std::move(ids));
    }
    if (out.empty()) throw DataError("corpus '" + c.id + "' yields no sample with at least two tokens");
    return out;
}

// Profile samples are drawn with the run seed, training documents with
// seed + 1, so the two draws differ.
std::vector<std::vector<int>> profile_samples(const Corpus& corpus, const PipelineConfig& cfg, std::size_t max_len,
                                              std::string& id) {
    const Corpus drawn = draw_documents(corpus, cfg, cfg.profile_samples(), cfg.seed);
    id = drawn.id;
    return tokenize_all(drawn, max_len);
}

ImportanceProfile build_profile(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                                const std::string& id, const PipelineConfig& cfg, bool greedy) {
    std::set<std::size_t> widths;
    for (std::size_t w = 1; w < model.config.n_layers; ++w) widths.insert(w);
    ImportanceProfile p = cosine_profile(model, samples, widths, id, cfg.threads);
    if (greedy) p.ppl_greedy = ppl_greedy_profile(model, samples, cfg.prune_n, cfg.threads);
    return p;
}

// Contiguous (start, n) covered by a spec.
std::pair<std::size_t, std::size_t> spec_block(const PruneSpec& spec) {
    if (spec.metric == Metric::Cosine) return {spec.start, spec.n};
    std::vector<int> labels = spec.removal;
    std::sort(labels.begin(), labels.end());
    for (std::size_t i = 1; i < labels.size(); ++i) {
        if (labels[i] != labels[i - 1] + 1) {
            throw ConfigError("the ppl_greedy removal set is not contiguous; a replacement needs a contiguous block "
                              "(use replacement kind none, or metric cosine)");
        }
    }
    return {static_cast<std::size_t>(labels.front()), labels.size()};
}

PruneSpec read_spec(const fs::path& path) {
    require_artifact(path, "prune");
    return spec_from_json(read_json(path));
}

std::string rel_key(const fs::path& p, const fs::path& out) {
    const fs::path rel = p.lexically_normal().lexically_relative(out.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

} // namespace

std::size_t PipelineConfig::profile_samples() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n_profile_samples) * scale)));
}

std::size_t PipelineConfig::train_docs() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n_train_docs) * scale)));
}

TrainConfig PipelineConfig::train_config() const {
    TrainConfig c = train_config_from_json(train, replacement.kind);
    if (!train.contains("seed")) c.seed = seed;
    return c;
}

void PipelineConfig::validate() const {
    if (prune_n < 1) throw ConfigError("prune_n must be >= 1");
    if (!(scale > 0.0)) throw ConfigError("scale must be > 0");
    if (n_profile_samples < 1) throw ConfigError("n_profile_samples must be >= 1");
    if (n_train_docs < 1) throw ConfigError("n_train_docs must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (mix) mix->validate();
    train_config();
}

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    static const std::set<std::string> known{"model_path", "corpus_path", "mix",   "n_profile_samples", "n_train_docs",
                                             "scale",      "prune_n",     "metric", "replacement",      "train",
                                             "tasks",      "out_dir",     "seed",   "threads",          "std_normalize",
                                             "fingerprint_policy"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    PipelineConfig c;
    try {
        if (j.contains("model_path")) c.model_path = resolve(j.at("model_path").get<std::string>(), base);
        if (j.contains("corpus_path")) c.corpus_path = resolve(j.at("corpus_path").get<std::string>(), base);
        if (j.contains("mix")) {
            const json& m = j.at("mix");
            if (m.is_null()) c.mix.reset();
            else if (m.is_string() && m.get<std::string>() == "default") c.mix = DomainMix::pruning_default();
            else c.mix = mix_from_json(m);
        }
        c.n_profile_samples = j.value("n_profile_samples", c.n_profile_samples);
        c.n_train_docs = j.value("n_train_docs", c.n_train_docs);
        c.scale = j.value("scale", c.scale);
        c.prune_n = j.value("prune_n", c.prune_n);
        if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
        if (j.contains("replacement")) {
            const json& r = j.at("replacement");
            if (r.contains("kind")) c.replacement.kind = parse_replacement_kind(r.at("kind").get<std::string>());
            if (r.contains("strategy")) c.replacement.strategy = parse_init_strategy(r.at("strategy").get<std::string>());
            c.replacement.d_inner = r.value("d_inner", c.replacement.d_inner);
            c.replacement.residual = r.value("residual", c.replacement.residual);
        }
        if (j.contains("train")) c.train = j.at("train");
        if (j.contains("tasks")) {
            for (const auto& t : j.at("tasks")) c.tasks.push_back(resolve(t.get<std::string>(), base));
        }
        if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>(), base);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        c.std_normalize = j.value("std_normalize", c.std_normalize);
        if (j.contains("fingerprint_policy")) c.fingerprint_policy = parse_policy(j.at("fingerprint_policy"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j, fs::absolute(path).parent_path());
}

json pipeline_config_to_json(const PipelineConfig& c) {
    json tasks = json::array();
    for (const auto& t : c.tasks) tasks.push_back(t.generic_string());
    return {{"model_path", c.model_path.generic_string()},
            {"corpus_path", c.corpus_path.generic_string()},
            {"mix", c.mix ? mix_to_json(*c.mix) : json(nullptr)},
            {"n_profile_samples", c.n_profile_samples},
            {"n_train_docs", c.n_train_docs},
            {"scale", c.scale},
            {"prune_n", c.prune_n},
            {"metric", std::string(to_string(c.metric))},
            {"replacement",
             {{"kind", std::string(to_string(c.replacement.kind))},
              {"strategy", std::string(to_string(c.replacement.strategy))},
              {"d_inner", c.replacement.d_inner},
              {"residual", c.replacement.residual}}},
            {"train", train_config_to_json(c.train_config())},
            {"tasks", tasks},
            {"seed", c.seed},
            {"std_normalize", c.std_normalize},
            {"fingerprint_policy", std::string(to_string(c.fingerprint_policy))}};
}

std::string config_hash(const PipelineConfig& cfg) {
    Fnv64 h;
    h.text(dump_json(pipeline_config_to_json(cfg)));
    return h.hex();
}

std::size_t threads_from_env(std::size_t fallback) {
    const char* env = std::getenv("STREAMLINE_THREADS");
    if (!env || !*env) return fallback;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("STREAMLINE_THREADS must be a positive integer, got '") + env + "'");
    return v;
}

void require_artifact(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) {
        throw DataError("missing " + path.string() + ": run `streamline " + stage + "` first");
    }
}

std::string artifact_digest(const fs::path& path) {
    Fnv64 h;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(path)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            h.text(f.lexically_relative(path).generic_string());
            const auto bytes = read_file(f);
            h.bytes(bytes.data(), bytes.size());
        }
    } else {
        const auto bytes = read_file(path);
        h.bytes(bytes.data(), bytes.size());
    }
    return h.hex();
}

void record_stage(const PipelineConfig& cfg, const std::string& stage, const std::vector<fs::path>& inputs,
                  const std::vector<fs::path>& outputs, const json& params) {
    const fs::path path = cfg.out_dir / "manifest.json";
    json m = fs::exists(path) ? read_json(path) : json::object();
    m["tool"] = "streamline";
    m["format_version"] = 1;
    m["config_hash"] = config_hash(cfg);
    json in = json::object(), out = json::object();
    for (const auto& p : inputs) in[rel_key(p, cfg.out_dir)] = artifact_digest(p);
    for (const auto& p : outputs) out[rel_key(p, cfg.out_dir)] = artifact_digest(p);
    m["stages"][stage] = {{"config_hash", config_hash(cfg)}, {"params", params}, {"inputs", in}, {"outputs", out}};
    write_text(path, dump_json(m));
    write_text(cfg.out_dir / "config.json", dump_json(pipeline_config_to_json(cfg)));
}

void toy_init(const ToyInitOptions& o) {
    Timer t("toy init");
    if (o.out.empty()) throw ConfigError("toy init needs --out");
    if (o.n_layers < 2) throw ConfigError("toy init: --layers must be >= 2");
    fs::create_directories(o.out / "tasks");

    const Corpus corpus = synthetic_corpus(o.docs_per_domain, o.seed, "synthetic");
    save_corpus_jsonl(corpus, o.out / "corpus.jsonl");
    // Held-out documents for the second corpus and the tasks.
    const Corpus heldout = synthetic_corpus(std::max<std::size_t>(o.task_samples, 40), o.seed + 1000, "heldout");
    save_corpus_jsonl(heldout, o.out / "heldout.jsonl");

    ToyModelOptions mo;
    mo.config.n_layers = o.n_layers;
    mo.seed = o.seed;
    mo.pretrain.steps = o.pretrain_steps;
    mo.pretrain.seed = o.seed;
    mo.do_pretrain = o.pretrain && o.pretrain_steps > 0;
    mo.zero_effect = o.zero_effect;
    const TransformerModel model = toy_model(mo, corpus);
    save_model(model, o.out / "model");

    const std::vector<std::string> names{"continuation_a", "continuation_b"};
    json tasks = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const ClassificationTask task = synthetic_task(heldout, names[i], o.task_samples, 4, o.seed + 17 * (i + 1));
        save_task_jsonl(task, o.out / "tasks" / (names[i] + ".jsonl"));
        tasks.push_back("tasks/" + names[i] + ".jsonl");
    }

    // Desk-scale pipeline config over the toy artifacts.
    const json cfg = {{"model_path", "model"},
                      {"corpus_path", "corpus.jsonl"},
                      {"mix", "default"},
                      {"n_profile_samples", 100},
                      {"n_train_docs", 420},
                      {"prune_n", 2},
                      {"metric", "cosine"},
                      {"replacement", {{"kind", "ffn"}, {"strategy", "random"}, {"d_inner", 0}, {"residual", true}}},
                      {"train", json::object()},
                      {"tasks", tasks},
                      {"seed", o.seed}};
    write_text(o.out / "pipeline.json", dump_json(cfg));
    log("toy init", "wrote " + (o.out / "pipeline.json").string());
}

void cmd_profile(const PipelineConfig& cfg) {
    Timer t("profile");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    const TransformerModel model = load_model_for(cfg.model_path, "toy init");
    const Corpus corpus = load_corpus_checked(cfg.corpus_path);
    std::string id;
    const auto samples = profile_samples(corpus, cfg, model.config.max_seq_len, id);
    const ImportanceProfile p = build_profile(model, samples, id, cfg, cfg.metric == Metric::PplGreedy);

    write_text(lay.profile(), dump_json(profile_to_json(p)));
    std::ostringstream csv;
    csv << "layer,cosine\n";
    csv.precision(17);
    for (std::size_t l = 0; l < p.per_layer_cos.size(); ++l) csv << l << "," << p.per_layer_cos[l] << "\n";
    write_text(lay.profile_csv(), csv.str());
    log("profile", std::to_string(samples.size()) + " samples, corpus " + id);
    record_stage(cfg, "profile", {cfg.model_path, cfg.corpus_path}, {lay.profile(), lay.profile_csv()},
                 {{"n_samples", samples.size()}, {"corpus_id", id}, {"metric", std::string(to_string(cfg.metric))}});
}

void cmd_prune(const PipelineConfig& cfg, const fs::path& profile_path) {
    Timer t("prune");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    const TransformerModel model = load_model_for(cfg.model_path, "toy init");
    require_artifact(profile_path, "profile");
    const ImportanceProfile p = profile_from_json(read_json(profile_path));
    if (p.n_layers != model.config.n_layers) {
        throw DataError("profile " + profile_path.string() + " was computed for " + std::to_string(p.n_layers) +
                        " layers, model has " + std::to_string(model.config.n_layers));
    }
    PruneSpec spec;
    if (cfg.metric == Metric::Cosine) {
        spec = select_block(p, cfg.prune_n);
    } else {
        if (!p.ppl_greedy) throw DataError("profile has no ppl_greedy order: run `streamline profile --metric ppl_greedy` first");
        spec = select_greedy(p, cfg.prune_n);
    }
    spec.profile_ref = profile_id(p);
    const TransformerModel pruned = prune(model, spec);
    write_text(lay.spec(), dump_json(spec_to_json(spec)));
    save_model(pruned, lay.pruned());
    std::ostringstream msg;
    msg << "removed layers";
    for (int l = 0; l < static_cast<int>(model.config.n_layers); ++l) {
        if (std::find(pruned.layer_labels.begin(), pruned.layer_labels.end(), l) == pruned.layer_labels.end()) msg << " " << l;
    }
    msg << ", sparsity " << sparsity(model, pruned);
    log("prune", msg.str());
    record_stage(cfg, "prune", {cfg.model_path, profile_path}, {lay.spec(), lay.pruned()},
                 {{"n", cfg.prune_n}, {"metric", std::string(to_string(cfg.metric))}, {"sparsity", sparsity(model, pruned)}});
}

void cmd_capture(const PipelineConfig& cfg, const fs::path& spec_path) {
    Timer t("capture");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    const TransformerModel model = load_model_for(cfg.model_path, "toy init");
    const PruneSpec spec = read_spec(spec_path);
    const auto [start, n] = spec_block(spec);
    const Corpus corpus = load_corpus_checked(cfg.corpus_path);
    const Corpus docs = draw_documents(corpus, cfg, cfg.train_docs(), cfg.seed + 1);
    const HiddenPairDataset ds = capture_pairs(model, docs, start, n, docs.documents.size(), cfg.threads);
    save_pairs(ds, lay.pairs());
    log("capture", std::to_string(ds.pairs.size()) + " pairs, " + std::to_string(ds.token_count()) + " tokens");
    record_stage(cfg, "capture", {cfg.model_path, cfg.corpus_path, spec_path}, {lay.pairs()},
                 {{"block", {start, n}}, {"docs", docs.documents.size()}, {"corpus_id", docs.id}});
}

void cmd_train(const PipelineConfig& cfg, const fs::path& spec_path, const fs::path& pairs_path) {
    Timer t("train");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    const TransformerModel model = load_model_for(cfg.model_path, "toy init");
    const PruneSpec spec = read_spec(spec_path);
    require_artifact(pairs_path, "capture");
    const HiddenPairDataset ds = load_pairs(pairs_path, model_fingerprint(model), cfg.fingerprint_policy);
    const auto [start, n] = spec_block(spec);
    if (ds.block_start != start || ds.block_n != n) {
        throw DataError("pair dataset " + pairs_path.string() + " covers block (" + std::to_string(ds.block_start) + ", " +
                        std::to_string(ds.block_n) + "), the prune spec removes (" + std::to_string(start) + ", " +
                        std::to_string(n) + "): rerun `streamline capture`");
    }
    const ReplacementChoice& rc = cfg.replacement;
    const TrainConfig tc = cfg.train_config();
    ReplacementNet net = init_replacement(rc.kind, rc.strategy, pruned_layers(model, spec), model.config, rc.d_inner,
                                          rc.residual, cfg.seed);
    const TrainReport report = train_replacement(net, ds, tc, model.config);
    const TransformerModel final_model =
        rc.kind == ReplacementKind::None ? prune(model, spec) : prune(model, spec, net);
    save_model(final_model, lay.final_model());

    json j = report_to_json(report);
    j["train_config"] = train_config_to_json(tc);
    j["replacement"] = {{"kind", std::string(to_string(rc.kind))},
                        {"strategy", std::string(to_string(net.init))},
                        {"d_inner", net.d_inner},
                        {"residual", net.residual},
                        {"parameters", net.parameter_count()}};
    j["sparsity"] = sparsity(model, final_model);
    write_text(lay.train_report(), dump_json(j));
    std::ostringstream msg;
    msg << "val mse " << report.initial_val_loss << " -> "
        << (report.val_loss_curve.empty() ? report.initial_val_loss : report.val_loss_curve[report.best_epoch])
        << " (best epoch " << report.best_epoch << ")";
    log("train", msg.str());
    record_stage(cfg, "train", {cfg.model_path, spec_path, pairs_path}, {lay.train_report(), lay.final_model()},
                 {{"kind", std::string(to_string(rc.kind))}, {"train", train_config_to_json(tc)}});
}

void cmd_eval(const PipelineConfig& cfg, const fs::path& dense_path, const fs::path& pruned_path) {
    Timer t("eval");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    if (cfg.tasks.empty()) throw ConfigError("eval needs at least one task file (tasks / --tasks)");
    const TransformerModel dense = load_model_for(dense_path, "toy init");
    const TransformerModel pruned = load_model_for(pruned_path, "train");
    std::vector<ClassificationTask> tasks;
    for (const auto& p : cfg.tasks) {
        if (!fs::exists(p)) throw DataError("task file not found: " + p.string());
        tasks.push_back(load_task_jsonl(p));
    }
    const EvalSummary s = report(tasks, dense, pruned, ReportOptions{cfg.std_normalize, cfg.threads});
    write_text(lay.eval_json(), dump_json(summary_to_json(s)));
    write_text(lay.eval_csv(), summary_to_csv(s));
    std::ostringstream msg;
    msg << "macro acc " << s.macro.accuracy_dense << " -> " << s.macro.accuracy_pruned << ", stability "
        << s.macro.stability;
    log("eval", msg.str());
    std::vector<fs::path> inputs{dense_path, pruned_path};
    inputs.insert(inputs.end(), cfg.tasks.begin(), cfg.tasks.end());
    record_stage(cfg, "eval", inputs, {lay.eval_json(), lay.eval_csv()}, {{"std_normalize", cfg.std_normalize}});
}

void cmd_compare(const PipelineConfig& cfg, const fs::path& corpus_b) {
    Timer t("compare");
    const Layout lay{cfg.out_dir};
    fs::create_directories(cfg.out_dir);
    const TransformerModel model = load_model_for(cfg.model_path, "toy init");
    const Corpus a = load_corpus_checked(cfg.corpus_path);
    const Corpus b = load_corpus_checked(corpus_b);
    PipelineConfig cb = cfg;
    cb.mix.reset();  // the second corpus need not carry the mix domains
    std::string id_a, id_b;
    const auto sa = profile_samples(a, cfg, model.config.max_seq_len, id_a);
    const auto sb = profile_samples(b, cb, model.config.max_seq_len, id_b);
    const ImportanceProfile pa = build_profile(model, sa, id_a, cfg, true);
    const ImportanceProfile pb = build_profile(model, sb, id_b, cfg, true);
    json j = compare_metrics(pa, pb, cfg.prune_n);
    j["profiles"] = {profile_id(pa), profile_id(pb)};
    write_text(lay.compare(), dump_json(j));
    log("compare", j.dump());
    record_stage(cfg, "compare", {cfg.model_path, cfg.corpus_path, corpus_b}, {lay.compare()}, {{"n", cfg.prune_n}});
}

void cmd_pipeline(const PipelineConfig& cfg) {
    Timer t("pipeline");
    const Layout lay{cfg.out_dir};
    cmd_profile(cfg);
    cmd_prune(cfg, lay.profile());
    cmd_capture(cfg, lay.spec());
    cmd_train(cfg, lay.spec(), lay.pairs());
    cmd_eval(cfg, cfg.model_path, lay.final_model());

    // Corpus PPL of the dense, prune-only and final models on the profile samples.
    Timer tp("ppl");
    const TransformerModel dense = load_model(cfg.model_path);
    const Corpus corpus = load_corpus_checked(cfg.corpus_path);
    std::string id;
    const auto samples = profile_samples(corpus, cfg, dense.config.max_seq_len, id);
    const json ppl = {{"corpus_id", id},
                      {"n_samples", samples.size()},
                      {"dense", corpus_ppl(dense, samples, cfg.threads)},
                      {"prune_only", corpus_ppl(load_model(lay.pruned()), samples, cfg.threads)},
                      {"final", corpus_ppl(load_model(lay.final_model()), samples, cfg.threads)}};
    write_text(lay.ppl(), dump_json(ppl));
    log("ppl", ppl.dump());
    record_stage(cfg, "ppl", {cfg.model_path, lay.pruned(), lay.final_model()}, {lay.ppl()}, {{"corpus_id", id}});
}

} // namespace streamline::cli
