// streamline: profile, prune, replace and evaluate transformer layers.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure (training diverged), 1 anything else.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pipeline.hpp"
#include "streamline/error.hpp"

using namespace streamline;
using namespace streamline::cli;

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::size_t> threads;
    std::optional<double> scale;
    std::optional<std::uint64_t> seed;
    std::string model, corpus, mix;
    std::optional<std::size_t> samples, train_docs, n;
    std::string metric;
    std::string kind, strategy;
    std::optional<std::size_t> d_inner;
    bool direct = false;
    std::optional<double> lr, weight_decay, val_fraction;
    std::optional<std::size_t> epochs, batch_size;
    std::vector<std::string> tasks;
    bool std_normalize = false;
    std::string fingerprint_policy;
};

void add_run(CLI::App* c, Overrides& o) {
    c->add_option("-c,--config", o.config, "pipeline config (JSON)");
    c->add_option("-o,--out", o.out, "output directory");
    c->add_option("--threads", o.threads, "worker threads (default: STREAMLINE_THREADS or 1)");
    c->add_option("--scale", o.scale, "multiplies the profile-sample and training-document counts");
    c->add_option("--seed", o.seed, "run seed");
}

void add_model(CLI::App* c, Overrides& o) { c->add_option("--model", o.model, "model container directory"); }

void add_data(CLI::App* c, Overrides& o) {
    c->add_option("--corpus", o.corpus, "corpus (JSON lines)");
    c->add_option("--mix", o.mix, "domain mix: default | none | path to a JSON {domain: weight} file");
    c->add_option("--samples", o.samples, "profile samples before scaling");
    c->add_option("--train-docs", o.train_docs, "training documents before scaling");
}

void add_prune(CLI::App* c, Overrides& o) {
    c->add_option("-n,--n", o.n, "layers to prune");
    c->add_option("--metric", o.metric, "cosine | ppl_greedy");
}

void add_replacement(CLI::App* c, Overrides& o) {
    c->add_option("--kind", o.kind, "none | ffn | swiglu | layer");
    c->add_option("--strategy", o.strategy, "random | first | last | avg");
    c->add_option("--d-inner", o.d_inner, "inner width (0: model d_ff)");
    c->add_flag("--direct", o.direct, "feed-forward replacement without the residual connection");
    c->add_option("--lr", o.lr);
    c->add_option("--weight-decay", o.weight_decay);
    c->add_option("--epochs", o.epochs);
    c->add_option("--batch-size", o.batch_size);
    c->add_option("--val-fraction", o.val_fraction);
    c->add_option("--fingerprint-policy", o.fingerprint_policy, "ignore | warn | fail on a pair/model mismatch");
}

void add_eval(CLI::App* c, Overrides& o) {
    c->add_option("--tasks", o.tasks, "task files (JSON lines)");
    c->add_flag("--std-normalize", o.std_normalize, "divide each sample's PPL std by its mean PPL");
}

PipelineConfig build_config(const Overrides& o) {
    PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_pipeline_config(o.config);
    c.threads = threads_from_env(c.threads);

    if (!o.out.empty()) c.out_dir = o.out;
    if (o.threads) c.threads = *o.threads;
    if (o.scale) c.scale = *o.scale;
    if (o.seed) c.seed = *o.seed;
    if (!o.model.empty()) c.model_path = o.model;
    if (!o.corpus.empty()) c.corpus_path = o.corpus;
    if (o.mix == "none") c.mix.reset();
    else if (o.mix == "default") c.mix = DomainMix::pruning_default();
    else if (!o.mix.empty()) c.mix = mix_from_json(read_json(o.mix));
    if (o.samples) c.n_profile_samples = *o.samples;
    if (o.train_docs) c.n_train_docs = *o.train_docs;
    if (o.n) c.prune_n = *o.n;
    if (!o.metric.empty()) c.metric = parse_metric(o.metric);
    if (!o.kind.empty()) c.replacement.kind = parse_replacement_kind(o.kind);
    if (!o.strategy.empty()) c.replacement.strategy = parse_init_strategy(o.strategy);
    if (o.d_inner) c.replacement.d_inner = *o.d_inner;
    if (o.direct) c.replacement.residual = false;
    if (o.lr) c.train["lr"] = *o.lr;
    if (o.weight_decay) c.train["weight_decay"] = *o.weight_decay;
    if (o.epochs) c.train["epochs"] = *o.epochs;
    if (o.batch_size) c.train["batch_size"] = *o.batch_size;
    if (o.val_fraction) c.train["val_fraction"] = *o.val_fraction;
    if (!o.tasks.empty()) {
        c.tasks.clear();
        for (const auto& t : o.tasks) c.tasks.emplace_back(t);
    }
    if (o.std_normalize) c.std_normalize = true;
    if (!o.fingerprint_policy.empty()) {
        c.fingerprint_policy = pipeline_config_from_json(json{{"fingerprint_policy", o.fingerprint_policy}}).fingerprint_policy;
    }
    if (c.model_path.empty()) throw ConfigError("no model given (model_path / --model)");
    c.validate();
    return c;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"streamline: layer pruning with lightweight replacement networks"};
    app.require_subcommand(1);
    Overrides o;
    ToyInitOptions toy;
    std::string profile_path, spec_path, pairs_path, dense_path, pruned_path, corpus_b;

    auto* toy_cmd = app.add_subcommand("toy", "offline fixtures");
    toy_cmd->require_subcommand(1);
    auto* toy_init_cmd = toy_cmd->add_subcommand("init", "write a pretrained toy model, corpora, tasks and a pipeline config");
    toy_init_cmd->add_option("-o,--out", toy.out, "output directory")->required();
    toy_init_cmd->add_option("--layers", toy.n_layers);
    toy_init_cmd->add_option("--zero-effect", toy.zero_effect, "layers whose output projections are zeroed")
        ->delimiter(',');
    toy_init_cmd->add_option("--steps", toy.pretrain_steps, "pretraining steps");
    toy_init_cmd->add_option("--docs-per-domain", toy.docs_per_domain);
    toy_init_cmd->add_option("--task-samples", toy.task_samples);
    toy_init_cmd->add_option("--seed", toy.seed);
    bool no_pretrain = false;
    toy_init_cmd->add_flag("--no-pretrain", no_pretrain);

    auto* profile = app.add_subcommand("profile", "layer and block cosine importance (plus ppl_greedy order)");
    add_run(profile, o);
    add_model(profile, o);
    add_data(profile, o);
    add_prune(profile, o);

    auto* prune_cmd = app.add_subcommand("prune", "select and remove a block");
    add_run(prune_cmd, o);
    add_model(prune_cmd, o);
    add_prune(prune_cmd, o);
    prune_cmd->add_option("--profile", profile_path, "profile JSON (default: <out>/profile.json)");

    auto* capture = app.add_subcommand("capture", "record hidden-state pairs around the pruned block");
    add_run(capture, o);
    add_model(capture, o);
    add_data(capture, o);
    capture->add_option("--spec", spec_path, "prune spec (default: <out>/prune_spec.json)");

    auto* train = app.add_subcommand("train", "train a replacement network and splice it in");
    add_run(train, o);
    add_model(train, o);
    add_replacement(train, o);
    train->add_option("--spec", spec_path, "prune spec (default: <out>/prune_spec.json)");
    train->add_option("--pairs", pairs_path, "pair dataset (default: <out>/pairs.bin)");

    auto* eval = app.add_subcommand("eval", "multiple-choice accuracy, confusion counts and stability");
    add_run(eval, o);
    add_eval(eval, o);
    eval->add_option("--dense", dense_path, "dense model (default: model_path)");
    eval->add_option("--pruned", pruned_path, "pruned model (default: <out>/final)");

    auto* compare = app.add_subcommand("compare", "cosine vs ppl_greedy selection on two corpora");
    add_run(compare, o);
    add_model(compare, o);
    add_data(compare, o);
    add_prune(compare, o);
    compare->add_option("--corpus-b", corpus_b, "second corpus")->required();

    auto* pipeline = app.add_subcommand("pipeline", "profile, prune, capture, train, eval");
    add_run(pipeline, o);
    add_model(pipeline, o);
    add_data(pipeline, o);
    add_prune(pipeline, o);
    add_replacement(pipeline, o);
    add_eval(pipeline, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (toy_init_cmd->parsed()) {
            toy.pretrain = !no_pretrain;
            toy_init(toy);
            return 0;
        }
        if (eval->parsed()) {
            // eval does not need model_path when --dense is given
            Overrides e = o;
            if (!dense_path.empty() && e.model.empty()) e.model = dense_path;
            const PipelineConfig cfg = build_config(e);
            const Layout lay{cfg.out_dir};
            cmd_eval(cfg, dense_path.empty() ? cfg.model_path : fs::path(dense_path),
                     pruned_path.empty() ? lay.final_model() : fs::path(pruned_path));
            return 0;
        }
        const PipelineConfig cfg = build_config(o);
        const Layout lay{cfg.out_dir};
        if (profile->parsed()) cmd_profile(cfg);
        else if (prune_cmd->parsed()) cmd_prune(cfg, profile_path.empty() ? lay.profile() : fs::path(profile_path));
        else if (capture->parsed()) cmd_capture(cfg, spec_path.empty() ? lay.spec() : fs::path(spec_path));
        else if (train->parsed())
            cmd_train(cfg, spec_path.empty() ? lay.spec() : fs::path(spec_path),
                      pairs_path.empty() ? lay.pairs() : fs::path(pairs_path));
        else if (compare->parsed()) cmd_compare(cfg, corpus_b);
        else if (pipeline->parsed()) cmd_pipeline(cfg);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
