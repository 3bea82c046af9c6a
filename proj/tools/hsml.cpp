// hsml: corpus generation, meta-training, evaluation and self-checks.
//
// Exit codes: 0 ok, 1 selftest property failed, 2 config/usage,
// 3 data (ingestion, I/O, episode), 4 numerical failure.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsml/config.hpp"
#include "hsml/data.hpp"
#include "hsml/error.hpp"
#include "hsml/ops.hpp"
#include "hsml/selftest.hpp"
#include "hsml/trainer.hpp"

namespace fs = std::filesystem;
using namespace hsml;

namespace {

constexpr int kExitSelftest = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_config:
    case ErrorKind::usage: return kExitConfig;
    case ErrorKind::numerical_failure: return kExitNumerical;
    default: return kExitData;
    }
}

fs::path output_root() {
    const char* env = std::getenv("HSML_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

// ---- gen-data ----

struct GenArgs {
    std::string kind = "circle-spiral";
    std::size_t tasks = 100;
    std::uint64_t seed = 0;
    std::string out;
    std::string in;
    std::string target;
    std::string task_kind = "classification";
    double train_fraction = 0.7;
    double validation_fraction = 0.1;
};

int cmd_gen_data(const GenArgs& a) {
    const fs::path out = a.out.empty() ? output_root() / "corpus" : fs::path(a.out);
    std::vector<TaskDataset> tasks;
    if (a.kind == "circle-spiral") {
        tasks = generate_circle_spiral_corpus(a.seed, a.tasks);
    } else if (a.kind == "regression") {
        tasks = generate_regression_corpus(a.seed, a.tasks);
    } else if (a.kind == "tabular") {
        if (a.in.empty() || a.target.empty()) throw UsageError("gen-data --kind tabular needs --in and --target");
        const TaskKind kind = parse_task_kind(a.task_kind);
        std::vector<fs::path> files;
        if (fs::is_directory(a.in)) {
            for (const auto& e : fs::directory_iterator(a.in))
                if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
        } else {
            files.emplace_back(a.in);
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IngestionError("no .csv files found in " + a.in);
        for (const auto& f : files) tasks.push_back(ingest_tabular(f, a.target, kind));
    } else {
        throw UsageError("unknown --kind '" + a.kind + "' (circle-spiral, tabular, regression)");
    }
    const CorpusSplit split = split_corpus(std::move(tasks), a.seed, a.train_fraction, a.validation_fraction);
    write_corpus(split, out);
    std::cout << "wrote " << split.train.size() + split.validation.size() + split.test.size() << " tasks to " << out.string()
              << " (train " << split.train.size() << ", validation " << split.validation.size() << ", test "
              << split.test.size() << ")\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string config;
    std::vector<std::string> ablate;
    std::vector<std::string> set;
    std::string corpus;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + kv + "'");
        set_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    apply_overrides(cfg, a.set);
    for (const auto& name : a.ablate) set_ablation(cfg.model.ablation, name);
    if (!a.corpus.empty()) cfg.corpus = a.corpus;
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (a.seed) cfg.train.seed = *a.seed;
    if (cfg.output_dir.empty()) cfg.output_dir = output_root() / "train";
    cfg.validate();
    if (!fs::exists(cfg.corpus / "manifest.ini"))
        throw InvalidConfig("data.corpus: no corpus manifest at " + (cfg.corpus / "manifest.ini").string());

    const CorpusSplit corpus = read_corpus(cfg.corpus);
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "effective.cfg", cfg.to_text());

    std::ofstream log(cfg.output_dir / "report.txt", std::ios::binary);
    auto on_interval = [&](const IntervalRecord& r) {
        if (a.quiet) return;
        std::cerr << "epoch " << r.epoch << " step " << r.step << " train_loss " << std::setprecision(5) << r.train_loss
                  << " val_loss " << r.val_loss << " val_metric " << r.val_metric << (r.best ? " *" : "") << '\n';
    };
    const TrainResult res = meta_train(corpus, cfg.model, cfg.train, on_interval);
    save_checkpoint(res.best, cfg.output_dir / "best.ckpt");
    save_checkpoint(res.final, cfg.output_dir / "final.ckpt");
    log << res.report.to_text();
    if (!log) throw IoError("cannot write " + (cfg.output_dir / "report.txt").string());
    std::cout << "stopped at epoch " << res.report.stop_epoch << " (" << res.report.stop_reason << "), best epoch "
              << res.report.best_epoch << ", checkpoints in " << cfg.output_dir.string() << '\n';
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string ckpt;
    std::string corpus;
    std::string config;
    std::string shots;
    std::vector<std::string> splits = {"test"};
    std::optional<std::size_t> trials;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string emit_embeddings;
};

const std::vector<TaskDataset>& pick_split(const CorpusSplit& c, const std::string& name) {
    if (name == "train") return c.train;
    if (name == "validation") return c.validation;
    if (name == "test") return c.test;
    throw UsageError("unknown split '" + name + "' (train, validation, test)");
}

void emit_embeddings(const fs::path& path, const std::vector<TaskDataset>& tasks, const ModelParams<float>& params,
                     const SamplerConfig& sampler, std::uint64_t seed) {
    std::ostringstream out;
    out << "task,set,row,label,embedding\n";
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        std::mt19937_64 rng(derive_seed(seed, t));
        const auto ep = sample_episode(tasks[t], sampler, rng);
        if (!ep) throw InvalidEpisode("task '" + tasks[t].name + "' is too small for the requested episode");
        const auto emb = forward_embed(*ep, params);
        auto dump = [&](const char* set, const Tensor<float>& z, const Matrix& y) {
            for (std::size_t i = 0; i < z.dim(0); ++i) {
                out << tasks[t].name << ',' << set << ',' << i << ',';
                if (ep->kind == TaskKind::classification) out << tasks[t].target_names[one_hot_index(y, i)];
                else out << y(i, 0);
                out << ',';
                for (std::size_t k = 0; k < z.dim(1); ++k) out << (k ? " " : "") << z.at(i, k);
                out << '\n';
            }
        };
        dump("labeled", emb.labeled, ep->y_labeled);
        dump("unlabeled", emb.unlabeled, ep->y_unlabeled);
    }
    write_text(path, out.str());
}

int cmd_eval(const EvalArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    if (!a.corpus.empty()) cfg.corpus = a.corpus;
    if (!a.shots.empty()) cfg.eval.shots = parse_size_list("--shots", a.shots);
    if (a.trials) cfg.eval.trials = *a.trials;
    if (a.seed) cfg.eval.seed = *a.seed;
    if (cfg.corpus.empty()) throw InvalidConfig("data.corpus: no corpus directory given (--corpus)");
    if (a.ckpt.empty()) throw UsageError("eval needs --ckpt");

    const ModelParams<float> params = load_checkpoint(a.ckpt);
    const CorpusSplit corpus = read_corpus(cfg.corpus);
    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream table;
    table << std::left << std::setw(6) << "shots" << std::setw(12) << "split" << std::setw(10) << "metric"
          << std::setw(10) << "mean" << std::setw(10) << "stderr" << "tasks\n";
    for (const auto& split_name : a.splits) {
        const auto& tasks = pick_split(corpus, split_name);
        if (tasks.empty()) throw InvalidConfig("split '" + split_name + "' has no tasks");
        const HeadKind head =
            tasks.front().kind == TaskKind::classification ? HeadKind::prototype : HeadKind::gaussian_process;
        const auto shot_list = head == HeadKind::prototype ? cfg.eval.shots : std::vector<std::size_t>{0};
        for (auto k : shot_list) {
            SamplerConfig sampler = cfg.train.sampler;
            sampler.shots = std::max<std::size_t>(k, 1);
            const EvalResult r = evaluate(tasks, params, head, sampler, cfg.eval.trials, cfg.eval.seed);
            char mean[32], se[32];
            std::snprintf(mean, sizeof mean, "%.4f", r.mean);
            std::snprintf(se, sizeof se, "%.4f", r.standard_error);
            table << std::setw(6) << (k ? std::to_string(k) : "-") << std::setw(12) << split_name << std::setw(10)
                  << r.metric << std::setw(10) << mean << std::setw(10) << se << tasks.size() << '\n';
            rows.push_back({{"shots", k},
                            {"split", split_name},
                            {"metric", r.metric},
                            {"mean", r.mean},
                            {"standard_error", r.standard_error},
                            {"tasks", tasks.size()},
                            {"episodes", r.episodes},
                            {"per_task", r.per_task}});
        }
    }
    std::cout << table.str();
    const fs::path out = a.out.empty() ? fs::path(a.ckpt).parent_path() : fs::path(a.out);
    const nlohmann::json doc = {{"checkpoint", a.ckpt}, {"corpus", cfg.corpus.string()}, {"seed", cfg.eval.seed},
                                {"trials", cfg.eval.trials}, {"results", rows}};
    write_text(out / "metrics.json", doc.dump(2) + "\n");
    write_text(out / "metrics.txt", table.str());
    if (!a.emit_embeddings.empty()) {
        SamplerConfig sampler = cfg.train.sampler;
        sampler.shots = cfg.eval.shots.front();
        emit_embeddings(a.emit_embeddings, pick_split(corpus, a.splits.front()), params, sampler, cfg.eval.seed);
    }
    return 0;
}

// ---- selftest ----

int cmd_selftest(const SelftestOptions& opts) {
    const auto results = run_selftest(opts);
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        std::printf("%-4s %-34s max_err=%.3e tol=%.1e trials=%zu %.2fs%s%s\n", r.passed ? "PASS" : "FAIL",
                    r.name.c_str(), r.max_error, r.tolerance, r.trials, r.seconds, r.detail.empty() ? "" : "  ",
                    r.detail.c_str());
    }
    std::printf("%s: %zu properties\n", ok ? "all passed" : "FAILED", results.size());
    return ok ? 0 : kExitSelftest;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hsml: meta-learning over heterogeneous attribute spaces"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "generate or ingest a task corpus");
    g->add_option("--kind", gen.kind, "circle-spiral, tabular or regression")->capture_default_str();
    g->add_option("--tasks", gen.tasks, "number of synthetic tasks")->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--out", gen.out, "output directory (default $HSML_OUTPUT_ROOT/corpus)");
    g->add_option("--in", gen.in, "tabular: a .csv file or a directory of them");
    g->add_option("--target", gen.target, "tabular: target column name");
    g->add_option("--task-kind", gen.task_kind, "tabular: classification or regression")->capture_default_str();
    g->add_option("--train-fraction", gen.train_fraction)->capture_default_str();
    g->add_option("--validation-fraction", gen.validation_fraction)->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "meta-train on a corpus");
    t->add_option("--config", tr.config, "run configuration file");
    t->add_option("--ablate", tr.ablate, "ablation switch (repeatable)");
    t->add_option("--set", tr.set, "override section.key=value (repeatable)");
    t->add_option("--corpus", tr.corpus, "corpus directory (overrides data.corpus)");
    t->add_option("--out", tr.out, "output directory (overrides output.dir)");
    t->add_option("--seed", tr.seed, "training seed (overrides train.seed)");
    t->add_flag("--quiet", tr.quiet, "no per-interval progress");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
    e->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
    e->add_option("--corpus", ev.corpus, "corpus directory");
    e->add_option("--config", ev.config, "run configuration (sampler and eval sections)");
    e->add_option("--shots", ev.shots, "comma-separated shot counts, e.g. 1,3,5");
    e->add_option("--split", ev.splits, "splits to evaluate (repeatable)")->capture_default_str();
    e->add_option("--trials", ev.trials, "episodes per task");
    e->add_option("--seed", ev.seed, "evaluation seed");
    e->add_option("--out", ev.out, "directory for metrics.json/metrics.txt (default: checkpoint dir)");
    e->add_option("--emit-embeddings", ev.emit_embeddings, "write per-example embeddings to this CSV");

    SelftestOptions st;
    auto* s = app.add_subcommand("selftest", "run the property suites");
    s->add_option("--trials", st.trials, "trials per equivariance suite")->capture_default_str();
    s->add_flag("--double", st.use_double, "double precision with tighter tolerances");
    s->add_option("--seed", st.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (g->parsed()) return cmd_gen_data(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (s->parsed()) return cmd_selftest(st);
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return exit_code(err.kind());
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitData;
    }
    return 0;
}
