// Acceptance run: one PASS/FAIL line per criterion, tolerances printed with
// the measured value. The training criteria run full meta-training on the
// synthetic corpora and dominate the runtime.
//
//   acceptance [--workdir DIR] [--only 1,2,7]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hsml/config.hpp"
#include "hsml/data.hpp"
#include "hsml/error.hpp"
#include "hsml/selftest.hpp"
#include "hsml/trainer.hpp"

using namespace hsml;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kCorpusSeed = 7;
constexpr std::uint64_t kSplitSeed = 7;
constexpr std::uint64_t kTrainSeed = 1;
constexpr std::uint64_t kEvalSeed = 100;
constexpr std::size_t kEvalTrials = 20;
constexpr std::size_t kMaxEpochs = 2000;
constexpr double kLearningRate = 3e-4;

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string summarize(const std::vector<PropertyResult>& results, bool& all) {
    std::ostringstream out;
    all = true;
    for (const auto& r : results) {
        all = all && r.passed;
        out << "\n    " << (r.passed ? "ok  " : "FAIL") << ' ' << r.name << " max_err=" << fmt("%.3g", r.max_error)
            << " tol=" << fmt("%.0e", r.tolerance) << " trials=" << r.trials;
        if (!r.detail.empty()) out << " (" << r.detail << ')';
    }
    return out.str();
}

Outcome timed_suite(const std::function<std::vector<PropertyResult>()>& run, double budget_s) {
    const auto t0 = Clock::now();
    const auto results = run();
    const double s = seconds_since(t0);
    bool all = false;
    std::string detail = summarize(results, all);
    detail = "runtime " + fmt("%.2f", s) + " s (limit " + fmt("%.0f", budget_s) + " s)" + detail;
    return {all && s < budget_s, detail};
}

// ---- training criteria --------------------------------------------------------

TrainConfig base_train(HeadKind head) {
    TrainConfig t;
    t.learning_rate = kLearningRate;
    t.max_epochs = kMaxEpochs;
    t.seed = kTrainSeed;
    t.head = head;
    return t;
}

struct TrainedRun {
    ModelParams<float> params;
    TrainReport report;
};

TrainedRun train(const std::string& label, const CorpusSplit& corpus, const ModelConfig& mcfg, const TrainConfig& tcfg,
                 const fs::path& workdir) {
    std::cerr << "[" << label << "] training, up to " << tcfg.max_epochs << " epochs\n";
    auto result = meta_train(corpus, mcfg, tcfg, [&](const IntervalRecord& r) {
        if (r.epoch % 100 == 0)
            std::cerr << "[" << label << "] epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss "
                      << r.val_loss << " val_metric " << r.val_metric << "\n";
    });
    const fs::path dir = workdir / label;
    fs::create_directories(dir);
    save_checkpoint(result.best, dir / "best.ckpt");
    std::ofstream(dir / "report.txt") << result.report.to_text();
    std::cerr << "[" << label << "] stopped at epoch " << result.report.stop_epoch << " (" << result.report.stop_reason
              << "), best epoch " << result.report.best_epoch << ", " << fmt("%.0f", result.report.wall_clock_seconds)
              << " s\n";
    return {result.best, result.report};
}

double eval_shots(const CorpusSplit& corpus, const ModelParams<float>& params, HeadKind head, std::size_t shots) {
    SamplerConfig s;
    s.shots = shots;
    return evaluate(corpus.test, params, head, s, kEvalTrials, kEvalSeed).mean;
}

struct CircleSpiral {
    CorpusSplit corpus;
    std::optional<TrainedRun> full;
    std::vector<double> acc; // 1, 3, 5 shots
};

CircleSpiral& circle_spiral(const fs::path& workdir) {
    static CircleSpiral cs;
    if (cs.full) return cs;
    cs.corpus = split_corpus(generate_circle_spiral_corpus(kCorpusSeed, 100), kSplitSeed);
    cs.full = train("full", cs.corpus, ModelConfig{}, base_train(HeadKind::prototype), workdir);
    for (std::size_t k : {1, 3, 5}) cs.acc.push_back(eval_shots(cs.corpus, cs.full->params, HeadKind::prototype, k));
    return cs;
}

Outcome criterion7(const fs::path& workdir) {
    const auto t0 = Clock::now();
    const auto& cs = circle_spiral(workdir);
    const double a1 = cs.acc[0], a3 = cs.acc[1], a5 = cs.acc[2];
    const bool monotone = a3 >= a1 - 0.01 && a5 >= a3 - 0.01;
    Outcome o;
    o.passed = a1 >= 0.80 && a5 >= 0.90 && monotone && cs.full->report.stop_epoch <= kMaxEpochs;
    o.detail = "1-shot " + fmt("%.4f", a1) + " (>= 0.80), 3-shot " + fmt("%.4f", a3) + ", 5-shot " + fmt("%.4f", a5) +
               " (>= 0.90), non-decreasing within 0.01: " + (monotone ? "yes" : "no") + "; stopped at epoch " +
               std::to_string(cs.full->report.stop_epoch) + " (<= " + std::to_string(kMaxEpochs) + "), " +
               fmt("%.0f", seconds_since(t0)) + " s";
    return o;
}

Outcome criterion8(const fs::path& workdir) {
    const auto& cs = circle_spiral(workdir);
    ModelConfig example_only;
    set_ablation(example_only.ablation, "example-attn-only");
    ModelConfig no_res;
    set_ablation(no_res.ablation, "drop-residual");
    const auto ex = train("example-attn-only", cs.corpus, example_only, base_train(HeadKind::prototype), workdir);
    const auto nr = train("drop-residual", cs.corpus, no_res, base_train(HeadKind::prototype), workdir);
    const double full5 = cs.acc[2];
    const double ex5 = eval_shots(cs.corpus, ex.params, HeadKind::prototype, 5);
    const double nr5 = eval_shots(cs.corpus, nr.params, HeadKind::prototype, 5);
    Outcome o;
    o.passed = full5 - ex5 >= 0.05 && nr5 <= 0.45;
    o.detail = "5-shot full " + fmt("%.4f", full5) + " - example-attn-only " + fmt("%.4f", ex5) + " = " +
               fmt("%.4f", full5 - ex5) + " (>= 0.05); drop-residual " + fmt("%.4f", nr5) + " (<= 0.45)";
    return o;
}

Outcome criterion9(const fs::path& workdir) {
    const auto t0 = Clock::now();
    const auto corpus = split_corpus(generate_regression_corpus(kCorpusSeed, 100), kSplitSeed);
    const auto run = train("regression", corpus, ModelConfig{}, base_train(HeadKind::gaussian_process), workdir);
    SamplerConfig s;
    const double mse = evaluate(corpus.test, run.params, HeadKind::gaussian_process, s, kEvalTrials, kEvalSeed).mean;
    const double s_total = seconds_since(t0);
    Outcome o;
    o.passed = mse <= 0.7 && s_total <= 1800.0;
    o.detail = "test MSE " + fmt("%.4f", mse) + " (<= 0.70, predict-zero baseline 1.0); runtime " +
               fmt("%.0f", s_total) + " s (limit 1800 s)";
    return o;
}

Outcome criterion10(const fs::path& workdir) {
    const auto& cs = circle_spiral(workdir);
    const auto again = train("full-repeat", cs.corpus, ModelConfig{}, base_train(HeadKind::prototype), workdir);
    std::vector<double> acc;
    for (std::size_t k : {1, 3, 5}) acc.push_back(eval_shots(cs.corpus, again.params, HeadKind::prototype, k));
    Outcome o;
    std::ostringstream d;
    d.precision(17);
    d << "accuracies " << cs.acc[0] << ' ' << cs.acc[1] << ' ' << cs.acc[2] << " vs " << acc[0] << ' ' << acc[1] << ' '
      << acc[2] << "; reports " << (again.report.same_run(cs.full->report) ? "identical" : "differ");
    o.passed = acc == cs.acc && again.report.same_run(cs.full->report);
    o.detail = d.str();
    return o;
}

std::set<int> parse_only(const std::string& text) {
    std::set<int> out;
    for (auto v : parse_size_list("--only", text)) out.insert(static_cast<int>(v));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    fs::path workdir = "acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--workdir" && i + 1 < argc) workdir = argv[++i];
        else if (a == "--only" && i + 1 < argc) only = parse_only(argv[++i]);
        else {
            std::cerr << "usage: acceptance [--workdir DIR] [--only N,M,...]\n";
            return 2;
        }
    }
    fs::create_directories(workdir);
    // Independent stream per criterion.
    const auto seed_for = [](std::uint64_t id) { return derive_seed(20240601, id); };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"equivariance suite (VSA/MVSA x mode-1/mode-2, 100 trials each, float 1e-5 / double 1e-10, < 10 s)",
         [=] {
             return timed_suite(
                 [&] {
                     auto r = check_attention_equivariance(100, false, seed_for(1));
                     auto d = check_attention_equivariance(100, true, derive_seed(seed_for(1), 1));
                     r.insert(r.end(), d.begin(), d.end());
                     return r;
                 },
                 10.0);
         }},
        {"episode-level equivariances and non-equivariance witnesses (50 episodes, 1e-5, < 30 s)",
         [&] { return timed_suite([&] { return check_model_equivariance(50, false, seed_for(2)); }, 30.0); }},
        {"end-to-end gradient check (double, h=1e-5, B=2 R=2 H=4, rel err < 1e-4, < 60 s)",
         [&] { return timed_suite([&] { return check_model_gradients(seed_for(3)); }, 60.0); }},
        {"standard-attention reduction at D2=1 (50 cases, 1e-6)",
         [&] { return timed_suite([&] { return std::vector{check_standard_attention(50, seed_for(4))}; }, 60.0); }},
        {"expanded single-head oracle (20 episodes, 1e-5)",
         [&] { return timed_suite([&] { return std::vector{check_expanded_oracle(20, seed_for(5))}; }, 60.0); }},
        {"GP head oracle (dense posterior 1e-8, interpolation 1e-6)",
         [&] { return timed_suite([&] { return check_gp_oracle(50, seed_for(6)); }, 60.0); }},
        {"circle-spiral reproduction (100 tasks, 70/10/20, <= 2000 epochs)", [&] { return criterion7(workdir); }},
        {"ablation orderings (full - example-attn-only >= 0.05 at 5-shot, drop-residual <= 0.45)",
         [&] { return criterion8(workdir); }},
        {"regression head (test MSE <= 0.70 on standardized targets)", [&] { return criterion9(workdir); }},
        {"determinism (criterion 7 twice, identical accuracies)", [&] { return criterion10(workdir); }},
    };

    int failed = 0;
    std::ofstream summary(workdir / "summary.txt");
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.passed;
        std::ostringstream line;
        line << (o.passed ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << "\n    " << o.detail << "\n";
        std::cout << line.str() << std::flush;
        summary << line.str() << std::flush;
    }
    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed")) << "\n";
    return failed ? 1 : 0;
}
