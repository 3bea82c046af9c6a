#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsml/data.hpp"
#include "hsml/heads.hpp"
#include "hsml/model.hpp"

namespace hsml {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t episodes_per_step = 8; // gradient accumulation group
    std::size_t max_epochs = 5000;     // one epoch = |meta-train| episodes
    std::size_t validation_interval = 10; // epochs between validation checks
    std::size_t patience = 50;            // validation checks without improvement
    std::uint64_t seed = 0;
    HeadKind head = HeadKind::prototype;
    double clip_norm = 5.0; // global gradient norm; 0 disables
    std::vector<std::size_t> train_shots = {1, 3, 5}; // drawn per training episode
    std::size_t validation_trials = 4; // fixed episodes per validation task
    double max_skip_ratio = 0.01;
    SamplerConfig sampler;

    void validate() const;
    std::size_t steps_per_epoch(std::size_t train_tasks) const;
};

struct IntervalRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0.0; // mean episode loss since the previous record
    double val_loss = 0.0;
    double val_metric = 0.0; // accuracy or MSE
    bool best = false;

    bool operator==(const IntervalRecord&) const = default;
};

struct TrainReport {
    std::vector<IntervalRecord> intervals;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t stop_epoch = 0;
    std::string stop_reason; // "max_epochs" or "early_stop"
    std::size_t episodes = 0;
    std::size_t skipped = 0;
    double wall_clock_seconds = 0.0;

    /// Key-value text, one record per line.
    std::string to_text() const;
    /// Equality ignores wall-clock time.
    bool same_run(const TrainReport& other) const;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update in place. Throws NumericalFailure (and
/// leaves params and state untouched) when a gradient is non-finite.
template <typename T>
void adam_step(std::span<T> params, std::span<const double> grads, AdamState& state, double lr);

/// Scales `grads` so that its Euclidean norm is at most max_norm; returns the
/// norm before clipping. max_norm <= 0 leaves it alone.
double clip_global_norm(std::span<double> grads, double max_norm);

/// Class index of every row of a one-hot label matrix.
std::vector<std::size_t> label_indices(const Matrix& y);

template <typename T>
struct EpisodeOutput {
    Tensor<T> loss;         // scalar
    Tensor<T> predictions;  // posteriors [N^U, C] or GP mean [N^U, C]
};

/// Forward pass plus the head's held-out loss for one episode.
template <typename T>
EpisodeOutput<T> episode_forward(const Episode& ep, const ModelParams<T>& params, HeadKind head);

/// Fraction of rows whose argmax (first on ties) equals the label.
double accuracy(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels);
double mean_squared_error(std::span<const double> pred, std::span<const double> target);

struct StepResult {
    double loss = 0.0;          // mean over the episodes that were not skipped
    std::vector<double> grad;   // mean gradient, flattened parameter order
    std::size_t used = 0;
    std::size_t skipped = 0;
};

/// Owns the float parameters and the optimizer state.
class Trainer {
public:
    Trainer(ModelParams<float> params, TrainConfig cfg);

    /// Mean loss and mean gradient over the episodes; episodes whose forward
    /// or backward raises NumericalFailure are skipped.
    StepResult accumulate(std::span<const Episode> episodes) const;

    /// accumulate + clip + Adam. Returns the step result (gradient pre-clip).
    StepResult step(std::span<const Episode> episodes);

    const ModelParams<float>& params() const { return params_; }
    const AdamState& optimizer() const { return adam_; }
    const TrainConfig& config() const { return cfg_; }

private:
    ModelParams<float> params_;
    TrainConfig cfg_;
    AdamState adam_;
};

struct TrainResult {
    ModelParams<float> best;
    ModelParams<float> final;
    TrainReport report;
};

using IntervalCallback = std::function<void(const IntervalRecord&)>;

/// Episodic meta-training with early stopping on the meta-validation loss.
TrainResult meta_train(const CorpusSplit& corpus, const ModelConfig& mcfg, const TrainConfig& tcfg,
                       const IntervalCallback& on_interval = {});

struct EvalResult {
    std::string metric; // "accuracy" or "mse"
    double mean = 0.0;
    double standard_error = 0.0; // across tasks
    std::vector<double> per_task;
    std::size_t episodes = 0;
};

/// Samples `trials` episodes per task with the given sampler settings and
/// averages the per-episode metric within each task, then across tasks.
EvalResult evaluate(std::span<const TaskDataset> tasks, const ModelParams<float>& params, HeadKind head,
                    const SamplerConfig& sampler, std::size_t trials, std::uint64_t seed);

/// Binary checkpoint: see docs/formats.md.
void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

} // namespace hsml
