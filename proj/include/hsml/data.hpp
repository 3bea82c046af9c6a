#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsml/episode.hpp"

namespace hsml {

/// A full dataset for one task.
struct TaskDataset {
    std::string name;
    TaskKind kind = TaskKind::classification;
    Matrix x; // N x M attributes
    Matrix y; // N x C one-hot labels, or N x C real targets
    std::vector<std::string> attribute_names;
    std::vector<std::string> target_names; // class names, or regression target column names
    std::map<std::string, std::string> provenance;

    std::size_t num_examples() const { return x.rows; }
    std::size_t num_attributes() const { return x.cols; }
    std::size_t num_targets() const { return y.cols; }

    /// Class index per row (classification only).
    std::vector<std::size_t> classes() const;
    std::vector<std::size_t> class_counts() const;

    void validate() const;
    bool operator==(const TaskDataset&) const = default;
};

/// Shape of the synthetic generators. The defaults are this project's
/// choice; all of them are overridable.
struct GeneratorConfig {
    std::size_t examples = 100;
    double inner_radius = 1.0;
    double outer_radius = 2.0;
    double radial_jitter = 0.05; // std. dev. of the circle radius noise
    double spiral_t_min = 0.25;
    double spiral_t_max = 2.25;
    double spiral_noise = 0.03; // per-coordinate std. dev.
    double regression_noise = 0.1;
};

inline constexpr std::size_t kMinSyntheticAttributes = 2;
inline constexpr std::size_t kMaxSyntheticAttributes = 10;
inline constexpr std::size_t kSpiralArms = 5;

/// Two concentric circles (classes 0/1, half each); the two signal columns
/// sit at random positions among M columns, the rest are standard normal.
TaskDataset generate_circle_task(std::uint64_t seed, std::size_t num_attributes, const GeneratorConfig& cfg = {});

/// Five spiral arms, class c at angle 2 pi t + 2 pi c / 5 and radius t.
TaskDataset generate_spiral_task(std::uint64_t seed, std::size_t num_attributes, const GeneratorConfig& cfg = {});

/// `num_tasks` tasks, each circle or spiral with probability 1/2 and
/// M uniform on 2..10.
std::vector<TaskDataset> generate_circle_spiral_corpus(std::uint64_t seed, std::size_t num_tasks = 100,
                                                       const GeneratorConfig& cfg = {});

/// Heterogeneous regression: a random linear function of a random subset of
/// the attributes plus noise, standardized targets.
TaskDataset generate_linear_regression_task(std::uint64_t seed, std::size_t num_attributes,
                                            const GeneratorConfig& cfg = {});
std::vector<TaskDataset> generate_regression_corpus(std::uint64_t seed, std::size_t num_tasks,
                                                    const GeneratorConfig& cfg = {});

/// Reads a comma-separated table with a header row. Numeric missing values
/// become the column mean, categorical ones the column mode; categorical
/// attributes are one-hot expanded; attributes are min-max scaled to [0,1]
/// (constant columns become 0). Classification targets are label-encoded in
/// sorted order; regression targets are standardized.
TaskDataset ingest_tabular(const std::filesystem::path& path, const std::string& target_column, TaskKind kind);

/// Canonical on-disk form: `<dir>/<name>.csv` plus `<dir>/<name>.meta`.
void write_dataset(const TaskDataset& ds, const std::filesystem::path& dir);
/// Reads the canonical form back bit-exactly.
TaskDataset read_dataset(const std::filesystem::path& csv_path);

struct CorpusSplit {
    std::vector<TaskDataset> train;
    std::vector<TaskDataset> validation;
    std::vector<TaskDataset> test;
    std::uint64_t seed = 0;
};

/// Random disjoint split; default proportions 70/10/20.
CorpusSplit split_corpus(std::vector<TaskDataset> tasks, std::uint64_t seed, double train_fraction = 0.7,
                         double validation_fraction = 0.1);

/// Writes every dataset plus `manifest.ini` recording the split assignment.
void write_corpus(const CorpusSplit& split, const std::filesystem::path& dir);
CorpusSplit read_corpus(const std::filesystem::path& dir);

struct SamplerConfig {
    std::size_t shots = 1;               // labeled per class (classification)
    std::size_t unlabeled = 20;          // per class, or in total when unlabeled_total
    bool unlabeled_total = false;
    std::size_t regression_labeled = 10; // regression episode sizes
    std::size_t regression_unlabeled = 20;
    /// When a class has fewer than shots + unlabeled examples, take all the
    /// remaining ones as unlabeled (at least one) instead of skipping the task.
    bool cap_unlabeled = true;

    void validate() const;
};

bool sampleable(const TaskDataset& ds, const SamplerConfig& cfg);

/// Draws labeled and unlabeled examples without replacement. Returns
/// std::nullopt (skip-task signal) when the dataset is too small.
std::optional<Episode> sample_episode(const TaskDataset& ds, const SamplerConfig& cfg, std::mt19937_64& rng);

/// Seed for the i-th item derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

} // namespace hsml
