#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hsml {

/// Row-major real matrix for data handling (attribute/label tables).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    /// Rows selected by index, in the given order.
    Matrix select_rows(const std::vector<std::size_t>& idx) const;
    Matrix select_cols(const std::vector<std::size_t>& idx) const;

    bool operator==(const Matrix&) const = default;
};

enum class TaskKind { classification, regression };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// One task instance: labeled support set, unlabeled set, and the held-out
/// labels of the unlabeled set (empty at pure inference).
struct Episode {
    Matrix x_labeled;   // N^L x M
    Matrix y_labeled;   // N^L x C, one-hot or real targets
    Matrix x_unlabeled; // N^U x M
    Matrix y_unlabeled; // N^U x C, may be empty
    TaskKind kind = TaskKind::classification;

    std::size_t n_labeled() const { return x_labeled.rows; }
    std::size_t n_unlabeled() const { return x_unlabeled.rows; }
    std::size_t num_attributes() const { return x_labeled.cols; }
    std::size_t num_targets() const { return y_labeled.cols; }
    bool has_held_out() const { return y_unlabeled.rows > 0; }

    /// Class index per labeled row (classification only).
    std::vector<std::size_t> labeled_classes() const;
    /// Class index per unlabeled row; requires held-out labels.
    std::vector<std::size_t> unlabeled_classes() const;

    /// Throws InvalidEpisode / InvalidValue when the structural invariants fail.
    /// Class coverage only matters to the heads; the input tensor is defined
    /// without it.
    void validate(bool require_class_coverage = true) const;
};

/// Index of the single 1 in a one-hot row; InvalidEpisode otherwise.
std::size_t one_hot_index(const Matrix& y, std::size_t row);

} // namespace hsml
