#include "hsml/episode.hpp"

#include <cmath>

#include "hsml/error.hpp"

namespace hsml {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw InvalidShape("matrix data length does not match " + std::to_string(r) + "x" +
                                                 std::to_string(c));
}

Matrix Matrix::select_rows(const std::vector<std::size_t>& idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = (*this)(idx[i], j);
    return out;
}

Matrix Matrix::select_cols(const std::vector<std::size_t>& idx) const {
    Matrix out(rows, idx.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = (*this)(i, idx[j]);
    return out;
}

std::string to_string(TaskKind kind) {
    return kind == TaskKind::classification ? "classification" : "regression";
}

TaskKind parse_task_kind(const std::string& text) {
    if (text == "classification") return TaskKind::classification;
    if (text == "regression") return TaskKind::regression;
    throw InvalidConfig("unknown task kind '" + text + "' (expected classification or regression)");
}

std::size_t one_hot_index(const Matrix& y, std::size_t row) {
    std::size_t hot = y.cols;
    for (std::size_t c = 0; c < y.cols; ++c) {
        const double v = y(row, c);
        if (v == 1.0) {
            if (hot != y.cols) throw InvalidEpisode("label row " + std::to_string(row) + " has several ones");
            hot = c;
        } else if (v != 0.0) {
            throw InvalidEpisode("label row " + std::to_string(row) + " is not one-hot");
        }
    }
    if (hot == y.cols) throw InvalidEpisode("label row " + std::to_string(row) + " has no class");
    return hot;
}

std::vector<std::size_t> Episode::labeled_classes() const {
    std::vector<std::size_t> out(y_labeled.rows);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = one_hot_index(y_labeled, i);
    return out;
}

std::vector<std::size_t> Episode::unlabeled_classes() const {
    if (!has_held_out()) throw InvalidEpisode("episode has no held-out labels");
    std::vector<std::size_t> out(y_unlabeled.rows);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = one_hot_index(y_unlabeled, i);
    return out;
}

void Episode::validate(bool require_class_coverage) const {
    if (n_labeled() == 0 || n_unlabeled() == 0) throw InvalidEpisode("episode needs at least one labeled and one unlabeled example");
    if (num_attributes() == 0 || num_targets() == 0) throw InvalidEpisode("episode needs at least one attribute and one target");
    if (x_unlabeled.cols != num_attributes()) throw InvalidEpisode("labeled and unlabeled attribute counts differ");
    if (y_labeled.rows != n_labeled()) throw InvalidEpisode("label rows do not match labeled examples");
    if (has_held_out() && (y_unlabeled.rows != n_unlabeled() || y_unlabeled.cols != num_targets()))
        throw InvalidEpisode("held-out label shape does not match unlabeled set");
    for (const auto* m : {&x_labeled, &y_labeled, &x_unlabeled, &y_unlabeled})
        for (double v : m->data)
            if (!std::isfinite(v)) throw InvalidValue("episode contains a non-finite value");
    if (kind == TaskKind::classification) {
        std::vector<std::size_t> counts(num_targets(), 0);
        for (auto c : labeled_classes()) ++counts[c];
        for (std::size_t c = 0; c < counts.size() && require_class_coverage; ++c)
            if (counts[c] == 0) throw InvalidEpisode("class " + std::to_string(c) + " has no labeled example");
        if (has_held_out()) unlabeled_classes();
    }
}

} // namespace hsml
