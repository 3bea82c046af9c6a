#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hsml/model.hpp"
#include "hsml/tensor.hpp"

namespace hsml {

enum class HeadKind { prototype, gaussian_process };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

template <typename T>
struct Prototypes {
    Tensor<T> means;                 // [C, H]
    std::vector<std::size_t> counts; // labeled examples per class
};

/// Class means of the labeled embeddings. InvalidEpisode if a class is empty.
template <typename T>
Prototypes<T> compute_prototypes(const Tensor<T>& z_labeled, std::span<const std::size_t> labels,
                                 std::size_t num_classes);

/// Softmax over negative squared distances to the prototypes, one row per
/// embedding in `z` ([N, H] -> [N, C]).
template <typename T>
Tensor<T> class_posterior(const Tensor<T>& z, const Prototypes<T>& protos);

/// Mean negative log-likelihood of the true classes, probabilities floored at 1e-12.
template <typename T>
Tensor<T> classification_loss(const Tensor<T>& posteriors, std::span<const std::size_t> labels);

/// k(a, b) = exp(-||a - b||^2 / (2 l^2)).
double rbf_kernel(std::span<const double> a, std::span<const double> b, double lengthscale);

/// Differentiable RBF kernel matrix between the rows of a and b.
template <typename T>
Tensor<T> rbf_kernel_matrix(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& log_lengthscale);

template <typename T>
struct GpPrediction {
    Tensor<T> mean;     // [N^U, C]
    Tensor<T> variance; // [N^U], latent variance k(z,z) - k^T K^-1 k clamped at 0
};

/// GP posterior at each unlabeled embedding given the labeled embeddings and
/// targets. K carries the learned noise variance plus escalating jitter.
template <typename T>
GpPrediction<T> gp_predict(const Tensor<T>& z_unlabeled, const Tensor<T>& z_labeled, const Tensor<T>& y_labeled,
                           const GpHead<T>& head);

/// Mean Gaussian negative log-likelihood of the held-out targets, variance floored at 1e-8.
template <typename T>
Tensor<T> regression_loss(const GpPrediction<T>& pred, const Tensor<T>& y_unlabeled);

} // namespace hsml
