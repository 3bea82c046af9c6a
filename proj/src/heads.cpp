#include "hsml/heads.hpp"

#include <cmath>

#include "hsml/ops.hpp"

namespace hsml {

std::string to_string(HeadKind kind) {
    return kind == HeadKind::prototype ? "prototype" : "gp";
}

HeadKind parse_head_kind(const std::string& text) {
    if (text == "prototype") return HeadKind::prototype;
    if (text == "gp") return HeadKind::gaussian_process;
    throw InvalidConfig("unknown head '" + text + "' (expected prototype or gp)");
}

template <typename T>
Prototypes<T> compute_prototypes(const Tensor<T>& z_labeled, std::span<const std::size_t> labels,
                                 std::size_t num_classes) {
    if (z_labeled.rank() != 2 || labels.size() != z_labeled.dim(0))
        throw InvalidShape("compute_prototypes: embeddings " + shape_str(z_labeled.shape()) + " vs " +
                           std::to_string(labels.size()) + " labels");
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto c : labels) {
        if (c >= num_classes) throw InvalidEpisode("compute_prototypes: label out of range");
        ++counts[c];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c] == 0) throw InvalidEpisode("class " + std::to_string(c) + " has no labeled example");
    const std::size_t n = labels.size();
    std::vector<T> averaging(num_classes * n, T{0});
    for (std::size_t i = 0; i < n; ++i) averaging[labels[i] * n + i] = T{1} / static_cast<T>(counts[labels[i]]);
    return {matmul(Tensor<T>({num_classes, n}, std::move(averaging)), z_labeled), std::move(counts)};
}

template <typename T>
Tensor<T> class_posterior(const Tensor<T>& z, const Prototypes<T>& protos) {
    if (z.rank() != 2 || z.dim(1) != protos.means.dim(1))
        throw InvalidShape("class_posterior: embedding " + shape_str(z.shape()) + " vs prototypes " +
                           shape_str(protos.means.shape()));
    return softmax_rows(affine(sq_dist(z, protos.means), T{-1}));
}

template <typename T>
Tensor<T> classification_loss(const Tensor<T>& posteriors, std::span<const std::size_t> labels) {
    return nll_from_probs(posteriors, labels, 1e-12);
}

double rbf_kernel(std::span<const double> a, std::span<const double> b, double lengthscale) {
    if (a.size() != b.size()) throw InvalidShape("rbf_kernel: dimension mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-d2 / (2.0 * lengthscale * lengthscale));
}

template <typename T>
Tensor<T> rbf_kernel_matrix(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& log_lengthscale) {
    const Tensor<T> inv_sq_len = exp(affine(log_lengthscale, T{-2}));
    return exp(affine(mul_scalar(sq_dist(a, b), inv_sq_len), T{-0.5}));
}

template <typename T>
GpPrediction<T> gp_predict(const Tensor<T>& z_unlabeled, const Tensor<T>& z_labeled, const Tensor<T>& y_labeled,
                           const GpHead<T>& head) {
    if (y_labeled.rank() != 2 || y_labeled.dim(0) != z_labeled.dim(0))
        throw InvalidShape("gp_predict: targets " + shape_str(y_labeled.shape()) + " vs labeled embeddings " +
                           shape_str(z_labeled.shape()));
    const Tensor<T> k = add_scaled_identity(rbf_kernel_matrix(z_labeled, z_labeled, head.log_lengthscale),
                                            exp(head.log_noise));
    const Tensor<T> k_star = rbf_kernel_matrix(z_unlabeled, z_labeled, head.log_lengthscale); // [N^U, N^L]
    const Tensor<T> mean = matmul(k_star, spd_solve(k, y_labeled, head.jitter));
    const Tensor<T> solved = spd_solve(k, transpose(k_star), head.jitter); // [N^L, N^U]
    const Tensor<T> explained = row_sum(mul(k_star, transpose(solved)));
    return {mean, relu(affine(explained, T{-1}, T{1}))};
}

template <typename T>
Tensor<T> regression_loss(const GpPrediction<T>& pred, const Tensor<T>& y_unlabeled) {
    return gaussian_nll(pred.mean, pred.variance, y_unlabeled, 1e-8);
}

#define HSML_INSTANTIATE(T)                                                                                       \
    template Prototypes<T> compute_prototypes(const Tensor<T>&, std::span<const std::size_t>, std::size_t);       \
    template Tensor<T> class_posterior(const Tensor<T>&, const Prototypes<T>&);                                   \
    template Tensor<T> classification_loss(const Tensor<T>&, std::span<const std::size_t>);                       \
    template Tensor<T> rbf_kernel_matrix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template GpPrediction<T> gp_predict(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const GpHead<T>&); \
    template Tensor<T> regression_loss(const GpPrediction<T>&, const Tensor<T>&);

HSML_INSTANTIATE(float)
HSML_INSTANTIATE(double)

#undef HSML_INSTANTIATE

} // namespace hsml
