#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hsml/tensor.hpp"

// Differentiable tensor algebra. Every op validates shapes, checks its output
// for non-finite values (NumericalFailure naming the op) and, when any input
// is on a tape, records a backward rule on that tape.
namespace hsml {

// ---- three-mode algebra ----

/// out[d1,d2,h] = sum_k z[d1,d2,k] * w[h,k]
template <typename T>
Tensor<T> mode3_product(const Tensor<T>& z, const Tensor<T>& w);

/// out[d1,d2,h] = sum_j a[d1,j] * v[j,d2,h]
template <typename T>
Tensor<T> mode1_product(const Tensor<T>& v, const Tensor<T>& a);

/// Row i is the flattened slice q[i,:,:].
template <typename T>
Tensor<T> matricize_mode1(const Tensor<T>& q);

/// out[j,i,k] = z[i,j,k]
template <typename T>
Tensor<T> transpose12(const Tensor<T>& z);

/// Concatenation along mode 3 in argument order.
template <typename T>
Tensor<T> concat_mode3(std::span<const Tensor<T>> parts);

/// Sub-tensor z[r0:r1, c0:c1, :].
template <typename T>
Tensor<T> slice12(const Tensor<T>& z, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// ---- matrices ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Row-wise softmax with max subtraction. Throws InvalidValue on non-finite input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m);

/// out[i,j] = ||a_i - b_j||^2
template <typename T>
Tensor<T> sq_dist(const Tensor<T>& a, const Tensor<T>& b);

/// Solves k * x = b for symmetric positive-definite k via Cholesky. A jitter
/// starting at `jitter` is added to the diagonal, escalated x10 up to
/// `max_jitter`; beyond that NumericalFailure. The jitter is not differentiated.
template <typename T>
Tensor<T> spd_solve(const Tensor<T>& k, const Tensor<T>& b, double jitter = 1e-8, double max_jitter = 1e-4);

/// k + s * I for a scalar tensor s.
template <typename T>
Tensor<T> add_scaled_identity(const Tensor<T>& k, const Tensor<T>& s);

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a);

// ---- elementwise / broadcasting ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// c * a + offset with constant c and offset.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T c, T offset = T{0});

/// a * s for a scalar tensor s.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);

template <typename T>
Tensor<T> exp(const Tensor<T>& a);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Adds b (length = last mode size) to every last-mode fiber.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& z, const Tensor<T>& b);

/// Normalizes every last-mode fiber to zero mean / unit variance (eps inside
/// the square root), then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& z, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

// ---- losses ----

/// -(1/N) sum_n log max(p[n, label_n], floor)
template <typename T>
Tensor<T> nll_from_probs(const Tensor<T>& probs, std::span<const std::size_t> labels, double floor = 1e-12);

/// Mean over all (n, c) of the Gaussian negative log-likelihood of y[n,c]
/// under N(mean[n,c], var[n]); var is floored at `var_floor`.
template <typename T>
Tensor<T> gaussian_nll(const Tensor<T>& mean, const Tensor<T>& var, const Tensor<T>& y, double var_floor = 1e-8);

// ---- non-differentiable helpers ----

/// Reorders mode-1 slices: out[i] = z[perm[i]].
template <typename T>
Tensor<T> permute_mode1(const Tensor<T>& z, std::span<const std::size_t> perm);

/// Reorders mode-2 slices: out[:,j] = z[:,perm[j]].
template <typename T>
Tensor<T> permute_mode2(const Tensor<T>& z, std::span<const std::size_t> perm);

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
    std::vector<To> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<To>(x[i]);
    return Tensor<To>(x.shape(), std::move(out));
}

} // namespace hsml
