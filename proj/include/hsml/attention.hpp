#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "hsml/tensor.hpp"

namespace hsml {

/// Projections of one variable-feature self-attention head. Shapes depend
/// only on the third-mode width, so one parameter set serves inputs whose
/// first two modes vary call to call.
template <typename T>
struct VsaParams {
    Tensor<T> w_q; // [key_dim, in_dim]
    Tensor<T> w_k; // [key_dim, in_dim]
    Tensor<T> w_v; // [value_dim, in_dim]

    std::size_t in_dim() const { return w_q.dim(1); }
    std::size_t key_dim() const { return w_q.dim(0); }
    std::size_t value_dim() const { return w_v.dim(0); }

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + "w_q", w_q);
        f(prefix + "w_k", w_k);
        f(prefix + "w_v", w_v);
    }
};

template <typename T>
struct MvsaParams {
    std::vector<VsaParams<T>> heads;
    Tensor<T> w_o; // [out_dim, heads * value_dim]

    std::size_t out_dim() const { return w_o.dim(0); }

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        for (std::size_t r = 0; r < heads.size(); ++r) heads[r].for_each(prefix + "head" + std::to_string(r) + ".", f);
        f(prefix + "w_o", w_o);
    }
};

template <typename T>
struct VsaOutput {
    Tensor<T> out;       // [D1, D2, value_dim]
    Tensor<T> attention; // [D1, D1], detached copy for diagnostics
};

/// Single VSA head:
///   A = softmax_rows(Q_(1) K_(1)^T / sqrt(D2 * key_dim)),  O = V x_1 A
/// with Q, K, V the mode-3 projections of z. The scale uses the runtime D2.
template <typename T>
VsaOutput<T> vsa_forward(const Tensor<T>& z, const VsaParams<T>& p);

/// R heads concatenated along mode 3 in head order, then projected by w_o.
template <typename T>
Tensor<T> mvsa_forward(const Tensor<T>& z, const MvsaParams<T>& p);

/// Operation count D1^2 D2 (Hk + H) + D1 D2 D3 (Hk + Hv) used by the
/// scaling benchmark.
double vsa_flop_estimate(std::size_t d1, std::size_t d2, std::size_t d3, std::size_t key_dim, std::size_t value_dim,
                         std::size_t out_dim);

/// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a [rows, fan_in] matrix.
template <typename T>
Tensor<T> init_uniform(std::size_t rows, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
MvsaParams<T> init_mvsa(std::size_t in_dim, std::size_t heads, std::size_t key_dim, std::size_t value_dim,
                        std::size_t out_dim, std::mt19937_64& rng);

} // namespace hsml
