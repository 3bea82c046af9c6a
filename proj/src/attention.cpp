#include "hsml/attention.hpp"

#include <cmath>

#include "hsml/ops.hpp"

namespace hsml {

template <typename T>
VsaOutput<T> vsa_forward(const Tensor<T>& z, const VsaParams<T>& p) {
    if (z.rank() != 3 || z.dim(2) != p.in_dim()) {
        throw InvalidShape("vsa_forward: input " + shape_str(z.shape()) + " does not match projection " +
                           shape_str(p.w_q.shape()));
    }
    const Tensor<T> q = mode3_product(z, p.w_q);
    const Tensor<T> k = mode3_product(z, p.w_k);
    const Tensor<T> v = mode3_product(z, p.w_v);
    const T scale = T{1} / std::sqrt(static_cast<T>(z.dim(1) * p.key_dim()));
    const Tensor<T> scores = affine(matmul_nt(matricize_mode1(q), matricize_mode1(k)), scale);
    const Tensor<T> a = softmax_rows(scores);
    return {mode1_product(v, a), a.detach()};
}

template <typename T>
Tensor<T> mvsa_forward(const Tensor<T>& z, const MvsaParams<T>& p) {
    if (p.heads.empty()) throw InvalidConfig("mvsa_forward: at least one head required");
    std::vector<Tensor<T>> outs;
    outs.reserve(p.heads.size());
    for (const auto& head : p.heads) outs.push_back(vsa_forward(z, head).out);
    if (outs.size() == 1) return mode3_product(outs.front(), p.w_o);
    return mode3_product(concat_mode3<T>(outs), p.w_o);
}

double vsa_flop_estimate(std::size_t d1, std::size_t d2, std::size_t d3, std::size_t key_dim, std::size_t value_dim,
                         std::size_t out_dim) {
    const double n1 = static_cast<double>(d1), n2 = static_cast<double>(d2), n3 = static_cast<double>(d3);
    return n1 * n1 * n2 * static_cast<double>(key_dim + out_dim) + n1 * n2 * n3 * static_cast<double>(key_dim + value_dim);
}

template <typename T>
Tensor<T> init_uniform(std::size_t rows, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(rows * fan_in);
    for (auto& x : data) x = static_cast<T>(dist(rng));
    return Tensor<T>({rows, fan_in}, std::move(data));
}

template <typename T>
MvsaParams<T> init_mvsa(std::size_t in_dim, std::size_t heads, std::size_t key_dim, std::size_t value_dim,
                        std::size_t out_dim, std::mt19937_64& rng) {
    if (heads == 0) throw InvalidConfig("init_mvsa: at least one head required");
    MvsaParams<T> p;
    for (std::size_t r = 0; r < heads; ++r) {
        VsaParams<T> h;
        h.w_q = init_uniform<T>(key_dim, in_dim, rng);
        h.w_k = init_uniform<T>(key_dim, in_dim, rng);
        h.w_v = init_uniform<T>(value_dim, in_dim, rng);
        p.heads.push_back(std::move(h));
    }
    p.w_o = init_uniform<T>(out_dim, heads * value_dim, rng);
    return p;
}

template VsaOutput<float> vsa_forward(const Tensor<float>&, const VsaParams<float>&);
template VsaOutput<double> vsa_forward(const Tensor<double>&, const VsaParams<double>&);
template Tensor<float> mvsa_forward(const Tensor<float>&, const MvsaParams<float>&);
template Tensor<double> mvsa_forward(const Tensor<double>&, const MvsaParams<double>&);
template Tensor<float> init_uniform(std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> init_uniform(std::size_t, std::size_t, std::mt19937_64&);
template MvsaParams<float> init_mvsa(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::mt19937_64&);
template MvsaParams<double> init_mvsa(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                                      std::mt19937_64&);

} // namespace hsml
