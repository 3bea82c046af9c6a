#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hsml/attention.hpp"
#include "hsml/episode.hpp"
#include "hsml/tensor.hpp"

namespace hsml {

/// Architecture switches used by the ablation study.
struct Ablation {
    bool example_attn_only = false;      // skip attribute-wise blocks
    bool attribute_attn_only = false;    // skip example-wise blocks
    bool drop_observed_indicator = false;
    bool drop_attlab_indicators = false;
    bool drop_residual = false;
    bool drop_layernorm = false;

    bool operator==(const Ablation&) const = default;
};

/// Names accepted by set_ablation(): example-attn-only, attribute-attn-only,
/// drop-observed-indicator, drop-attlab-indicators, drop-residual, drop-layernorm.
void set_ablation(Ablation& a, const std::string& name, bool value = true);
std::vector<std::string> ablation_names();

enum class AttentionAxis { examples, attributes };

struct ModelConfig {
    std::size_t blocks = 3;
    std::size_t heads = 4;
    std::size_t key_dim = 32;
    std::size_t value_dim = 32;
    std::size_t hidden = 32;    // MVSA output and inner block width
    std::size_t out_dim = 1;    // last block width; embedding dim is M * out_dim
    std::size_t ff_layers = 3;
    std::size_t ff_hidden = 32;
    double gp_init_lengthscale = 1.0;
    double gp_init_noise = 0.01;
    Ablation ablation;

    void validate() const;

    /// Axis of every block that is actually evaluated. Block b (1-based)
    /// attends across examples when b is odd and across attributes and
    /// labels when b is even; ablations drop blocks of one parity.
    std::vector<AttentionAxis> active_axes() const;

    /// Key/value rendering used by checkpoints and run configs.
    std::map<std::string, std::string> to_map() const;
    static ModelConfig from_map(const std::map<std::string, std::string>& kv);

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kInputChannels = 4;

template <typename T>
struct FeedForward {
    std::vector<Tensor<T>> weights; // [out, in] per layer
    std::vector<Tensor<T>> biases;

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            f(prefix + "w" + std::to_string(i), weights[i]);
            f(prefix + "b" + std::to_string(i), biases[i]);
        }
    }
};

template <typename T>
struct BlockParams {
    AttentionAxis axis = AttentionAxis::examples;
    MvsaParams<T> mvsa;
    Tensor<T> w_r; // [in, out]; empty when the residual is ablated
    FeedForward<T> ff;
    Tensor<T> ln_gain; // empty when layer norm is ablated
    Tensor<T> ln_bias;

    std::size_t in_dim() const { return mvsa.heads.front().in_dim(); }
    std::size_t out_dim() const { return ff.weights.back().dim(0); }

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        mvsa.for_each(prefix + "mvsa.", f);
        if (!w_r.empty()) f(prefix + "w_r", w_r);
        ff.for_each(prefix + "ff.", f);
        if (!ln_gain.empty()) {
            f(prefix + "ln_gain", ln_gain);
            f(prefix + "ln_bias", ln_bias);
        }
    }
};

/// RBF Gaussian-process head, hyperparameters stored in log space.
template <typename T>
struct GpHead {
    Tensor<T> log_lengthscale; // [1]
    Tensor<T> log_noise;       // [1], log of the noise variance
    double jitter = 1e-8;

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + "log_lengthscale", log_lengthscale);
        f(prefix + "log_noise", log_noise);
    }
};

/// The full trainable parameter set: the block stack plus the GP head.
template <typename T>
struct ModelParams {
    ModelConfig config;
    std::vector<BlockParams<T>> blocks;
    GpHead<T> gp;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    /// Visits every parameter as (name, Tensor&), in a fixed order.
    template <typename F>
    void for_each(F&& f) {
        for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].for_each("block" + std::to_string(b) + ".", f);
        gp.for_each("gp.", f);
    }

    /// Copy whose tensors are trainable leaves on `tape`.
    ModelParams bind(Tape<T>& tape) const;

    /// Gradients of a bound copy after tape.backward(), same layout as *this.
    ModelParams gradients(const Tape<T>& tape) const;

    std::size_t parameter_count() const;
    std::vector<T> flatten() const;
    void assign(std::span<const T> flat);

    template <typename U>
    ModelParams<U> cast() const;
};

template <typename T>
struct Embeddings {
    Tensor<T> labeled;   // [N^L, M * out_dim]
    Tensor<T> unlabeled; // [N^U, M * out_dim]
};

/// Input tensor [(N^L + N^U), (M + C), 4]: values with zero-padded unknown
/// labels, observed indicator, attribute indicator, label indicator. The
/// ablation switches zero the indicator slices.
template <typename T>
Tensor<T> build_input_tensor(const Episode& ep, const Ablation& ablation = {});

/// One block: Z x_3 W_R^T + FF(LN(MVSA(Z))), attention along mode 1.
template <typename T>
Tensor<T> apply_block(const Tensor<T>& z, const BlockParams<T>& p);

/// The block stack on a raw input tensor; attribute-wise blocks are wrapped
/// in transpose12.
template <typename T>
Tensor<T> forward_stack(Tensor<T> z, const ModelParams<T>& params);

/// Runs the block stack and extracts the attribute fibers of the final
/// tensor as per-example embeddings.
template <typename T>
Embeddings<T> forward_embed(const Episode& ep, const ModelParams<T>& params);

/// Literal per-fiber expansion of forward_embed for single-head models,
/// written with plain loops. Used as an independent check.
template <typename T>
Embeddings<T> forward_embed_expanded_oracle(const Episode& ep, const ModelParams<T>& params);

} // namespace hsml
