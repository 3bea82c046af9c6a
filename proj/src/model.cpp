#include "hsml/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

#include "hsml/ops.hpp"

namespace hsml {

// ---- config ----------------------------------------------------------------

void set_ablation(Ablation& a, const std::string& name, bool value) {
    if (name == "example-attn-only") a.example_attn_only = value;
    else if (name == "attribute-attn-only") a.attribute_attn_only = value;
    else if (name == "drop-observed-indicator") a.drop_observed_indicator = value;
    else if (name == "drop-attlab-indicators") a.drop_attlab_indicators = value;
    else if (name == "drop-residual") a.drop_residual = value;
    else if (name == "drop-layernorm") a.drop_layernorm = value;
    else throw InvalidConfig("unknown ablation '" + name + "'");
}

std::vector<std::string> ablation_names() {
    return {"example-attn-only",      "attribute-attn-only", "drop-observed-indicator",
            "drop-attlab-indicators", "drop-residual",       "drop-layernorm"};
}

void ModelConfig::validate() const {
    if (blocks == 0) throw InvalidConfig("model.blocks must be >= 1");
    if (heads == 0 || key_dim == 0 || value_dim == 0 || hidden == 0 || out_dim == 0)
        throw InvalidConfig("model sizes (heads, key_dim, value_dim, hidden, out_dim) must be positive");
    if (ff_layers == 0 || ff_hidden == 0) throw InvalidConfig("model.ff_layers and model.ff_hidden must be positive");
    if (!(gp_init_lengthscale > 0.0) || !(gp_init_noise > 0.0))
        throw InvalidConfig("GP initial lengthscale and noise must be positive");
    if (ablation.example_attn_only && ablation.attribute_attn_only)
        throw InvalidConfig("example-attn-only and attribute-attn-only are mutually exclusive");
    if (active_axes().empty()) throw InvalidConfig("ablation leaves no active block");
}

std::vector<AttentionAxis> ModelConfig::active_axes() const {
    std::vector<AttentionAxis> axes;
    for (std::size_t b = 1; b <= blocks; ++b) {
        const auto axis = (b % 2 == 1) ? AttentionAxis::examples : AttentionAxis::attributes;
        if (axis == AttentionAxis::attributes && ablation.example_attn_only) continue;
        if (axis == AttentionAxis::examples && ablation.attribute_attn_only) continue;
        axes.push_back(axis);
    }
    return axes;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    auto d = [](double v) {
        char buf[64];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    return {
        {"blocks", std::to_string(blocks)},
        {"heads", std::to_string(heads)},
        {"key_dim", std::to_string(key_dim)},
        {"value_dim", std::to_string(value_dim)},
        {"hidden", std::to_string(hidden)},
        {"out_dim", std::to_string(out_dim)},
        {"ff_layers", std::to_string(ff_layers)},
        {"ff_hidden", std::to_string(ff_hidden)},
        {"gp_init_lengthscale", d(gp_init_lengthscale)},
        {"gp_init_noise", d(gp_init_noise)},
        {"example_attn_only", b(ablation.example_attn_only)},
        {"attribute_attn_only", b(ablation.attribute_attn_only)},
        {"drop_observed_indicator", b(ablation.drop_observed_indicator)},
        {"drop_attlab_indicators", b(ablation.drop_attlab_indicators)},
        {"drop_residual", b(ablation.drop_residual)},
        {"drop_layernorm", b(ablation.drop_layernorm)},
    };
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw InvalidConfig("model." + key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw InvalidConfig("model." + key + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidConfig("model." + key + ": expected true/false, got '" + v + "'");
}

} // namespace

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "blocks") c.blocks = parse_size(key, value);
        else if (key == "heads") c.heads = parse_size(key, value);
        else if (key == "key_dim") c.key_dim = parse_size(key, value);
        else if (key == "value_dim") c.value_dim = parse_size(key, value);
        else if (key == "hidden") c.hidden = parse_size(key, value);
        else if (key == "out_dim") c.out_dim = parse_size(key, value);
        else if (key == "ff_layers") c.ff_layers = parse_size(key, value);
        else if (key == "ff_hidden") c.ff_hidden = parse_size(key, value);
        else if (key == "gp_init_lengthscale") c.gp_init_lengthscale = parse_double(key, value);
        else if (key == "gp_init_noise") c.gp_init_noise = parse_double(key, value);
        else if (key == "example_attn_only") c.ablation.example_attn_only = parse_bool(key, value);
        else if (key == "attribute_attn_only") c.ablation.attribute_attn_only = parse_bool(key, value);
        else if (key == "drop_observed_indicator") c.ablation.drop_observed_indicator = parse_bool(key, value);
        else if (key == "drop_attlab_indicators") c.ablation.drop_attlab_indicators = parse_bool(key, value);
        else if (key == "drop_residual") c.ablation.drop_residual = parse_bool(key, value);
        else if (key == "drop_layernorm") c.ablation.drop_layernorm = parse_bool(key, value);
        else throw InvalidConfig("unknown model key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---- parameters ------------------------------------------------------------

namespace {

// Same fan-in bound as the weights. Zero biases would put every unit fed by
// an all-dead ReLU layer exactly on the kink.
template <typename T>
Tensor<T> init_bias(std::size_t n, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(n);
    for (auto& x : data) x = static_cast<T>(dist(rng));
    return Tensor<T>({n}, std::move(data));
}

} // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams<T> p;
    p.config = cfg;
    const auto axes = cfg.active_axes();
    std::size_t in = kInputChannels;
    for (std::size_t b = 0; b < axes.size(); ++b) {
        const std::size_t out = (b + 1 == axes.size()) ? cfg.out_dim : cfg.hidden;
        BlockParams<T> block;
        block.axis = axes[b];
        block.mvsa = init_mvsa<T>(in, cfg.heads, cfg.key_dim, cfg.value_dim, cfg.hidden, rng);
        if (!cfg.ablation.drop_residual) block.w_r = transpose(init_uniform<T>(out, in, rng));
        std::size_t ff_in = cfg.hidden;
        for (std::size_t l = 0; l < cfg.ff_layers; ++l) {
            const std::size_t ff_out = (l + 1 == cfg.ff_layers) ? out : cfg.ff_hidden;
            block.ff.weights.push_back(init_uniform<T>(ff_out, ff_in, rng));
            block.ff.biases.push_back(init_bias<T>(ff_out, ff_in, rng));
            ff_in = ff_out;
        }
        if (!cfg.ablation.drop_layernorm) {
            block.ln_gain = Tensor<T>::full({cfg.hidden}, T{1});
            block.ln_bias = Tensor<T>::zeros({cfg.hidden});
        }
        p.blocks.push_back(std::move(block));
        in = out;
    }
    p.gp.log_lengthscale = Tensor<T>::scalar(static_cast<T>(std::log(cfg.gp_init_lengthscale)));
    p.gp.log_noise = Tensor<T>::scalar(static_cast<T>(std::log(cfg.gp_init_noise)));
    return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::bind(Tape<T>& tape) const {
    ModelParams<T> out = *this;
    out.for_each([&](const std::string&, Tensor<T>& t) { t = tape.watch(t); });
    return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::gradients(const Tape<T>& tape) const {
    ModelParams<T> out = *this;
    out.for_each([&](const std::string&, Tensor<T>& t) { t = tape.grad(t); });
    return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    const_cast<ModelParams*>(this)->for_each([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
}

template <typename T>
std::vector<T> ModelParams<T>::flatten() const {
    std::vector<T> flat;
    flat.reserve(parameter_count());
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string&, Tensor<T>& t) { flat.insert(flat.end(), t.values().begin(), t.values().end()); });
    return flat;
}

template <typename T>
void ModelParams<T>::assign(std::span<const T> flat) {
    if (flat.size() != parameter_count()) throw InvalidShape("parameter vector length mismatch");
    std::size_t offset = 0;
    for_each([&](const std::string&, Tensor<T>& t) {
        t = Tensor<T>(t.shape(), std::vector<T>(flat.begin() + offset, flat.begin() + offset + t.size()));
        offset += t.size();
    });
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = ModelParams<U>::init(config, 0);
    std::vector<T> flat = flatten();
    std::vector<U> converted(flat.begin(), flat.end());
    out.assign(converted);
    out.gp.jitter = gp.jitter;
    return out;
}

// ---- forward ---------------------------------------------------------------

template <typename T>
Tensor<T> build_input_tensor(const Episode& ep, const Ablation& ablation) {
    ep.validate(false);
    const std::size_t nl = ep.n_labeled(), nu = ep.n_unlabeled(), m = ep.num_attributes(), c = ep.num_targets();
    const std::size_t rows = nl + nu, cols = m + c;
    std::vector<T> z(rows * cols * kInputChannels, T{0});
    auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> T& { return z[(i * cols + j) * kInputChannels + k]; };
    for (std::size_t i = 0; i < rows; ++i) {
        const bool labeled = i < nl;
        for (std::size_t j = 0; j < cols; ++j) {
            const bool attribute = j < m;
            if (attribute) at(i, j, 0) = static_cast<T>(labeled ? ep.x_labeled(i, j) : ep.x_unlabeled(i - nl, j));
            else if (labeled) at(i, j, 0) = static_cast<T>(ep.y_labeled(i, j - m));
            if (!ablation.drop_observed_indicator) at(i, j, 1) = (attribute || labeled) ? T{1} : T{0};
            if (!ablation.drop_attlab_indicators) {
                at(i, j, 2) = attribute ? T{1} : T{0};
                at(i, j, 3) = attribute ? T{0} : T{1};
            }
        }
    }
    return Tensor<T>({rows, cols, kInputChannels}, std::move(z));
}

template <typename T>
Tensor<T> apply_block(const Tensor<T>& z, const BlockParams<T>& p) {
    Tensor<T> h = mvsa_forward(z, p.mvsa);
    if (!p.ln_gain.empty()) h = layer_norm(h, p.ln_gain, p.ln_bias);
    for (std::size_t l = 0; l < p.ff.weights.size(); ++l) {
        h = add_bias(mode3_product(h, p.ff.weights[l]), p.ff.biases[l]);
        if (l + 1 < p.ff.weights.size()) h = relu(h);
    }
    if (p.w_r.empty()) return h;
    return add(mode3_product(z, transpose(p.w_r)), h);
}

template <typename T>
Tensor<T> forward_stack(Tensor<T> z, const ModelParams<T>& params) {
    if (params.blocks.size() != params.config.active_axes().size())
        throw InvalidConfig("parameter block count does not match the model config");
    for (const auto& block : params.blocks) {
        if (block.axis == AttentionAxis::examples) z = apply_block(z, block);
        else z = transpose12(apply_block(transpose12(z), block));
    }
    return z;
}

template <typename T>
Embeddings<T> forward_embed(const Episode& ep, const ModelParams<T>& params) {
    const Tensor<T> z = forward_stack(build_input_tensor<T>(ep, params.config.ablation), params);
    const std::size_t nl = ep.n_labeled(), nu = ep.n_unlabeled(), m = ep.num_attributes();
    const std::size_t width = m * z.dim(2);
    return {reshape(slice12(z, 0, nl, 0, m), {nl, width}), reshape(slice12(z, nl, nl + nu, 0, m), {nu, width})};
}

// ---- expanded oracle -------------------------------------------------------

namespace {

using Vec = std::vector<double>;
using Grid = std::vector<std::vector<Vec>>; // [n][m] -> fiber

Vec matvec(const Tensor<double>& w, const Vec& x) { // w [out, in]
    const std::size_t out = w.dim(0), in = w.dim(1);
    Vec y(out, 0.0);
    for (std::size_t i = 0; i < out; ++i)
        for (std::size_t j = 0; j < in; ++j) y[i] += w.at(i, j) * x[j];
    return y;
}

Vec matvec_t(const Tensor<double>& w, const Vec& x) { // w [in, out], returns w^T x
    const std::size_t in = w.dim(0), out = w.dim(1);
    Vec y(out, 0.0);
    for (std::size_t i = 0; i < out; ++i)
        for (std::size_t j = 0; j < in; ++j) y[i] += w.at(j, i) * x[j];
    return y;
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Vec layer_norm_fiber(const Vec& x, const BlockParams<double>& p) {
    if (p.ln_gain.empty()) return x;
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
        y[k] = p.ln_gain[k] * (x[k] - mean) / std::sqrt(var + 1e-5) + p.ln_bias[k];
    return y;
}

Vec feed_forward_fiber(Vec x, const BlockParams<double>& p) {
    for (std::size_t l = 0; l < p.ff.weights.size(); ++l) {
        x = matvec(p.ff.weights[l], x);
        for (std::size_t k = 0; k < x.size(); ++k) {
            x[k] += p.ff.biases[l][k];
            if (l + 1 < p.ff.weights.size()) x[k] = std::max(x[k], 0.0);
        }
    }
    return x;
}

Vec block_fiber(const Vec& z_nm, const Vec& aggregated_value, const BlockParams<double>& p) {
    Vec out = feed_forward_fiber(layer_norm_fiber(matvec(p.mvsa.w_o, aggregated_value), p), p);
    if (!p.w_r.empty()) {
        const Vec res = matvec_t(p.w_r, z_nm);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += res[k];
    }
    return out;
}

// z_nm' = W_R^T z_nm + FF(LN(W_O sum_n' a_nn' W_V z_n'm)), attention across examples.
Grid example_block(const Grid& z, const BlockParams<double>& p) {
    const auto& head = p.mvsa.heads.front();
    const std::size_t n_rows = z.size(), n_cols = z[0].size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_cols * head.key_dim()));
    Grid out(n_rows, std::vector<Vec>(n_cols));
    for (std::size_t n = 0; n < n_rows; ++n) {
        Vec a(n_rows);
        for (std::size_t n2 = 0; n2 < n_rows; ++n2) {
            double s = 0.0;
            for (std::size_t m = 0; m < n_cols; ++m) s += dot(matvec(head.w_q, z[n][m]), matvec(head.w_k, z[n2][m]));
            a[n2] = s * scale;
        }
        const double mx = *std::max_element(a.begin(), a.end());
        double total = 0.0;
        for (auto& v : a) total += (v = std::exp(v - mx));
        for (auto& v : a) v /= total;
        for (std::size_t m = 0; m < n_cols; ++m) {
            Vec agg(head.value_dim(), 0.0);
            for (std::size_t n2 = 0; n2 < n_rows; ++n2) {
                const Vec v = matvec(head.w_v, z[n2][m]);
                for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += a[n2] * v[k];
            }
            out[n][m] = block_fiber(z[n][m], agg, p);
        }
    }
    return out;
}

// z_nm' = W_R^T z_nm + FF(LN(W_O sum_m' a_mm' W_V z_nm')), attention across attributes and labels.
Grid attribute_block(const Grid& z, const BlockParams<double>& p) {
    const auto& head = p.mvsa.heads.front();
    const std::size_t n_rows = z.size(), n_cols = z[0].size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_rows * head.key_dim()));
    Grid out(n_rows, std::vector<Vec>(n_cols));
    for (std::size_t m = 0; m < n_cols; ++m) {
        Vec a(n_cols);
        for (std::size_t m2 = 0; m2 < n_cols; ++m2) {
            double s = 0.0;
            for (std::size_t n = 0; n < n_rows; ++n) s += dot(matvec(head.w_q, z[n][m]), matvec(head.w_k, z[n][m2]));
            a[m2] = s * scale;
        }
        const double mx = *std::max_element(a.begin(), a.end());
        double total = 0.0;
        for (auto& v : a) total += (v = std::exp(v - mx));
        for (auto& v : a) v /= total;
        for (std::size_t n = 0; n < n_rows; ++n) {
            Vec agg(head.value_dim(), 0.0);
            for (std::size_t m2 = 0; m2 < n_cols; ++m2) {
                const Vec v = matvec(head.w_v, z[n][m2]);
                for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += a[m2] * v[k];
            }
            out[n][m] = block_fiber(z[n][m], agg, p);
        }
    }
    return out;
}

} // namespace

template <typename T>
Embeddings<T> forward_embed_expanded_oracle(const Episode& ep, const ModelParams<T>& params) {
    if (params.config.heads != 1) throw InvalidConfig("expanded oracle requires a single-head model");
    const ModelParams<double> p = params.template cast<double>();
    const Tensor<double> input = build_input_tensor<double>(ep, p.config.ablation);
    const std::size_t rows = input.dim(0), cols = input.dim(1);
    Grid z(rows, std::vector<Vec>(cols));
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t m = 0; m < cols; ++m)
            for (std::size_t k = 0; k < kInputChannels; ++k) z[n][m].push_back(input.at(n, m, k));
    for (const auto& block : p.blocks)
        z = block.axis == AttentionAxis::examples ? example_block(z, block) : attribute_block(z, block);

    const std::size_t nl = ep.n_labeled(), nu = ep.n_unlabeled(), m = ep.num_attributes();
    const std::size_t h = z[0][0].size();
    auto extract = [&](std::size_t first, std::size_t count) {
        std::vector<T> out;
        for (std::size_t n = first; n < first + count; ++n)
            for (std::size_t j = 0; j < m; ++j)
                for (double v : z[n][j]) out.push_back(static_cast<T>(v));
        return Tensor<T>({count, m * h}, std::move(out));
    };
    return {extract(0, nl), extract(nl, nu)};
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template Tensor<float> build_input_tensor(const Episode&, const Ablation&);
template Tensor<double> build_input_tensor(const Episode&, const Ablation&);
template Tensor<float> apply_block(const Tensor<float>&, const BlockParams<float>&);
template Tensor<double> apply_block(const Tensor<double>&, const BlockParams<double>&);
template Tensor<float> forward_stack(Tensor<float>, const ModelParams<float>&);
template Tensor<double> forward_stack(Tensor<double>, const ModelParams<double>&);
template Embeddings<float> forward_embed(const Episode&, const ModelParams<float>&);
template Embeddings<double> forward_embed(const Episode&, const ModelParams<double>&);
template Embeddings<float> forward_embed_expanded_oracle(const Episode&, const ModelParams<float>&);
template Embeddings<double> forward_embed_expanded_oracle(const Episode&, const ModelParams<double>&);

} // namespace hsml
