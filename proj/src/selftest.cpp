#include "hsml/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hsml/attention.hpp"
#include "hsml/error.hpp"
#include "hsml/heads.hpp"
#include "hsml/ops.hpp"
#include "hsml/trainer.hpp"

namespace hsml {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<std::size_t> random_perm(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

PropertyResult finish(std::string name, double err, double tol, std::size_t trials, Clock::time_point t0,
                      std::string detail = {}) {
    return {std::move(name), err <= tol, err, tol, trials, seconds_since(t0), std::move(detail)};
}

// ---- attention equivariance ------------------------------------------------

template <typename T>
std::vector<PropertyResult> attention_equivariance(std::size_t trials, std::uint64_t seed, double tol) {
    std::vector<PropertyResult> out;
    const char* names[4] = {"vsa-mode1-equivariance", "vsa-mode2-equivariance", "mvsa-mode1-equivariance",
                            "mvsa-mode2-equivariance"};
    for (int which = 0; which < 4; ++which) {
        const auto t0 = Clock::now();
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(which)));
        const bool multi = which >= 2, mode2 = which % 2 == 1;
        double worst = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t d1 = uniform(rng, 1, 6), d2 = uniform(rng, 1, 6), d3 = uniform(rng, 1, 4);
            const std::size_t hk = uniform(rng, 1, 4), hv = uniform(rng, 1, 4);
            const std::size_t heads = multi ? uniform(rng, 1, 3) : 1, h = uniform(rng, 1, 4);
            const auto p = init_mvsa<T>(d3, heads, hk, hv, h, rng);
            const Tensor<T> z = random_tensor<T>({d1, d2, d3}, rng);
            const auto perm = random_perm(mode2 ? d2 : d1, rng);
            auto permute = [&](const Tensor<T>& x) { return mode2 ? permute_mode2<T>(x, perm) : permute_mode1<T>(x, perm); };
            auto f = [&](const Tensor<T>& x) { return multi ? mvsa_forward(x, p) : vsa_forward(x, p.heads[0]).out; };
            worst = std::max(worst, max_abs_diff(f(permute(z)), permute(f(z))));
        }
        out.push_back(finish(names[which], worst, tol, trials, t0));
    }
    return out;
}

// Plain scaled dot-product self-attention on the rows of x [n, d].
std::vector<double> reference_attention(const std::vector<double>& x, std::size_t n, std::size_t d,
                                        const Tensor<double>& wq, const Tensor<double>& wk, const Tensor<double>& wv) {
    const std::size_t hk = wq.dim(0), hv = wv.dim(0);
    auto project = [&](const Tensor<double>& w, std::size_t rows) {
        std::vector<double> p(n * rows, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < d; ++k) p[i * rows + r] += x[i * d + k] * w.at(r, k);
        return p;
    };
    const auto q = project(wq, hk), k = project(wk, hk), v = project(wv, hv);
    std::vector<double> out(n * hv, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < hk; ++r) dot += q[i * hk + r] * k[j * hk + r];
            s[j] = dot / std::sqrt(static_cast<double>(hk));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double total = 0.0;
        for (auto& e : s) total += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t r = 0; r < hv; ++r) out[i * hv + r] += s[j] / total * v[j * hv + r];
    }
    return out;
}

// Gauss-Jordan inverse with partial pivoting.
std::vector<double> dense_inverse(std::vector<double> a, std::size_t n) {
    std::vector<double> inv(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        for (std::size_t j = 0; j < n; ++j) {
            std::swap(a[c * n + j], a[piv * n + j]);
            std::swap(inv[c * n + j], inv[piv * n + j]);
        }
        const double d = a[c * n + c];
        for (std::size_t j = 0; j < n; ++j) {
            a[c * n + j] /= d;
            inv[c * n + j] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r * n + c];
            for (std::size_t j = 0; j < n; ++j) {
                a[r * n + j] -= f * a[c * n + j];
                inv[r * n + j] -= f * inv[c * n + j];
            }
        }
    }
    return inv;
}

struct DenseGp {
    std::vector<double> mean; // [nu, c]
    std::vector<double> var;  // [nu]
};

DenseGp dense_gp(const Tensor<double>& zu, const Tensor<double>& zl, const Tensor<double>& y, double lengthscale,
                 double noise) {
    const std::size_t nl = zl.dim(0), nu = zu.dim(0), h = zl.dim(1), c = y.dim(1);
    auto row = [h](const Tensor<double>& z, std::size_t i) {
        return std::span<const double>(z.values().data() + i * h, h);
    };
    std::vector<double> k(nl * nl);
    for (std::size_t i = 0; i < nl; ++i)
        for (std::size_t j = 0; j < nl; ++j)
            k[i * nl + j] = rbf_kernel(row(zl, i), row(zl, j), lengthscale) + (i == j ? noise : 0.0);
    const auto kinv = dense_inverse(k, nl);
    DenseGp out{std::vector<double>(nu * c, 0.0), std::vector<double>(nu, 0.0)};
    for (std::size_t u = 0; u < nu; ++u) {
        std::vector<double> ks(nl);
        for (std::size_t i = 0; i < nl; ++i) ks[i] = rbf_kernel(row(zu, u), row(zl, i), lengthscale);
        double quad = 0.0;
        for (std::size_t i = 0; i < nl; ++i)
            for (std::size_t j = 0; j < nl; ++j) {
                quad += ks[i] * kinv[i * nl + j] * ks[j];
                for (std::size_t cc = 0; cc < c; ++cc) out.mean[u * c + cc] += ks[i] * kinv[i * nl + j] * y.at(j, cc);
            }
        out.var[u] = std::max(0.0, 1.0 - quad);
    }
    return out;
}

ModelConfig tiny_config(std::size_t blocks, std::size_t heads, std::size_t width) {
    ModelConfig cfg;
    cfg.blocks = blocks;
    cfg.heads = heads;
    cfg.key_dim = cfg.value_dim = cfg.hidden = cfg.ff_hidden = width;
    return cfg;
}

Episode drop_labeled_row(const Episode& ep, std::size_t row) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ep.n_labeled(); ++i)
        if (i != row) keep.push_back(i);
    const std::vector<std::size_t> moved{row};
    Episode out = ep;
    out.x_labeled = ep.x_labeled.select_rows(keep);
    out.y_labeled = ep.y_labeled.select_rows(keep);
    auto stack = [](const Matrix& top, const Matrix& bottom) {
        Matrix m(top.rows + bottom.rows, top.cols);
        std::copy(top.data.begin(), top.data.end(), m.data.begin());
        std::copy(bottom.data.begin(), bottom.data.end(), m.data.begin() + static_cast<std::ptrdiff_t>(top.data.size()));
        return m;
    };
    out.x_unlabeled = stack(ep.x_labeled.select_rows(moved), ep.x_unlabeled);
    out.y_unlabeled = stack(ep.y_labeled.select_rows(moved), ep.y_unlabeled);
    return out;
}

template <typename T>
Tensor<T> row_block(const Tensor<T>& z, std::size_t row) {
    const std::size_t w = z.dim(1);
    return Tensor<T>({1, w}, std::vector<T>(z.values().begin() + static_cast<std::ptrdiff_t>(row * w),
                                            z.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * w)));
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& z, const std::vector<std::size_t>& perm) {
    return reshape(permute_mode1<T>(reshape(z, {z.dim(0), z.dim(1), 1}), perm), z.shape());
}

template <typename T>
Tensor<T> posterior_of(const Episode& ep, const Embeddings<T>& e) {
    const auto labels = label_indices(ep.y_labeled);
    return class_posterior(e.unlabeled, compute_prototypes(e.labeled, std::span<const std::size_t>(labels), ep.num_targets()));
}

template <typename T>
std::vector<PropertyResult> model_equivariance(std::size_t episodes, std::uint64_t seed, double tol) {
    std::mt19937_64 rng(seed);
    const auto params = ModelParams<T>::init(ModelConfig{}, derive_seed(seed, 99));
    double err_l = 0, err_u = 0, err_a = 0, err_c = 0, change_move = 0, change_swap = 0;
    std::size_t found_move = 0, found_swap = 0, tried_move = 0;
    const double witness = 1e-4;
    const auto t0 = Clock::now();
    for (std::size_t t = 0; t < episodes; ++t) {
        const Episode ep = random_episode(rng, 4, 4, 3, 3);
        const auto base = forward_embed(ep, params);
        const std::size_t m = ep.num_attributes(), h = params.config.out_dim;

        const auto pl = random_perm(ep.n_labeled(), rng);
        Episode e_l = ep;
        e_l.x_labeled = ep.x_labeled.select_rows(pl);
        e_l.y_labeled = ep.y_labeled.select_rows(pl);
        const auto out_l = forward_embed(e_l, params);
        err_l = std::max({err_l, max_abs_diff(out_l.labeled, permute_rows(base.labeled, pl)),
                          max_abs_diff(out_l.unlabeled, base.unlabeled)});

        const auto pu = random_perm(ep.n_unlabeled(), rng);
        Episode e_u = ep;
        e_u.x_unlabeled = ep.x_unlabeled.select_rows(pu);
        e_u.y_unlabeled = ep.y_unlabeled.select_rows(pu);
        const auto out_u = forward_embed(e_u, params);
        err_u = std::max({err_u, max_abs_diff(out_u.unlabeled, permute_rows(base.unlabeled, pu)),
                          max_abs_diff(out_u.labeled, base.labeled)});

        const auto pa = random_perm(m, rng);
        Episode e_a = ep;
        e_a.x_labeled = ep.x_labeled.select_cols(pa);
        e_a.x_unlabeled = ep.x_unlabeled.select_cols(pa);
        const auto out_a = forward_embed(e_a, params);
        auto segments = [&](const Tensor<T>& z) {
            return reshape(permute_mode2<T>(reshape(z, {z.dim(0), m, h}), pa), z.shape());
        };
        err_a = std::max({err_a, max_abs_diff(out_a.labeled, segments(base.labeled)),
                          max_abs_diff(out_a.unlabeled, segments(base.unlabeled))});

        const auto pc = random_perm(ep.num_targets(), rng);
        Episode e_c = ep;
        e_c.y_labeled = ep.y_labeled.select_cols(pc);
        e_c.y_unlabeled = ep.y_unlabeled.select_cols(pc);
        const auto out_c = forward_embed(e_c, params);
        const auto post = posterior_of(ep, base), post_c = posterior_of(e_c, out_c);
        const auto post_expected =
            reshape(permute_mode2<T>(reshape(post, {post.dim(0), post.dim(1), 1}), pc), post.shape());
        err_c = std::max({err_c, max_abs_diff(out_c.labeled, base.labeled), max_abs_diff(out_c.unlabeled, base.unlabeled),
                          max_abs_diff(post_c, post_expected)});

        // Moving a labeled example into the unlabeled set changes its embedding.
        const auto counts = ep.labeled_classes();
        std::vector<std::size_t> per_class(ep.num_targets(), 0);
        for (auto c : counts) ++per_class[c];
        for (std::size_t i = 0; i < ep.n_labeled(); ++i) {
            if (per_class[counts[i]] < 2) continue;
            ++tried_move;
            const auto moved = forward_embed(drop_labeled_row(ep, i), params);
            const double d = max_abs_diff(row_block(moved.unlabeled, 0), row_block(base.labeled, i));
            change_move = std::max(change_move, d);
            found_move += d > witness;
            break;
        }

        // Exchanging the contents of an attribute column and a class column,
        // with the type indicators left in place, is not a symmetry.
        const Tensor<T> z = build_input_tensor<T>(ep, params.config.ablation);
        std::vector<T> swapped = z.to_vector();
        const std::size_t cols = z.dim(1), a = 0, c = m;
        for (std::size_t n = 0; n < z.dim(0); ++n)
            for (std::size_t k = 0; k < 2; ++k)
                std::swap(swapped[(n * cols + a) * kInputChannels + k], swapped[(n * cols + c) * kInputChannels + k]);
        std::vector<std::size_t> swap_perm(cols);
        std::iota(swap_perm.begin(), swap_perm.end(), 0);
        std::swap(swap_perm[a], swap_perm[c]);
        const auto y_swap = forward_stack(Tensor<T>(z.shape(), std::move(swapped)), params);
        const double d = max_abs_diff(y_swap, permute_mode2<T>(forward_stack(z, params), swap_perm));
        change_swap = std::max(change_swap, d);
        found_swap += d > witness;
    }
    const double secs = seconds_since(t0);
    std::vector<PropertyResult> out;
    auto add = [&](std::string name, double err) { out.push_back({std::move(name), err <= tol, err, tol, episodes, secs, {}}); };
    add("model-labeled-permutation", err_l);
    add("model-unlabeled-permutation", err_u);
    add("model-attribute-permutation", err_a);
    add("model-class-permutation", err_c);
    out.push_back({"witness-labeled-to-unlabeled", found_move > 0, change_move, witness, tried_move, secs,
                   "changed in " + std::to_string(found_move) + " of " + std::to_string(tried_move) + " episodes"});
    out.push_back({"witness-attribute-class-swap", found_swap > 0, change_swap, witness, episodes, secs,
                   "changed in " + std::to_string(found_swap) + " of " + std::to_string(episodes) + " episodes"});
    return out;
}

} // namespace

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = static_cast<T>(normal(rng));
    return Tensor<T>(shape, std::move(data));
}

template Tensor<float> random_tensor(const Shape&, std::mt19937_64&, double);
template Tensor<double> random_tensor(const Shape&, std::mt19937_64&, double);

Episode random_episode(std::mt19937_64& rng, std::size_t max_labeled, std::size_t max_unlabeled,
                       std::size_t max_attributes, std::size_t max_classes) {
    const std::size_t c = uniform(rng, 1, max_classes);
    const std::size_t nl = uniform(rng, std::max<std::size_t>(c, 1), std::max(c, max_labeled));
    const std::size_t nu = uniform(rng, 1, max_unlabeled), m = uniform(rng, 1, max_attributes);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Episode ep;
    ep.x_labeled = Matrix(nl, m);
    ep.x_unlabeled = Matrix(nu, m);
    ep.y_labeled = Matrix(nl, c);
    ep.y_unlabeled = Matrix(nu, c);
    for (auto& v : ep.x_labeled.data) v = u01(rng);
    for (auto& v : ep.x_unlabeled.data) v = u01(rng);
    for (std::size_t i = 0; i < nl; ++i) ep.y_labeled(i, i < c ? i : uniform(rng, 0, c - 1)) = 1.0;
    for (std::size_t i = 0; i < nu; ++i) ep.y_unlabeled(i, uniform(rng, 0, c - 1)) = 1.0;
    ep.validate();
    return ep;
}

std::vector<PropertyResult> check_attention_equivariance(std::size_t trials, bool use_double, std::uint64_t seed) {
    return use_double ? attention_equivariance<double>(trials, seed, 1e-10)
                      : attention_equivariance<float>(trials, seed, 1e-5);
}

PropertyResult check_attention_rows(std::size_t trials, std::uint64_t seed) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t d1 = uniform(rng, 1, 8), d2 = uniform(rng, 1, 6), d3 = uniform(rng, 1, 4);
        const auto p = init_mvsa<float>(d3, 1, uniform(rng, 1, 4), uniform(rng, 1, 4), 1, rng);
        const auto a = vsa_forward(random_tensor<float>({d1, d2, d3}, rng, 3.0), p.heads[0]).attention;
        for (std::size_t i = 0; i < d1; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d1; ++j) s += a.at(i, j);
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return finish("attention-rows-sum-to-one", worst, 1e-6, trials, t0);
}

PropertyResult check_standard_attention(std::size_t cases, std::uint64_t seed) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < cases; ++t) {
        const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 6);
        const auto p = init_mvsa<double>(d, 1, uniform(rng, 1, 6), uniform(rng, 1, 6), 1, rng).heads[0];
        const Tensor<double> z = random_tensor<double>({n, 1, d}, rng);
        const auto got = vsa_forward(z, p).out;
        const auto want = reference_attention(z.to_vector(), n, d, p.w_q, p.w_k, p.w_v);
        for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    return finish("standard-attention-reduction", worst, 1e-6, cases, t0);
}

PropertyResult check_expanded_oracle(std::size_t episodes, std::uint64_t seed) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < episodes; ++t) {
        ModelConfig cfg = tiny_config(uniform(rng, 1, 3), 1, 8);
        const auto params = ModelParams<float>::init(cfg, rng());
        const Episode ep = random_episode(rng, 4, 4, 3, 3);
        const auto got = forward_embed(ep, params);
        const auto want = forward_embed_expanded_oracle(ep, params);
        worst = std::max({worst, max_abs_diff(got.labeled, want.labeled), max_abs_diff(got.unlabeled, want.unlabeled)});
    }
    return finish("expanded-oracle-agreement", worst, 1e-5, episodes, t0);
}

std::vector<PropertyResult> check_gp_oracle(std::size_t cases, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto t0 = Clock::now();
    double worst = 0.0;
    for (std::size_t t = 0; t < cases; ++t) {
        const std::size_t nl = uniform(rng, 1, 8), nu = uniform(rng, 1, 6), h = uniform(rng, 1, 5), c = uniform(rng, 1, 2);
        GpHead<double> head;
        const double ls = 0.5 + 1.5 * u(rng), noise = 0.01 + 0.5 * u(rng);
        head.log_lengthscale = Tensor<double>::scalar(std::log(ls));
        head.log_noise = Tensor<double>::scalar(std::log(noise));
        const auto zl = random_tensor<double>({nl, h}, rng), zu = random_tensor<double>({nu, h}, rng);
        const auto y = random_tensor<double>({nl, c}, rng);
        const auto got = gp_predict(zu, zl, y, head);
        const auto want = dense_gp(zu, zl, y, ls, noise + head.jitter);
        for (std::size_t i = 0; i < want.mean.size(); ++i) worst = std::max(worst, std::abs(got.mean[i] - want.mean[i]));
        for (std::size_t i = 0; i < want.var.size(); ++i) worst = std::max(worst, std::abs(got.variance[i] - want.var[i]));
    }
    std::vector<PropertyResult> out{finish("gp-dense-posterior", worst, 1e-8, cases, t0)};

    t0 = Clock::now();
    worst = 0.0;
    for (std::size_t t = 0; t < cases; ++t) {
        const std::size_t nl = uniform(rng, 1, 5), h = uniform(rng, 2, 4);
        GpHead<double> head;
        head.log_lengthscale = Tensor<double>::scalar(0.0);
        head.log_noise = Tensor<double>::scalar(std::log(1e-12));
        const auto zl = random_tensor<double>({nl, h}, rng, 3.0);
        const auto y = random_tensor<double>({nl, 1}, rng);
        const auto got = gp_predict(zl, zl, y, head);
        for (std::size_t i = 0; i < nl; ++i)
            worst = std::max({worst, std::abs(got.mean[i] - y[i]), std::abs(got.variance[i])});
    }
    out.push_back(finish("gp-interpolation", worst, 1e-6, cases, t0));
    return out;
}

std::vector<PropertyResult> check_model_equivariance(std::size_t episodes, bool use_double, std::uint64_t seed) {
    return use_double ? model_equivariance<double>(episodes, seed, 1e-10) : model_equivariance<float>(episodes, seed, 1e-5);
}

std::vector<std::pair<std::string, double>> finite_difference_errors(const Episode& ep, const ModelParams<double>& params,
                                                                     double h) {
    const HeadKind head = ep.kind == TaskKind::classification ? HeadKind::prototype : HeadKind::gaussian_process;
    Tape<double> tape;
    const auto bound = params.bind(tape);
    tape.backward(episode_forward(ep, bound, head).loss);
    const std::vector<double> analytic = bound.gradients(tape).flatten();

    ModelParams<double> probe = params;
    std::vector<double> flat = params.flatten();
    auto loss_at = [&](std::size_t i, double x) {
        const double keep = flat[i];
        flat[i] = x;
        probe.assign(flat);
        flat[i] = keep;
        return episode_forward(ep, probe, head).loss[0];
    };
    std::vector<std::pair<std::string, double>> out;
    std::size_t offset = 0;
    ModelParams<double> walk = params;
    walk.for_each([&](const std::string& name, Tensor<double>& t) {
        // |g - g_fd| / max(|g|, |g_fd|, 1e-3): below 1e-4 exactly when the
        // relative error is below 1e-4 or the absolute error below 1e-7.
        double worst = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) {
            const std::size_t i = offset + k;
            const double fd = (loss_at(i, flat[i] + h) - loss_at(i, flat[i] - h)) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
            worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
        }
        offset += t.size();
        out.emplace_back(name, worst);
    });
    return out;
}

std::vector<PropertyResult> check_model_gradients(std::uint64_t seed) {
    std::vector<PropertyResult> out;
    std::mt19937_64 rng(seed);
    const ModelConfig cfg = tiny_config(2, 2, 4);

    auto t0 = Clock::now();
    Episode cls;
    cls.x_labeled = Matrix(4, 2);
    cls.x_unlabeled = Matrix(4, 2);
    cls.y_labeled = Matrix(4, 2);
    cls.y_unlabeled = Matrix(4, 2);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto& v : cls.x_labeled.data) v = u01(rng);
    for (auto& v : cls.x_unlabeled.data) v = u01(rng);
    for (std::size_t i = 0; i < 4; ++i) {
        cls.y_labeled(i, i % 2) = 1.0;
        cls.y_unlabeled(i, (i / 2) % 2) = 1.0;
    }
    double worst = 0.0;
    std::string worst_name;
    for (const auto& [name, err] : finite_difference_errors(cls, ModelParams<double>::init(cfg, rng()))) {
        if (err > worst) worst_name = name;
        worst = std::max(worst, err);
    }
    out.push_back(finish("gradient-check-prototype-head", worst, 1e-4, 1, t0, "worst group " + worst_name));

    t0 = Clock::now();
    Episode reg;
    reg.kind = TaskKind::regression;
    reg.x_labeled = Matrix(5, 3);
    reg.x_unlabeled = Matrix(3, 3);
    reg.y_labeled = Matrix(5, 1);
    reg.y_unlabeled = Matrix(3, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto* m : {&reg.x_labeled, &reg.x_unlabeled}) for (auto& v : m->data) v = u01(rng);
    for (auto* m : {&reg.y_labeled, &reg.y_unlabeled}) for (auto& v : m->data) v = normal(rng);
    ModelConfig rcfg = cfg;
    rcfg.gp_init_noise = 0.1;
    worst = 0.0;
    worst_name.clear();
    for (const auto& [name, err] : finite_difference_errors(reg, ModelParams<double>::init(rcfg, rng()))) {
        if (err > worst) worst_name = name;
        worst = std::max(worst, err);
    }
    out.push_back(finish("gradient-check-gp-head", worst, 1e-4, 1, t0, "worst group " + worst_name));
    return out;
}

std::vector<PropertyResult> run_selftest(const SelftestOptions& opts) {
    const std::size_t n = std::max<std::size_t>(1, opts.trials);
    const auto s = [&](std::uint64_t i) { return derive_seed(opts.seed, i); };
    std::vector<PropertyResult> all = check_attention_equivariance(n, opts.use_double, s(0));
    all.push_back(check_attention_rows(n, s(1)));
    all.push_back(check_standard_attention(std::max<std::size_t>(1, n / 2), s(2)));
    all.push_back(check_expanded_oracle(std::max<std::size_t>(1, n / 5), s(3)));
    for (auto& r : check_gp_oracle(std::max<std::size_t>(1, n / 5), s(4))) all.push_back(std::move(r));
    for (auto& r : check_model_equivariance(std::max<std::size_t>(1, n / 2), opts.use_double, s(5)))
        all.push_back(std::move(r));
    for (auto& r : check_model_gradients(s(6))) all.push_back(std::move(r));
    return all;
}

} // namespace hsml
