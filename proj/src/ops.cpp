#include "hsml/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace hsml {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

template <typename T>
CMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return CMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
CMap<T> as_mat(std::span<const T> s, std::size_t rows, std::size_t cols) {
    return CMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MMap<T> as_mut(std::span<T> s, std::size_t rows, std::size_t cols) {
    return MMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
    if (t.empty() || t.rank() != rank) {
        throw InvalidShape(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                           shape_str(t.shape()));
    }
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw InvalidShape(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
void require_scalar(const char* op, const Tensor<T>& s) {
    if (s.empty() || s.size() != 1) throw InvalidShape(std::string(op) + ": expected a scalar tensor");
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const auto* t : inputs) {
        if (!t->tape()) continue;
        if (tape && tape != t->tape()) throw UsageError("op inputs recorded on different tapes");
        tape = t->tape();
    }
    return tape;
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& data) {
    for (const T v : data) {
        if (!std::isfinite(v)) throw NumericalFailure(std::string("non-finite value produced by ") + op);
    }
}

// Wraps up an op: finiteness check, then tape recording when any input is
// on a tape. `backprop(tape, gout)` accumulates into inputs via grad_of().
template <typename T, typename F>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                 F&& backprop) {
    check_finite(op, data);
    Tensor<T> out(std::move(shape), std::move(data));
    Tape<T>* tape = common_tape<T>(inputs);
    if (!tape) return out;
    return tape->record(std::move(out), [tape, f = std::forward<F>(backprop)](std::span<const T> g) { f(*tape, g); });
}

} // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mode3_product(const Tensor<T>& z, const Tensor<T>& w) {
    require_rank("mode3_product", z, 3);
    require_rank("mode3_product", w, 2);
    if (w.dim(1) != z.dim(2)) shape_mismatch("mode3_product", z.shape(), w.shape());
    const std::size_t rows = z.dim(0) * z.dim(1), in = z.dim(2), out_dim = w.dim(0);
    std::vector<T> out(rows * out_dim);
    as_mut<T>(out, rows, out_dim).noalias() = as_mat(z, rows, in) * as_mat(w, out_dim, in).transpose();
    return finish<T>("mode3_product", {z.dim(0), z.dim(1), out_dim}, std::move(out), {&z, &w},
                     [z, w, rows, in, out_dim](Tape<T>& tape, std::span<const T> g) {
                         auto gm = as_mat(g, rows, out_dim);
                         if (auto gz = tape.grad_of(z); !gz.empty())
                             as_mut(gz, rows, in).noalias() += gm * as_mat(w, out_dim, in);
                         if (auto gw = tape.grad_of(w); !gw.empty())
                             as_mut(gw, out_dim, in).noalias() += gm.transpose() * as_mat(z, rows, in);
                     });
}

template <typename T>
Tensor<T> mode1_product(const Tensor<T>& v, const Tensor<T>& a) {
    require_rank("mode1_product", v, 3);
    require_rank("mode1_product", a, 2);
    const std::size_t n = v.dim(0), cols = v.dim(1) * v.dim(2);
    if (a.dim(0) != n || a.dim(1) != n) shape_mismatch("mode1_product", v.shape(), a.shape());
    std::vector<T> out(n * cols);
    as_mut<T>(out, n, cols).noalias() = as_mat(a, n, n) * as_mat(v, n, cols);
    return finish<T>("mode1_product", v.shape(), std::move(out), {&v, &a},
                     [v, a, n, cols](Tape<T>& tape, std::span<const T> g) {
                         auto gm = as_mat(g, n, cols);
                         if (auto gv = tape.grad_of(v); !gv.empty())
                             as_mut(gv, n, cols).noalias() += as_mat(a, n, n).transpose() * gm;
                         if (auto ga = tape.grad_of(a); !ga.empty())
                             as_mut(ga, n, n).noalias() += gm * as_mat(v, n, cols).transpose();
                     });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (x.empty() || shape_size(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape);
    return finish<T>("reshape", std::move(shape), x.to_vector(), {&x}, [x](Tape<T>& tape, std::span<const T> g) {
        if (auto gx = tape.grad_of(x); !gx.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Tensor<T> matricize_mode1(const Tensor<T>& q) {
    require_rank("matricize_mode1", q, 3);
    return reshape(q, {q.dim(0), q.dim(1) * q.dim(2)});
}

template <typename T>
Tensor<T> transpose12(const Tensor<T>& z) {
    require_rank("transpose12", z, 3);
    const std::size_t d1 = z.dim(0), d2 = z.dim(1), d3 = z.dim(2);
    std::vector<T> out(z.size());
    const T* src = z.data();
    for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j)
            std::copy_n(src + (i * d2 + j) * d3, d3, out.data() + (j * d1 + i) * d3);
    return finish<T>("transpose12", {d2, d1, d3}, std::move(out), {&z},
                     [z, d1, d2, d3](Tape<T>& tape, std::span<const T> g) {
                         auto gz = tape.grad_of(z);
                         if (gz.empty()) return;
                         for (std::size_t i = 0; i < d1; ++i)
                             for (std::size_t j = 0; j < d2; ++j)
                                 for (std::size_t k = 0; k < d3; ++k)
                                     gz[(i * d2 + j) * d3 + k] += g[(j * d1 + i) * d3 + k];
                     });
}

template <typename T>
Tensor<T> concat_mode3(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw InvalidShape("concat_mode3: no inputs");
    for (const auto& p : parts) {
        require_rank("concat_mode3", p, 3);
        if (p.dim(0) != parts[0].dim(0) || p.dim(1) != parts[0].dim(1))
            shape_mismatch("concat_mode3", parts[0].shape(), p.shape());
    }
    const std::size_t fibers = parts[0].dim(0) * parts[0].dim(1);
    std::vector<std::size_t> offsets;
    std::size_t width = 0;
    for (const auto& p : parts) {
        offsets.push_back(width);
        width += p.dim(2);
    }
    std::vector<T> out(fibers * width);
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const std::size_t w = parts[pi].dim(2);
        for (std::size_t f = 0; f < fibers; ++f)
            std::copy_n(parts[pi].data() + f * w, w, out.data() + f * width + offsets[pi]);
    }

    check_finite("concat_mode3", out);
    Tensor<T> result({parts[0].dim(0), parts[0].dim(1), width}, std::move(out));
    Tape<T>* tape = nullptr;
    for (const auto& p : parts) {
        if (!p.tape()) continue;
        if (tape && tape != p.tape()) throw UsageError("op inputs recorded on different tapes");
        tape = p.tape();
    }
    if (!tape) return result;
    std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
    return tape->record(std::move(result), [tape, inputs, offsets, fibers, width](std::span<const T> g) {
        for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
            auto gp = tape->grad_of(inputs[pi]);
            if (gp.empty()) continue;
            const std::size_t w = inputs[pi].dim(2);
            for (std::size_t f = 0; f < fibers; ++f)
                for (std::size_t k = 0; k < w; ++k) gp[f * w + k] += g[f * width + offsets[pi] + k];
        }
    });
}

template <typename T>
Tensor<T> slice12(const Tensor<T>& z, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    require_rank("slice12", z, 3);
    if (r0 >= r1 || r1 > z.dim(0) || c0 >= c1 || c1 > z.dim(1))
        throw InvalidShape("slice12: range out of bounds for shape " + shape_str(z.shape()));
    const std::size_t d2 = z.dim(1), d3 = z.dim(2), nr = r1 - r0, nc = c1 - c0;
    std::vector<T> out(nr * nc * d3);
    for (std::size_t i = 0; i < nr; ++i)
        std::copy_n(z.data() + ((r0 + i) * d2 + c0) * d3, nc * d3, out.data() + i * nc * d3);
    return finish<T>("slice12", {nr, nc, d3}, std::move(out), {&z},
                     [z, r0, c0, nr, nc, d2, d3](Tape<T>& tape, std::span<const T> g) {
                         auto gz = tape.grad_of(z);
                         if (gz.empty()) return;
                         for (std::size_t i = 0; i < nr; ++i)
                             for (std::size_t k = 0; k < nc * d3; ++k)
                                 gz[((r0 + i) * d2 + c0) * d3 + k] += g[i * nc * d3 + k];
                     });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    as_mut<T>(out, m, n).noalias() = as_mat(a, m, k) * as_mat(b, k, n);
    return finish<T>("matmul", {m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](Tape<T>& tape, std::span<const T> g) {
        auto gm = as_mat(g, m, n);
        if (auto ga = tape.grad_of(a); !ga.empty()) as_mut(ga, m, k).noalias() += gm * as_mat(b, k, n).transpose();
        if (auto gb = tape.grad_of(b); !gb.empty()) as_mut(gb, k, n).noalias() += as_mat(a, m, k).transpose() * gm;
    });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank("matmul_nt", a, 2);
    require_rank("matmul_nt", b, 2);
    if (a.dim(1) != b.dim(1)) shape_mismatch("matmul_nt", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> out(m * n);
    as_mut<T>(out, m, n).noalias() = as_mat(a, m, k) * as_mat(b, n, k).transpose();
    return finish<T>("matmul_nt", {m, n}, std::move(out), {&a, &b},
                     [a, b, m, k, n](Tape<T>& tape, std::span<const T> g) {
                         auto gm = as_mat(g, m, n);
                         if (auto ga = tape.grad_of(a); !ga.empty()) as_mut(ga, m, k).noalias() += gm * as_mat(b, n, k);
                         if (auto gb = tape.grad_of(b); !gb.empty())
                             as_mut(gb, n, k).noalias() += gm.transpose() * as_mat(a, m, k);
                     });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank("transpose", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    as_mut<T>(out, n, m) = as_mat(a, m, n).transpose();
    return finish<T>("transpose", {n, m}, std::move(out), {&a}, [a, m, n](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty()) as_mut(ga, m, n) += as_mat(g, n, m).transpose();
    });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
    require_rank("softmax_rows", m, 2);
    for (const T v : m.values())
        if (!std::isfinite(v)) throw InvalidValue("softmax_rows: non-finite input");
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<T> out(m.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const T* x = m.data() + i * cols;
        T* y = out.data() + i * cols;
        const T mx = *std::max_element(x, x + cols);
        T total{0};
        for (std::size_t j = 0; j < cols; ++j) total += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) y[j] /= total;
    }
    Tensor<T> probe(m.shape(), out);
    return finish<T>("softmax_rows", m.shape(), std::move(out), {&m},
                     [m, probe, rows, cols](Tape<T>& tape, std::span<const T> g) {
                         auto gm = tape.grad_of(m);
                         if (gm.empty()) return;
                         for (std::size_t i = 0; i < rows; ++i) {
                             const T* y = probe.data() + i * cols;
                             T dot{0};
                             for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[j];
                             for (std::size_t j = 0; j < cols; ++j) gm[i * cols + j] += y[j] * (g[i * cols + j] - dot);
                         }
                     });
}

template <typename T>
Tensor<T> sq_dist(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank("sq_dist", a, 2);
    require_rank("sq_dist", b, 2);
    if (a.dim(1) != b.dim(1)) shape_mismatch("sq_dist", a.shape(), b.shape());
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    std::vector<T> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            T acc{0};
            for (std::size_t k = 0; k < d; ++k) {
                const T diff = a[i * d + k] - b[j * d + k];
                acc += diff * diff;
            }
            out[i * m + j] = acc;
        }
    return finish<T>("sq_dist", {n, m}, std::move(out), {&a, &b}, [a, b, n, m, d](Tape<T>& tape, std::span<const T> g) {
        auto ga = tape.grad_of(a);
        auto gb = tape.grad_of(b);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const T gij = g[i * m + j];
                if (gij == T{0}) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    const T diff = T{2} * gij * (a[i * d + k] - b[j * d + k]);
                    if (!ga.empty()) ga[i * d + k] += diff;
                    if (!gb.empty()) gb[j * d + k] -= diff;
                }
            }
    });
}

template <typename T>
Tensor<T> spd_solve(const Tensor<T>& k, const Tensor<T>& b, double jitter, double max_jitter) {
    require_rank("spd_solve", k, 2);
    require_rank("spd_solve", b, 2);
    const std::size_t n = k.dim(0), cols = b.dim(1);
    if (k.dim(1) != n || b.dim(0) != n) shape_mismatch("spd_solve", k.shape(), b.shape());

    RowMat<T> km = as_mat(k, n, n);
    auto llt = std::make_shared<Eigen::LLT<RowMat<T>>>();
    for (double j = jitter;; j *= 10.0) {
        RowMat<T> shifted = km;
        shifted.diagonal().array() += static_cast<T>(j);
        llt->compute(shifted);
        if (llt->info() == Eigen::Success) break;
        if (j * 10.0 > max_jitter * (1.0 + 1e-9))
            throw NumericalFailure("spd_solve: Cholesky factorization failed after jitter " + std::to_string(j));
    }
    std::vector<T> out(n * cols);
    as_mut<T>(out, n, cols) = llt->solve(as_mat(b, n, cols));
    Tensor<T> x_val({n, cols}, out);
    return finish<T>("spd_solve", {n, cols}, std::move(out), {&k, &b},
                     [k, b, llt, x_val, n, cols](Tape<T>& tape, std::span<const T> g) {
                         RowMat<T> gb_full = llt->solve(as_mat(g, n, cols));
                         if (auto gb = tape.grad_of(b); !gb.empty()) as_mut(gb, n, cols) += gb_full;
                         if (auto gk = tape.grad_of(k); !gk.empty())
                             as_mut(gk, n, n).noalias() -= gb_full * as_mat(x_val, n, cols).transpose();
                     });
}

template <typename T>
Tensor<T> add_scaled_identity(const Tensor<T>& k, const Tensor<T>& s) {
    require_rank("add_scaled_identity", k, 2);
    require_scalar("add_scaled_identity", s);
    const std::size_t n = k.dim(0);
    if (k.dim(1) != n) throw InvalidShape("add_scaled_identity: matrix must be square, got " + shape_str(k.shape()));
    std::vector<T> out = k.to_vector();
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] += s[0];
    return finish<T>("add_scaled_identity", k.shape(), std::move(out), {&k, &s},
                     [k, s, n](Tape<T>& tape, std::span<const T> g) {
                         if (auto gk = tape.grad_of(k); !gk.empty())
                             for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
                         if (auto gs = tape.grad_of(s); !gs.empty())
                             for (std::size_t i = 0; i < n; ++i) gs[0] += g[i * n + i];
                     });
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
    require_rank("row_sum", a, 2);
    const std::size_t n = a.dim(0), c = a.dim(1);
    std::vector<T> out(n, T{0});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += a[i * c + j];
    return finish<T>("row_sum", {n}, std::move(out), {&a}, [a, n, c](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
    });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return finish<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](Tape<T>& tape, std::span<const T> g) {
        for (const auto* x : {&a, &b})
            if (auto gx = tape.grad_of(*x); !gx.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return finish<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (auto gb = tape.grad_of(b); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return finish<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        if (auto gb = tape.grad_of(b); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& a, T c, T offset) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i] + offset;
    return finish<T>("affine", a.shape(), std::move(out), {&a}, [a, c](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
    require_scalar("mul_scalar", s);
    std::vector<T> out(a.size());
    const T sv = s[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
    return finish<T>("mul_scalar", a.shape(), std::move(out), {&a, &s}, [a, s](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[0];
        if (auto gs = tape.grad_of(s); !gs.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gs[0] += g[i] * a[i];
    });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
    Tensor<T> y(a.shape(), out);
    return finish<T>("exp", a.shape(), std::move(out), {&a}, [a, y](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
    return finish<T>("relu", a.shape(), std::move(out), {&a}, [a](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a[i] > T{0}) ga[i] += g[i];
    });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& z, const Tensor<T>& b) {
    require_rank("add_bias", b, 1);
    const std::size_t h = z.shape().back();
    if (b.dim(0) != h) shape_mismatch("add_bias", z.shape(), b.shape());
    const std::size_t fibers = z.size() / h;
    std::vector<T> out = z.to_vector();
    for (std::size_t f = 0; f < fibers; ++f)
        for (std::size_t k = 0; k < h; ++k) out[f * h + k] += b[k];
    return finish<T>("add_bias", z.shape(), std::move(out), {&z, &b},
                     [z, b, fibers, h](Tape<T>& tape, std::span<const T> g) {
                         if (auto gz = tape.grad_of(z); !gz.empty())
                             for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
                         if (auto gb = tape.grad_of(b); !gb.empty())
                             for (std::size_t f = 0; f < fibers; ++f)
                                 for (std::size_t k = 0; k < h; ++k) gb[k] += g[f * h + k];
                     });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& z, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
    require_rank("layer_norm", gain, 1);
    require_rank("layer_norm", bias, 1);
    const std::size_t h = z.shape().back();
    if (gain.dim(0) != h || bias.dim(0) != h) shape_mismatch("layer_norm", z.shape(), gain.shape());
    const std::size_t fibers = z.size() / h;
    std::vector<T> xhat(z.size()), inv_std(fibers), out(z.size());
    for (std::size_t f = 0; f < fibers; ++f) {
        const T* x = z.data() + f * h;
        T mean{0};
        for (std::size_t k = 0; k < h; ++k) mean += x[k];
        mean /= static_cast<T>(h);
        T var{0};
        for (std::size_t k = 0; k < h; ++k) var += (x[k] - mean) * (x[k] - mean);
        var /= static_cast<T>(h);
        inv_std[f] = T{1} / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t k = 0; k < h; ++k) {
            xhat[f * h + k] = (x[k] - mean) * inv_std[f];
            out[f * h + k] = gain[k] * xhat[f * h + k] + bias[k];
        }
    }
    return finish<T>(
        "layer_norm", z.shape(), std::move(out), {&z, &gain, &bias},
        [z, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), fibers, h](Tape<T>& tape,
                                                                                         std::span<const T> g) {
            auto gz = tape.grad_of(z);
            auto gg = tape.grad_of(gain);
            auto gb = tape.grad_of(bias);
            std::vector<T> gx(h);
            for (std::size_t f = 0; f < fibers; ++f) {
                const T* gf = g.data() + f * h;
                const T* xf = xhat.data() + f * h;
                if (!gg.empty())
                    for (std::size_t k = 0; k < h; ++k) gg[k] += gf[k] * xf[k];
                if (!gb.empty())
                    for (std::size_t k = 0; k < h; ++k) gb[k] += gf[k];
                if (gz.empty()) continue;
                T s1{0}, s2{0};
                for (std::size_t k = 0; k < h; ++k) {
                    gx[k] = gf[k] * gain[k];
                    s1 += gx[k];
                    s2 += gx[k] * xf[k];
                }
                const T hn = static_cast<T>(h);
                for (std::size_t k = 0; k < h; ++k)
                    gz[f * h + k] += inv_std[f] * (gx[k] - s1 / hn - xf[k] * s2 / hn);
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total{0};
    for (const T v : a.values()) total += v;
    return finish<T>("sum", {1}, {total}, {&a}, [a](Tape<T>& tape, std::span<const T> g) {
        if (auto ga = tape.grad_of(a); !ga.empty())
            for (auto& v : ga) v += g[0];
    });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> nll_from_probs(const Tensor<T>& probs, std::span<const std::size_t> labels, double floor) {
    require_rank("nll_from_probs", probs, 2);
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (labels.size() != n) throw InvalidShape("nll_from_probs: label count does not match rows");
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    T total{0};
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] >= c) throw InvalidValue("nll_from_probs: label out of range");
        total -= std::log(std::max(probs[i * c + lab[i]], static_cast<T>(floor)));
    }
    return finish<T>("nll_from_probs", {1}, {total / static_cast<T>(n)}, {&probs},
                     [probs, lab, n, c, floor](Tape<T>& tape, std::span<const T> g) {
                         auto gp = tape.grad_of(probs);
                         if (gp.empty()) return;
                         for (std::size_t i = 0; i < n; ++i) {
                             const T p = probs[i * c + lab[i]];
                             if (p > static_cast<T>(floor)) gp[i * c + lab[i]] -= g[0] / (static_cast<T>(n) * p);
                         }
                     });
}

template <typename T>
Tensor<T> gaussian_nll(const Tensor<T>& mean, const Tensor<T>& var, const Tensor<T>& y, double var_floor) {
    require_rank("gaussian_nll", mean, 2);
    require_rank("gaussian_nll", var, 1);
    if (y.shape() != mean.shape() || var.dim(0) != mean.dim(0)) shape_mismatch("gaussian_nll", mean.shape(), y.shape());
    const std::size_t n = mean.dim(0), c = mean.dim(1);
    const T floor = static_cast<T>(var_floor);
    const T log2pi = static_cast<T>(std::log(2.0 * std::numbers::pi));
    T total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const T v = std::max(var[i], floor);
        for (std::size_t j = 0; j < c; ++j) {
            const T r = y[i * c + j] - mean[i * c + j];
            total += T{0.5} * (log2pi + std::log(v)) + r * r / (T{2} * v);
        }
    }
    const T count = static_cast<T>(n * c);
    return finish<T>("gaussian_nll", {1}, {total / count}, {&mean, &var, &y},
                     [mean, var, y, n, c, floor, count](Tape<T>& tape, std::span<const T> g) {
                         auto gm = tape.grad_of(mean);
                         auto gv = tape.grad_of(var);
                         auto gy = tape.grad_of(y);
                         const T scale = g[0] / count;
                         for (std::size_t i = 0; i < n; ++i) {
                             const bool clamped = var[i] < floor;
                             const T v = clamped ? floor : var[i];
                             for (std::size_t j = 0; j < c; ++j) {
                                 const T r = y[i * c + j] - mean[i * c + j];
                                 if (!gm.empty()) gm[i * c + j] -= scale * r / v;
                                 if (!gy.empty()) gy[i * c + j] += scale * r / v;
                                 if (!gv.empty() && !clamped) gv[i] += scale * (T{0.5} / v - r * r / (T{2} * v * v));
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> permute_mode1(const Tensor<T>& z, std::span<const std::size_t> perm) {
    if (perm.size() != z.dim(0)) throw InvalidShape("permute_mode1: permutation length mismatch");
    const std::size_t stride = z.size() / z.dim(0);
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < perm.size(); ++i) std::copy_n(z.data() + perm[i] * stride, stride, out.data() + i * stride);
    return Tensor<T>(z.shape(), std::move(out));
}

template <typename T>
Tensor<T> permute_mode2(const Tensor<T>& z, std::span<const std::size_t> perm) {
    if (z.rank() < 2 || perm.size() != z.dim(1)) throw InvalidShape("permute_mode2: permutation length mismatch");
    const std::size_t d1 = z.dim(0), d2 = z.dim(1), d3 = z.rank() == 3 ? z.dim(2) : 1;
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j)
            std::copy_n(z.data() + (i * d2 + perm[j]) * d3, d3, out.data() + (i * d2 + j) * d3);
    return Tensor<T>(z.shape(), std::move(out));
}

#define HSML_INSTANTIATE(T)                                                                                 \
    template Tensor<T> mode3_product(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> mode1_product(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> matricize_mode1(const Tensor<T>&);                                                   \
    template Tensor<T> transpose12(const Tensor<T>&);                                                       \
    template Tensor<T> concat_mode3(std::span<const Tensor<T>>);                                            \
    template Tensor<T> slice12(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);       \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> transpose(const Tensor<T>&);                                                         \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                                      \
    template Tensor<T> sq_dist(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> spd_solve(const Tensor<T>&, const Tensor<T>&, double, double);                       \
    template Tensor<T> add_scaled_identity(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> row_sum(const Tensor<T>&);                                                           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> affine(const Tensor<T>&, T, T);                                                      \
    template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> exp(const Tensor<T>&);                                                               \
    template Tensor<T> relu(const Tensor<T>&);                                                              \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
    template Tensor<T> sum(const Tensor<T>&);                                                               \
    template Tensor<T> nll_from_probs(const Tensor<T>&, std::span<const std::size_t>, double);              \
    template Tensor<T> gaussian_nll(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);          \
    template Tensor<T> permute_mode1(const Tensor<T>&, std::span<const std::size_t>);                       \
    template Tensor<T> permute_mode2(const Tensor<T>&, std::span<const std::size_t>);

HSML_INSTANTIATE(float)
HSML_INSTANTIATE(double)

#undef HSML_INSTANTIATE

} // namespace hsml
