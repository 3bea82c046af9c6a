#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hsml/error.hpp"
#include "hsml/ops.hpp"
#include "test_util.hpp"

using namespace hsml;
using namespace hsml::test;

namespace {

std::vector<double> iota_values(std::size_t n, double start = 1.0) {
    std::vector<double> v(n);
    std::iota(v.begin(), v.end(), start);
    return v;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

} // namespace

TEST_CASE("tensor construction validates shape and data length") {
    CHECK_THROWS_AS(TD({2, 2}, {1, 2, 3}), InvalidShape);
    CHECK_THROWS_AS(TD({2, 0}, {}), InvalidShape);
    CHECK_THROWS_AS(TD({1, 1, 1, 1}, {1}), InvalidShape);
    CHECK_THROWS_AS(TD(Shape{}, {}), InvalidShape);
    const TD t({2, 3, 1}, iota_values(6));
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2, 0) == 6.0);
    CHECK_THROWS_AS(t.with_shape({4}), InvalidShape);
}

TEST_CASE("mode3_product") {
    SUBCASE("identity projection leaves Z unchanged") {
        const TD z({2, 2, 2}, iota_values(8));
        const TD w({2, 2}, {1, 0, 0, 1});
        CHECK(mode3_product(z, w).to_vector() == z.to_vector());
    }
    SUBCASE("ones(1,1,3) times [[1,2,3]] is 6") {
        const TD out = mode3_product(TD::full({1, 1, 3}, 1.0), TD({1, 3}, {1, 2, 3}));
        CHECK(out.shape() == Shape{1, 1, 1});
        CHECK(out[0] == 6.0);
    }
    SUBCASE("random case against a triple loop") {
        std::mt19937_64 rng(1);
        const TD z = random_tensor<double>({3, 4, 2}, rng), w = random_tensor<double>({5, 2}, rng);
        const TD out = mode3_product(z, w);
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t h = 0; h < 5; ++h) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < 2; ++k) s += z.at(a, b, k) * w.at(h, k);
                    CHECK(out.at(a, b, h) == doctest::Approx(s).epsilon(1e-14));
                }
    }
    SUBCASE("shape mismatch names both shapes") {
        try {
            mode3_product(TD::zeros({2, 2, 3}), TD::zeros({4, 2}));
            FAIL("expected InvalidShape");
        } catch (const InvalidShape& e) {
            const std::string msg = e.what();
            CHECK(msg.find("(2,2,3)") != std::string::npos);
            CHECK(msg.find("(4,2)") != std::string::npos);
        }
    }
    SUBCASE("mode-1 and mode-2 equivariance") {
        std::mt19937_64 rng(2);
        for (int t = 0; t < 20; ++t) {
            const std::size_t d1 = 1 + rng() % 5, d2 = 1 + rng() % 5, d3 = 1 + rng() % 4;
            const TD z = random_tensor<double>({d1, d2, d3}, rng), w = random_tensor<double>({3, d3}, rng);
            const auto p1 = shuffled(d1, rng), p2 = shuffled(d2, rng);
            CHECK(mode3_product(permute_mode1<double>(z, p1), w).to_vector() ==
                  permute_mode1<double>(mode3_product(z, w), p1).to_vector());
            CHECK(mode3_product(permute_mode2<double>(z, p2), w).to_vector() ==
                  permute_mode2<double>(mode3_product(z, w), p2).to_vector());
            const auto zf = cast<float>(z);
            const auto wf = cast<float>(w);
            CHECK(max_abs(mode3_product(permute_mode1<float>(zf, p1), wf), permute_mode1<float>(mode3_product(zf, wf), p1)) <=
                  1e-6);
        }
    }
}

TEST_CASE("matricize_mode1") {
    CHECK(matricize_mode1(TD({1, 1, 1}, {5})).to_vector() == std::vector<double>{5});
    const TD q({2, 1, 2}, {1, 2, 3, 4});
    const TD m = matricize_mode1(q);
    CHECK(m.shape() == Shape{2, 2});
    CHECK(m.to_vector() == std::vector<double>{1, 2, 3, 4});

    std::mt19937_64 rng(3);
    const TD a = random_tensor<double>({3, 2, 2}, rng), b = random_tensor<double>({3, 2, 2}, rng);
    const TD prod = matmul_nt(matricize_mode1(a), matricize_mode1(b));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < 2; ++d)
                for (std::size_t h = 0; h < 2; ++h) s += a.at(i, d, h) * b.at(j, d, h);
            CHECK(prod.at(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("mode1_product") {
    std::mt19937_64 rng(4);
    const TD v = random_tensor<double>({3, 2, 1}, rng);
    CHECK(max_abs(mode1_product(v, TD({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})), v) == 0.0);

    const TD uniform = mode1_product(v, TD::full({3, 3}, 1.0 / 3.0));
    for (std::size_t d = 0; d < 2; ++d) {
        const double mean = (v.at(0, d, 0) + v.at(1, d, 0) + v.at(2, d, 0)) / 3.0;
        for (std::size_t i = 0; i < 3; ++i) CHECK(uniform.at(i, d, 0) == doctest::Approx(mean));
    }

    const TD a = random_tensor<double>({3, 3}, rng);
    const TD out = mode1_product(v, a);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t d = 0; d < 2; ++d) {
            double s = 0.0;
            for (std::size_t j = 0; j < 3; ++j) s += a.at(i, j) * v.at(j, d, 0);
            CHECK(out.at(i, d, 0) == doctest::Approx(s).epsilon(1e-14));
        }
    CHECK_THROWS_AS(mode1_product(v, TD::zeros({2, 2})), InvalidShape);
}

TEST_CASE("softmax_rows") {
    CHECK(softmax_rows(TD::zeros({2, 2})).to_vector() == std::vector<double>{0.5, 0.5, 0.5, 0.5});
    const TD s = softmax_rows(TD({1, 2}, {0.0, std::log(3.0)}));
    CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));

    std::mt19937_64 rng(5);
    const TD m = random_tensor<double>({4, 5}, rng, 50.0);
    std::vector<double> shifted = m.to_vector();
    for (std::size_t j = 0; j < 5; ++j) shifted[5 + j] += 123.0;
    CHECK(max_abs(softmax_rows(m), softmax_rows(TD({4, 5}, shifted))) < 1e-12);

    const TD big = softmax_rows(random_tensor<double>({6, 6}, rng, 1e3));
    for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(big.at(i, j) >= 0.0);
            row += big.at(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-6);
    }
    CHECK_THROWS_AS(softmax_rows(TD({1, 2}, {0.0, NAN})), InvalidValue);
    CHECK_THROWS_AS(softmax_rows(TD({1, 2}, {0.0, INFINITY})), InvalidValue);
}

TEST_CASE("layer_norm over the last mode") {
    const TD ones = TD::full({2}, 1.0), zeros = TD::zeros({2});
    CHECK(layer_norm(TD({1, 1, 2}, {3, 3}), ones, zeros).to_vector() == std::vector<double>{0, 0});
    const TD y = layer_norm(TD({1, 1, 2}, {1, 3}), ones, zeros);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expected).epsilon(1e-14));
    CHECK(y[1] == doctest::Approx(expected).epsilon(1e-14));

    std::mt19937_64 rng(6);
    const std::size_t h = 7;
    const TD x = random_tensor<double>({3, 2, h}, rng, 4.0);
    const TD out = layer_norm(x, TD::full({h}, 1.0), TD::zeros({h}));
    for (std::size_t f = 0; f < 6; ++f) {
        double mean = 0.0, var = 0.0;
        for (std::size_t k = 0; k < h; ++k) mean += out[f * h + k];
        mean /= h;
        for (std::size_t k = 0; k < h; ++k) var += (out[f * h + k] - mean) * (out[f * h + k] - mean);
        var /= h;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("transpose12") {
    std::mt19937_64 rng(7);
    const TD fixed = random_tensor<double>({1, 1, 3}, rng);
    CHECK(transpose12(fixed).to_vector() == fixed.to_vector());
    const TD z({2, 3, 1}, iota_values(6));
    const TD t = transpose12(z);
    CHECK(t.shape() == Shape{3, 2, 1});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(t.at(j, i, 0) == z.at(i, j, 0));
    const TD r = random_tensor<double>({3, 4, 2}, rng);
    CHECK(transpose12(transpose12(r)).to_vector() == r.to_vector());
}

TEST_CASE("backward") {
    SUBCASE("sum(W) has an all-ones gradient") {
        Tape<double> tape;
        const TD w = tape.watch(TD({2, 3}, iota_values(6)));
        tape.backward(sum(w));
        CHECK(tape.grad(w).to_vector() == std::vector<double>(6, 1.0));
    }
    SUBCASE("sum(mode3_product(Z, W)) w.r.t. W is the mode-3 sum of Z") {
        std::mt19937_64 rng(8);
        const TD z = random_tensor<double>({3, 2, 4}, rng);
        Tape<double> tape;
        const TD w = tape.watch(random_tensor<double>({2, 4}, rng));
        tape.backward(sum(mode3_product(z, w)));
        const TD g = tape.grad(w);
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t k = 0; k < 4; ++k) {
                double s = 0.0;
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 2; ++b) s += z.at(a, b, k);
                CHECK(g.at(h, k) == doctest::Approx(s).epsilon(1e-13));
            }
        CHECK(gradcheck([&](const std::vector<TD>& x) { return sum(mode3_product(z, x[0])); }, {w.detach()}) < 1e-4);
    }
    SUBCASE("a leaf off the path gets a zero gradient") {
        Tape<double> tape;
        const TD a = tape.watch(TD::full({2}, 1.0));
        const TD b = tape.watch(TD::full({3}, 2.0));
        tape.backward(sum(a));
        CHECK(tape.grad(b).to_vector() == std::vector<double>(3, 0.0));
    }
    SUBCASE("a second backward is a usage error") {
        Tape<double> tape;
        const TD a = tape.watch(TD::full({2}, 1.0));
        const TD loss = sum(a);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), UsageError);
    }
    SUBCASE("loss must be scalar and on the tape") {
        Tape<double> tape, other;
        const TD a = tape.watch(TD::full({2}, 1.0));
        CHECK_THROWS_AS(tape.backward(exp(a)), UsageError);
        CHECK_THROWS_AS(other.backward(sum(a)), UsageError);
    }
}

TEST_CASE("reverse-mode gradients match central differences for every op") {
    std::mt19937_64 rng(9);
    auto r = [&](Shape s, double scale = 1.0) { return random_tensor<double>(s, rng, scale); };
    const double tol = 1e-4;

    CHECK(gradcheck([](auto& x) { return weighted_sum(mode3_product(x[0], x[1])); }, {r({3, 2, 4}), r({3, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(mode1_product(x[0], x[1])); }, {r({3, 2, 2}), r({3, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(matricize_mode1(x[0])); }, {r({3, 2, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(transpose12(x[0])); }, {r({2, 3, 4})}) < tol);
    CHECK(gradcheck(
              [](auto& x) {
                  const TD parts[] = {x[0], x[1]};
                  return weighted_sum(concat_mode3<double>(parts));
              },
              {r({2, 3, 2}), r({2, 3, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(slice12(x[0], 1, 3, 0, 2)); }, {r({4, 3, 2})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(reshape(x[0], {3, 4})); }, {r({2, 3, 2})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(matmul(x[0], x[1])); }, {r({3, 4}), r({4, 2})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(matmul_nt(x[0], x[1])); }, {r({3, 4}), r({2, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(transpose(x[0])); }, {r({3, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(softmax_rows(x[0])); }, {r({4, 4}, 2.0)}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(sq_dist(x[0], x[1])); }, {r({3, 4}), r({2, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(row_sum(x[0])); }, {r({3, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(add(x[0], x[1])); }, {r({2, 3}), r({2, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(sub(x[0], x[1])); }, {r({2, 3}), r({2, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(mul(x[0], x[1])); }, {r({2, 3}), r({2, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(affine(x[0], -1.5, 0.25)); }, {r({4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(mul_scalar(x[0], x[1])); }, {r({2, 3}), r({1})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(exp(x[0])); }, {r({2, 3})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(relu(x[0])); }, {r({3, 4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(add_bias(x[0], x[1])); }, {r({2, 3, 4}), r({4})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(layer_norm(x[0], x[1], x[2])); },
                    {r({2, 3, 4}), r({4}), r({4})}) < tol);
    CHECK(gradcheck([](auto& x) { return sum(x[0]); }, {r({2, 2, 2})}) < tol);

    // SPD input: K = A A^T + I
    const TD a = r({4, 4});
    const TD spd = add_scaled_identity(matmul_nt(a, a), TD::scalar(1.0));
    CHECK(gradcheck(
              [](auto& x) {
                  const TD k = add_scaled_identity(matmul_nt(x[0], x[0]), TD::scalar(1.0));
                  return weighted_sum(spd_solve(k, x[1]));
              },
              {a, r({4, 2})}) < tol);
    CHECK(gradcheck([](auto& x) { return weighted_sum(add_scaled_identity(x[0], x[1])); }, {spd, r({1})}) < tol);

    std::vector<double> p = r({3, 4}).to_vector();
    const TD probs = softmax_rows(TD({3, 4}, p));
    const std::size_t labels[] = {0, 3, 1};
    CHECK(gradcheck([&](auto& x) { return nll_from_probs(softmax_rows(x[0]), std::span<const std::size_t>(labels)); },
                    {TD({3, 4}, p)}) < tol);
    CHECK(gradcheck([](auto& x) { return gaussian_nll(x[0], exp(x[1]), x[2]); }, {r({3, 2}), r({3}), r({3, 2})}) < tol);
}

TEST_CASE("spd_solve") {
    std::mt19937_64 rng(10);
    const TD a = random_tensor<double>({5, 5}, rng);
    const TD k = add_scaled_identity(matmul_nt(a, a), TD::scalar(0.5));
    const TD b = random_tensor<double>({5, 3}, rng);
    const TD x = spd_solve(k, b);
    CHECK(max_abs(matmul(k, x), b) < 1e-6);

    // Rank-deficient PSD matrix: the escalating jitter makes it factorable.
    const TD v = random_tensor<double>({4, 1}, rng);
    CHECK_NOTHROW(spd_solve(matmul_nt(v, v), random_tensor<double>({4, 1}, rng)));
    CHECK_THROWS_AS(spd_solve(TD({2, 2}, {-1, 0, 0, -1}), TD::zeros({2, 1})), NumericalFailure);
}

TEST_CASE("non-finite results abort with the op name") {
    try {
        exp(TD::full({2}, 1000.0));
        FAIL("expected NumericalFailure");
    } catch (const NumericalFailure& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
}

TEST_CASE("losses") {
    const std::size_t one[] = {0};
    CHECK(nll_from_probs(TD({1, 2}, {0.75, 0.25}), std::span<const std::size_t>(one))[0] ==
          doctest::Approx(-std::log(0.75)));
    // Floor: a zero probability gives -log(1e-12), never infinity.
    CHECK(nll_from_probs(TD({1, 2}, {0.0, 1.0}), std::span<const std::size_t>(one))[0] ==
          doctest::Approx(-std::log(1e-12)));
    const TD g = gaussian_nll(TD({1, 1}, {0.3}), TD({1}, {1.0}), TD({1, 1}, {0.3}));
    CHECK(g[0] == doctest::Approx(0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
}

TEST_CASE("determinism: identical inputs give bit-identical values and gradients") {
    auto run = [] {
        std::mt19937_64 rng(11);
        const TD z = random_tensor<double>({4, 3, 2}, rng);
        Tape<double> tape;
        const TD w = tape.watch(random_tensor<double>({5, 2}, rng));
        const TD y = softmax_rows(matmul_nt(matricize_mode1(mode3_product(z, w)), matricize_mode1(mode3_product(z, w))));
        const TD loss = weighted_sum(y);
        tape.backward(loss);
        std::vector<double> out = y.to_vector();
        const auto g = tape.grad(w).to_vector();
        out.insert(out.end(), g.begin(), g.end());
        return out;
    };
    CHECK(run() == run());
}
