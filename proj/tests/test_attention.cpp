#include <doctest.h>

#include <cmath>

#include "hsml/attention.hpp"
#include "hsml/error.hpp"
#include "hsml/ops.hpp"
#include "hsml/selftest.hpp"
#include "test_util.hpp"

using namespace hsml;
using namespace hsml::test;

namespace {

VsaParams<double> random_head(std::size_t in, std::size_t hk, std::size_t hv, std::mt19937_64& rng) {
    return {random_tensor<double>({hk, in}, rng), random_tensor<double>({hk, in}, rng),
            random_tensor<double>({hv, in}, rng)};
}

} // namespace

TEST_CASE("vsa_forward with a single example") {
    std::mt19937_64 rng(1);
    const auto p = random_head(3, 4, 5, rng);
    const TD z = random_tensor<double>({1, 2, 3}, rng);
    const auto out = vsa_forward(z, p);
    CHECK(out.attention.shape() == Shape{1, 1});
    CHECK(out.attention[0] == 1.0);
    CHECK(max_abs(out.out, mode3_product(z, p.w_v)) < 1e-15);
}

TEST_CASE("vsa_forward with one attribute is standard scaled dot-product attention") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        const std::size_t n = 1 + rng() % 6, d3 = 1 + rng() % 4, hk = 1 + rng() % 5, hv = 1 + rng() % 5;
        const auto p = random_head(d3, hk, hv, rng);
        const TD z = random_tensor<double>({n, 1, d3}, rng);
        const auto out = vsa_forward(z, p);

        // X is n x d3; Q = X Wq^T, K = X Wk^T, V = X Wv^T
        auto proj = [&](const TD& w, std::size_t i, std::size_t h) {
            double s = 0.0;
            for (std::size_t k = 0; k < d3; ++k) s += z.at(i, 0, k) * w.at(h, k);
            return s;
        };
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t h = 0; h < hk; ++h) s += proj(p.w_q, i, h) * proj(p.w_k, j, h);
                logits[j] = s / std::sqrt(double(hk));
            }
            const double m = *std::max_element(logits.begin(), logits.end());
            double total = 0.0;
            for (auto& l : logits) total += (l = std::exp(l - m));
            for (std::size_t h = 0; h < hv; ++h) {
                double o = 0.0;
                for (std::size_t j = 0; j < n; ++j) o += logits[j] / total * proj(p.w_v, j, h);
                CHECK(std::abs(out.out.at(i, 0, h) - o) <= 1e-6);
            }
        }
    }
}

TEST_CASE("vsa_forward is mode-1 equivariant and its rows are stochastic") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const std::size_t d1 = 1 + rng() % 6, d2 = 1 + rng() % 6, d3 = 1 + rng() % 4;
        const auto p = random_head(d3, 3, 2, rng);
        const TD z = random_tensor<double>({d1, d2, d3}, rng);
        std::vector<std::size_t> perm(d1);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto base = vsa_forward(z, p);
        const auto moved = vsa_forward(permute_mode1<double>(z, perm), p);
        CHECK(max_abs(moved.out, permute_mode1<double>(base.out, perm)) <= 1e-10);
        for (std::size_t i = 0; i < d1; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < d1; ++j) row += base.attention.at(i, j);
            CHECK(std::abs(row - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("mvsa_forward") {
    std::mt19937_64 rng(4);
    SUBCASE("one head with identity W_O equals that head") {
        MvsaParams<double> p;
        p.heads.push_back(random_head(3, 4, 5, rng));
        std::vector<double> eye(25, 0.0);
        for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
        p.w_o = TD({5, 5}, eye);
        const TD z = random_tensor<double>({4, 2, 3}, rng);
        CHECK(max_abs(mvsa_forward(z, p), vsa_forward(z, p.heads[0]).out) < 1e-14);
    }
    SUBCASE("output shape") {
        const auto p = init_mvsa<double>(4, 4, 8, 8, 32, rng);
        CHECK(p.w_o.shape() == Shape{32, 32});
        CHECK(mvsa_forward(random_tensor<double>({5, 3, 4}, rng), p).shape() == Shape{5, 3, 32});
    }
    SUBCASE("the same parameters accept varying D1 and D2") {
        const auto p = init_mvsa<float>(4, 2, 3, 3, 5, rng);
        for (std::size_t d1 = 1; d1 <= 6; ++d1)
            for (std::size_t d2 = 1; d2 <= 6; ++d2)
                CHECK(mvsa_forward(random_tensor<float>({d1, d2, 4}, rng), p).shape() == Shape{d1, d2, 5});
    }
    SUBCASE("D3 mismatch is an invalid shape") {
        const auto p = init_mvsa<double>(4, 2, 3, 3, 5, rng);
        CHECK_THROWS_AS(mvsa_forward(random_tensor<double>({2, 2, 3}, rng), p), InvalidShape);
        CHECK_THROWS_AS(vsa_forward(random_tensor<double>({2, 2, 5}, rng), p.heads[0]), InvalidShape);
    }
    SUBCASE("mode-2 equivariance") {
        const auto p = init_mvsa<double>(3, 3, 4, 4, 6, rng);
        for (int t = 0; t < 20; ++t) {
            const std::size_t d1 = 1 + rng() % 6, d2 = 1 + rng() % 6;
            const TD z = random_tensor<double>({d1, d2, 3}, rng);
            std::vector<std::size_t> perm(d2);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            CHECK(max_abs(mvsa_forward(permute_mode2<double>(z, perm), p),
                          permute_mode2<double>(mvsa_forward(z, p), perm)) <= 1e-10);
        }
    }
}

TEST_CASE("attention equivariance suites at the documented tolerances") {
    for (const bool dbl : {false, true})
        for (const auto& r : check_attention_equivariance(100, dbl, 5)) {
            INFO(r.name << " " << r.max_error);
            CHECK(r.passed);
            CHECK(r.tolerance == (dbl ? 1e-10 : 1e-5));
        }
    const auto rows = check_attention_rows(100, 6);
    CHECK(rows.passed);
    const auto std_attn = check_standard_attention(50, 7);
    CHECK(std_attn.passed);
}

TEST_CASE("the diagnostic attention matrix is detached") {
    std::mt19937_64 rng(8);
    Tape<double> tape;
    const auto p = random_head(2, 2, 2, rng);
    const VsaParams<double> bound{tape.watch(p.w_q), tape.watch(p.w_k), tape.watch(p.w_v)};
    const auto out = vsa_forward(random_tensor<double>({3, 2, 2}, rng), bound);
    CHECK_FALSE(out.attention.on_tape());
    CHECK(out.out.on_tape());
}

TEST_CASE("gradients through mvsa_forward match central differences") {
    std::mt19937_64 rng(9);
    const auto p = init_mvsa<double>(3, 2, 3, 2, 4, rng);
    const TD z = random_tensor<double>({4, 3, 3}, rng);
    std::vector<TD> inputs{z, p.heads[0].w_q, p.heads[0].w_k, p.heads[0].w_v,
                           p.heads[1].w_q, p.heads[1].w_k, p.heads[1].w_v, p.w_o};
    const double err = gradcheck(
        [](const std::vector<TD>& x) {
            MvsaParams<double> q;
            q.heads = {{x[1], x[2], x[3]}, {x[4], x[5], x[6]}};
            q.w_o = x[7];
            return weighted_sum(mvsa_forward(x[0], q));
        },
        inputs);
    CHECK(err < 1e-4);
}

TEST_CASE("vsa_flop_estimate") {
    // D1^2 D2 (Hk + H) + D1 D2 D3 (Hk + Hv) expanded by hand:
    // 64 * 4 * 64 + 8 * 4 * 4 * 64 = 16384 + 8192
    CHECK(vsa_flop_estimate(8, 4, 4, 32, 32, 32) == 24576.0);
    for (std::size_t d1 : {8, 16, 64})
        CHECK(vsa_flop_estimate(2 * d1, 4, 4, 32, 32, 32) >= 3.0 * vsa_flop_estimate(d1, 4, 4, 32, 32, 32));
    for (std::size_t d2 : {1, 3, 10})
        CHECK(vsa_flop_estimate(8, 2 * d2, 4, 32, 32, 32) == doctest::Approx(2.0 * vsa_flop_estimate(8, d2, 4, 32, 32, 32)));
}
