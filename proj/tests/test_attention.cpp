// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sparsefuse/attention.hpp"
#include "sparsefuse/planner.hpp"
#include "support/oracles.hpp"

using namespace sparsefuse;

namespace {

template <typename T>
double max_abs(const Tensor4<T>& a, const Tensor4<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - b.v[i]));
    return m;
}

}  // namespace

TEST_CASE("oracle matches a hand-computed 2x2 case") {
    AttentionInput<double> in{Tensor4<double>(1, 1, 2, 1), Tensor4<double>(1, 1, 2, 1),
                              Tensor4<double>(1, 1, 2, 1)};
    in.q.at(0, 0, 0, 0) = 1.0;
    in.q.at(0, 0, 1, 0) = 2.0;
    in.k.at(0, 0, 0, 0) = 0.5;
    in.k.at(0, 0, 1, 0) = -1.0;
    in.v.at(0, 0, 0, 0) = 2.0;
    in.v.at(0, 0, 1, 0) = 4.0;
    const auto out = dense_sdpa_oracle(in, DenseMask(2, true));
    // head_size 1, scale 1: row 0 scores (0.5, -1), row 1 scores (1, -2).
    const double e0 = (std::exp(0.5) * 2.0 + std::exp(-1.0) * 4.0) / (std::exp(0.5) + std::exp(-1.0));
    const double e1 = (std::exp(1.0) * 2.0 + std::exp(-2.0) * 4.0) / (std::exp(1.0) + std::exp(-2.0));
    REQUIRE_THAT(out.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(e0, 1e-12));
    REQUIRE_THAT(out.at(0, 0, 1, 0), Catch::Matchers::WithinAbs(e1, 1e-12));
}

TEST_CASE("fully masked input produces exactly zero everywhere") {
    const auto in = random_attention_input<double>(2, 2, 16, 8, 1);
    const auto out = dense_sdpa_oracle(in, DenseMask(16, false));
    for (double v : out.v) REQUIRE(v == 0.0);
    const auto rw = rowwise_sdpa(in, build_rowwise(DenseMask(16, false)));
    for (double v : rw.v) REQUIRE(v == 0.0);
    const auto inf = random_attention_input<float>(2, 2, 16, 8, 1);
    const auto blk = block_sparse_sdpa(inf, build_bsr(DenseMask(16, false), 4, 4));
    for (float v : blk.v) REQUIRE(v == 0.0f);
}

TEST_CASE("single valid position per row copies that V row") {
    const int n = 8, d = 4;
    auto in = random_attention_input<double>(1, 1, n, d, 3);
    const auto diag = gen_sliding_window(n, 1);
    const auto out = dense_sdpa_oracle(in, diag);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k)
            REQUIRE_THAT(out.at(0, 0, i, k), Catch::Matchers::WithinAbs(in.v.at(0, 0, i, k), 1e-12));
}

TEST_CASE("single-tile block executor equals unmasked attention") {
    const int n = 32;
    const auto inf = random_attention_input<float>(1, 2, n, 16, 5);
    const auto blk = block_sparse_sdpa(inf, build_bsr(DenseMask(n, true), n, n));
    const auto ref = dense_sdpa_oracle(inf.cast<double>(), DenseMask(n, true));
    REQUIRE(max_abs(blk, ref) <= 1e-5);
}

TEST_CASE("block executor equals the oracle across patterns and block shapes") {
    struct Case {
        DenseMask mask;
        int bm, bn;
    };
    std::vector<Case> cases;
    cases.push_back({gen_sliding_window(64, 8), 16, 16});
    cases.push_back({gen_dilated(64, 8, 1), 16, 32});
    cases.push_back({gen_bigbird(100, 10, 10, 0.2, 7), 16, 16});  // edge tiles
    cases.push_back({gen_longformer(96, 8, 8), 32, 16});
    for (const auto& c : cases) {
        CAPTURE(c.mask.seq_len(), c.bm, c.bn);
        const auto inf = random_attention_input<float>(2, 2, c.mask.seq_len(), 16, 11);
        const auto blk = block_sparse_sdpa(inf, build_bsr(c.mask, c.bm, c.bn));
        const auto ref = dense_sdpa_oracle(inf.cast<double>(), c.mask);
        REQUIRE(max_abs(blk, ref) <= 1e-5);
    }
}

TEST_CASE("rowwise executor equals the oracle within 1e-6") {
    for (int n : {64, 100}) {
        const auto mask = gen_bigbird(n, 8, 8, 0.15, 23);
        const auto in = random_attention_input<double>(2, 2, n, 16, 29);
        const auto rw = rowwise_sdpa(in, build_rowwise(mask));
        const auto ref = dense_sdpa_oracle(in, mask);
        REQUIRE(max_abs(rw, ref) <= 1e-6);
    }
}

TEST_CASE("identity-diagonal rowwise attention returns V") {
    const int n = 12, d = 6;
    const auto in = random_attention_input<double>(1, 1, n, d, 31);
    const auto out = rowwise_sdpa(in, build_rowwise(gen_sliding_window(n, 1)));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k)
            REQUIRE_THAT(out.at(0, 0, i, k), Catch::Matchers::WithinAbs(in.v.at(0, 0, i, k), 1e-12));
}

TEST_CASE("loaded tile count equals the BSR load set") {
    const auto mask = gen_sliding_window(1024, 32);
    const auto bsr = build_bsr(mask, 16, 16);
    const auto inf = random_attention_input<float>(1, 1, 1024, 16, 13);
    BlockExecStats stats;
    block_sparse_sdpa(inf, bsr, &stats);
    REQUIRE(stats.tiles_loaded == bsr.load_row_ptr.back());
    const auto bs = block_stats(bsr);
    REQUIRE(stats.tiles_loaded == bs.full_count + bs.part_count);
    REQUIRE(stats.full_tiles == bs.full_count);
    REQUIRE(stats.part_tiles == bs.part_count);
    REQUIRE(stats.tiles_loaded < 64 * 64);
}

TEST_CASE("probability weights sum to one via all-ones V") {
    const int n = 48;
    const auto mask = gen_bigbird(n, 4, 6, 0.2, 41);
    auto in = random_attention_input<double>(1, 2, n, 8, 43);
    for (auto& v : in.v.v) v = 1.0;
    const auto out = dense_sdpa_oracle(in, mask);
    const auto rw = rowwise_sdpa(in, build_rowwise(mask));
    for (int i = 0; i < n; ++i) {
        bool any = false;
        for (int j = 0; j < n; ++j) any = any || mask.get(i, j);
        for (int hh = 0; hh < 2; ++hh)
            for (int k = 0; k < 8; ++k) {
                const double expect = any ? 1.0 : 0.0;
                REQUIRE_THAT(out.at(0, hh, i, k), Catch::Matchers::WithinAbs(expect, 1e-6));
                REQUIRE_THAT(rw.at(0, hh, i, k), Catch::Matchers::WithinAbs(expect, 1e-6));
            }
    }
}

TEST_CASE("masked softmax is shift invariant") {
    // Shifting every key by one fixed vector adds a per-row constant to all
    // unmasked scores, which softmax cancels.
    const int n = 40, d = 8;
    const auto mask = gen_longformer(n, 4, 5);
    auto in = random_attention_input<double>(1, 1, n, d, 53);
    auto shifted = in;
    std::mt19937_64 rng(59);
    std::vector<double> w(static_cast<std::size_t>(d));
    for (auto& x : w) x = 2.0 * unit_real(rng) - 1.0;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < d; ++k) shifted.k.at(0, 0, j, k) += 3.0 * w[static_cast<std::size_t>(k)];
    const auto a = dense_sdpa_oracle(in, mask);
    const auto b = dense_sdpa_oracle(shifted, mask);
    REQUIRE(max_abs(a, b) <= 1e-9);
}

TEST_CASE("shape and plan errors") {
    const auto in = random_attention_input<double>(1, 1, 16, 4, 3);
    REQUIRE_THROWS_AS(dense_sdpa_oracle(in, DenseMask(8, true)), shape_error);
    const auto inf = random_attention_input<float>(1, 1, 64, 16, 3);
    const auto bsr = build_bsr(DenseMask(64, true), 16, 16);
    KernelPlan plan;
    plan.kind = KernelKind::BlockWise;
    plan.block_m = 32;
    plan.block_n = 16;
    REQUIRE_THROWS_AS(block_sparse_sdpa(inf, bsr, plan), plan_error);
    plan.block_m = 16;
    REQUIRE_NOTHROW(block_sparse_sdpa(inf, bsr, plan));
}
