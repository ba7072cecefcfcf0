// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "sparsefuse/io.hpp"
#include "sparsefuse/planner.hpp"
#include "support/oracles.hpp"

using namespace sparsefuse;

namespace {

// Independent re-derivation of the scoring pipeline for the argmax oracle.
struct BruteForcePlan {
    int bm = 0, bn = 0, warps = 0;
    double score = -1.0;
};

double ref_score(int bm, int bn, int w, const HardwareSpec& hw, std::int64_t seq, int h,
                 std::int64_t bs, int head) {
    const std::int64_t req = (2LL * bm + bn) * (head + 16) + static_cast<std::int64_t>(bm) * (bn + 16);
    const std::int64_t bytes = req * hw.element_bytes;
    const std::int64_t by_smem = bytes > hw.smem_size ? 0 : hw.smem_size / bytes;
    const std::int64_t by_warp = hw.max_warp / w;
    const double occ =
        static_cast<double>(w) * static_cast<double>(std::min(by_smem, by_warp)) / hw.max_warp;
    if (occ == 0.0) return 0.0;
    return occ * std::sqrt(static_cast<double>(hw.sm_num) / (static_cast<double>(bm) * bn)) *
           (static_cast<double>(seq) * h * static_cast<double>(bs) / bm);
}

BruteForcePlan brute_force_argmax(const HardwareSpec& hw, std::int64_t seq, int h,
                                  std::int64_t bs, int head) {
    BruteForcePlan best;
    for (int bm : {16, 32, 64, 128})
        for (int bn : {16, 32, 64, 128})
            for (int w : {1, 2, 4, 8}) {
                const double s = ref_score(bm, bn, w, hw, seq, h, bs, head);
                if (s > 0.0 && s > best.score) best = {bm, bn, w, s};
            }
    return best;
}

}  // namespace

TEST_CASE("threshold hand arithmetic at seq_len 1024") {
    REQUIRE_THAT(threshold(DenseMask(1024, true)),
                 Catch::Matchers::WithinAbs(1.0 - 1.2 / 36.0, 1e-12));
    REQUIRE_THAT(threshold(DenseMask(1024, false)),
                 Catch::Matchers::WithinAbs(-1.2 / 36.0, 1e-12));
}

TEST_CASE("threshold for the sliding window from a tile-count oracle") {
    const auto mask = gen_sliding_window(1024, 32);
    const auto tiles = oracles::classify_tiles(mask, 16, 16);
    const double n = 64.0;
    const double expected =
        static_cast<double>(tiles.full + tiles.part) / (n * n) - 1.2 / std::pow(std::log2(n), 2);
    REQUIRE_THAT(threshold(mask), Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("threshold rejects degenerate sequence lengths") {
    REQUIRE_THROWS_AS(threshold(DenseMask(16, true)), degenerate_input);
    REQUIRE_THROWS_AS(threshold(DenseMask(8, true)), degenerate_input);
}

TEST_CASE("threshold never decreases when bits are added") {
    std::mt19937_64 rng(71);
    auto m = oracles::random_mask(96, 0.05, rng);
    double prev = threshold(m);
    for (int step = 0; step < 6; ++step) {
        for (int k = 0; k < 40; ++k)
            m.set(static_cast<int>(rng() % 96), static_cast<int>(rng() % 96), true);
        const double t = threshold(m);
        REQUIRE(t >= prev - 1e-12);
        prev = t;
    }
}

TEST_CASE("req_smem frozen values") {
    REQUIRE(req_smem(64, 64, 64, 16) == 20480);
    REQUIRE(req_smem(16, 16, 64, 16) == 4352);
    // padding 0, square blocks: 3*B*w + B^2
    REQUIRE(req_smem(32, 32, 64, 0) == 3 * 32 * 64 + 32 * 32);
    REQUIRE(req_smem(16, 16, 128, 0) == 3 * 16 * 128 + 16 * 16);
}

TEST_CASE("occupancy saturation, infeasibility, and the A100 case") {
    const auto a100 = hw_preset("a100");
    REQUIRE(occupancy(a100.max_warp, 100, a100) == 1.0);
    REQUIRE(occupancy(4, a100.smem_size, a100) == 0.0);  // bytes = 2x smem
    REQUIRE_THAT(occupancy(4, 20480, a100), Catch::Matchers::WithinAbs(0.25, 1e-12));
}

TEST_CASE("plan_score frozen A100 case and linearity") {
    const auto a100 = hw_preset("a100");
    const double expected = 0.25 * std::sqrt(108.0 / 4096.0) * 1536.0;
    REQUIRE_THAT(plan_score(64, 64, 4, a100, 1024, 12, 8, 64),
                 Catch::Matchers::WithinAbs(expected, 1e-9));
    REQUIRE_THAT(plan_score(64, 64, 4, a100, 1024, 12, 16, 64),
                 Catch::Matchers::WithinAbs(2.0 * plan_score(64, 64, 4, a100, 1024, 12, 8, 64),
                                            1e-9));
    // infeasible settings score zero
    HardwareSpec tiny{"tiny", 8, 1024, 8, 2};
    REQUIRE(plan_score(128, 128, 1, tiny, 1024, 1, 1, 64) == 0.0);
}

TEST_CASE("select_plan routes low-threshold masks to the row-wise kernel") {
    const auto a100 = hw_preset("a100");
    const auto plan = select_plan(DenseMask(1024, false), a100, 1024, 12, 8, 64);
    REQUIRE(plan.kind == KernelKind::RowWise);
    REQUIRE(plan.threshold < 0.0);
    REQUIRE_FALSE(plan.fallback);
    // A band of width one keeps only diagonal tiles valid: 4/16 loads at
    // seq_len 64, under the 1.2/4 penalty.
    const auto narrow = select_plan(gen_sliding_window(64, 1), a100, 64, 12, 8, 64);
    REQUIRE(narrow.kind == KernelKind::RowWise);
    REQUIRE(narrow.threshold < 0.0);
}

TEST_CASE("select_plan matches brute force on the all-true mask") {
    const auto a100 = hw_preset("a100");
    const auto plan = select_plan(DenseMask(1024, true), a100, 1024, 12, 8, 64);
    REQUIRE(plan.kind == KernelKind::BlockWise);
    const auto ref = brute_force_argmax(a100, 1024, 12, 8, 64);
    REQUIRE(plan.block_m == ref.bm);
    REQUIRE(plan.block_n == ref.bn);
    REQUIRE(plan.num_warps == ref.warps);
    REQUIRE_THAT(plan.score, Catch::Matchers::WithinAbs(ref.score, 1e-9));
}

TEST_CASE("select_plan equals brute-force argmax on random cases") {
    std::mt19937_64 rng(2025);
    for (int iter = 0; iter < 50; ++iter) {
        HardwareSpec hw{"rand",
                        20 + static_cast<int>(rng() % 120),
                        static_cast<std::int64_t>(32 + rng() % 224) * 1024,
                        std::vector<int>{32, 48, 64}[rng() % 3],
                        (rng() % 2) ? 2 : 4};
        const std::int64_t seq = std::vector<std::int64_t>{64, 128, 256, 512}[rng() % 4];
        const int h = 1 + static_cast<int>(rng() % 16);
        const std::int64_t bs = 1 + static_cast<std::int64_t>(rng() % 16);
        const int head = std::vector<int>{16, 32, 64, 128}[rng() % 4];
        const double fill = 0.3 + 0.7 * unit_real(rng);
        const auto mask = gen_random_blocks(static_cast<int>(seq), 16, fill, rng());
        CAPTURE(iter, hw.sm_num, hw.smem_size, hw.max_warp, hw.element_bytes, seq, h, bs, head);

        const auto plan = select_plan(mask, hw, seq, h, bs, head);
        if (plan.kind == KernelKind::RowWise) {
            REQUIRE((plan.threshold < 0.0 || plan.fallback));
            continue;
        }
        const auto ref = brute_force_argmax(hw, seq, h, bs, head);
        REQUIRE(plan.block_m == ref.bm);
        REQUIRE(plan.block_n == ref.bn);
        REQUIRE(plan.num_warps == ref.warps);
    }
}

TEST_CASE("argmax setting is invariant to h and bs scaling") {
    const auto hw = hw_preset("rtx4090");
    const auto mask = gen_bigbird(512, 22, 22, 0.3, 4);
    const auto a = select_plan(mask, hw, 512, 3, 2, 64);
    const auto b = select_plan(mask, hw, 512, 12, 16, 64);
    REQUIRE(a.kind == b.kind);
    REQUIRE(a.block_m == b.block_m);
    REQUIRE(a.block_n == b.block_n);
    REQUIRE(a.num_warps == b.num_warps);
}

TEST_CASE("degenerate short sequences return RowWise with no threshold") {
    const auto plan = select_plan(DenseMask(16, true), hw_preset("a100"), 16, 12, 8, 64);
    REQUIRE(plan.kind == KernelKind::RowWise);
    REQUIRE(std::isnan(plan.threshold));
}

TEST_CASE("all-infeasible grids fall back to RowWise with a warning flag") {
    HardwareSpec cramped{"cramped", 16, 2048, 8, 2};  // smallest block needs 4352*2 bytes
    const auto plan = select_plan(DenseMask(128, true), cramped, 128, 4, 4, 64);
    REQUIRE(plan.kind == KernelKind::RowWise);
    REQUIRE(plan.fallback);
    REQUIRE(plan.threshold > 0.0);
}

TEST_CASE("plans are deterministic") {
    const auto mask = gen_longformer(256, 16, 16);
    const auto hw = hw_preset("a100");
    const auto a = select_plan(mask, hw, 256, 12, 8, 64);
    const auto b = select_plan(mask, hw, 256, 12, 8, 64);
    REQUIRE(a.kind == b.kind);
    REQUIRE(a.block_m == b.block_m);
    REQUIRE(a.block_n == b.block_n);
    REQUIRE(a.num_warps == b.num_warps);
    REQUIRE(a.score == b.score);
}

TEST_CASE("hardware presets carry the published specs") {
    const auto ada = hw_preset("rtx4090");
    REQUIRE(ada.sm_num == 128);
    REQUIRE(ada.smem_size == 128 * 1024);
    REQUIRE(ada.max_warp == 48);
    const auto ampere = hw_preset("a100");
    REQUIRE(ampere.sm_num == 108);
    REQUIRE(ampere.smem_size == 192 * 1024);
    REQUIRE(ampere.max_warp == 64);
    REQUIRE(ampere.element_bytes == 2);
    REQUIRE_THROWS_AS(hw_preset("h100"), invalid_parameter);
}

TEST_CASE("hardware specs load from JSON files") {
    const std::string path = "test_hw_spec.json";
    {
        std::ofstream f(path);
        f << R"({"name":"custom","sm_num":42,"smem_size":65536,"max_warp":32})";
    }
    const auto hw = load_hardware(path);
    REQUIRE(hw.name == "custom");
    REQUIRE(hw.sm_num == 42);
    REQUIRE(hw.element_bytes == 2);
    REQUIRE_THROWS_AS(load_hardware("no-such-preset-or-file"), io_error);
}
