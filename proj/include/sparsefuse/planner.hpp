// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sparsefuse/attention.hpp"
#include "sparsefuse/bsr.hpp"
#include "sparsefuse/common.hpp"
#include "sparsefuse/mask.hpp"

namespace sparsefuse {

/// The hardware inputs the analytical model reads: SM count, shared memory
/// per SM in bytes, warp capacity per SM, and the size of a tensor element
/// (2 bytes models FP16 kernels).
struct HardwareSpec {
    std::string name;
    int sm_num = 0;
    std::int64_t smem_size = 0;
    int max_warp = 0;
    int element_bytes = 2;

    void check() const {
        if (sm_num <= 0 || smem_size <= 0 || max_warp <= 0 || element_bytes <= 0)
            throw invalid_parameter("hardware spec fields must be positive");
    }
};

// SM counts and shared-memory sizes follow the published specs of the two
// evaluation GPUs; the per-architecture warp limits (48 Ada, 64 Ampere) are
// vendor limits, overridable via a spec file.
inline HardwareSpec hw_preset(const std::string& name) {
    if (name == "rtx4090") return {"rtx4090", 128, 128 * 1024, 48, 2};
    if (name == "a100") return {"a100", 108, 192 * 1024, 64, 2};
    throw invalid_parameter("unknown hardware preset: " + name);
}

enum class KernelKind { RowWise, BlockWise };

inline const char* to_string(KernelKind k) {
    return k == KernelKind::RowWise ? "row_wise" : "block_wise";
}

/// Selected attention kernel. For RowWise plans the block fields are zero.
/// threshold is NaN when the degenerate short-sequence shortcut fired
/// before it could be computed; fallback marks a RowWise plan chosen only
/// because no block setting fit the hardware.
struct KernelPlan {
    KernelKind kind = KernelKind::RowWise;
    int block_m = 0;
    int block_n = 0;
    int num_warps = 0;
    double score = 0.0;
    double threshold = std::numeric_limits<double>::quiet_NaN();
    bool fallback = false;
};

constexpr int kMinBlock = 16;  // threshold always works at this granularity

/// Valid-block ratio at 16x16 granularity minus a length penalty:
/// L / N^2 - tau / (log2 N)^2 with N = ceil(seq_len/16) and L the total
/// load count. Negative values route to the row-wise kernel.
inline double threshold(const DenseMask& mask, double tau = 1.2) {
    const int n = mask.seq_len();
    if (n <= kMinBlock)
        throw degenerate_input("threshold undefined for seq_len <= 16 (log2(1) = 0)");
    const auto bsr = build_bsr(mask, kMinBlock, kMinBlock);
    const double big_n = static_cast<double>(bsr.n_rows);
    const double loads = static_cast<double>(bsr.load_row_ptr.back());
    const double log_n = std::log2(big_n);
    return loads / (big_n * big_n) - tau / (log_n * log_n);
}

/// Shared-memory demand of one block in elements:
/// (2*BLOCK_M + BLOCK_N)*(w + padding) + BLOCK_M*(BLOCK_N + padding).
inline std::int64_t req_smem(int block_m, int block_n, int head_size, int padding = 16) {
    if (block_m <= 0 || block_n <= 0 || head_size <= 0 || padding < 0)
        throw invalid_parameter("req_smem arguments must be positive");
    return static_cast<std::int64_t>(2 * block_m + block_n) * (head_size + padding) +
           static_cast<std::int64_t>(block_m) * (block_n + padding);
}

/// Fraction of the SM's warp capacity kept busy. Whole blocks only, so both
/// limits use floor division; a block that does not fit in SMEM at all
/// yields zero and is excluded downstream.
inline double occupancy(int num_warps, std::int64_t req_smem_elems, const HardwareSpec& hw) {
    hw.check();
    if (num_warps <= 0 || req_smem_elems <= 0)
        throw invalid_parameter("occupancy arguments must be positive");
    const std::int64_t bytes = req_smem_elems * hw.element_bytes;
    const std::int64_t blocks_by_smem = bytes > hw.smem_size ? 0 : hw.smem_size / bytes;
    const std::int64_t blocks_by_warps = hw.max_warp / num_warps;
    const std::int64_t blocks = std::min(blocks_by_smem, blocks_by_warps);
    return static_cast<double>(num_warps) * static_cast<double>(blocks) /
           static_cast<double>(hw.max_warp);
}

/// Score of a candidate setting: OCC * sqrt(SM_NUM / (BLOCK_M*BLOCK_N)) *
/// (seq_len*h*bs) / BLOCK_M. Higher is better.
inline double plan_score(int block_m, int block_n, int num_warps, const HardwareSpec& hw,
                         std::int64_t seq_len, int h, std::int64_t bs, int head_size) {
    const double occ = occupancy(num_warps, req_smem(block_m, block_n, head_size), hw);
    if (occ == 0.0) return 0.0;
    const double granularity =
        std::sqrt(static_cast<double>(hw.sm_num) / (static_cast<double>(block_m) * block_n));
    const double work = static_cast<double>(seq_len) * h * static_cast<double>(bs) /
                        static_cast<double>(block_m);
    return occ * granularity * work;
}

inline const std::vector<int>& plan_block_sizes() {
    static const std::vector<int> sizes{16, 32, 64, 128};
    return sizes;
}

inline const std::vector<int>& plan_warp_counts() {
    static const std::vector<int> warps{1, 2, 4, 8};
    return warps;
}

/// Two-stage selection: the threshold routes between kernels, then the
/// feasible (BLOCK_M, BLOCK_N, num_warps) grid is scanned for the highest
/// score. Ties break toward the lexicographically smallest setting. Short
/// sequences (seq_len <= 16) and negative thresholds give RowWise; so does
/// an all-infeasible grid, with the fallback flag set.
inline KernelPlan select_plan(const DenseMask& mask, const HardwareSpec& hw, std::int64_t seq_len,
                              int h, std::int64_t bs, int head_size) {
    hw.check();
    if (mask.seq_len() != seq_len) throw shape_error("mask seq_len differs from requested");
    if (h <= 0 || bs <= 0 || head_size <= 0)
        throw invalid_parameter("hyperparameters must be positive");

    KernelPlan plan;
    if (seq_len <= kMinBlock) return plan;  // RowWise, threshold NaN

    plan.threshold = threshold(mask);
    if (plan.threshold < 0.0) return plan;  // RowWise

    double best = -1.0;
    for (int bm : plan_block_sizes()) {
        for (int bn : plan_block_sizes()) {
            for (int w : plan_warp_counts()) {
                const double s = plan_score(bm, bn, w, hw, seq_len, h, bs, head_size);
                if (s > 0.0 && s > best) {
                    best = s;
                    plan.kind = KernelKind::BlockWise;
                    plan.block_m = bm;
                    plan.block_n = bn;
                    plan.num_warps = w;
                    plan.score = s;
                }
            }
        }
    }
    if (plan.kind != KernelKind::BlockWise) plan.fallback = true;  // nothing fit in SMEM
    return plan;
}

/// Plan-checked executor entry: the BSR must be built at the plan's block
/// sizes before block-skipping attention runs under that plan.
inline Tensor4<float> block_sparse_sdpa(const AttentionInput<float>& in, const BsrMask& bsr,
                                        const KernelPlan& plan, BlockExecStats* stats = nullptr) {
    if (plan.kind != KernelKind::BlockWise)
        throw plan_error("plan does not select the block-wise kernel");
    if (plan.block_m != bsr.block_m || plan.block_n != bsr.block_n)
        throw plan_error("BSR block sizes do not match the active plan");
    return block_sparse_sdpa(in, bsr, stats);
}

}  // namespace sparsefuse
