// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sparsefuse/bsr.hpp"
#include "sparsefuse/common.hpp"
#include "sparsefuse/mask.hpp"
#include "sparsefuse/tensor.hpp"

namespace sparsefuse {

/// Reference SDPA in double precision. Scores are Q.K^T / sqrt(head_size),
/// masked positions get -inf before the softmax, and query rows with no
/// valid position produce an all-zero output row.
inline Tensor4<double> dense_sdpa_oracle(const AttentionInput<double>& in, const DenseMask& mask) {
    in.check();
    if (mask.seq_len() != in.seq_len()) throw shape_error("mask seq_len differs from input");
    const int n = in.seq_len(), d = in.head_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Tensor4<double> out(in.bs(), in.h(), n, d);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (int b = 0; b < in.bs(); ++b) {
        for (int hh = 0; hh < in.h(); ++hh) {
            for (int i = 0; i < n; ++i) {
                double row_max = neg_inf;
                for (int j = 0; j < n; ++j) {
                    if (!mask.get(i, j)) {
                        s[static_cast<std::size_t>(j)] = neg_inf;
                        continue;
                    }
                    double dot = 0.0;
                    for (int k = 0; k < d; ++k) dot += in.q.at(b, hh, i, k) * in.k.at(b, hh, j, k);
                    s[static_cast<std::size_t>(j)] = dot * scale;
                    row_max = std::max(row_max, s[static_cast<std::size_t>(j)]);
                }
                if (row_max == neg_inf) continue;  // fully masked row stays zero
                double denom = 0.0;
                for (int j = 0; j < n; ++j) {
                    if (s[static_cast<std::size_t>(j)] == neg_inf) continue;
                    denom += std::exp(s[static_cast<std::size_t>(j)] - row_max);
                }
                for (int j = 0; j < n; ++j) {
                    if (s[static_cast<std::size_t>(j)] == neg_inf) continue;
                    const double p = std::exp(s[static_cast<std::size_t>(j)] - row_max) / denom;
                    for (int k = 0; k < d; ++k) out.at(b, hh, i, k) += p * in.v.at(b, hh, j, k);
                }
            }
        }
    }
    return out;
}

/// Tiles touched by one (batch, head) slice of the block executor; the load
/// set is mask-level so the count is identical across slices.
struct BlockExecStats {
    std::int64_t tiles_loaded = 0;
    std::int64_t full_tiles = 0;
    std::int64_t part_tiles = 0;
};

/// Block-skipping attention with streaming softmax, single precision.
/// Only tiles in the BSR load set are touched; full tiles run dense, part
/// tiles apply their stored bit mask as -inf, everything else is skipped
/// for K and V alike. Running max / normalizer / accumulator are rescaled
/// per loaded tile; rows that never see a finite score come out zero.
inline Tensor4<float> block_sparse_sdpa(const AttentionInput<float>& in, const BsrMask& bsr,
                                        BlockExecStats* stats = nullptr) {
    in.check();
    if (bsr.seq_len != in.seq_len()) throw shape_error("bsr seq_len differs from input");
    const int n = in.seq_len(), d = in.head_size();
    const int bm = bsr.block_m, bn = bsr.block_n;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const float neg_inf = -std::numeric_limits<float>::infinity();
    Tensor4<float> out(in.bs(), in.h(), n, d);

    std::vector<float> m_run(static_cast<std::size_t>(bm));
    std::vector<float> l_run(static_cast<std::size_t>(bm));
    std::vector<float> acc(static_cast<std::size_t>(bm) * d);
    std::vector<float> s(static_cast<std::size_t>(bm) * bn);

    BlockExecStats local;
    for (int b = 0; b < in.bs(); ++b) {
        for (int hh = 0; hh < in.h(); ++hh) {
            const bool count_tiles = (b == 0 && hh == 0);
            for (int br = 0; br < bsr.n_rows; ++br) {
                const int i0 = br * bm;
                const int rows = std::min(bm, n - i0);
                if (rows <= 0) break;
                std::fill(m_run.begin(), m_run.end(), neg_inf);
                std::fill(l_run.begin(), l_run.end(), 0.0f);
                std::fill(acc.begin(), acc.end(), 0.0f);

                // Membership of each loaded column in the full set decides
                // dense vs masked handling; recovered by merge walk.
                std::int32_t fk = bsr.full_row_ptr[br];
                const std::int32_t fend = bsr.full_row_ptr[static_cast<std::size_t>(br) + 1];
                std::int32_t pk = bsr.part_row_ptr[br];

                for (std::int32_t lk = bsr.load_row_ptr[br];
                     lk < bsr.load_row_ptr[static_cast<std::size_t>(br) + 1]; ++lk) {
                    const int bc = bsr.load_col_idx[static_cast<std::size_t>(lk)];
                    const int j0 = bc * bn;
                    const int cols = std::min(bn, n - j0);
                    if (cols <= 0) continue;
                    const bool is_full = (fk < fend && bsr.full_col_idx[static_cast<std::size_t>(fk)] == bc);
                    const std::uint8_t* tile = nullptr;
                    if (is_full) {
                        ++fk;
                    } else {
                        tile = bsr.part_mask_pool[static_cast<std::size_t>(
                                                      bsr.part_tile_ids[static_cast<std::size_t>(pk)])]
                                   .data();
                        ++pk;
                    }
                    if (count_tiles) {
                        ++local.tiles_loaded;
                        ++(is_full ? local.full_tiles : local.part_tiles);
                    }

                    for (int r = 0; r < rows; ++r) {
                        float* srow = s.data() + static_cast<std::size_t>(r) * bn;
                        float tile_max = neg_inf;
                        for (int c = 0; c < cols; ++c) {
                            if (tile && !tile[static_cast<std::size_t>(r) * bn + c]) {
                                srow[c] = neg_inf;
                                continue;
                            }
                            float dot = 0.0f;
                            const float* qr = &in.q.at(b, hh, i0 + r, 0);
                            const float* kc = &in.k.at(b, hh, j0 + c, 0);
                            for (int k = 0; k < d; ++k) dot += qr[k] * kc[k];
                            srow[c] = dot * scale;
                            tile_max = std::max(tile_max, srow[c]);
                        }
                        const float new_m = std::max(m_run[static_cast<std::size_t>(r)], tile_max);
                        if (new_m == neg_inf) continue;  // nothing valid so far for this row
                        const float rescale =
                            m_run[static_cast<std::size_t>(r)] == neg_inf
                                ? 0.0f
                                : std::exp(m_run[static_cast<std::size_t>(r)] - new_m);
                        l_run[static_cast<std::size_t>(r)] *= rescale;
                        float* arow = acc.data() + static_cast<std::size_t>(r) * d;
                        for (int k = 0; k < d; ++k) arow[k] *= rescale;
                        for (int c = 0; c < cols; ++c) {
                            if (srow[c] == neg_inf) continue;
                            const float p = std::exp(srow[c] - new_m);
                            l_run[static_cast<std::size_t>(r)] += p;
                            const float* vc = &in.v.at(b, hh, j0 + c, 0);
                            for (int k = 0; k < d; ++k) arow[k] += p * vc[k];
                        }
                        m_run[static_cast<std::size_t>(r)] = new_m;
                    }
                }

                for (int r = 0; r < rows; ++r) {
                    const float l = l_run[static_cast<std::size_t>(r)];
                    if (l <= 0.0f) continue;
                    const float inv = 1.0f / l;
                    for (int k = 0; k < d; ++k)
                        out.at(b, hh, i0 + r, k) = acc[static_cast<std::size_t>(r) * d + k] * inv;
                }
            }
        }
    }
    if (stats) *stats = local;
    return out;
}

/// Row-gather attention in double precision: per query row, collect the
/// valid columns, run an exact two-pass softmax over the gathered scores,
/// and emit the weighted sum. Rows without valid columns come out zero.
inline Tensor4<double> rowwise_sdpa(const AttentionInput<double>& in, const RowwiseMask& rw) {
    in.check();
    if (rw.seq_len != in.seq_len()) throw shape_error("rowwise mask seq_len differs from input");
    const int n = in.seq_len(), d = in.head_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor4<double> out(in.bs(), in.h(), n, d);
    std::vector<double> s;
    for (int b = 0; b < in.bs(); ++b) {
        for (int hh = 0; hh < in.h(); ++hh) {
            for (int i = 0; i < n; ++i) {
                const std::int32_t begin = rw.row_ptr[i];
                const std::int32_t end = rw.row_ptr[static_cast<std::size_t>(i) + 1];
                if (begin == end) continue;
                s.assign(static_cast<std::size_t>(end - begin), 0.0);
                double row_max = -std::numeric_limits<double>::infinity();
                for (std::int32_t k = begin; k < end; ++k) {
                    const int j = rw.col_idx[static_cast<std::size_t>(k)];
                    double dot = 0.0;
                    for (int c = 0; c < d; ++c) dot += in.q.at(b, hh, i, c) * in.k.at(b, hh, j, c);
                    s[static_cast<std::size_t>(k - begin)] = dot * scale;
                    row_max = std::max(row_max, dot * scale);
                }
                double denom = 0.0;
                for (auto& x : s) {
                    x = std::exp(x - row_max);
                    denom += x;
                }
                for (std::int32_t k = begin; k < end; ++k) {
                    const int j = rw.col_idx[static_cast<std::size_t>(k)];
                    const double p = s[static_cast<std::size_t>(k - begin)] / denom;
                    for (int c = 0; c < d; ++c) out.at(b, hh, i, c) += p * in.v.at(b, hh, j, c);
                }
            }
        }
    }
    return out;
}

}  // namespace sparsefuse
