// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparsefuse/common.hpp"
#include "sparsefuse/mask.hpp"

namespace sparsefuse {

/// Dual block-compressed-sparse-row mask. Tiles of block_m x block_n are
/// classified by content: all-valid tiles land in the full arrays, mixed
/// tiles in the part arrays with their bit content interned once in
/// part_mask_pool, all-invalid tiles are omitted. The load arrays are the
/// per-row union of full and part columns: exactly the tiles an executor
/// must touch. Cells past seq_len in edge tiles count as invalid.
struct BsrMask {
    int seq_len = 0;
    int block_m = 0;
    int block_n = 0;
    int n_rows = 0;
    int n_cols = 0;
    std::vector<std::int32_t> full_row_ptr;
    std::vector<std::int32_t> full_col_idx;
    std::vector<std::int32_t> part_row_ptr;
    std::vector<std::int32_t> part_col_idx;
    // Parallel to part_col_idx; indexes into part_mask_pool.
    std::vector<std::int32_t> part_tile_ids;
    std::vector<std::int32_t> load_row_ptr;
    std::vector<std::int32_t> load_col_idx;
    // Deduplicated mixed tiles, each block_m * block_n bytes, row-major.
    std::vector<std::vector<std::uint8_t>> part_mask_pool;
};

/// Plain CSR over individual valid cells, the storage the row-gather
/// executor walks.
struct RowwiseMask {
    int seq_len = 0;
    std::vector<std::int32_t> row_ptr;
    std::vector<std::int32_t> col_idx;
};

inline BsrMask build_bsr(const DenseMask& mask, int block_m, int block_n) {
    if (block_m < 1 || block_n < 1) throw invalid_parameter("block sizes must be >= 1");
    const int n = mask.seq_len();
    BsrMask b;
    b.seq_len = n;
    b.block_m = block_m;
    b.block_n = block_n;
    b.n_rows = (n + block_m - 1) / block_m;
    b.n_cols = (n + block_n - 1) / block_n;
    b.full_row_ptr.assign(static_cast<std::size_t>(b.n_rows) + 1, 0);
    b.part_row_ptr.assign(static_cast<std::size_t>(b.n_rows) + 1, 0);
    b.load_row_ptr.assign(static_cast<std::size_t>(b.n_rows) + 1, 0);

    // Canonical row-major bit serialization of a tile is the dedup key.
    std::unordered_map<std::string, std::int32_t> pool_index;
    std::vector<std::uint8_t> tile(static_cast<std::size_t>(block_m) * block_n);

    for (int br = 0; br < b.n_rows; ++br) {
        for (int bc = 0; bc < b.n_cols; ++bc) {
            bool any_true = false;
            bool any_false = false;
            for (int di = 0; di < block_m; ++di) {
                const int i = br * block_m + di;
                for (int dj = 0; dj < block_n; ++dj) {
                    const int j = bc * block_n + dj;
                    const bool v = (i < n && j < n) ? mask.get(i, j) : false;
                    tile[static_cast<std::size_t>(di) * block_n + dj] = v ? 1 : 0;
                    (v ? any_true : any_false) = true;
                }
            }
            if (!any_true) continue;
            if (!any_false) {
                b.full_col_idx.push_back(bc);
                ++b.full_row_ptr[static_cast<std::size_t>(br) + 1];
            } else {
                auto packed = pack_bits(tile);
                std::string key(packed.begin(), packed.end());
                auto [it, inserted] =
                    pool_index.try_emplace(key, static_cast<std::int32_t>(b.part_mask_pool.size()));
                if (inserted) b.part_mask_pool.push_back(tile);
                b.part_col_idx.push_back(bc);
                b.part_tile_ids.push_back(it->second);
                ++b.part_row_ptr[static_cast<std::size_t>(br) + 1];
            }
            b.load_col_idx.push_back(bc);
            ++b.load_row_ptr[static_cast<std::size_t>(br) + 1];
        }
    }
    for (int r = 0; r < b.n_rows; ++r) {
        b.full_row_ptr[static_cast<std::size_t>(r) + 1] += b.full_row_ptr[r];
        b.part_row_ptr[static_cast<std::size_t>(r) + 1] += b.part_row_ptr[r];
        b.load_row_ptr[static_cast<std::size_t>(r) + 1] += b.load_row_ptr[r];
    }
    return b;
}

/// Structural invariant check; throws internal_inconsistency on violation.
inline void validate_bsr(const BsrMask& b) {
    auto check_csr = [&](const std::vector<std::int32_t>& ptr, const std::vector<std::int32_t>& col,
                         const char* what) {
        if (ptr.size() != static_cast<std::size_t>(b.n_rows) + 1 || ptr.front() != 0)
            throw internal_inconsistency(std::string(what) + ": bad row_ptr shape");
        for (std::size_t r = 0; r + 1 < ptr.size(); ++r) {
            if (ptr[r] > ptr[r + 1]) throw internal_inconsistency(std::string(what) + ": decreasing row_ptr");
            for (std::int32_t k = ptr[r]; k < ptr[r + 1]; ++k) {
                if (col[static_cast<std::size_t>(k)] < 0 || col[static_cast<std::size_t>(k)] >= b.n_cols)
                    throw internal_inconsistency(std::string(what) + ": col out of range");
                if (k > ptr[r] && col[static_cast<std::size_t>(k)] <= col[static_cast<std::size_t>(k) - 1])
                    throw internal_inconsistency(std::string(what) + ": cols not strictly increasing");
            }
        }
        if (col.size() != static_cast<std::size_t>(ptr.back()))
            throw internal_inconsistency(std::string(what) + ": col length mismatch");
    };
    check_csr(b.full_row_ptr, b.full_col_idx, "full");
    check_csr(b.part_row_ptr, b.part_col_idx, "part");
    check_csr(b.load_row_ptr, b.load_col_idx, "load");
    if (b.part_tile_ids.size() != b.part_col_idx.size())
        throw internal_inconsistency("part_tile_ids not parallel to part_col_idx");
    for (auto id : b.part_tile_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= b.part_mask_pool.size())
            throw internal_inconsistency("part tile id out of pool range");
    }
    for (const auto& tile : b.part_mask_pool) {
        if (tile.size() != static_cast<std::size_t>(b.block_m) * b.block_n)
            throw internal_inconsistency("pool tile has wrong size");
        const bool any_true = std::any_of(tile.begin(), tile.end(), [](auto v) { return v != 0; });
        const bool any_false = std::any_of(tile.begin(), tile.end(), [](auto v) { return v == 0; });
        if (!any_true || !any_false) throw internal_inconsistency("pool tile is not mixed");
    }
    for (int r = 0; r < b.n_rows; ++r) {
        if (b.load_row_ptr[static_cast<std::size_t>(r) + 1] !=
            b.full_row_ptr[static_cast<std::size_t>(r) + 1] + b.part_row_ptr[static_cast<std::size_t>(r) + 1])
            throw internal_inconsistency("load_row_ptr is not the sum of full and part");
        // Per-row disjointness and union.
        std::vector<std::int32_t> merged;
        merged.insert(merged.end(), b.full_col_idx.begin() + b.full_row_ptr[r],
                      b.full_col_idx.begin() + b.full_row_ptr[static_cast<std::size_t>(r) + 1]);
        merged.insert(merged.end(), b.part_col_idx.begin() + b.part_row_ptr[r],
                      b.part_col_idx.begin() + b.part_row_ptr[static_cast<std::size_t>(r) + 1]);
        std::sort(merged.begin(), merged.end());
        if (std::adjacent_find(merged.begin(), merged.end()) != merged.end())
            throw internal_inconsistency("full and part columns overlap");
        if (!std::equal(merged.begin(), merged.end(), b.load_col_idx.begin() + b.load_row_ptr[r]))
            throw internal_inconsistency("load columns are not the union of full and part");
    }
}

/// Exact inverse of build_bsr: edge padding is discarded.
inline DenseMask to_dense(const BsrMask& b) {
    validate_bsr(b);
    DenseMask m(b.seq_len);
    const int n = b.seq_len;
    for (int br = 0; br < b.n_rows; ++br) {
        for (std::int32_t k = b.full_row_ptr[br]; k < b.full_row_ptr[static_cast<std::size_t>(br) + 1]; ++k) {
            const int bc = b.full_col_idx[static_cast<std::size_t>(k)];
            for (int di = 0; di < b.block_m && br * b.block_m + di < n; ++di)
                for (int dj = 0; dj < b.block_n && bc * b.block_n + dj < n; ++dj)
                    m.set(br * b.block_m + di, bc * b.block_n + dj, true);
        }
        for (std::int32_t k = b.part_row_ptr[br]; k < b.part_row_ptr[static_cast<std::size_t>(br) + 1]; ++k) {
            const int bc = b.part_col_idx[static_cast<std::size_t>(k)];
            const auto& tile = b.part_mask_pool[static_cast<std::size_t>(b.part_tile_ids[static_cast<std::size_t>(k)])];
            for (int di = 0; di < b.block_m && br * b.block_m + di < n; ++di)
                for (int dj = 0; dj < b.block_n && bc * b.block_n + dj < n; ++dj)
                    if (tile[static_cast<std::size_t>(di) * b.block_n + dj])
                        m.set(br * b.block_m + di, bc * b.block_n + dj, true);
        }
    }
    return m;
}

struct BlockStats {
    std::int64_t full_count = 0;
    std::int64_t part_count = 0;
    std::int64_t empty_count = 0;
    double valid_block_ratio = 0.0;
};

inline BlockStats block_stats(const BsrMask& b) {
    BlockStats s;
    s.full_count = b.full_row_ptr.back();
    s.part_count = b.part_row_ptr.back();
    const std::int64_t total = static_cast<std::int64_t>(b.n_rows) * b.n_cols;
    s.empty_count = total - s.full_count - s.part_count;
    s.valid_block_ratio = total > 0 ? static_cast<double>(s.full_count + s.part_count) /
                                          static_cast<double>(total)
                                    : 0.0;
    return s;
}

inline RowwiseMask build_rowwise(const DenseMask& mask) {
    RowwiseMask r;
    r.seq_len = mask.seq_len();
    r.row_ptr.assign(static_cast<std::size_t>(r.seq_len) + 1, 0);
    for (int i = 0; i < r.seq_len; ++i) {
        for (int j = 0; j < r.seq_len; ++j) {
            if (mask.get(i, j)) r.col_idx.push_back(j);
        }
        r.row_ptr[static_cast<std::size_t>(i) + 1] = static_cast<std::int32_t>(r.col_idx.size());
    }
    return r;
}

}  // namespace sparsefuse
