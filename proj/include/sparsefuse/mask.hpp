// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sparsefuse/common.hpp"

namespace sparsefuse {

/// Dense boolean validity matrix: bit (i, j) set means query i attends to key j.
/// Ground truth for every sparse representation in the library.
class DenseMask {
public:
    explicit DenseMask(int seq_len, bool value = false)
        : seq_len_(seq_len),
          bits_(static_cast<std::size_t>(seq_len) * static_cast<std::size_t>(seq_len),
                value ? 1 : 0) {
        if (seq_len <= 0) throw invalid_parameter("seq_len must be positive");
    }

    int seq_len() const { return seq_len_; }

    bool get(int i, int j) const {
        return bits_[static_cast<std::size_t>(i) * static_cast<std::size_t>(seq_len_) +
                     static_cast<std::size_t>(j)] != 0;
    }

    void set(int i, int j, bool v) {
        bits_[static_cast<std::size_t>(i) * static_cast<std::size_t>(seq_len_) +
              static_cast<std::size_t>(j)] = v ? 1 : 0;
    }

    std::int64_t true_count() const {
        std::int64_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }

    const std::vector<std::uint8_t>& raw() const { return bits_; }

    bool operator==(const DenseMask& o) const {
        return seq_len_ == o.seq_len_ && bits_ == o.bits_;
    }

private:
    int seq_len_;
    std::vector<std::uint8_t> bits_;
};

/// Fraction of disallowed positions, in [0, 1].
inline double sparsity(const DenseMask& m) {
    const double total = static_cast<double>(m.seq_len()) * static_cast<double>(m.seq_len());
    return 1.0 - static_cast<double>(m.true_count()) / total;
}

/// Parameter bundle for pattern generators, mirroring the masking parameters
/// a descriptor carries. Generators themselves take explicit arguments.
struct PatternParams {
    int band_width = 0;
    int global_width = 0;
    int dilation_rate = 0;
    double filling_rate = 0.0;
    int block = 16;
    std::uint64_t seed = 0;
};

/// Banded local attention: (i, j) valid iff |i - j| < band_width.
inline DenseMask gen_sliding_window(int seq_len, int band_width) {
    if (band_width < 1 || band_width > seq_len)
        throw invalid_parameter("band_width must be in [1, seq_len]");
    DenseMask m(seq_len);
    for (int i = 0; i < seq_len; ++i) {
        const int lo = std::max(0, i - band_width + 1);
        const int hi = std::min(seq_len - 1, i + band_width - 1);
        for (int j = lo; j <= hi; ++j) m.set(i, j, true);
    }
    return m;
}

/// Banded attention with holes: every (dilation_rate + 1)-th offset inside a
/// band widened by the same stride, so the valid count per row matches the
/// undilated window. dilation_rate 0 degenerates to gen_sliding_window.
inline DenseMask gen_dilated(int seq_len, int band_width, int dilation_rate) {
    if (band_width < 1 || band_width > seq_len)
        throw invalid_parameter("band_width must be in [1, seq_len]");
    if (dilation_rate < 0) throw invalid_parameter("dilation_rate must be >= 0");
    const int stride = dilation_rate + 1;
    const std::int64_t reach = static_cast<std::int64_t>(band_width) * stride;
    DenseMask m(seq_len);
    for (int i = 0; i < seq_len; ++i) {
        for (int j = 0; j < seq_len; ++j) {
            const int d = i - j;
            if (std::llabs(d) < reach && d % stride == 0) m.set(i, j, true);
        }
    }
    return m;
}

/// Hub attention: the first global_width tokens attend everywhere and are
/// attended to from everywhere (full rows and columns).
inline DenseMask gen_global(int seq_len, int global_width) {
    if (global_width < 0 || global_width > seq_len)
        throw invalid_parameter("global_width must be in [0, seq_len]");
    DenseMask m(seq_len);
    for (int i = 0; i < seq_len; ++i) {
        for (int j = 0; j < seq_len; ++j) {
            if (i < global_width || j < global_width) m.set(i, j, true);
        }
    }
    return m;
}

/// Random block attention: the grid of block x block tiles (edge tiles
/// clipped) is filled tile-wise; each tile is set fully valid with
/// probability filling_rate. The tile draw order is row-major over the tile
/// grid and each tile consumes exactly one mt19937_64 output, so a given
/// seed produces the same mask everywhere.
inline DenseMask gen_random_blocks(int seq_len, int block, double filling_rate,
                                   std::uint64_t seed) {
    if (block < 1) throw invalid_parameter("block must be >= 1");
    if (filling_rate < 0.0 || filling_rate > 1.0)
        throw invalid_parameter("filling_rate must be in [0, 1]");
    DenseMask m(seq_len);
    const int grid = (seq_len + block - 1) / block;
    std::mt19937_64 rng(seed);
    for (int bi = 0; bi < grid; ++bi) {
        for (int bj = 0; bj < grid; ++bj) {
            const double u = unit_real(rng);
            if (u >= filling_rate) continue;
            const int i_end = std::min(seq_len, (bi + 1) * block);
            const int j_end = std::min(seq_len, (bj + 1) * block);
            for (int i = bi * block; i < i_end; ++i)
                for (int j = bj * block; j < j_end; ++j) m.set(i, j, true);
        }
    }
    return m;
}

/// Element-wise union of masks sharing one seq_len.
inline DenseMask compose(std::span<const DenseMask> masks) {
    if (masks.empty()) throw invalid_parameter("compose needs at least one mask");
    const int n = masks.front().seq_len();
    for (const auto& m : masks) {
        if (m.seq_len() != n) throw shape_error("compose: mismatched seq_len");
    }
    DenseMask out(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            bool v = false;
            for (const auto& m : masks) v = v || m.get(i, j);
            out.set(i, j, v);
        }
    }
    return out;
}

inline DenseMask compose(std::initializer_list<DenseMask> masks) {
    std::vector<DenseMask> v(masks);
    return compose(std::span<const DenseMask>(v));
}

/// Longformer: global hubs plus a sliding window.
inline DenseMask gen_longformer(int seq_len, int global_width, int band_width) {
    return compose({gen_global(seq_len, global_width), gen_sliding_window(seq_len, band_width)});
}

/// Bigbird: global hubs, sliding window, and random block attention.
/// Random tiles default to 16 x 16, the granularity the block format keeps.
inline DenseMask gen_bigbird(int seq_len, int global_width, int band_width, double filling_rate,
                             std::uint64_t seed, int block = 16) {
    return compose({gen_global(seq_len, global_width), gen_sliding_window(seq_len, band_width),
                    gen_random_blocks(seq_len, block, filling_rate, seed)});
}

}  // namespace sparsefuse
