// SPDX-License-Identifier: Apache-2.0
// Independent brute-force oracles used by the test and acceptance suites.
// Everything here is written directly from first principles and must stay
// decoupled from the library's implementation paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sparsefuse/backend.hpp"
#include "sparsefuse/bsr.hpp"
#include "sparsefuse/fusion.hpp"
#include "sparsefuse/mask.hpp"
#include "sparsefuse/params.hpp"

namespace oracles {

using namespace sparsefuse;

// Build a mask straight from a cell predicate.
inline DenseMask mask_from_predicate(int n, const std::function<bool(int, int)>& pred) {
    DenseMask m(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (pred(i, j)) m.set(i, j, true);
    return m;
}

// Tile classification straight from the dense mask, padding with false.
struct TileCounts {
    std::int64_t full = 0;
    std::int64_t part = 0;
    std::int64_t empty = 0;
};

inline TileCounts classify_tiles(const DenseMask& m, int bm, int bn) {
    const int n = m.seq_len();
    const int rows = (n + bm - 1) / bm;
    const int cols = (n + bn - 1) / bn;
    TileCounts c;
    for (int br = 0; br < rows; ++br) {
        for (int bc = 0; bc < cols; ++bc) {
            int trues = 0;
            for (int i = 0; i < bm; ++i)
                for (int j = 0; j < bn; ++j) {
                    const int gi = br * bm + i, gj = bc * bn + j;
                    if (gi < n && gj < n && m.get(gi, gj)) ++trues;
                }
            if (trues == 0)
                ++c.empty;
            else if (trues == bm * bn)
                ++c.full;
            else
                ++c.part;
        }
    }
    return c;
}

// Distinct mixed-tile contents, for the dedup-minimality check.
inline std::int64_t distinct_mixed_tiles(const DenseMask& m, int bm, int bn) {
    const int n = m.seq_len();
    const int rows = (n + bm - 1) / bm;
    const int cols = (n + bn - 1) / bn;
    std::set<std::string> contents;
    for (int br = 0; br < rows; ++br) {
        for (int bc = 0; bc < cols; ++bc) {
            std::string key;
            int trues = 0;
            for (int i = 0; i < bm; ++i)
                for (int j = 0; j < bn; ++j) {
                    const int gi = br * bm + i, gj = bc * bn + j;
                    const bool v = gi < n && gj < n && m.get(gi, gj);
                    key.push_back(v ? '1' : '0');
                    trues += v;
                }
            if (trues > 0 && trues < bm * bn) contents.insert(key);
        }
    }
    return static_cast<std::int64_t>(contents.size());
}

// A random mask built cell-wise from a seeded generator.
inline DenseMask random_mask(int n, double density, std::mt19937_64& rng) {
    DenseMask m(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (unit_real(rng) < density) m.set(i, j, true);
    return m;
}

// Small chain with uniform square shapes, for codec and search tests.
inline OpGraph make_chain(std::vector<OpKind> kinds, std::int64_t rows = 8, std::int64_t dim = 8) {
    OpGraph g;
    g.name = "chain";
    g.hyper = GraphHyper{1, rows, dim, 1, static_cast<int>(dim), dim};
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        g.nodes.push_back({static_cast<int>(i), kinds[i], rows, dim,
                           kinds[i] == OpKind::Gemm ? dim : 0});
    }
    return g;
}

// --------------------------------------------------------------------------
// Naive single-op references for the fused executors. Plain loops, applied
// strictly in chain order.

inline Matrix naive_apply_op(const OpNode& node, const GraphData& gd, const Matrix& in) {
    const auto& p = gd.params[static_cast<std::size_t>(node.id)];
    switch (node.kind) {
        case OpKind::Gemm: {
            Matrix out(in.rows, p.weight.cols);
            for (std::int64_t i = 0; i < in.rows; ++i)
                for (std::int64_t j = 0; j < p.weight.cols; ++j) {
                    float acc = 0.0f;
                    for (std::int64_t k = 0; k < in.cols; ++k)
                        acc += in.at(i, k) * p.weight.at(k, j);
                    out.at(i, j) = acc;
                }
            return out;
        }
        case OpKind::Bias: {
            Matrix out = in;
            for (std::int64_t i = 0; i < in.rows; ++i)
                for (std::int64_t j = 0; j < in.cols; ++j)
                    out.at(i, j) += p.bias[static_cast<std::size_t>(j)];
            return out;
        }
        case OpKind::Add: {
            Matrix out = in;
            for (std::int64_t i = 0; i < in.rows; ++i)
                for (std::int64_t j = 0; j < in.cols; ++j) out.at(i, j) += p.aux.at(i, j);
            return out;
        }
        case OpKind::Gelu: {
            Matrix out = in;
            for (auto& x : out.a) x = 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f));
            return out;
        }
        case OpKind::Relu: {
            Matrix out = in;
            for (auto& x : out.a) x = std::max(0.0f, x);
            return out;
        }
        case OpKind::LayerNorm: {
            Matrix out = in;
            for (std::int64_t i = 0; i < in.rows; ++i) {
                float mean = 0.0f;
                for (std::int64_t j = 0; j < in.cols; ++j) mean += in.at(i, j);
                mean /= static_cast<float>(in.cols);
                float var = 0.0f;
                for (std::int64_t j = 0; j < in.cols; ++j) {
                    const float d = in.at(i, j) - mean;
                    var += d * d;
                }
                var /= static_cast<float>(in.cols);
                const float inv = 1.0f / std::sqrt(var + 1e-5f);
                for (std::int64_t j = 0; j < in.cols; ++j)
                    out.at(i, j) = (in.at(i, j) - mean) * inv * p.gamma[static_cast<std::size_t>(j)] +
                                   p.beta[static_cast<std::size_t>(j)];
            }
            return out;
        }
        case OpKind::Softmax: {
            Matrix out = in;
            for (std::int64_t i = 0; i < in.rows; ++i) {
                float m = in.at(i, 0);
                for (std::int64_t j = 1; j < in.cols; ++j) m = std::max(m, in.at(i, j));
                float denom = 0.0f;
                for (std::int64_t j = 0; j < in.cols; ++j) {
                    out.at(i, j) = std::exp(in.at(i, j) - m);
                    denom += out.at(i, j);
                }
                for (std::int64_t j = 0; j < in.cols; ++j) out.at(i, j) /= denom;
            }
            return out;
        }
        default:
            throw std::logic_error("naive reference does not cover this op");
    }
}

inline Matrix naive_apply_chain(const OpGraph& g, const GraphData& gd, int begin, int end,
                                const Matrix& in) {
    Matrix x = in;
    for (int i = begin; i < end; ++i) x = naive_apply_op(g.nodes[static_cast<std::size_t>(i)], gd, x);
    return x;
}

inline float max_abs_diff(const Matrix& a, const Matrix& b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::fabs(a.a[i] - b.a[i]));
    return m;
}

// --------------------------------------------------------------------------
// Exhaustive enumeration of legal fusion schemes for small chains.

inline bool legal_partition(const std::vector<Segment>& segs, const OpGraph& g) {
    for (const auto& s : segs) {
        if (g.ci_count(s.begin, s.end) > 2) return false;
        if (g.contains_mha(s.begin, s.end) && s.length() != 1) return false;
    }
    return true;
}

inline std::vector<std::vector<Segment>> enumerate_legal_partitions(const OpGraph& g) {
    const int n = g.size();
    std::vector<std::vector<Segment>> out;
    // Each of the 2^(n-1) compositions is a choice of boundaries.
    for (std::uint32_t bits = 0; bits < (1u << (n - 1)); ++bits) {
        std::vector<Segment> segs;
        int begin = 0;
        for (int i = 0; i < n - 1; ++i) {
            if (bits & (1u << i)) {
                segs.push_back({begin, i + 1});
                begin = i + 1;
            }
        }
        segs.push_back({begin, n});
        if (legal_partition(segs, g)) out.push_back(std::move(segs));
    }
    return out;
}

// Exhaustive optimum over (scheme, per-segment grid argmin) under a
// synthetic backend.
inline double exhaustive_optimum(const OpGraph& g, SyntheticBackend& backend,
                                 const ParamSpace& space,
                                 std::vector<Segment>* best_segs = nullptr) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& segs : enumerate_legal_partitions(g)) {
        double total = 0.0;
        for (const auto& seg : segs) {
            auto pool = space.grid(classify_segment(seg, g));
            if (g.contains_mha(seg.begin, seg.end) || pool.empty())
                pool = {default_setting(classify_segment(seg, g))};
            double seg_best = std::numeric_limits<double>::infinity();
            for (const auto& s : pool)
                seg_best = std::min(seg_best, backend.segment_cost(g, seg, s));
            total += seg_best;
        }
        if (total < best) {
            best = total;
            if (best_segs) *best_segs = segs;
        }
    }
    return best;
}

}  // namespace oracles
