// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sparsefuse/attention.hpp"
#include "sparsefuse/common.hpp"
#include "sparsefuse/fusion.hpp"
#include "sparsefuse/params.hpp"
#include "sparsefuse/planner.hpp"

namespace sparsefuse {

/// Row-major activation matrix, single precision.
struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<float> a;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c)
        : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0f) {}

    float& at(std::int64_t i, std::int64_t j) {
        return a[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) +
                 static_cast<std::size_t>(j)];
    }
    float at(std::int64_t i, std::int64_t j) const {
        return a[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) +
                 static_cast<std::size_t>(j)];
    }
};

inline Matrix random_matrix(std::int64_t rows, std::int64_t cols, std::uint64_t seed,
                            float lo = -1.0f, float hi = 1.0f) {
    Matrix m(rows, cols);
    std::mt19937_64 rng(seed);
    for (auto& x : m.a) x = lo + static_cast<float>(unit_real(rng)) * (hi - lo);
    return m;
}

/// Per-node learned parameters and side inputs, materialized once per
/// (graph, seed) so every measurement in a session sees the same data.
struct NodeParams {
    Matrix weight;              // Gemm: (inner x cols)
    std::vector<float> bias;    // Bias
    std::vector<float> gamma;   // LayerNorm scale
    std::vector<float> beta;    // LayerNorm shift
    Matrix aux;                 // Add: recorded skip input
};

struct GraphData {
    Matrix input;
    std::vector<NodeParams> params;

    static GraphData make(const OpGraph& g, std::uint64_t seed) {
        GraphData gd;
        const std::int64_t rows = g.nodes.empty() ? 0 : g.nodes.front().rows;
        const std::int64_t in_cols = g.nodes.empty()
                                         ? 0
                                         : (g.nodes.front().kind == OpKind::Gemm
                                                ? g.nodes.front().inner
                                                : g.nodes.front().cols);
        gd.input = random_matrix(rows, in_cols, mix_seed(seed, 0xa11));
        gd.params.resize(g.nodes.size());
        for (const auto& node : g.nodes) {
            auto& p = gd.params[static_cast<std::size_t>(node.id)];
            const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(node.id));
            switch (node.kind) {
                case OpKind::Gemm: {
                    const float a = 1.0f / std::sqrt(static_cast<float>(node.inner));
                    p.weight = random_matrix(node.inner, node.cols, s, -a, a);
                    break;
                }
                case OpKind::Bias: {
                    std::mt19937_64 rng(s);
                    p.bias.resize(static_cast<std::size_t>(node.cols));
                    for (auto& x : p.bias) x = static_cast<float>(unit_real(rng)) - 0.5f;
                    break;
                }
                case OpKind::LayerNorm: {
                    std::mt19937_64 rng(s);
                    p.gamma.resize(static_cast<std::size_t>(node.cols));
                    p.beta.resize(static_cast<std::size_t>(node.cols));
                    for (auto& x : p.gamma) x = 0.5f + static_cast<float>(unit_real(rng));
                    for (auto& x : p.beta) x = static_cast<float>(unit_real(rng)) - 0.5f;
                    break;
                }
                case OpKind::Add:
                    p.aux = random_matrix(node.rows, node.cols, s);
                    break;
                default:
                    break;
            }
        }
        return gd;
    }
};

namespace detail {

constexpr float kLayerNormEps = 1e-5f;

inline bool is_row_op(OpKind k) { return k == OpKind::LayerNorm || k == OpKind::Softmax; }

// Elementwise ops on one contiguous span of a row.
inline void apply_elementwise(const OpNode& node, const NodeParams& p, float* x,
                              std::int64_t row, std::int64_t col0, std::int64_t len) {
    switch (node.kind) {
        case OpKind::Bias:
            for (std::int64_t j = 0; j < len; ++j) x[j] += p.bias[static_cast<std::size_t>(col0 + j)];
            break;
        case OpKind::Add: {
            const float* aux = &p.aux.a[static_cast<std::size_t>(row) * p.aux.cols +
                                        static_cast<std::size_t>(col0)];
            for (std::int64_t j = 0; j < len; ++j) x[j] += aux[j];
            break;
        }
        case OpKind::Gelu:
            for (std::int64_t j = 0; j < len; ++j)
                x[j] = 0.5f * x[j] * (1.0f + std::erf(x[j] * 0.7071067811865475f));
            break;
        case OpKind::Relu:
            for (std::int64_t j = 0; j < len; ++j) x[j] = x[j] > 0.0f ? x[j] : 0.0f;
            break;
        default:
            throw backend_error("op is not elementwise");
    }
}

inline void apply_row_op(const OpNode& node, const NodeParams& p, float* row, std::int64_t cols) {
    if (node.kind == OpKind::LayerNorm) {
        float mean = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) mean += row[j];
        mean /= static_cast<float>(cols);
        float var = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) {
            const float d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<float>(cols);
        const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
        for (std::int64_t j = 0; j < cols; ++j)
            row[j] = (row[j] - mean) * inv * p.gamma[static_cast<std::size_t>(j)] +
                     p.beta[static_cast<std::size_t>(j)];
    } else if (node.kind == OpKind::Softmax) {
        float m = row[0];
        for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        float denom = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - m);
            denom += row[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) row[j] /= denom;
    } else {
        throw backend_error("op is not a row op");
    }
}

// Apply a run of MI ops to rows [r0, r1) of m, walking each row in chunks.
// Row ops act as phase boundaries: every op before them must have finished
// the row, which the per-row traversal guarantees.
inline void apply_mi_ops(std::span<const OpNode> ops, const GraphData& gd, Matrix& m,
                         std::int64_t r0, std::int64_t r1, std::int64_t row_base,
                         int chunk_size) {
    const std::int64_t chunk = chunk_size > 0 ? chunk_size : m.cols;
    for (std::int64_t i = r0; i < r1; ++i) {
        float* row = &m.a[static_cast<std::size_t>(i) * m.cols];
        std::size_t op0 = 0;
        while (op0 < ops.size()) {
            if (is_row_op(ops[op0].kind)) {
                apply_row_op(ops[op0], gd.params[static_cast<std::size_t>(ops[op0].id)], row, m.cols);
                ++op0;
                continue;
            }
            std::size_t op1 = op0;
            while (op1 < ops.size() && !is_row_op(ops[op1].kind)) ++op1;
            for (std::int64_t c0 = 0; c0 < m.cols; c0 += chunk) {
                const std::int64_t len = std::min(chunk, m.cols - c0);
                for (std::size_t o = op0; o < op1; ++o)
                    apply_elementwise(ops[o], gd.params[static_cast<std::size_t>(ops[o].id)],
                                      row + c0, row_base + i, c0, len);
            }
            op0 = op1;
        }
    }
}

// Blocked GEMM panel: out[r0:r1, :] = in[r0:r1, :] * w, accumulating into a
// zeroed panel buffer with (tile_n, tile_k) blocking.
inline void gemm_panel(const Matrix& in, const Matrix& w, std::int64_t r0, std::int64_t r1,
                       int tile_n, int tile_k, Matrix& panel) {
    const std::int64_t n = w.cols, kk = w.rows;
    std::fill(panel.a.begin(), panel.a.end(), 0.0f);
    const std::int64_t tn = tile_n > 0 ? tile_n : n;
    const std::int64_t tk = tile_k > 0 ? tile_k : kk;
    for (std::int64_t j0 = 0; j0 < n; j0 += tn) {
        const std::int64_t j1 = std::min(n, j0 + tn);
        for (std::int64_t k0 = 0; k0 < kk; k0 += tk) {
            const std::int64_t k1 = std::min(kk, k0 + tk);
            for (std::int64_t i = r0; i < r1; ++i) {
                float* prow = &panel.a[static_cast<std::size_t>(i - r0) * n];
                const float* irow = &in.a[static_cast<std::size_t>(i) * kk];
                for (std::int64_t k = k0; k < k1; ++k) {
                    const float x = irow[k];
                    const float* wrow = &w.a[static_cast<std::size_t>(k) * n];
                    for (std::int64_t j = j0; j < j1; ++j) prow[j] += x * wrow[j];
                }
            }
        }
    }
}

}  // namespace detail

/// Fused chain of memory-intensive ops: a single pass over each row in
/// chunks of chunk_size elements, with LayerNorm/Softmax as two-phase
/// per-row passes. Values equal sequential unfused application.
inline Matrix exec_mi_chain(std::span<const OpNode> ops, const GraphData& gd,
                            const Setting& setting, const Matrix& in) {
    for (const auto& op : ops)
        if (op.category() != OpCategory::MI) throw backend_error("mi_chain got a CI op");
    Matrix out = in;
    detail::apply_mi_ops(ops, gd, out, 0, out.rows, 0, setting.chunk_size);
    return out;
}

/// One GEMM with fused MI prologue/epilogue. The multiply is blocked with
/// (tile_m, tile_n, tile_k); the epilogue runs on each finished row panel
/// before write-back, so row-wise ops like LayerNorm see complete rows.
inline Matrix exec_ci_mi(std::span<const OpNode> pre, const OpNode& gemm,
                         std::span<const OpNode> post, const GraphData& gd,
                         const Setting& setting, const Matrix& in) {
    if (gemm.kind != OpKind::Gemm) throw backend_error("ci_mi needs a gemm");
    const Matrix& w = gd.params[static_cast<std::size_t>(gemm.id)].weight;
    if (in.cols != w.rows) throw shape_error("gemm input width mismatch");
    const std::int64_t tm = setting.tile_m > 0 ? setting.tile_m : 32;
    Matrix out(in.rows, w.cols);
    Matrix staged;
    const Matrix* src = &in;
    if (!pre.empty()) {
        staged = in;
        detail::apply_mi_ops(pre, gd, staged, 0, staged.rows, 0, 0);
        src = &staged;
    }
    Matrix panel(tm, w.cols);
    for (std::int64_t r0 = 0; r0 < in.rows; r0 += tm) {
        const std::int64_t r1 = std::min(in.rows, r0 + tm);
        detail::gemm_panel(*src, w, r0, r1, setting.tile_n, setting.tile_k, panel);
        detail::apply_mi_ops(post, gd, panel, 0, r1 - r0, r0, 0);
        std::copy(panel.a.begin(), panel.a.begin() + (r1 - r0) * w.cols,
                  out.a.begin() + static_cast<std::size_t>(r0) * w.cols);
    }
    return out;
}

/// Blocked GEMM chain: a tile_m-row strip of the first product is computed
/// (with the mid MI ops applied in place), then immediately consumed by the
/// second GEMM; the full intermediate is never materialized. stage_depth
/// rotates between that many strip buffers and never changes values.
inline Matrix exec_ci_ci(std::span<const OpNode> pre, const OpNode& gemm1,
                         std::span<const OpNode> mid, const OpNode& gemm2,
                         std::span<const OpNode> post, const GraphData& gd,
                         const Setting& setting, const Matrix& in) {
    if (gemm1.kind != OpKind::Gemm || gemm2.kind != OpKind::Gemm)
        throw backend_error("ci_ci needs two gemms");
    const Matrix& w1 = gd.params[static_cast<std::size_t>(gemm1.id)].weight;
    const Matrix& w2 = gd.params[static_cast<std::size_t>(gemm2.id)].weight;
    if (in.cols != w1.rows || w1.cols != w2.rows) throw shape_error("gemm chain width mismatch");
    const std::int64_t tm = setting.tile_m > 0 ? setting.tile_m : 32;
    const int depth = setting.stage_depth > 0 ? setting.stage_depth : 1;

    Matrix staged;
    const Matrix* src = &in;
    if (!pre.empty()) {
        staged = in;
        detail::apply_mi_ops(pre, gd, staged, 0, staged.rows, 0, 0);
        src = &staged;
    }
    Matrix out(in.rows, w2.cols);
    std::vector<Matrix> strips;
    for (int s = 0; s < depth; ++s) strips.emplace_back(tm, w1.cols);
    Matrix out_panel(tm, w2.cols);
    int rotor = 0;
    for (std::int64_t r0 = 0; r0 < in.rows; r0 += tm) {
        const std::int64_t r1 = std::min(in.rows, r0 + tm);
        Matrix& strip = strips[static_cast<std::size_t>(rotor)];
        rotor = (rotor + 1) % depth;
        detail::gemm_panel(*src, w1, r0, r1, setting.tile_n, setting.tile_k, strip);
        detail::apply_mi_ops(mid, gd, strip, 0, r1 - r0, r0, 0);
        detail::gemm_panel(strip, w2, 0, r1 - r0, setting.tile_n, setting.tile_k, out_panel);
        detail::apply_mi_ops(post, gd, out_panel, 0, r1 - r0, r0, 0);
        std::copy(out_panel.a.begin(), out_panel.a.begin() + (r1 - r0) * w2.cols,
                  out.a.begin() + static_cast<std::size_t>(r0) * w2.cols);
    }
    return out;
}

/// Attention context used when a chain contains the MhaFused unit.
struct MhaContext {
    DenseMask mask;
    KernelPlan plan;
    BsrMask bsr;  // built at the plan's block sizes (16x16 for row-wise plans)

    static MhaContext make(const DenseMask& mask, const KernelPlan& plan) {
        MhaContext ctx{mask, plan, {}};
        const int bm = plan.kind == KernelKind::BlockWise ? plan.block_m : 16;
        const int bn = plan.kind == KernelKind::BlockWise ? plan.block_n : 16;
        ctx.bsr = build_bsr(mask, bm, bn);
        return ctx;
    }
};

/// The fused MHA unit inside a chain: the activation is reshaped to
/// (bs, heads, seq_len, head_size), self-attention with the session mask
/// runs through the block-skipping executor, and the result is flattened
/// back. Q = K = V = activation; the unit abstracts the projections away.
inline Matrix exec_mha(const OpNode& node, const GraphHyper& hyper, const MhaContext& ctx,
                       const Matrix& in) {
    const int heads = hyper.heads, hs = hyper.head_size;
    const std::int64_t seq = hyper.seq_len, bs = hyper.bs;
    if (in.cols != static_cast<std::int64_t>(heads) * hs || in.rows != bs * seq)
        throw shape_error("activation shape incompatible with MHA reshape");
    if (ctx.mask.seq_len() != seq) throw shape_error("MHA mask seq_len mismatch");
    (void)node;
    AttentionInput<float> ai{Tensor4<float>(static_cast<int>(bs), heads, static_cast<int>(seq), hs),
                             Tensor4<float>(static_cast<int>(bs), heads, static_cast<int>(seq), hs),
                             Tensor4<float>(static_cast<int>(bs), heads, static_cast<int>(seq), hs)};
    for (std::int64_t b = 0; b < bs; ++b)
        for (int h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < seq; ++i)
                for (int k = 0; k < hs; ++k) {
                    const float v = in.at(b * seq + i, static_cast<std::int64_t>(h) * hs + k);
                    ai.q.at(static_cast<int>(b), h, static_cast<int>(i), k) = v;
                }
    ai.k = ai.q;
    ai.v = ai.q;
    Tensor4<float> o = block_sparse_sdpa(ai, ctx.bsr);
    Matrix out(in.rows, in.cols);
    for (std::int64_t b = 0; b < bs; ++b)
        for (int h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < seq; ++i)
                for (int k = 0; k < hs; ++k)
                    out.at(b * seq + i, static_cast<std::int64_t>(h) * hs + k) =
                        o.at(static_cast<int>(b), h, static_cast<int>(i), k);
    return out;
}

/// Execute one segment of the chain with the given setting, dispatching on
/// the segment's template kind.
inline Matrix exec_segment(const OpGraph& g, const GraphData& gd, const MhaContext* mha,
                           const Segment& seg, const Setting& setting, const Matrix& in) {
    const auto* nodes = g.nodes.data();
    if (g.contains_mha(seg.begin, seg.end)) {
        if (seg.length() != 1) throw backend_error("MhaFused segment must be a singleton");
        if (!mha) throw backend_error("MhaFused segment needs an attention context");
        return exec_mha(nodes[seg.begin], g.hyper, *mha, in);
    }
    std::vector<int> gemms;
    for (int i = seg.begin; i < seg.end; ++i)
        if (nodes[i].kind == OpKind::Gemm) gemms.push_back(i);
    auto span_of = [&](int b, int e) { return std::span<const OpNode>(nodes + b, nodes + e); };
    switch (gemms.size()) {
        case 0:
            return exec_mi_chain(span_of(seg.begin, seg.end), gd, setting, in);
        case 1:
            return exec_ci_mi(span_of(seg.begin, gemms[0]), nodes[gemms[0]],
                              span_of(gemms[0] + 1, seg.end), gd, setting, in);
        case 2:
            return exec_ci_ci(span_of(seg.begin, gemms[0]), nodes[gemms[0]],
                              span_of(gemms[0] + 1, gemms[1]), nodes[gemms[1]],
                              span_of(gemms[1] + 1, seg.end), gd, setting, in);
        default:
            throw illegal_segment("segment holds more than two CI operators");
    }
}

/// Contract every backend implements. measure() times one segment under
/// one setting; end_to_end() times the whole chain under an assignment.
/// Deterministic backends return identical durations for identical keys;
/// timing backends report the best of a fixed warmup+repeat protocol.
class MeasurementBackend {
public:
    virtual ~MeasurementBackend() = default;
    virtual double measure(const OpGraph& g, const FusionScheme& scheme, const Segment& seg,
                           const Setting& setting) = 0;
    virtual double end_to_end(const OpGraph& g, const FusionScheme& scheme,
                              const ParamAssignment& assignment) = 0;
    virtual std::string id() const = 0;
    // Relative improvement a transition must beat to be accepted; absorbs
    // timer noise on real backends, zero where measurements are exact.
    virtual double accept_margin() const { return 0.0; }
};

/// Wall-clock backend running the fused CPU executors on fixed seeded
/// inputs: 3 warmups, best of 10 repeats, monotonic clock.
class CpuBackend : public MeasurementBackend {
public:
    CpuBackend(const OpGraph& g, std::uint64_t seed, std::optional<MhaContext> mha = {})
        : seed_(seed), mha_(std::move(mha)) {
        bind(g);
    }

    double measure(const OpGraph& g, const FusionScheme&, const Segment& seg,
                   const Setting& setting) override {
        bind(g);
        const Matrix& in = activation(g, seg.begin);
        return time_best([&] { exec_segment(g, *data_, mha_ptr(), seg, setting, in); });
    }

    double end_to_end(const OpGraph& g, const FusionScheme& scheme,
                      const ParamAssignment& assignment) override {
        bind(g);
        return time_best([&] { run_chain(g, scheme, assignment); });
    }

    std::string id() const override { return "cpu"; }
    double accept_margin() const override { return 0.01; }

    /// Full chain under a scheme/assignment; exposed for semantic tests.
    Matrix run_chain(const OpGraph& g, const FusionScheme& scheme,
                     const ParamAssignment& assignment) {
        bind(g);
        Matrix x = data_->input;
        for (const auto& seg : scheme.segments) {
            const auto it = assignment.find(seg);
            const Setting s =
                it != assignment.end() ? it->second : default_setting(classify_segment(seg, g));
            x = exec_segment(g, *data_, mha_ptr(), seg, s, x);
        }
        return x;
    }

    static constexpr int kWarmups = 3;
    static constexpr int kRepeats = 10;

private:
    const MhaContext* mha_ptr() const { return mha_ ? &*mha_ : nullptr; }

    void bind(const OpGraph& g) {
        std::string key = g.name + ":" + std::to_string(g.hyper.bs) + ":" +
                          std::to_string(g.hyper.seq_len) + ":" +
                          std::to_string(g.hyper.hidden_dim);
        for (const auto& n : g.nodes)
            key += std::string(":") + to_string(n.kind) + "/" + std::to_string(n.cols);
        if (key == graph_key_) return;
        graph_key_ = key;
        data_ = std::make_unique<GraphData>(GraphData::make(g, seed_));
        if (!mha_) {
            bool has = false;
            for (const auto& n : g.nodes) has = has || n.kind == OpKind::MhaFused;
            if (has) {
                DenseMask all(static_cast<int>(g.hyper.seq_len), true);
                auto plan = select_plan(all, hw_preset("a100"), g.hyper.seq_len, g.hyper.heads,
                                        g.hyper.bs, g.hyper.head_size);
                if (plan.kind != KernelKind::BlockWise) plan = KernelPlan{KernelKind::RowWise};
                mha_ = MhaContext::make(all, plan);
            }
        }
        acts_.clear();
    }

    // Activation feeding op `idx` along the unfused chain, memoized.
    const Matrix& activation(const OpGraph& g, int idx) {
        while (static_cast<int>(acts_.size()) <= idx) {
            const int i = static_cast<int>(acts_.size());
            if (i == 0) {
                acts_.push_back(data_->input);
                continue;
            }
            const Segment one{i - 1, i};
            acts_.push_back(exec_segment(g, *data_, mha_ptr(), one,
                                         default_setting(classify_segment(one, g)),
                                         acts_.back()));
        }
        return acts_[static_cast<std::size_t>(idx)];
    }

    template <typename F>
    static double time_best(F&& f) {
        using clock = std::chrono::steady_clock;
        for (int i = 0; i < kWarmups; ++i) f();
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < kRepeats; ++i) {
            const auto t0 = clock::now();
            f();
            const auto t1 = clock::now();
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        return best;
    }

    std::uint64_t seed_;
    std::optional<MhaContext> mha_;
    std::string graph_key_;
    std::unique_ptr<GraphData> data_;
    std::vector<Matrix> acts_;
};

/// Deterministic cost model for search tests. Segment cost is
///   sum(op base costs) * fusion factor * parameter factor
/// where the base is flops/bytes derived, the fusion factor either follows
/// per-template discounts or a planted target partition (segments inside a
/// target segment get cheaper as they grow, segments crossing a target
/// boundary pay a flat penalty), and the parameter factor is unimodal over
/// the grid with a seed-derived argmin per segment. Zero noise.
struct SyntheticCostModel {
    double c_flop = 1e-12;
    double c_byte = 5e-12;
    double disc_mi_chain = 0.92;
    double disc_ci_mi = 0.88;
    double disc_ci_ci = 0.85;
    double param_amp = 0.05;
    std::uint64_t seed = 0;

    struct Planted {
        std::vector<Segment> target;
        double inside = 0.9;
        double penalty = 1.25;
    };
    std::optional<Planted> planted;

    static SyntheticCostModel random_model(std::uint64_t seed) {
        SyntheticCostModel m;
        std::mt19937_64 rng(seed);
        m.seed = seed;
        m.c_flop = 1e-12 * (0.5 + unit_real(rng));
        m.c_byte = 5e-12 * (0.5 + unit_real(rng));
        m.disc_mi_chain = 0.85 + 0.25 * unit_real(rng);
        m.disc_ci_mi = 0.85 + 0.25 * unit_real(rng);
        m.disc_ci_ci = 0.85 + 0.25 * unit_real(rng);
        m.param_amp = 0.02 + 0.06 * unit_real(rng);
        return m;
    }

    double op_base(const OpNode& n, const GraphHyper& hyper) const {
        double flops = 0.0, bytes = 0.0;
        const double r = static_cast<double>(n.rows), c = static_cast<double>(n.cols);
        switch (n.kind) {
            case OpKind::Gemm: {
                const double k = static_cast<double>(n.inner);
                flops = 2.0 * r * c * k;
                bytes = 4.0 * (r * k + k * c + r * c);
                break;
            }
            case OpKind::MhaFused: {
                const double seq = static_cast<double>(hyper.seq_len);
                const double heads = static_cast<double>(hyper.heads);
                const double b = static_cast<double>(hyper.bs);
                flops = 4.0 * b * heads * seq * seq * hyper.head_size;
                bytes = 4.0 * 4.0 * r * c;
                break;
            }
            case OpKind::LayerNorm:
                flops = 5.0 * r * c;
                bytes = 4.0 * 2.0 * r * c;
                break;
            case OpKind::Add:
                flops = r * c;
                bytes = 4.0 * 3.0 * r * c;
                break;
            default:
                flops = r * c;
                bytes = 4.0 * 2.0 * r * c;
                break;
        }
        return flops * c_flop + bytes * c_byte;
    }

    double fusion_factor(const Segment& seg, TemplateKind kind) const {
        const int extra = seg.length() - 1;
        if (planted) {
            for (const auto& t : planted->target) {
                if (seg.begin >= t.begin && seg.end <= t.end)
                    return std::pow(planted->inside, extra);
            }
            return planted->penalty;
        }
        const double d = kind == TemplateKind::MiChain ? disc_mi_chain
                         : kind == TemplateKind::CiMi  ? disc_ci_mi
                                                       : disc_ci_ci;
        return std::pow(d, extra);
    }

    double param_factor(const Segment& seg, const Setting& setting,
                        const std::vector<Setting>& grid) const {
        if (grid.empty()) return 1.0;
        const std::uint64_t h =
            mix_seed(seed, fnv1a(std::to_string(seg.begin) + "-" + std::to_string(seg.end)));
        const std::size_t best = static_cast<std::size_t>(h % grid.size());
        std::size_t idx = grid.size();  // off-grid settings pay the worst factor
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid[i] == setting) {
                idx = i;
                break;
            }
        }
        const double span = static_cast<double>(grid.size());
        const double dist = idx == grid.size()
                                ? 1.0
                                : std::abs(static_cast<double>(idx) - static_cast<double>(best)) /
                                      std::max(1.0, span - 1.0);
        return 1.0 + param_amp * dist;
    }
};

/// Closed-form measurement backend over a SyntheticCostModel. The grid used
/// for the parameter response must match the one the search samples from.
class SyntheticBackend : public MeasurementBackend {
public:
    SyntheticBackend(SyntheticCostModel model, ParamSpace space = {})
        : model_(std::move(model)), space_(std::move(space)) {}

    double segment_cost(const OpGraph& g, const Segment& seg, const Setting& setting) const {
        double base = 0.0;
        for (int i = seg.begin; i < seg.end; ++i)
            base += model_.op_base(g.nodes[static_cast<std::size_t>(i)], g.hyper);
        const TemplateKind kind = classify_segment(seg, g);
        const auto grid = g.contains_mha(seg.begin, seg.end) ? std::vector<Setting>{}
                                                             : space_.grid(kind);
        return base * model_.fusion_factor(seg, kind) * model_.param_factor(seg, setting, grid);
    }

    double measure(const OpGraph& g, const FusionScheme&, const Segment& seg,
                   const Setting& setting) override {
        return segment_cost(g, seg, setting);
    }

    double end_to_end(const OpGraph& g, const FusionScheme& scheme,
                      const ParamAssignment& assignment) override {
        double total = 0.0;
        for (const auto& seg : scheme.segments) {
            const auto it = assignment.find(seg);
            const Setting s =
                it != assignment.end() ? it->second : default_setting(classify_segment(seg, g));
            total += segment_cost(g, seg, s);
        }
        return total;
    }

    std::string id() const override {
        std::string sig = std::to_string(model_.seed) + ":" + std::to_string(model_.c_flop) + ":" +
                          std::to_string(model_.c_byte) + ":" + std::to_string(model_.param_amp) +
                          ":" + std::to_string(model_.disc_mi_chain) + ":" +
                          std::to_string(model_.disc_ci_mi) + ":" +
                          std::to_string(model_.disc_ci_ci);
        if (model_.planted) {
            sig += ":planted";
            for (const auto& s : model_.planted->target)
                sig += "," + std::to_string(s.begin) + "-" + std::to_string(s.end);
        }
        return "synthetic-" + hex64(fnv1a(sig));
    }
    double accept_margin() const override { return 0.0; }

    const SyntheticCostModel& model() const { return model_; }
    const ParamSpace& space() const { return space_; }

private:
    SyntheticCostModel model_;
    ParamSpace space_;
};

}  // namespace sparsefuse
