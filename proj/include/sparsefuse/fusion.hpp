// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsefuse/common.hpp"

namespace sparsefuse {

enum class OpKind { Gemm, Bias, Add, LayerNorm, Gelu, Relu, Softmax, MhaFused };

enum class OpCategory { CI, MI };

inline OpCategory category_of(OpKind k) {
    return (k == OpKind::Gemm || k == OpKind::MhaFused) ? OpCategory::CI : OpCategory::MI;
}

inline const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::Gemm: return "gemm";
        case OpKind::Bias: return "bias";
        case OpKind::Add: return "add";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Gelu: return "gelu";
        case OpKind::Relu: return "relu";
        case OpKind::Softmax: return "softmax";
        case OpKind::MhaFused: return "mha_fused";
    }
    return "?";
}

inline OpKind op_kind_from_string(const std::string& s) {
    for (OpKind k : {OpKind::Gemm, OpKind::Bias, OpKind::Add, OpKind::LayerNorm, OpKind::Gelu,
                     OpKind::Relu, OpKind::Softmax, OpKind::MhaFused}) {
        if (s == to_string(k)) return k;
    }
    throw invalid_parameter("unknown op kind: " + s);
}

/// One position in the linear operator chain. rows/cols describe the output
/// activation; inner is the contraction size for Gemm, 0 elsewhere.
struct OpNode {
    int id = 0;
    OpKind kind = OpKind::Bias;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::int64_t inner = 0;

    OpCategory category() const { return category_of(kind); }
};

struct GraphHyper {
    std::int64_t bs = 1;
    std::int64_t seq_len = 128;
    std::int64_t hidden_dim = 768;
    int heads = 12;
    int head_size = 64;
    std::int64_t ff_dim = 0;  // 0 means 4 * hidden_dim
};

/// Linear chain of operators in data-dependency order.
struct OpGraph {
    std::string name;
    std::vector<OpNode> nodes;
    GraphHyper hyper;

    int size() const { return static_cast<int>(nodes.size()); }

    int ci_count(int begin, int end) const {
        int c = 0;
        for (int i = begin; i < end; ++i)
            if (nodes[static_cast<std::size_t>(i)].category() == OpCategory::CI) ++c;
        return c;
    }

    bool contains_mha(int begin, int end) const {
        for (int i = begin; i < end; ++i)
            if (nodes[static_cast<std::size_t>(i)].kind == OpKind::MhaFused) return true;
        return false;
    }
};

/// Half-open id range [begin, end).
struct Segment {
    int begin = 0;
    int end = 0;

    int length() const { return end - begin; }
    auto operator<=>(const Segment&) const = default;
};

/// A partition of the chain into contiguous segments plus its binary hash
/// code: one bit per op, constant within a segment, flipping at every
/// boundary, first segment fixed to 0. The all-flipped string denotes the
/// same scheme.
struct FusionScheme {
    std::vector<Segment> segments;
    std::string code;

    bool operator==(const FusionScheme& o) const { return segments == o.segments; }
};

/// Alternating run-length encoding of a partition.
inline std::string encode(const std::vector<Segment>& segments) {
    std::string code;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        code.append(static_cast<std::size_t>(segments[k].length()), (k % 2 == 0) ? '0' : '1');
    }
    return code;
}

inline std::string encode(const FusionScheme& s) { return encode(s.segments); }

/// Maximal equal-bit runs of the code.
inline std::vector<Segment> decode(const std::string& code) {
    if (code.empty()) throw invalid_parameter("empty scheme code");
    std::vector<Segment> segs;
    int begin = 0;
    for (int i = 1; i <= static_cast<int>(code.size()); ++i) {
        if (i == static_cast<int>(code.size()) || code[static_cast<std::size_t>(i)] != code[static_cast<std::size_t>(begin)]) {
            if (code[static_cast<std::size_t>(begin)] != '0' && code[static_cast<std::size_t>(begin)] != '1')
                throw invalid_parameter("scheme code must be binary");
            segs.push_back({begin, i});
            begin = i;
        }
    }
    return segs;
}

inline FusionScheme make_scheme(std::vector<Segment> segments) {
    FusionScheme s;
    s.segments = std::move(segments);
    s.code = encode(s.segments);
    return s;
}

/// One segment per op.
inline FusionScheme unfused_scheme(int n_ops) {
    std::vector<Segment> segs;
    segs.reserve(static_cast<std::size_t>(n_ops));
    for (int i = 0; i < n_ops; ++i) segs.push_back({i, i + 1});
    return make_scheme(std::move(segs));
}

/// Compact hexadecimal rendering: the code is left-padded with zeros to a
/// nibble boundary; the original bit length is needed to invert it.
inline std::string code_to_hex(const std::string& code) {
    static const char* digits = "0123456789abcdef";
    const std::size_t pad = (4 - code.size() % 4) % 4;
    std::string padded(pad, '0');
    padded += code;
    std::string hex;
    for (std::size_t i = 0; i < padded.size(); i += 4) {
        int v = 0;
        for (std::size_t j = 0; j < 4; ++j) v = v * 2 + (padded[i + j] == '1' ? 1 : 0);
        hex.push_back(digits[v]);
    }
    return hex;
}

inline std::string hex_to_code(const std::string& hex, int bit_length) {
    std::string code;
    for (char c : hex) {
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else throw invalid_parameter("bad hex digit in scheme code");
        for (int j = 3; j >= 0; --j) code.push_back((v >> j) & 1 ? '1' : '0');
    }
    if (static_cast<int>(code.size()) < bit_length)
        throw invalid_parameter("hex code shorter than stated bit length");
    return code.substr(code.size() - static_cast<std::size_t>(bit_length));
}

/// Executor family of a segment, by compute-intensive op count.
enum class TemplateKind { MiChain, CiMi, CiCi };

inline const char* to_string(TemplateKind k) {
    switch (k) {
        case TemplateKind::MiChain: return "mi_chain";
        case TemplateKind::CiMi: return "ci_mi";
        case TemplateKind::CiCi: return "ci_ci";
    }
    return "?";
}

inline TemplateKind classify_segment(const Segment& seg, const OpGraph& graph) {
    if (seg.begin < 0 || seg.end > graph.size() || seg.begin >= seg.end)
        throw illegal_segment("segment out of graph range");
    switch (graph.ci_count(seg.begin, seg.end)) {
        case 0: return TemplateKind::MiChain;
        case 1: return TemplateKind::CiMi;
        case 2: return TemplateKind::CiCi;
        default: throw illegal_segment("segment holds more than two CI operators");
    }
}

/// Throws unless the scheme is a legal partition: contiguous and exhaustive,
/// at most two CI ops per segment, the MhaFused node alone in its segment.
inline void validate_scheme(const FusionScheme& s, const OpGraph& graph) {
    if (s.segments.empty()) throw illegal_segment("scheme has no segments");
    int expected = 0;
    for (const auto& seg : s.segments) {
        if (seg.begin != expected || seg.end <= seg.begin)
            throw illegal_segment("segments do not partition the chain in order");
        expected = seg.end;
        classify_segment(seg, graph);  // range + CI count
        if (graph.contains_mha(seg.begin, seg.end) && seg.length() != 1)
            throw illegal_segment("MhaFused must stay a singleton segment");
    }
    if (expected != graph.size()) throw illegal_segment("segments do not cover the chain");
    if (!s.code.empty() && s.code != encode(s.segments))
        throw illegal_segment("scheme code does not match its segments");
}

enum class TransitionKind { Expand, Seize, Compete };

inline const char* to_string(TransitionKind k) {
    switch (k) {
        case TransitionKind::Expand: return "expand";
        case TransitionKind::Seize: return "seize";
        case TransitionKind::Compete: return "compete";
    }
    return "?";
}

/// A single legal rewrite step. Expand merges segment `left` with
/// `left + 1`. Seize moves op `op_id` from the neighboring MI-only segment
/// into segment `actor`. Compete is a seize that won a two-sided contest
/// for the same op.
struct Transition {
    TransitionKind kind = TransitionKind::Expand;
    int left = 0;
    int actor = 0;
    int op_id = -1;
};

inline FusionScheme apply_transition(const FusionScheme& s, const Transition& t) {
    std::vector<Segment> segs = s.segments;
    if (t.kind == TransitionKind::Expand) {
        segs[static_cast<std::size_t>(t.left)].end = segs[static_cast<std::size_t>(t.left) + 1].end;
        segs.erase(segs.begin() + t.left + 1);
    } else {
        auto& actor = segs[static_cast<std::size_t>(t.actor)];
        if (t.op_id == actor.begin - 1) {
            // take the last op of the left neighbor
            auto& donor = segs[static_cast<std::size_t>(t.actor) - 1];
            --donor.end;
            --actor.begin;
            if (donor.length() == 0) segs.erase(segs.begin() + t.actor - 1);
        } else {
            auto& donor = segs[static_cast<std::size_t>(t.actor) + 1];
            ++donor.begin;
            ++actor.end;
            if (donor.length() == 0) segs.erase(segs.begin() + t.actor + 1);
        }
    }
    return make_scheme(std::move(segs));
}

/// All legal single-step transitions from a scheme, deterministically
/// ordered expand < seize < compete, then by leftmost touched segment.
inline std::vector<Transition> transitions(const FusionScheme& s, const OpGraph& graph) {
    validate_scheme(s, graph);
    const auto& segs = s.segments;
    const int n_segs = static_cast<int>(segs.size());
    auto has_mha = [&](int idx) {
        return graph.contains_mha(segs[static_cast<std::size_t>(idx)].begin,
                                  segs[static_cast<std::size_t>(idx)].end);
    };
    auto ci_of = [&](int idx) {
        return graph.ci_count(segs[static_cast<std::size_t>(idx)].begin,
                              segs[static_cast<std::size_t>(idx)].end);
    };

    std::vector<Transition> out;
    // expand: merge adjacent segments, CI budget respected, MhaFused frozen.
    for (int i = 0; i + 1 < n_segs; ++i) {
        if (has_mha(i) || has_mha(i + 1)) continue;
        if (ci_of(i) + ci_of(i + 1) > 2) continue;
        out.push_back({TransitionKind::Expand, i, 0, -1});
    }

    // seize: CI-bearing segments pull the boundary op of adjacent MI-only
    // segments. When both neighbors want the same op, the one-CI segment
    // wins; a one-CI/one-CI tie goes to the left neighbor.
    struct Claim {
        int actor;
        int op_id;
        int actor_ci;
    };
    std::vector<std::vector<Claim>> claims_by_op(graph.nodes.size());
    for (int i = 0; i < n_segs; ++i) {
        const int ci = ci_of(i);
        if (ci < 1 || has_mha(i)) continue;
        if (i > 0 && ci_of(i - 1) == 0 && !has_mha(i - 1)) {
            const int op = segs[static_cast<std::size_t>(i)].begin - 1;
            claims_by_op[static_cast<std::size_t>(op)].push_back({i, op, ci});
        }
        if (i + 1 < n_segs && ci_of(i + 1) == 0 && !has_mha(i + 1)) {
            const int op = segs[static_cast<std::size_t>(i)].end;
            claims_by_op[static_cast<std::size_t>(op)].push_back({i, op, ci});
        }
    }
    std::vector<Transition> seizes;
    std::vector<Transition> competes;
    for (const auto& claims : claims_by_op) {
        if (claims.empty()) continue;
        if (claims.size() == 1) {
            seizes.push_back({TransitionKind::Seize, 0, claims[0].actor, claims[0].op_id});
            continue;
        }
        // Two-sided contest; claims arrive left actor first.
        const Claim& left = claims[0];
        const Claim& right = claims[1];
        if (left.actor_ci == 1 && right.actor_ci == 1)
            competes.push_back({TransitionKind::Compete, 0, left.actor, left.op_id});
        else if (left.actor_ci == 1)
            competes.push_back({TransitionKind::Compete, 0, left.actor, left.op_id});
        else if (right.actor_ci == 1)
            competes.push_back({TransitionKind::Compete, 0, right.actor, right.op_id});
        // both at two CI ops: neither side has priority, no seize emitted
    }
    auto sort_key = [&segs](const Transition& t) {
        if (t.kind == TransitionKind::Expand) return segs[static_cast<std::size_t>(t.left)].begin;
        const auto& a = segs[static_cast<std::size_t>(t.actor)];
        return std::min(a.begin, t.op_id);
    };
    std::stable_sort(seizes.begin(), seizes.end(),
                     [&](const Transition& a, const Transition& b) { return sort_key(a) < sort_key(b); });
    std::stable_sort(competes.begin(), competes.end(),
                     [&](const Transition& a, const Transition& b) { return sort_key(a) < sort_key(b); });
    out.insert(out.end(), seizes.begin(), seizes.end());
    out.insert(out.end(), competes.begin(), competes.end());
    return out;
}

/// Preset encoder/decoder layer chains. All three are 12-node linear
/// chains over one MhaFused unit, an output projection, and a two-Gemm
/// feed-forward block:
///   bert_layer: post-norm, GELU
///   gpt_layer:  pre-norm, GELU
///   t5_layer:   pre-norm, ReLU
/// Residual Add nodes consume the recorded skip input of their block.
inline OpGraph build_preset_graph(const std::string& model, GraphHyper hyper) {
    if (hyper.ff_dim == 0) hyper.ff_dim = 4 * hyper.hidden_dim;
    if (hyper.bs < 1 || hyper.seq_len < 1 || hyper.hidden_dim < 1 || hyper.heads < 1 ||
        hyper.head_size < 1 || hyper.ff_dim < 1)
        throw invalid_parameter("graph hyperparameters must be positive");
    const std::int64_t rows = hyper.bs * hyper.seq_len;
    const std::int64_t hid = hyper.hidden_dim;
    const std::int64_t ff = hyper.ff_dim;

    OpGraph g;
    g.name = model;
    g.hyper = hyper;
    auto add = [&](OpKind kind, std::int64_t cols, std::int64_t inner = 0) {
        g.nodes.push_back({static_cast<int>(g.nodes.size()), kind, rows, cols, inner});
    };

    if (model == "bert-layer") {
        add(OpKind::MhaFused, hid);
        add(OpKind::Gemm, hid, hid);
        add(OpKind::Bias, hid);
        add(OpKind::Add, hid);
        add(OpKind::LayerNorm, hid);
        add(OpKind::Gemm, ff, hid);
        add(OpKind::Bias, ff);
        add(OpKind::Gelu, ff);
        add(OpKind::Gemm, hid, ff);
        add(OpKind::Bias, hid);
        add(OpKind::Add, hid);
        add(OpKind::LayerNorm, hid);
    } else if (model == "gpt-layer" || model == "t5-layer") {
        const OpKind act = model == "gpt-layer" ? OpKind::Gelu : OpKind::Relu;
        add(OpKind::LayerNorm, hid);
        add(OpKind::MhaFused, hid);
        add(OpKind::Gemm, hid, hid);
        add(OpKind::Bias, hid);
        add(OpKind::Add, hid);
        add(OpKind::LayerNorm, hid);
        add(OpKind::Gemm, ff, hid);
        add(OpKind::Bias, ff);
        add(act, ff);
        add(OpKind::Gemm, hid, ff);
        add(OpKind::Bias, hid);
        add(OpKind::Add, hid);
    } else {
        throw invalid_parameter("unknown preset model: " + model);
    }
    return g;
}

}  // namespace sparsefuse
