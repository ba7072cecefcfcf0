// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sparsefuse/backend.hpp"
#include "sparsefuse/common.hpp"
#include "sparsefuse/fusion.hpp"
#include "sparsefuse/params.hpp"
#include "sparsefuse/planner.hpp"

namespace sparsefuse {

/// Measured durations keyed by (scheme code, segment range, setting).
/// Entries are insert-once and lookups never re-measure; end-to-end
/// durations are cached the same way under the full assignment key.
class TuningCache {
public:
    struct Entry {
        std::string code;
        Segment seg;
        Setting setting;
        double duration;
    };

    bool contains(const std::string& code, const Segment& seg, const Setting& s) const {
        const auto it = entries_.find(code);
        if (it == entries_.end()) return false;
        const auto jt = it->second.find(seg);
        if (jt == it->second.end()) return false;
        return jt->second.count(s) != 0;
    }

    std::optional<double> get(const std::string& code, const Segment& seg, const Setting& s) const {
        const auto it = entries_.find(code);
        if (it == entries_.end()) return std::nullopt;
        const auto jt = it->second.find(seg);
        if (jt == it->second.end()) return std::nullopt;
        const auto kt = jt->second.find(s);
        if (kt == jt->second.end()) return std::nullopt;
        return kt->second;
    }

    void put(const std::string& code, const Segment& seg, const Setting& s, double duration) {
        auto& slot = entries_[code][seg];
        if (!slot.emplace(s, duration).second)
            throw internal_inconsistency("duplicate tuning cache insert");
        ++size_;
        session_new_.push_back({code, seg, s, duration});
    }

    /// All measured settings of one (code, segment), or null.
    const std::map<Setting, double>* settings_of(const std::string& code, const Segment& seg) const {
        const auto it = entries_.find(code);
        if (it == entries_.end()) return nullptr;
        const auto jt = it->second.find(seg);
        return jt == it->second.end() ? nullptr : &jt->second;
    }

    std::optional<double> get_e2e(const std::string& code, const std::string& assign_key) const {
        const auto it = e2e_.find({code, assign_key});
        return it == e2e_.end() ? std::nullopt : std::optional<double>(it->second);
    }

    void put_e2e(const std::string& code, const std::string& assign_key, double duration) {
        if (!e2e_.emplace(std::make_pair(code, assign_key), duration).second)
            throw internal_inconsistency("duplicate end-to-end cache insert");
        session_new_e2e_.push_back({code, assign_key, duration});
    }

    std::int64_t size() const { return size_; }

    /// Entries added since construction or the last clear, in insertion
    /// order; what a session appends to a persisted cache file.
    const std::vector<Entry>& session_entries() const { return session_new_; }
    const std::vector<std::tuple<std::string, std::string, double>>& session_e2e() const {
        return session_new_e2e_;
    }
    void mark_persisted() {
        session_new_.clear();
        session_new_e2e_.clear();
    }

private:
    std::map<std::string, std::map<Segment, std::map<Setting, double>>> entries_;
    std::map<std::pair<std::string, std::string>, double> e2e_;
    std::int64_t size_ = 0;
    std::vector<Entry> session_new_;
    std::vector<std::tuple<std::string, std::string, double>> session_new_e2e_;
};

struct SearchConfig {
    int samples_per_eval = 4;       // K settings per affected segment
    int stage2_budget = 16;         // B evaluations per stage-2 iteration
    int stage2_iters = 8;           // R
    double reward_boost = 1.5;
    std::uint64_t seed = 0;
    std::int64_t small_input_threshold = 4096;  // bs*seq_len gate for CI+CI init
    int stagnation_limit = 2;       // stage-2 stops after this many flat iterations
    double accept_margin = -1.0;    // <0: take the backend's margin
    ParamSpace space;

    void check() const {
        if (samples_per_eval < 1) throw invalid_parameter("samples_per_eval must be >= 1");
        if (stage2_iters < 1) throw invalid_parameter("stage2_iters must be >= 1");
        if (reward_boost <= 0.0) throw invalid_parameter("reward_boost must be positive");
    }
};

struct SearchStats {
    std::int64_t measure_calls = 0;   // backend measure() invocations
    std::int64_t sample_evals = 0;    // sample evaluations, new or cached
    std::int64_t cache_hits = 0;
    std::int64_t e2e_calls = 0;
    std::int64_t e2e_hits = 0;
    int schemes_evaluated = 0;
    int stage1_accepted = 0;
    int stage2_iterations = 0;
    std::vector<std::int64_t> stage2_evals_per_iter;
    std::vector<double> accepted_durations;

    double hit_rate() const {
        const double total = static_cast<double>(sample_evals);
        return total > 0.0 ? static_cast<double>(cache_hits) / total : 0.0;
    }
};

/// Settings a segment may take. MhaFused segments are planned analytically,
/// not sampled, so they expose only their pinned default (reported as
/// untuned), as does any template whose grid is empty.
inline std::vector<Setting> segment_pool(const OpGraph& g, const Segment& seg,
                                         const ParamSpace& space, bool* untuned = nullptr) {
    const TemplateKind kind = classify_segment(seg, g);
    if (untuned) *untuned = false;
    if (!g.contains_mha(seg.begin, seg.end)) {
        auto grid = space.grid(kind);
        if (!grid.empty()) return grid;
    }
    if (untuned) *untuned = true;
    return {default_setting(kind)};
}

namespace detail {

inline std::string assignment_key(const ParamAssignment& a) {
    std::string key;
    for (const auto& [seg, setting] : a) {
        key += std::to_string(seg.begin) + "-" + std::to_string(seg.end) + "=" + setting.key() + ";";
    }
    return key;
}

// k distinct indices in [0, n), deterministic partial Fisher-Yates.
inline std::vector<std::size_t> pick_distinct(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

struct Sampler {
    MeasurementBackend& backend;
    TuningCache& cache;
    SearchStats& stats;

    double sample(const OpGraph& g, const FusionScheme& scheme, const Segment& seg,
                  const Setting& s) {
        ++stats.sample_evals;
        if (const auto hit = cache.get(scheme.code, seg, s)) {
            ++stats.cache_hits;
            return *hit;
        }
        const double d = backend.measure(g, scheme, seg, s);
        ++stats.measure_calls;
        cache.put(scheme.code, seg, s, d);
        return d;
    }

    double end_to_end(const OpGraph& g, const FusionScheme& scheme, const ParamAssignment& a) {
        const std::string key = assignment_key(a);
        if (const auto hit = cache.get_e2e(scheme.code, key)) {
            ++stats.e2e_hits;
            return *hit;
        }
        const double d = backend.end_to_end(g, scheme, a);
        ++stats.e2e_calls;
        cache.put_e2e(scheme.code, key, d);
        return d;
    }

    std::pair<Setting, double> best_of(const FusionScheme& scheme, const Segment& seg,
                                       const OpGraph& g, const ParamSpace& space) const {
        const auto* m = cache.settings_of(scheme.code, seg);
        if (!m || m->empty()) {
            return {default_setting(classify_segment(seg, g)),
                    std::numeric_limits<double>::infinity()};
        }
        auto best = m->begin();
        for (auto it = m->begin(); it != m->end(); ++it)
            if (it->second < best->second) best = it;
        return {best->first, best->second};
    }
};

}  // namespace detail

/// Expert-knowledge initial partition: the MhaFused unit stays a frozen
/// singleton; on small inputs (bs*seq_len at or under the threshold) Gemm
/// pairs separated only by simple elementwise ops are pre-fused into CiCi
/// segments; every other Gemm seeds a CiMi segment with its immediately
/// following Bias; leftover MI runs become MiChain segments.
inline FusionScheme init_scheme(const OpGraph& g, const SearchConfig& config) {
    config.check();
    const int n = g.size();
    if (n == 0) throw invalid_parameter("empty graph");
    const bool small_input = g.hyper.bs * g.hyper.seq_len <= config.small_input_threshold;
    auto simple_mi = [](OpKind k) {
        return k == OpKind::Bias || k == OpKind::Gelu || k == OpKind::Relu;
    };

    std::vector<Segment> segs;
    int i = 0;
    while (i < n) {
        const OpKind k = g.nodes[static_cast<std::size_t>(i)].kind;
        if (k == OpKind::MhaFused) {
            segs.push_back({i, i + 1});
            ++i;
        } else if (k == OpKind::Gemm) {
            if (small_input) {
                int j = i + 1;
                while (j < n && simple_mi(g.nodes[static_cast<std::size_t>(j)].kind)) ++j;
                if (j < n && g.nodes[static_cast<std::size_t>(j)].kind == OpKind::Gemm) {
                    segs.push_back({i, j + 1});
                    i = j + 1;
                    continue;
                }
            }
            if (i + 1 < n && g.nodes[static_cast<std::size_t>(i) + 1].kind == OpKind::Bias) {
                segs.push_back({i, i + 2});
                i += 2;
            } else {
                segs.push_back({i, i + 1});
                ++i;
            }
        } else {
            int j = i;
            while (j < n && g.nodes[static_cast<std::size_t>(j)].category() == OpCategory::MI) ++j;
            segs.push_back({i, j});
            i = j;
        }
    }
    auto scheme = make_scheme(std::move(segs));
    validate_scheme(scheme, g);
    return scheme;
}

namespace detail {

struct EvalResult {
    ParamAssignment best;
    double duration = 0.0;
};

// Evaluate a scheme: sample K settings for each segment not carried over
// from the parent, then price the whole chain with the best known setting
// per segment.
inline EvalResult evaluate_scheme(const OpGraph& g, const FusionScheme& scheme,
                                  const EvalResult* parent, int k_samples, const ParamSpace& space,
                                  Sampler& sampler, std::mt19937_64& rng) {
    EvalResult r;
    for (const auto& seg : scheme.segments) {
        if (parent) {
            const auto it = parent->best.find(seg);
            if (it != parent->best.end()) {
                r.best[seg] = it->second;
                continue;
            }
        }
        const auto pool = segment_pool(g, seg, space);
        for (std::size_t idx :
             pick_distinct(pool.size(), static_cast<std::size_t>(k_samples), rng)) {
            sampler.sample(g, scheme, seg, pool[idx]);
        }
        r.best[seg] = sampler.best_of(scheme, seg, g, space).first;
    }
    r.duration = sampler.end_to_end(g, scheme, r.best);
    return r;
}

}  // namespace detail

/// Stage 1: depth-first fusion expansion with rollback. From the current
/// scheme, candidate transitions are tried in deterministic order; each is
/// priced by sampling K settings per affected segment and comparing best
/// end-to-end durations. The first candidate beating the acceptance margin
/// is committed and the walk descends from it; rejected candidates roll
/// back. Stops when no transition improves; every evaluated scheme is
/// visited at most once.
inline FusionScheme expand_fusion(const OpGraph& g, const FusionScheme& init,
                                  MeasurementBackend& backend, TuningCache& cache,
                                  const SearchConfig& config, SearchStats* stats_out = nullptr) {
    config.check();
    validate_scheme(init, g);
    SearchStats local;
    SearchStats& stats = stats_out ? *stats_out : local;
    detail::Sampler sampler{backend, cache, stats};
    std::mt19937_64 rng(mix_seed(config.seed, 1));
    const double margin = config.accept_margin >= 0.0 ? config.accept_margin
                                                      : backend.accept_margin();

    std::set<std::string> visited{init.code};
    FusionScheme current = init;
    detail::EvalResult cur_eval = detail::evaluate_scheme(g, current, nullptr,
                                                          config.samples_per_eval, config.space,
                                                          sampler, rng);
    ++stats.schemes_evaluated;

    for (;;) {
        bool advanced = false;
        for (const auto& t : transitions(current, g)) {
            FusionScheme cand = apply_transition(current, t);
            if (!visited.insert(cand.code).second) continue;
            detail::EvalResult cand_eval;
            try {
                cand_eval = detail::evaluate_scheme(g, cand, &cur_eval, config.samples_per_eval,
                                                    config.space, sampler, rng);
            } catch (const backend_error&) {
                continue;  // unexecutable candidate: skip, never abort the search
            }
            ++stats.schemes_evaluated;
            if (cand_eval.duration < cur_eval.duration * (1.0 - margin)) {
                current = std::move(cand);
                cur_eval = std::move(cand_eval);
                ++stats.stage1_accepted;
                stats.accepted_durations.push_back(cur_eval.duration);
                advanced = true;
                break;
            }
        }
        if (!advanced) break;
    }
    return current;
}

/// Stage 2: reward-based parameter sampling on a fixed scheme. Iteration 1
/// spreads the budget B uniformly; afterwards the segment whose new best
/// setting cut the most time gets its share boosted and shares are
/// renormalized to B (floors, remainder to the rewarded segment). Draws are
/// without replacement per segment; exhausted grids hand their share to the
/// others. Stops after R iterations, after stagnation_limit flat
/// iterations, or when every pool is exhausted.
inline ParamAssignment tune_params(const OpGraph& g, const FusionScheme& scheme,
                                   MeasurementBackend& backend, TuningCache& cache,
                                   const SearchConfig& config, SearchStats* stats_out = nullptr) {
    config.check();
    validate_scheme(scheme, g);
    const int n_segs = static_cast<int>(scheme.segments.size());
    if (config.stage2_budget < n_segs)
        throw invalid_parameter("stage2 budget must cover at least one sample per segment");

    SearchStats local;
    SearchStats& stats = stats_out ? *stats_out : local;
    detail::Sampler sampler{backend, cache, stats};
    std::mt19937_64 rng(mix_seed(config.seed, 2));

    struct SegState {
        Segment seg;
        std::vector<Setting> pool;
        std::vector<std::size_t> remaining;  // indices not yet drawn in stage 2
        double weight = 1.0;
        double best = std::numeric_limits<double>::infinity();
    };
    std::vector<SegState> segs;
    for (const auto& seg : scheme.segments) {
        SegState st;
        st.seg = seg;
        st.pool = segment_pool(g, seg, config.space);
        st.remaining.resize(st.pool.size());
        for (std::size_t i = 0; i < st.remaining.size(); ++i) st.remaining[i] = i;
        st.best = sampler.best_of(scheme, seg, g, config.space).second;
        segs.push_back(std::move(st));
    }

    auto current_assignment = [&] {
        ParamAssignment a;
        for (const auto& st : segs) a[st.seg] = sampler.best_of(scheme, st.seg, g, config.space).first;
        return a;
    };

    double best_e2e = std::numeric_limits<double>::infinity();
    int stagnant = 0;
    int rewarded = -1;

    for (int iter = 0; iter < config.stage2_iters; ++iter) {
        // Shares for this iteration: uniform on the first pass, weighted
        // floors with the remainder on the rewarded segment afterwards.
        const std::int64_t budget = config.stage2_budget;
        std::vector<std::int64_t> share(static_cast<std::size_t>(n_segs), 0);
        double wsum = 0.0;
        for (const auto& st : segs) wsum += st.weight;
        std::int64_t assigned = 0;
        for (int s = 0; s < n_segs; ++s) {
            share[static_cast<std::size_t>(s)] = static_cast<std::int64_t>(
                static_cast<double>(budget) * segs[static_cast<std::size_t>(s)].weight / wsum);
            assigned += share[static_cast<std::size_t>(s)];
        }
        const std::int64_t remainder = budget - assigned;
        for (std::int64_t r = 0; r < remainder; ++r) {
            const int tgt = rewarded >= 0 ? rewarded : static_cast<int>(r % n_segs);
            ++share[static_cast<std::size_t>(tgt)];
        }
        // Cap by pool remainder and push overflow to segments with room.
        for (int pass = 0; pass < n_segs; ++pass) {
            std::int64_t overflow = 0;
            for (int s = 0; s < n_segs; ++s) {
                const auto room = static_cast<std::int64_t>(segs[static_cast<std::size_t>(s)].remaining.size());
                if (share[static_cast<std::size_t>(s)] > room) {
                    overflow += share[static_cast<std::size_t>(s)] - room;
                    share[static_cast<std::size_t>(s)] = room;
                }
            }
            if (overflow == 0) break;
            for (int s = 0; s < n_segs && overflow > 0; ++s) {
                const auto room = static_cast<std::int64_t>(segs[static_cast<std::size_t>(s)].remaining.size()) -
                                  share[static_cast<std::size_t>(s)];
                const std::int64_t take = std::min(room, overflow);
                share[static_cast<std::size_t>(s)] += take;
                overflow -= take;
            }
            if (overflow > 0) break;  // every pool exhausted; spend what fits
        }
        std::int64_t spent = 0;
        double best_delta = 0.0;
        int best_seg = -1;
        for (int s = 0; s < n_segs; ++s) {
            auto& st = segs[static_cast<std::size_t>(s)];
            for (std::int64_t c = 0; c < share[static_cast<std::size_t>(s)]; ++c) {
                const std::size_t pick = static_cast<std::size_t>(rng() % st.remaining.size());
                const std::size_t idx = st.remaining[pick];
                st.remaining[pick] = st.remaining.back();
                st.remaining.pop_back();
                const double d = sampler.sample(g, scheme, st.seg, st.pool[idx]);
                ++spent;
                if (d < st.best) {
                    // Reward tracks genuine reductions of an established
                    // best; a segment's first sample only sets the baseline.
                    if (st.best != std::numeric_limits<double>::infinity() &&
                        st.best - d > best_delta) {
                        best_delta = st.best - d;
                        best_seg = s;
                    }
                    st.best = d;
                }
            }
        }
        if (spent == 0) break;  // nothing left to draw anywhere
        ++stats.stage2_iterations;
        stats.stage2_evals_per_iter.push_back(spent);

        const double e2e = sampler.end_to_end(g, scheme, current_assignment());
        const bool improved = e2e < best_e2e;
        if (improved) best_e2e = e2e;
        stagnant = improved ? 0 : stagnant + 1;

        rewarded = best_seg;
        if (best_seg >= 0) segs[static_cast<std::size_t>(best_seg)].weight *= config.reward_boost;
        if (stagnant >= config.stagnation_limit) break;
        bool all_done = true;
        for (const auto& st : segs) all_done = all_done && st.remaining.empty();
        if (all_done) break;
    }
    return current_assignment();
}

/// Everything a tuning run produces; serialized to versioned JSON.
struct TuningReport {
    int version = 1;
    std::string graph_name;
    GraphHyper hyper;
    std::string hw_name;
    std::string backend_id;
    KernelPlan plan;
    std::string code;
    std::string code_hex;
    struct SegmentReport {
        Segment seg;
        TemplateKind kind = TemplateKind::MiChain;
        std::vector<std::string> ops;
        Setting setting;
        double duration = 0.0;
        bool untuned = false;
    };
    std::vector<SegmentReport> segments;
    double end_to_end_s = 0.0;
    std::uint64_t seed = 0;
    SearchStats stats;
    double wall_time_s = 0.0;  // volatile; excluded from canonical JSON
};

/// Full pipeline: analytical MHA plan, expert init, stage-1 fusion
/// expansion, stage-2 parameter tuning, report assembly.
inline TuningReport run_pipeline(const OpGraph& g, const HardwareSpec& hw, const DenseMask& mask,
                                 MeasurementBackend& backend, const SearchConfig& config,
                                 TuningCache& cache) {
    const auto wall0 = std::chrono::steady_clock::now();
    TuningReport rep;
    rep.graph_name = g.name;
    rep.hyper = g.hyper;
    rep.hw_name = hw.name;
    rep.backend_id = backend.id();
    rep.seed = config.seed;
    rep.plan = select_plan(mask, hw, g.hyper.seq_len, g.hyper.heads, g.hyper.bs,
                           g.hyper.head_size);

    const FusionScheme init = init_scheme(g, config);
    FusionScheme final_scheme = expand_fusion(g, init, backend, cache, config, &rep.stats);
    const ParamAssignment assignment =
        tune_params(g, final_scheme, backend, cache, config, &rep.stats);

    rep.code = final_scheme.code;
    rep.code_hex = code_to_hex(final_scheme.code);
    detail::Sampler sampler{backend, cache, rep.stats};
    for (const auto& seg : final_scheme.segments) {
        TuningReport::SegmentReport sr;
        sr.seg = seg;
        sr.kind = classify_segment(seg, g);
        for (int i = seg.begin; i < seg.end; ++i)
            sr.ops.push_back(to_string(g.nodes[static_cast<std::size_t>(i)].kind));
        segment_pool(g, seg, config.space, &sr.untuned);
        const auto it = assignment.find(seg);
        sr.setting = it != assignment.end() ? it->second : default_setting(sr.kind);
        if (const auto d = cache.get(final_scheme.code, seg, sr.setting))
            sr.duration = *d;
        else
            sr.duration = sampler.sample(g, final_scheme, seg, sr.setting);
        rep.segments.push_back(std::move(sr));
    }
    rep.end_to_end_s = sampler.end_to_end(g, final_scheme, assignment);
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return rep;
}

}  // namespace sparsefuse
