// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsefuse/backend.hpp"
#include "sparsefuse/bsr.hpp"
#include "sparsefuse/common.hpp"
#include "sparsefuse/fusion.hpp"
#include "sparsefuse/mask.hpp"
#include "sparsefuse/params.hpp"
#include "sparsefuse/planner.hpp"
#include "sparsefuse/search.hpp"

namespace sparsefuse {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Little-endian scalar I/O.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("truncated stream while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_i32_array(std::ostream& os, const std::vector<std::int32_t>& a) {
    write_u32(os, static_cast<std::uint32_t>(a.size()));
    for (auto v : a) write_u32(os, static_cast<std::uint32_t>(v));
}

inline std::vector<std::int32_t> read_i32_array(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::vector<std::int32_t> a(n);
    for (auto& v : a) v = static_cast<std::int32_t>(read_u32(is));
    return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense mask dump: "SFMK", version, seq_len, reserved (16-byte header),
// then the bits row-major, bit-packed LSB-first.

constexpr std::uint32_t kMaskDumpVersion = 1;

inline void write_dense_mask(std::ostream& os, const DenseMask& m) {
    os.write("SFMK", 4);
    detail::write_u32(os, kMaskDumpVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(m.seq_len()));
    detail::write_u32(os, 0);
    const auto packed = pack_bits(m.raw());
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
}

inline DenseMask read_dense_mask(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SFMK") throw io_error("bad mask dump magic");
    const std::uint32_t version = detail::read_u32(is);
    if (version != kMaskDumpVersion) throw io_error("unsupported mask dump version");
    const std::uint32_t n = detail::read_u32(is);
    detail::read_u32(is);  // reserved
    const std::size_t nbits = static_cast<std::size_t>(n) * n;
    std::vector<std::uint8_t> packed((nbits + 7) / 8);
    is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!is) throw io_error("truncated mask dump");
    const auto bits = unpack_bits(packed, nbits);
    DenseMask m(static_cast<int>(n));
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < n; ++j)
            if (bits[static_cast<std::size_t>(i) * n + j]) m.set(static_cast<int>(i), static_cast<int>(j), true);
    return m;
}

// ---------------------------------------------------------------------------
// BSR dump: "SFBR", version, seq_len, block_m, block_n, the seven index
// arrays (u32 count + 32-bit LE values each), then the bit-packed pool.

constexpr std::uint32_t kBsrDumpVersion = 1;

inline void write_bsr(std::ostream& os, const BsrMask& b) {
    os.write("SFBR", 4);
    detail::write_u32(os, kBsrDumpVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(b.seq_len));
    detail::write_u32(os, static_cast<std::uint32_t>(b.block_m));
    detail::write_u32(os, static_cast<std::uint32_t>(b.block_n));
    detail::write_i32_array(os, b.full_row_ptr);
    detail::write_i32_array(os, b.full_col_idx);
    detail::write_i32_array(os, b.part_row_ptr);
    detail::write_i32_array(os, b.part_col_idx);
    detail::write_i32_array(os, b.part_tile_ids);
    detail::write_i32_array(os, b.load_row_ptr);
    detail::write_i32_array(os, b.load_col_idx);
    detail::write_u32(os, static_cast<std::uint32_t>(b.part_mask_pool.size()));
    for (const auto& tile : b.part_mask_pool) {
        const auto packed = pack_bits(tile);
        os.write(reinterpret_cast<const char*>(packed.data()),
                 static_cast<std::streamsize>(packed.size()));
    }
}

inline BsrMask read_bsr(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SFBR") throw io_error("bad BSR dump magic");
    if (detail::read_u32(is) != kBsrDumpVersion) throw io_error("unsupported BSR dump version");
    BsrMask b;
    b.seq_len = static_cast<int>(detail::read_u32(is));
    b.block_m = static_cast<int>(detail::read_u32(is));
    b.block_n = static_cast<int>(detail::read_u32(is));
    b.n_rows = (b.seq_len + b.block_m - 1) / b.block_m;
    b.n_cols = (b.seq_len + b.block_n - 1) / b.block_n;
    b.full_row_ptr = detail::read_i32_array(is);
    b.full_col_idx = detail::read_i32_array(is);
    b.part_row_ptr = detail::read_i32_array(is);
    b.part_col_idx = detail::read_i32_array(is);
    b.part_tile_ids = detail::read_i32_array(is);
    b.load_row_ptr = detail::read_i32_array(is);
    b.load_col_idx = detail::read_i32_array(is);
    const std::uint32_t pool = detail::read_u32(is);
    const std::size_t tile_bits = static_cast<std::size_t>(b.block_m) * b.block_n;
    for (std::uint32_t t = 0; t < pool; ++t) {
        std::vector<std::uint8_t> packed((tile_bits + 7) / 8);
        is.read(reinterpret_cast<char*>(packed.data()),
                static_cast<std::streamsize>(packed.size()));
        if (!is) throw io_error("truncated BSR dump");
        b.part_mask_pool.push_back(unpack_bits(packed, tile_bits));
    }
    validate_bsr(b);
    return b;
}

// ---------------------------------------------------------------------------
// Mask descriptors.

struct MaskDescriptor {
    std::string pattern;  // sliding | dilated | global | random | longformer | bigbird
    int seq_len = 0;
    PatternParams params;
};

inline json to_json(const MaskDescriptor& d) {
    json j{{"pattern", d.pattern}, {"seq_len", d.seq_len}, {"seed", d.params.seed}};
    if (d.pattern == "sliding" || d.pattern == "dilated" || d.pattern == "longformer" ||
        d.pattern == "bigbird")
        j["band_width"] = d.params.band_width;
    if (d.pattern == "dilated") j["dilation_rate"] = d.params.dilation_rate;
    if (d.pattern == "global" || d.pattern == "longformer" || d.pattern == "bigbird")
        j["global_width"] = d.params.global_width;
    if (d.pattern == "random" || d.pattern == "bigbird") {
        j["filling_rate"] = d.params.filling_rate;
        j["block"] = d.params.block;
    }
    return j;
}

inline MaskDescriptor mask_descriptor_from_json(const json& j) {
    MaskDescriptor d;
    d.pattern = j.at("pattern").get<std::string>();
    d.seq_len = j.at("seq_len").get<int>();
    d.params.seed = j.value("seed", std::uint64_t{0});
    d.params.band_width = j.value("band_width", 0);
    d.params.global_width = j.value("global_width", 0);
    d.params.dilation_rate = j.value("dilation_rate", 0);
    d.params.filling_rate = j.value("filling_rate", 0.0);
    d.params.block = j.value("block", 16);
    return d;
}

inline DenseMask generate_mask(const MaskDescriptor& d) {
    const auto& p = d.params;
    if (d.pattern == "sliding") return gen_sliding_window(d.seq_len, p.band_width);
    if (d.pattern == "dilated") return gen_dilated(d.seq_len, p.band_width, p.dilation_rate);
    if (d.pattern == "global") return gen_global(d.seq_len, p.global_width);
    if (d.pattern == "random")
        return gen_random_blocks(d.seq_len, p.block, p.filling_rate, p.seed);
    if (d.pattern == "longformer") return gen_longformer(d.seq_len, p.global_width, p.band_width);
    if (d.pattern == "bigbird")
        return gen_bigbird(d.seq_len, p.global_width, p.band_width, p.filling_rate, p.seed,
                           p.block);
    throw invalid_parameter("unknown mask pattern: " + d.pattern);
}

// ---------------------------------------------------------------------------
// Hardware, plans, stats.

inline json to_json(const HardwareSpec& hw) {
    return json{{"name", hw.name},
                {"sm_num", hw.sm_num},
                {"smem_size", hw.smem_size},
                {"max_warp", hw.max_warp},
                {"element_bytes", hw.element_bytes}};
}

inline HardwareSpec hardware_from_json(const json& j) {
    HardwareSpec hw;
    hw.name = j.at("name").get<std::string>();
    hw.sm_num = j.at("sm_num").get<int>();
    hw.smem_size = j.at("smem_size").get<std::int64_t>();
    hw.max_warp = j.at("max_warp").get<int>();
    hw.element_bytes = j.value("element_bytes", 2);
    hw.check();
    return hw;
}

/// Preset name or a JSON spec file path.
inline HardwareSpec load_hardware(const std::string& name_or_path) {
    try {
        return hw_preset(name_or_path);
    } catch (const invalid_parameter&) {
        std::ifstream f(name_or_path);
        if (!f) throw io_error("no such hardware preset or spec file: " + name_or_path);
        return hardware_from_json(json::parse(f));
    }
}

inline json to_json(const KernelPlan& p) {
    json j{{"kind", to_string(p.kind)},
           {"block_m", p.block_m},
           {"block_n", p.block_n},
           {"num_warps", p.num_warps},
           {"score", p.score},
           {"fallback", p.fallback}};
    if (std::isnan(p.threshold))
        j["threshold"] = nullptr;
    else
        j["threshold"] = p.threshold;
    return j;
}

inline json to_json(const BlockStats& s) {
    return json{{"full_count", s.full_count},
                {"part_count", s.part_count},
                {"empty_count", s.empty_count},
                {"valid_block_ratio", s.valid_block_ratio}};
}

// ---------------------------------------------------------------------------
// Settings, schemes, cost models.

inline json to_json(const Setting& s) {
    json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case TemplateKind::MiChain:
            j["chunk_size"] = s.chunk_size;
            break;
        case TemplateKind::CiCi:
            j["stage_depth"] = s.stage_depth;
            [[fallthrough]];
        case TemplateKind::CiMi:
            j["tile_m"] = s.tile_m;
            j["tile_n"] = s.tile_n;
            j["tile_k"] = s.tile_k;
            break;
    }
    return j;
}

inline TemplateKind template_kind_from_string(const std::string& s) {
    if (s == "mi_chain") return TemplateKind::MiChain;
    if (s == "ci_mi") return TemplateKind::CiMi;
    if (s == "ci_ci") return TemplateKind::CiCi;
    throw invalid_parameter("unknown template kind: " + s);
}

inline Setting setting_from_json(const json& j) {
    Setting s;
    s.kind = template_kind_from_string(j.at("kind").get<std::string>());
    s.chunk_size = j.value("chunk_size", 0);
    s.tile_m = j.value("tile_m", 0);
    s.tile_n = j.value("tile_n", 0);
    s.tile_k = j.value("tile_k", 0);
    s.stage_depth = j.value("stage_depth", 0);
    return s;
}

inline json scheme_to_json(const FusionScheme& s, const OpGraph* graph = nullptr) {
    json segs = json::array();
    for (const auto& seg : s.segments) segs.push_back(json::array({seg.begin, seg.end}));
    json j{{"code", s.code}, {"hex", code_to_hex(s.code)}, {"segments", segs}};
    if (graph) {
        json templates = json::array();
        for (const auto& seg : s.segments)
            templates.push_back(to_string(classify_segment(seg, *graph)));
        j["templates"] = templates;
    }
    return j;
}

inline json to_json(const SyntheticCostModel& m) {
    json j{{"c_flop", m.c_flop},
           {"c_byte", m.c_byte},
           {"disc_mi_chain", m.disc_mi_chain},
           {"disc_ci_mi", m.disc_ci_mi},
           {"disc_ci_ci", m.disc_ci_ci},
           {"param_amp", m.param_amp},
           {"seed", m.seed}};
    if (m.planted) {
        json target = json::array();
        for (const auto& seg : m.planted->target) target.push_back(json::array({seg.begin, seg.end}));
        j["planted"] = json{{"target", target},
                            {"inside", m.planted->inside},
                            {"penalty", m.planted->penalty}};
    }
    return j;
}

inline SyntheticCostModel synthetic_model_from_json(const json& j) {
    SyntheticCostModel m;
    m.c_flop = j.value("c_flop", m.c_flop);
    m.c_byte = j.value("c_byte", m.c_byte);
    m.disc_mi_chain = j.value("disc_mi_chain", m.disc_mi_chain);
    m.disc_ci_mi = j.value("disc_ci_mi", m.disc_ci_mi);
    m.disc_ci_ci = j.value("disc_ci_ci", m.disc_ci_ci);
    m.param_amp = j.value("param_amp", m.param_amp);
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("planted")) {
        SyntheticCostModel::Planted p;
        for (const auto& seg : j.at("planted").at("target"))
            p.target.push_back({seg.at(0).get<int>(), seg.at(1).get<int>()});
        p.inside = j.at("planted").value("inside", p.inside);
        p.penalty = j.at("planted").value("penalty", p.penalty);
        m.planted = p;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Reports.

inline json to_json(const GraphHyper& h) {
    return json{{"bs", h.bs},         {"seq_len", h.seq_len},   {"hidden_dim", h.hidden_dim},
                {"heads", h.heads},   {"head_size", h.head_size}, {"ff_dim", h.ff_dim}};
}

/// Canonical report JSON is deterministic for a fixed seed and inputs;
/// wall-clock time is emitted only when include_timings is set.
inline json report_to_json(const TuningReport& r, bool include_timings = false) {
    json segs = json::array();
    for (const auto& s : r.segments) {
        segs.push_back(json{{"range", json::array({s.seg.begin, s.seg.end})},
                            {"template", to_string(s.kind)},
                            {"ops", s.ops},
                            {"setting", to_json(s.setting)},
                            {"duration_s", s.duration},
                            {"untuned", s.untuned}});
    }
    json j{{"version", r.version},
           {"graph", r.graph_name},
           {"hyper", to_json(r.hyper)},
           {"hw", r.hw_name},
           {"backend", r.backend_id},
           {"plan", to_json(r.plan)},
           {"scheme", json{{"code", r.code}, {"hex", r.code_hex}}},
           {"segments", segs},
           {"end_to_end_s", r.end_to_end_s},
           {"seed", r.seed},
           {"tuning",
            json{{"measure_calls", r.stats.measure_calls},
                 {"sample_evals", r.stats.sample_evals},
                 {"cache_hits", r.stats.cache_hits},
                 {"cache_hit_rate", r.stats.hit_rate()},
                 {"e2e_calls", r.stats.e2e_calls},
                 {"e2e_hits", r.stats.e2e_hits},
                 {"schemes_evaluated", r.stats.schemes_evaluated},
                 {"stage1_accepted", r.stats.stage1_accepted},
                 {"stage2_iterations", r.stats.stage2_iterations},
                 {"stage2_evals_per_iter", r.stats.stage2_evals_per_iter}}}};
    if (include_timings) j["wall_time_s"] = r.wall_time_s;
    return j;
}

// ---------------------------------------------------------------------------
// Cache persistence: one append-only JSONL file; every line carries the
// context hash of (graph, backend id, hardware) it belongs to.

inline std::string graph_signature(const OpGraph& g) {
    std::string s = g.name + "|" + std::to_string(g.hyper.bs) + "," +
                    std::to_string(g.hyper.seq_len) + "," + std::to_string(g.hyper.hidden_dim) +
                    "," + std::to_string(g.hyper.heads) + "," + std::to_string(g.hyper.head_size) +
                    "," + std::to_string(g.hyper.ff_dim);
    for (const auto& n : g.nodes) {
        s += "|";
        s += to_string(n.kind);
        s += ":" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "x" +
             std::to_string(n.inner);
    }
    return s;
}

inline std::string cache_context(const OpGraph& g, const std::string& backend_id,
                                 const std::string& hw_name) {
    return hex64(fnv1a(graph_signature(g) + "#" + backend_id + "#" + hw_name));
}

inline void append_cache_file(const std::string& path, const std::string& ctx,
                              TuningCache& cache) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw io_error("cannot open cache file for append: " + path);
    for (const auto& e : cache.session_entries()) {
        json j{{"ctx", ctx},           {"type", "seg"},
               {"code", e.code},       {"begin", e.seg.begin},
               {"end", e.seg.end},     {"setting", to_json(e.setting)},
               {"dur", e.duration}};
        f << j.dump() << "\n";
    }
    for (const auto& [code, key, dur] : cache.session_e2e()) {
        json j{{"ctx", ctx}, {"type", "e2e"}, {"code", code}, {"key", key}, {"dur", dur}};
        f << j.dump() << "\n";
    }
    cache.mark_persisted();
}

/// Load the entries of one context from a cache file; missing files load
/// nothing. Loaded entries count as pre-warmed, not session-new.
inline TuningCache load_cache_file(const std::string& path, const std::string& ctx) {
    TuningCache cache;
    std::ifstream f(path);
    if (!f) return cache;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.value("ctx", std::string{}) != ctx) continue;
        if (j.at("type") == "seg") {
            cache.put(j.at("code").get<std::string>(),
                      {j.at("begin").get<int>(), j.at("end").get<int>()},
                      setting_from_json(j.at("setting")), j.at("dur").get<double>());
        } else {
            cache.put_e2e(j.at("code").get<std::string>(), j.at("key").get<std::string>(),
                          j.at("dur").get<double>());
        }
    }
    cache.mark_persisted();
    return cache;
}

}  // namespace sparsefuse
