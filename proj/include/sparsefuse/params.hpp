// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <map>
#include <string>
#include <vector>

#include "sparsefuse/common.hpp"
#include "sparsefuse/fusion.hpp"

namespace sparsefuse {

/// One point in a template's tuning grid. Fields not meaningful for the
/// template kind stay zero; chunk_size drives MiChain traversal, the tile
/// triple drives blocked GEMM templates, stage_depth is a CiCi scheduling
/// knob with no effect on values.
struct Setting {
    TemplateKind kind = TemplateKind::MiChain;
    int chunk_size = 0;
    int tile_m = 0;
    int tile_n = 0;
    int tile_k = 0;
    int stage_depth = 0;

    auto operator<=>(const Setting&) const = default;

    std::string key() const {
        return std::string(to_string(kind)) + ":" + std::to_string(chunk_size) + ":" +
               std::to_string(tile_m) + ":" + std::to_string(tile_n) + ":" +
               std::to_string(tile_k) + ":" + std::to_string(stage_depth);
    }
};

/// Safe defaults used when a segment has an empty grid (reported untuned).
inline Setting default_setting(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::MiChain: return {kind, 1024, 0, 0, 0, 0};
        case TemplateKind::CiMi: return {kind, 0, 32, 32, 32, 0};
        case TemplateKind::CiCi: return {kind, 0, 32, 32, 32, 1};
    }
    return {};
}

/// Finite per-template grids. The defaults follow the launch knobs the
/// compilation templates expose; tests may shrink them.
struct ParamSpace {
    std::vector<int> mi_chunk_sizes{256, 1024, 4096};
    std::vector<int> ci_tile_sizes{16, 32, 64};
    std::vector<int> ci_stage_depths{1, 2};

    std::vector<Setting> grid(TemplateKind kind) const {
        std::vector<Setting> out;
        switch (kind) {
            case TemplateKind::MiChain:
                for (int c : mi_chunk_sizes) out.push_back({kind, c, 0, 0, 0, 0});
                break;
            case TemplateKind::CiMi:
                for (int tm : ci_tile_sizes)
                    for (int tn : ci_tile_sizes)
                        for (int tk : ci_tile_sizes) out.push_back({kind, 0, tm, tn, tk, 0});
                break;
            case TemplateKind::CiCi:
                for (int tm : ci_tile_sizes)
                    for (int tn : ci_tile_sizes)
                        for (int tk : ci_tile_sizes)
                            for (int sd : ci_stage_depths) out.push_back({kind, 0, tm, tn, tk, sd});
                break;
        }
        return out;
    }
};

/// Chosen setting per segment of a fixed scheme.
using ParamAssignment = std::map<Segment, Setting>;

}  // namespace sparsefuse
