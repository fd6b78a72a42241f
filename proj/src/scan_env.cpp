#include "scanrl/scan_env.hpp"

#include <algorithm>
#include <cmath>

namespace scanrl {

EpisodeState episode_reset(const EnvConfig& cfg, const ProcessedImage& image) {
    EpisodeState state;
    state.cfg = cfg;
    state.image = &image;
    state.position = {static_cast<float>(cfg.width - 1) / 2.0f, static_cast<float>(cfg.height - 1) / 2.0f};
    state.step_index = 0;
    return state;
}

std::pair<std::vector<float>, bool> episode_step(EpisodeState& state, std::array<float, 2> action) {
    const float norm = std::sqrt(action[0] * action[0] + action[1] * action[1]);
    if (std::abs(norm - 1.0f) > 1e-6f) {
        throw ContractError("episode_step: action norm " + std::to_string(norm) + " is not unit");
    }
    if (state.step_index >= state.cfg.segments) {
        throw UsageError("episode_step: episode already has " + std::to_string(state.cfg.segments) + " steps");
    }

    const EnvConfig& cfg = state.cfg;
    const float d = cfg.probe_spacing;
    std::vector<float> obs(cfg.samples_per_segment);
    std::vector<Vec2> positions(cfg.samples_per_segment);
    bool over_edge = false;
    for (int k = 1; k <= cfg.samples_per_segment; k++) {
        const Vec2 p{state.position.x + k * d * action[0], state.position.y + k * d * action[1]};
        positions[k - 1] = p;
        const int ix = nearest_pixel(p.x);
        const int iy = nearest_pixel(p.y);
        if (ix < 0 || ix >= cfg.width || iy < 0 || iy >= cfg.height) over_edge = true;
        const int cx = std::clamp(ix, 0, cfg.width - 1);
        const int cy = std::clamp(iy, 0, cfg.height - 1);
        obs[k - 1] = state.image->raw_norm[cy * cfg.width + cx];
    }

    state.position = positions.back();
    state.step_index += 1;
    state.history.actions.push_back(action);
    state.history.observations.push_back(obs);
    state.history.over_edge.push_back(over_edge ? 1 : 0);
    state.history.probe_positions.push_back(std::move(positions));
    return {std::move(obs), over_edge};
}

PartialScan rasterize_scan(const ScanHistory& history, const EnvConfig& cfg) {
    if (history.steps() != cfg.segments) {
        throw UsageError("rasterize_scan: history has " + std::to_string(history.steps()) + " steps, need " +
                         std::to_string(cfg.segments));
    }
    PartialScan scan;
    scan.height = cfg.height;
    scan.width = cfg.width;
    scan.values.assign(static_cast<size_t>(cfg.height) * cfg.width, 0.0f);
    scan.mask.assign(scan.values.size(), 0.0f);
    for (int t = 0; t < cfg.segments; t++) {
        for (int k = 0; k < cfg.samples_per_segment; k++) {
            const Vec2& p = history.probe_positions[t][k];
            const int cx = std::clamp(nearest_pixel(p.x), 0, cfg.width - 1);
            const int cy = std::clamp(nearest_pixel(p.y), 0, cfg.height - 1);
            scan.values[cy * cfg.width + cx] = history.observations[t][k];
            scan.mask[cy * cfg.width + cx] = 1.0f;
        }
    }
    return scan;
}

void dihedral_map_pixel(int index, int n, int x, int y, int& out_x, int& out_y) {
    if (index < 0 || index > 7) throw ConfigError("dihedral: index " + std::to_string(index) + " not in 0..7");
    if (index >= 4) {
        x = n - 1 - x;  // mirror across the vertical axis first
        index -= 4;
    }
    for (int r = 0; r < index; r++) {
        const int nx = n - 1 - y;
        const int ny = x;
        x = nx;
        y = ny;
    }
    out_x = x;
    out_y = y;
}

std::vector<float> dihedral_raster(const std::vector<float>& img, int n, int index) {
    if (static_cast<std::int64_t>(img.size()) != static_cast<std::int64_t>(n) * n) {
        throw ConfigError("dihedral: raster is not " + std::to_string(n) + "x" + std::to_string(n));
    }
    std::vector<float> out(img.size());
    for (int y = 0; y < n; y++) {
        for (int x = 0; x < n; x++) {
            int ox, oy;
            dihedral_map_pixel(index, n, x, y, ox, oy);
            out[oy * n + ox] = img[y * n + x];
        }
    }
    return out;
}

std::pair<PartialScan, std::vector<float>> augment_dihedral(const PartialScan& scan,
                                                            const std::vector<float>& target, int index) {
    if (scan.height != scan.width) {
        throw ConfigError("augment_dihedral: raster " + std::to_string(scan.height) + "x" +
                          std::to_string(scan.width) + " is not square");
    }
    const int n = scan.height;
    PartialScan out;
    out.height = out.width = n;
    out.values = dihedral_raster(scan.values, n, index);
    out.mask = dihedral_raster(scan.mask, n, index);
    return {std::move(out), dihedral_raster(target, n, index)};
}

}  // namespace scanrl
