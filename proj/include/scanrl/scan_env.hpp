#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "scanrl/dataset.hpp"
#include "scanrl/errors.hpp"

namespace scanrl {

struct Vec2 {
    float x = 0.0f;
    float y = 0.0f;
};

struct EnvConfig {
    int segments = 20;             // straight path segments per episode (T)
    int samples_per_segment = 20;  // probing positions per segment
    float probe_spacing = static_cast<float>(std::sqrt(2.0));  // d, in px
    int height = 96;
    int width = 96;
    float over_edge_penalty = 0.1f;  // E_t

    int probes_per_episode() const { return segments * samples_per_segment; }
};

// One POMDP episode: per step the unit action, the observed sample values,
// whether any nominal probe left the image, and the continuous (unclamped)
// probing positions. Step t+1's first nominal position continues from step
// t's last one.
struct ScanHistory {
    std::vector<std::array<float, 2>> actions;
    std::vector<std::vector<float>> observations;
    std::vector<std::uint8_t> over_edge;
    std::vector<std::vector<Vec2>> probe_positions;

    int steps() const { return static_cast<int>(actions.size()); }
};

// 2-channel raster built from a history: sampled values (0 where unsampled)
// and a binary mask of visited pixels.
struct PartialScan {
    int height = 0;
    int width = 0;
    std::vector<float> values;
    std::vector<float> mask;
};

struct EpisodeState {
    EnvConfig cfg;
    const ProcessedImage* image = nullptr;
    Vec2 position;
    int step_index = 0;
    ScanHistory history;

    bool done() const { return step_index >= cfg.segments; }
};

// Nearest-pixel index for a continuous coordinate: floor(v + 0.5), ties
// rounding up.
inline int nearest_pixel(float v) { return static_cast<int>(std::floor(v + 0.5f)); }

// Probe starts from the middle of the image, ((w-1)/2, (h-1)/2).
EpisodeState episode_reset(const EnvConfig& cfg, const ProcessedImage& image);

// Executes one segment: nominal positions pos + k*d*action for
// k = 1..samples_per_segment, sampling raw_norm at clamped nearest pixels.
// over_edge reports any pre-clamp pixel index outside the image. The probe
// continues from the last nominal (unclamped) position.
std::pair<std::vector<float>, bool> episode_step(EpisodeState& state, std::array<float, 2> action);

PartialScan rasterize_scan(const ScanHistory& history, const EnvConfig& cfg);

// Dihedral-group element applied to a square raster: index 0..3 rotates by
// 90 degrees index times, 4..7 mirrors first and then rotates.
void dihedral_map_pixel(int index, int n, int x, int y, int& out_x, int& out_y);
std::vector<float> dihedral_raster(const std::vector<float>& img, int n, int index);

std::pair<PartialScan, std::vector<float>> augment_dihedral(const PartialScan& scan,
                                                            const std::vector<float>& target, int index);

}  // namespace scanrl
