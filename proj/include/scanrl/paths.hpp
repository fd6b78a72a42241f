#pragma once

#include <string>
#include <vector>

#include "scanrl/scan_env.hpp"

namespace scanrl {

// Archimedean spiral from the image center, stepped so consecutive probes
// are probe_spacing apart, with the pitch solved so the outermost probe
// radius is min(h, w)/2 - 1. Yields exactly segments * samples_per_segment
// positions, all strictly inside the image.
std::vector<Vec2> spiral_path(const EnvConfig& cfg);

// Waypoint file: UTF-8 lines "x y", '#' starts a comment. The polyline is
// resampled at spacing probe_spacing into exactly segments *
// samples_per_segment probes (probe k sits at arc length k * spacing).
std::vector<Vec2> fixed_path_from_waypoints(const std::string& path, const EnvConfig& cfg);

// Builds a PartialScan by sampling raw_norm at the clamped nearest pixels of
// the given positions; the same coverage accounting as an episode scan.
PartialScan scan_from_positions(const std::vector<Vec2>& positions, const ProcessedImage& image,
                                const EnvConfig& cfg);

}  // namespace scanrl
