#include "scanrl/paths.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace scanrl {

namespace {

// Angles of n spiral points with chord spacing d on r = pitch * phi,
// starting at the center. Returns the final radius.
double spiral_angles(double pitch, double d, int n, std::vector<double>* out_phi) {
    std::vector<double> phi(n);
    phi[0] = 0.0;
    for (int k = 1; k < n; k++) {
        const double p0 = phi[k - 1];
        const double x0 = pitch * p0 * std::cos(p0);
        const double y0 = pitch * p0 * std::sin(p0);
        auto chord = [&](double p) {
            const double x = pitch * p * std::cos(p);
            const double y = pitch * p * std::sin(p);
            return std::hypot(x - x0, y - y0) - d;
        };
        // bracket the next crossing, then bisect
        double step = d / (pitch * std::sqrt(1.0 + p0 * p0));
        double hi = p0 + step;
        while (chord(hi) < 0.0) hi = p0 + (hi - p0) * 2.0;
        double lo = p0;
        for (int it = 0; it < 80; it++) {
            const double mid = 0.5 * (lo + hi);
            (chord(mid) < 0.0 ? lo : hi) = mid;
        }
        phi[k] = 0.5 * (lo + hi);
    }
    if (out_phi) *out_phi = phi;
    return pitch * phi[n - 1];
}

}  // namespace

std::vector<Vec2> spiral_path(const EnvConfig& cfg) {
    const int n = cfg.probes_per_episode();
    const double d = cfg.probe_spacing;
    const double target_r = std::min(cfg.height, cfg.width) / 2.0 - 1.0;
    const double cx = (cfg.width - 1) / 2.0;
    const double cy = (cfg.height - 1) / 2.0;

    // final radius grows monotonically with the pitch; bisect to land on
    // target_r
    double lo = 1e-4, hi = target_r;
    while (spiral_angles(hi, d, n, nullptr) < target_r) hi *= 2.0;
    for (int it = 0; it < 60; it++) {
        const double mid = 0.5 * (lo + hi);
        (spiral_angles(mid, d, n, nullptr) < target_r ? lo : hi) = mid;
    }
    const double pitch = 0.5 * (lo + hi);
    std::vector<double> phi;
    spiral_angles(pitch, d, n, &phi);

    std::vector<Vec2> out(n);
    for (int k = 0; k < n; k++) {
        out[k] = {static_cast<float>(cx + pitch * phi[k] * std::cos(phi[k])),
                  static_cast<float>(cy + pitch * phi[k] * std::sin(phi[k]))};
    }
    return out;
}

std::vector<Vec2> fixed_path_from_waypoints(const std::string& path, const EnvConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw FormatError("waypoints " + path + ": cannot open");

    std::vector<Vec2> waypoints;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        double x, y;
        if (!(ls >> x)) {
            std::string junk;
            std::istringstream probe(line);
            if (probe >> junk) {
                throw FormatError("waypoints " + path + ": parse error at line " + std::to_string(line_no));
            }
            continue;  // blank or comment-only line
        }
        std::string trailing;
        if (!(ls >> y) || (ls >> trailing)) {
            throw FormatError("waypoints " + path + ": parse error at line " + std::to_string(line_no));
        }
        waypoints.push_back({static_cast<float>(x), static_cast<float>(y)});
    }
    if (waypoints.size() < 2) {
        throw ConfigError("waypoints " + path + ": need at least 2 waypoints, got " +
                          std::to_string(waypoints.size()));
    }

    std::vector<double> seg_len(waypoints.size() - 1);
    double total = 0.0;
    for (size_t i = 0; i + 1 < waypoints.size(); i++) {
        seg_len[i] = std::hypot(double(waypoints[i + 1].x) - waypoints[i].x,
                                double(waypoints[i + 1].y) - waypoints[i].y);
        total += seg_len[i];
    }

    const int n = cfg.probes_per_episode();
    const double d = cfg.probe_spacing;
    if (n * d > total + 1e-9) {
        throw ConfigError("waypoints " + path + ": path length " + std::to_string(total) + " px is shorter than " +
                          std::to_string(n) + " probes at spacing " + std::to_string(d));
    }

    std::vector<Vec2> out(n);
    size_t seg = 0;
    double seg_start = 0.0;
    for (int k = 1; k <= n; k++) {
        const double s = k * d;
        while (seg + 1 < seg_len.size() && s > seg_start + seg_len[seg]) seg_start += seg_len[seg++];
        const double frac = seg_len[seg] > 0.0 ? (s - seg_start) / seg_len[seg] : 0.0;
        out[k - 1] = {static_cast<float>(waypoints[seg].x + frac * (waypoints[seg + 1].x - waypoints[seg].x)),
                      static_cast<float>(waypoints[seg].y + frac * (waypoints[seg + 1].y - waypoints[seg].y))};
    }
    return out;
}

PartialScan scan_from_positions(const std::vector<Vec2>& positions, const ProcessedImage& image,
                                const EnvConfig& cfg) {
    PartialScan scan;
    scan.height = cfg.height;
    scan.width = cfg.width;
    scan.values.assign(static_cast<size_t>(cfg.height) * cfg.width, 0.0f);
    scan.mask.assign(scan.values.size(), 0.0f);
    for (const Vec2& p : positions) {
        const int cx = std::clamp(nearest_pixel(p.x), 0, cfg.width - 1);
        const int cy = std::clamp(nearest_pixel(p.y), 0, cfg.height - 1);
        scan.values[cy * cfg.width + cx] = image.raw_norm[cy * cfg.width + cx];
        scan.mask[cy * cfg.width + cx] = 1.0f;
    }
    return scan;
}

}  // namespace scanrl
