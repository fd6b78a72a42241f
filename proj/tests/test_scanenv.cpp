#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "scanrl/dataset.hpp"
#include "scanrl/paths.hpp"
#include "scanrl/rng.hpp"
#include "scanrl/scan_env.hpp"

using namespace scanrl;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/scanrl_test_") + name;
}

ProcessedImage random_processed(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> img(static_cast<size_t>(h) * w);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 10.0));
    return preprocess(img, h, w);
}

std::array<float, 2> unit_dir(double angle) {
    return {static_cast<float>(std::cos(angle)), static_cast<float>(std::sin(angle))};
}

}  // namespace

TEST_CASE("WEM1 round-trips bit-exactly and rejects malformed files") {
    ImageDataset ds = synth_dataset(3, 96, 96, 42);
    const std::string path = temp_path("roundtrip.wem");
    save_dataset(ds, path);
    ImageDataset back = load_dataset(path);
    REQUIRE(back.count() == 3);
    CHECK(back.height == 96);
    CHECK(back.width == 96);
    for (int i = 0; i < 3; i++) {
        REQUIRE(back.images[i].size() == ds.images[i].size());
        CHECK(std::memcmp(back.images[i].data(), ds.images[i].data(), ds.images[i].size() * 4) == 0);
    }

    {
        std::ofstream bad(temp_path("badmagic.wem"), std::ios::binary);
        bad << "XXXX" << std::string(12, '\0');
    }
    CHECK_THROWS_WITH_AS(load_dataset(temp_path("badmagic.wem")), doctest::Contains("bad magic"), FormatError);

    {
        // header says 2 images, payload holds 1
        ImageDataset one;
        one.height = one.width = 4;
        one.images.push_back(std::vector<float>(16, 1.0f));
        save_dataset(one, temp_path("trunc.wem"));
        std::fstream f(temp_path("trunc.wem"), std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        const unsigned char two[4] = {2, 0, 0, 0};
        f.write(reinterpret_cast<const char*>(two), 4);
    }
    CHECK_THROWS_WITH_AS(load_dataset(temp_path("trunc.wem")), doctest::Contains("truncated"), FormatError);
}

TEST_CASE("synth_dataset determinism and variety") {
    ImageDataset a = synth_dataset(8, 48, 48, 7);
    ImageDataset b = synth_dataset(8, 48, 48, 7);
    for (int i = 0; i < 8; i++) {
        CHECK(std::memcmp(a.images[i].data(), b.images[i].data(), a.images[i].size() * 4) == 0);
    }

    ImageDataset c = synth_dataset(8, 48, 48, 8);
    bool any_diff = false;
    for (int i = 0; i < 8 && !any_diff; i++) {
        any_diff = std::memcmp(a.images[i].data(), c.images[i].data(), a.images[i].size() * 4) != 0;
    }
    CHECK(any_diff);

    for (const auto& img : a.images) {
        for (float v : img) CHECK(std::isfinite(v));
    }
    CHECK_THROWS_AS(synth_dataset(0, 48, 48, 1), ConfigError);
}

TEST_CASE("preprocess: normalization, blur kernel, degenerate input") {
    {
        std::vector<float> constant(16, 3.5f);
        ProcessedImage p = preprocess(constant, 4, 4);
        for (float v : p.raw_norm) CHECK(v == 0.0f);
        for (float v : p.target_blur) CHECK(v == 0.0f);
    }
    {
        std::vector<float> img = {10.0f, 20.0f, 15.0f, 10.0f};
        ProcessedImage p = preprocess(img, 2, 2);
        CHECK(p.raw_norm[0] == doctest::Approx(-1.0));
        CHECK(p.raw_norm[1] == doctest::Approx(1.0));
        CHECK(p.raw_norm[2] == doctest::Approx(0.0));  // midpoint maps to 0
    }
    {
        // oracle: w(i,j) ~ exp(-(i^2+j^2)/(2*2.5^2)) over offsets -2..2,
        // normalized to unit sum
        double sum = 0.0;
        for (int i = -2; i <= 2; i++) {
            for (int j = -2; j <= 2; j++) sum += std::exp(-(i * i + j * j) / 12.5);
        }
        const double center = 1.0 / sum;
        CHECK(center == doctest::Approx(0.0541).epsilon(1e-3));
        std::vector<float> kernel = gaussian5x5_kernel();
        CHECK(kernel[12] == doctest::Approx(center).epsilon(1e-6));
        double ksum = 0.0;
        for (float v : kernel) ksum += v;
        CHECK(ksum == doctest::Approx(1.0).epsilon(1e-6));
    }
    {
        ProcessedImage p = random_processed(16, 16, 3);
        float lo = 1e9f, hi = -1e9f;
        for (float v : p.raw_norm) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(lo == doctest::Approx(-1.0));
        CHECK(hi == doctest::Approx(1.0));
        // idempotent on its own raw_norm output
        ProcessedImage again = preprocess(p.raw_norm, 16, 16);
        for (size_t i = 0; i < p.raw_norm.size(); i++) {
            CHECK(again.raw_norm[i] == doctest::Approx(p.raw_norm[i]).epsilon(1e-6));
        }
        // blur of an interior pixel equals the direct 25-tap sum
        std::vector<float> kernel = gaussian5x5_kernel();
        double acc = 0.0;
        for (int dy = -2; dy <= 2; dy++) {
            for (int dx = -2; dx <= 2; dx++) {
                acc += kernel[(dy + 2) * 5 + dx + 2] * p.raw_norm[(8 + dy) * 16 + 8 + dx];
            }
        }
        CHECK(p.target_blur[8 * 16 + 8] == doctest::Approx(acc).epsilon(1e-5));
    }
    {
        std::vector<float> bad = {1.0f, std::nanf(""), 0.0f, 0.0f};
        CHECK_THROWS_AS(preprocess(bad, 2, 2), DataError);
    }
}

TEST_CASE("split_dataset keeps order at full-scale and small counts") {
    {
        ImageDataset ds;
        ds.height = ds.width = 1;
        for (int i = 0; i < 19769; i++) ds.images.push_back({static_cast<float>(i)});
        auto [train, test] = split_dataset(ds);
        CHECK(train.count() == 15815);
        CHECK(test.count() == 3954);
        CHECK(train.images.front()[0] == 0.0f);
        CHECK(test.images.front()[0] == 15815.0f);
        CHECK(test.images.back()[0] == 19768.0f);
    }
    {
        ImageDataset ds;
        ds.height = ds.width = 1;
        for (int i = 0; i < 10; i++) ds.images.push_back({static_cast<float>(i)});
        auto [train, test] = split_dataset(ds);
        CHECK(train.count() == 8);
        CHECK(test.count() == 2);
    }
    {
        ImageDataset tiny;
        tiny.height = tiny.width = 1;
        tiny.images.push_back({0.0f});
        CHECK_THROWS_AS(split_dataset(tiny), ConfigError);
    }
}

TEST_CASE("episode_reset starts from the middle of the image") {
    EnvConfig cfg;
    ProcessedImage img = random_processed(96, 96, 5);
    EpisodeState s = episode_reset(cfg, img);
    CHECK(s.position.x == doctest::Approx(47.5));
    CHECK(s.position.y == doctest::Approx(47.5));
    CHECK(s.history.steps() == 0);

    EnvConfig small;
    small.height = small.width = 3;
    ProcessedImage img3 = random_processed(3, 3, 6);
    EpisodeState s3 = episode_reset(small, img3);
    CHECK(s3.position.x == doctest::Approx(1.0));
    CHECK(s3.position.y == doctest::Approx(1.0));
}

TEST_CASE("episode_step hand geometry with d = sqrt(2)") {
    EnvConfig cfg;
    ProcessedImage img = random_processed(96, 96, 9);
    {
        EpisodeState s = episode_reset(cfg, img);
        auto [obs, over] = episode_step(s, {1.0f, 0.0f});
        CHECK_FALSE(over);
        // p_1 = (48.914, 47.5) -> pixel (49, 48)
        CHECK(nearest_pixel(s.history.probe_positions[0][0].x) == 49);
        CHECK(nearest_pixel(s.history.probe_positions[0][0].y) == 48);
        CHECK(obs[0] == img.raw_norm[48 * 96 + 49]);
        // last nominal x = 47.5 + 20*sqrt(2) ~ 75.78, inside
        CHECK(s.position.x == doctest::Approx(47.5 + 20.0 * std::sqrt(2.0)).epsilon(1e-5));
        CHECK(s.position.y == doctest::Approx(47.5));
    }
    {
        // from (94, 94) along the diagonal: p_1 = (95, 95) in bounds,
        // p_2 = (96, 96) out -> over_edge, samples clamped to (95, 95)
        EpisodeState s = episode_reset(cfg, img);
        s.position = {94.0f, 94.0f};
        const float r = static_cast<float>(std::sqrt(0.5));
        auto [obs, over] = episode_step(s, {r, r});
        CHECK(over);
        CHECK(nearest_pixel(s.history.probe_positions[0][0].x) == 95);
        CHECK(nearest_pixel(s.history.probe_positions[0][1].x) == 96);  // pre-clamp
        CHECK(obs[1] == img.raw_norm[95 * 96 + 95]);
    }
    {
        CHECK(nearest_pixel(1.4f) == 1);
        CHECK(nearest_pixel(2.6f) == 3);
    }
    {
        EpisodeState s = episode_reset(cfg, img);
        CHECK_THROWS_AS(episode_step(s, {0.5f, 0.0f}), ContractError);
        for (int t = 0; t < cfg.segments; t++) episode_step(s, {1.0f, 0.0f});
        CHECK_THROWS_AS(episode_step(s, {1.0f, 0.0f}), UsageError);
    }
}

TEST_CASE("segment chaining and environment invariants over random episodes") {
    EnvConfig cfg;
    ProcessedImage img = random_processed(96, 96, 11);
    Rng rng(123);
    for (int ep = 0; ep < 50; ep++) {
        EpisodeState s = episode_reset(cfg, img);
        for (int t = 0; t < cfg.segments; t++) {
            episode_step(s, unit_dir(rng.uniform(0.0, 2.0 * M_PI)));
        }
        // chaining: segment t+1's first nominal position continues from
        // segment t's last plus d * a_{t+1}
        for (int t = 0; t + 1 < cfg.segments; t++) {
            const Vec2& last = s.history.probe_positions[t].back();
            const Vec2& first = s.history.probe_positions[t + 1].front();
            const auto& a = s.history.actions[t + 1];
            CHECK(first.x == doctest::Approx(last.x + cfg.probe_spacing * a[0]).epsilon(1e-4));
            CHECK(first.y == doctest::Approx(last.y + cfg.probe_spacing * a[1]).epsilon(1e-4));
        }
        PartialScan scan = rasterize_scan(s.history, cfg);
        int popcount = 0;
        for (float m : scan.mask) popcount += m > 0.5f ? 1 : 0;
        CHECK(popcount <= cfg.probes_per_episode());
        // no over-edge flags -> every nominal pixel in bounds
        for (int t = 0; t < cfg.segments; t++) {
            if (s.history.over_edge[t]) continue;
            for (const Vec2& p : s.history.probe_positions[t]) {
                const int ix = nearest_pixel(p.x), iy = nearest_pixel(p.y);
                CHECK(ix >= 0);
                CHECK(ix < 96);
                CHECK(iy >= 0);
                CHECK(iy < 96);
            }
        }
    }
}

TEST_CASE("rasterize_scan coverage accounting and sampling definition") {
    EnvConfig cfg;
    ProcessedImage img = random_processed(96, 96, 13);
    EpisodeState s = episode_reset(cfg, img);
    // straight line: all 400 probes land on distinct pixels
    for (int t = 0; t < cfg.segments / 2; t++) episode_step(s, {1.0f, 0.0f});
    for (int t = 0; t < cfg.segments / 2; t++) episode_step(s, {-1.0f, 0.0f});
    PartialScan scan = rasterize_scan(s.history, cfg);
    for (int i = 0; i < 96 * 96; i++) {
        if (scan.mask[i] > 0.5f) {
            CHECK(scan.values[i] == img.raw_norm[i]);
        } else {
            CHECK(scan.values[i] == 0.0f);
        }
    }

    EpisodeState incomplete = episode_reset(cfg, img);
    episode_step(incomplete, {1.0f, 0.0f});
    CHECK_THROWS_AS(rasterize_scan(incomplete.history, cfg), UsageError);
    CHECK_THROWS_AS(rasterize_scan(ScanHistory{}, cfg), UsageError);
}

TEST_CASE("dihedral augmentation: group structure and distinctness") {
    const int n = 8;
    Rng rng(17);
    std::vector<float> img(n * n);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));

    CHECK(dihedral_raster(img, n, 0) == img);
    std::vector<float> r = img;
    for (int i = 0; i < 4; i++) r = dihedral_raster(r, n, 1);
    CHECK(r == img);

    std::vector<std::vector<float>> all;
    for (int idx = 0; idx < 8; idx++) all.push_back(dihedral_raster(img, n, idx));
    for (int i = 0; i < 8; i++) {
        for (int j = i + 1; j < 8; j++) CHECK(all[i] != all[j]);
    }

    PartialScan rect;
    rect.height = 4;
    rect.width = 6;
    rect.values.assign(24, 0.0f);
    rect.mask.assign(24, 0.0f);
    CHECK_THROWS_AS(augment_dihedral(rect, std::vector<float>(24, 0.0f), 1), ConfigError);
    PartialScan sq;
    sq.height = sq.width = 4;
    sq.values.assign(16, 0.0f);
    sq.mask.assign(16, 0.0f);
    CHECK_THROWS_AS(augment_dihedral(sq, std::vector<float>(16, 0.0f), 9), ConfigError);
}

TEST_CASE("augment_dihedral commutes with rasterize_scan") {
    EnvConfig cfg;
    cfg.height = cfg.width = 24;
    cfg.segments = 4;
    cfg.samples_per_segment = 5;
    ProcessedImage img = random_processed(24, 24, 19);
    Rng rng(21);

    EpisodeState s = episode_reset(cfg, img);
    for (int t = 0; t < cfg.segments; t++) episode_step(s, unit_dir(rng.uniform(0.0, 2.0 * M_PI)));
    PartialScan scan = rasterize_scan(s.history, cfg);

    for (int idx = 0; idx < 8; idx++) {
        auto [scan_t, target_t] = augment_dihedral(scan, img.target_blur, idx);
        // transform the image, scan along transformed pixel positions
        ProcessedImage moved;
        moved.height = moved.width = 24;
        moved.raw_norm = dihedral_raster(img.raw_norm, 24, idx);
        PartialScan direct;
        direct.height = direct.width = 24;
        direct.values.assign(scan.values.size(), 0.0f);
        direct.mask.assign(scan.mask.size(), 0.0f);
        for (int t = 0; t < cfg.segments; t++) {
            for (const Vec2& p : s.history.probe_positions[t]) {
                const int cx = std::clamp(nearest_pixel(p.x), 0, 23);
                const int cy = std::clamp(nearest_pixel(p.y), 0, 23);
                int ox, oy;
                dihedral_map_pixel(idx, 24, cx, cy, ox, oy);
                direct.values[oy * 24 + ox] = moved.raw_norm[oy * 24 + ox];
                direct.mask[oy * 24 + ox] = 1.0f;
            }
        }
        CHECK(scan_t.values == direct.values);
        CHECK(scan_t.mask == direct.mask);
        CHECK(target_t == dihedral_raster(img.target_blur, 24, idx));
    }
}

TEST_CASE("spiral path: count, spacing, radius, containment, coverage") {
    EnvConfig cfg;  // paper-preset geometry defaults
    std::vector<Vec2> path = spiral_path(cfg);
    REQUIRE(static_cast<int>(path.size()) == 400);

    for (size_t i = 0; i + 1 < path.size(); i++) {
        const double dist = std::hypot(double(path[i + 1].x) - path[i].x, double(path[i + 1].y) - path[i].y);
        CHECK(std::abs(dist - std::sqrt(2.0)) < 0.05);
    }
    for (const Vec2& p : path) {
        CHECK(p.x > 0.0f);
        CHECK(p.x < 95.0f);
        CHECK(p.y > 0.0f);
        CHECK(p.y < 95.0f);
    }
    const double last_r = std::hypot(path.back().x - 47.5, path.back().y - 47.5);
    CHECK(last_r == doctest::Approx(47.0).epsilon(1e-6));

    // full coverage: all 400 probes hit distinct pixels
    ProcessedImage img = random_processed(96, 96, 23);
    PartialScan scan = scan_from_positions(path, img, cfg);
    int popcount = 0;
    for (float m : scan.mask) popcount += m > 0.5f ? 1 : 0;
    CHECK(popcount == 400);
}

TEST_CASE("waypoint paths resample at probe spacing") {
    EnvConfig cfg;
    cfg.segments = 4;
    cfg.samples_per_segment = 10;  // 40 probes
    const std::string path = temp_path("waypoints.txt");
    {
        std::ofstream f(path);
        f << "# straight run up the y axis\n";
        f << "0 0\n";
        f << "0 56.57\n";
    }
    std::vector<Vec2> probes = fixed_path_from_waypoints(path, cfg);
    REQUIRE(static_cast<int>(probes.size()) == 40);
    for (int k = 0; k < 40; k++) {
        CHECK(probes[k].x == doctest::Approx(0.0));
        CHECK(probes[k].y == doctest::Approx((k + 1) * std::sqrt(2.0)).epsilon(1e-5));
    }

    {
        std::ofstream f(temp_path("way_single.txt"));
        f << "1 1\n";
    }
    CHECK_THROWS_AS(fixed_path_from_waypoints(temp_path("way_single.txt"), cfg), ConfigError);

    {
        std::ofstream f(temp_path("way_bad.txt"));
        f << "a b\n";
    }
    CHECK_THROWS_WITH_AS(fixed_path_from_waypoints(temp_path("way_bad.txt"), cfg),
                         doctest::Contains("line 1"), FormatError);

    {
        std::ofstream f(temp_path("way_short.txt"));
        f << "0 0\n0 10\n";
    }
    CHECK_THROWS_AS(fixed_path_from_waypoints(temp_path("way_short.txt"), cfg), ConfigError);
}
