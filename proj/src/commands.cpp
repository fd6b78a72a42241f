#include "scanrl/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scanrl/checkpoint.hpp"
#include "scanrl/paths.hpp"

namespace scanrl {

namespace {

namespace fs = std::filesystem;

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError(path + ": cannot open for writing");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw FormatError(path + ": write failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError(path + ": rename failed");
}

std::string checkpoint_name(std::uint64_t iteration) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%08llu.asc", static_cast<unsigned long long>(iteration));
    return buf;
}

Trainer make_trainer(const RunConfig& cfg, bool load_ckpt) {
    if (cfg.dataset_path.empty()) throw ConfigError("no dataset configured (key \"dataset\")");
    ImageDataset ds = load_dataset(cfg.dataset_path);
    Trainer trainer(cfg.train, std::move(ds));
    if (load_ckpt) {
        if (cfg.checkpoint_path.empty()) throw ConfigError("no checkpoint configured (key \"checkpoint\")");
        load_checkpoint(trainer, cfg.checkpoint_path);
    }
    return trainer;
}

}  // namespace

unsigned char pgm_byte(float v) {
    const long mapped = std::lround((static_cast<double>(v) + 1.0) / 2.0 * 255.0);
    return static_cast<unsigned char>(std::clamp(mapped, 0L, 255L));
}

std::vector<unsigned char> pgm_bytes(const std::vector<float>& raster, int height, int width) {
    std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + raster.size());
    for (float v : raster) out.push_back(pgm_byte(v));
    return out;
}

void write_pgm(const std::vector<float>& raster, int height, int width, const std::string& path) {
    const std::vector<unsigned char> bytes = pgm_bytes(raster, height, width);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

void cmd_synth(int count, int height, int width, std::uint64_t seed, const std::string& out_path) {
    if (count < 1) throw UsageError("synth: count must be >= 1, got " + std::to_string(count));
    ImageDataset ds = synth_dataset(count, height, width, seed);
    save_dataset(ds, out_path);
}

std::string csv_header() {
    return "iteration,gen_loss,critic_loss,actor_obj,l_avg,lr_gen,noise_scale,test_mse_mean,test_mse_std";
}

void cmd_train(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    Trainer trainer = make_trainer(cfg, false);

    std::string log = echo_config(cfg);
    if (!cfg.checkpoint_path.empty()) {
        load_checkpoint(trainer, cfg.checkpoint_path);
        log += "resumed from " + cfg.checkpoint_path + " at iteration " + std::to_string(trainer.iteration()) +
               "\n";
    }

    const std::uint64_t M = cfg.train.iterations;
    const std::uint64_t eval_cadence = std::max<std::uint64_t>(M / 100, 1);
    const std::uint64_t ckpt_cadence = std::max<std::uint64_t>(M / 10, 1);

    std::string csv = csv_header() + "\n";
    while (!trainer.finished()) {
        Trainer::IterationRecord rec = trainer.run_iteration(eval_cadence);
        csv += std::to_string(rec.iteration) + ",";
        if (rec.updated) {
            csv += fmt_float(rec.gen_loss) + "," + fmt_float(rec.critic_loss) + "," + fmt_float(rec.actor_obj) +
                   "," + fmt_float(rec.l_avg) + ",";
        } else {
            csv += ",,,,";
        }
        csv += fmt_float(rec.lr_gen) + "," + fmt_float(rec.noise_scale) + ",";
        if (rec.evaluated) {
            csv += fmt_double(rec.test.mean) + "," + fmt_double(rec.test.std_dev);
        } else {
            csv += ",";
        }
        csv += "\n";
        for (const std::string& w : rec.warnings) {
            log += "iteration " + std::to_string(rec.iteration) + ": " + w + "\n";
        }
        if (rec.iteration % ckpt_cadence == 0) {
            save_checkpoint(trainer, (fs::path(cfg.out_dir) / checkpoint_name(rec.iteration)).string());
        }
    }
    save_checkpoint(trainer, (fs::path(cfg.out_dir) / "checkpoint_final.asc").string());
    write_file_atomic((fs::path(cfg.out_dir) / "learning_curve.csv").string(), csv);
    log += "finished at iteration " + std::to_string(trainer.iteration()) + "\n";
    write_file_atomic((fs::path(cfg.out_dir) / "run.log").string(), log);
}

EvalResult cmd_eval(const RunConfig& cfg, const std::string& mode) {
    fs::create_directories(cfg.out_dir);
    Trainer trainer = make_trainer(cfg, true);

    EvalReport rep;
    std::string tag = mode;
    if (mode == "adaptive") {
        rep = trainer.evaluate_adaptive();
    } else if (mode == "spiral") {
        rep = trainer.evaluate_static(spiral_path(cfg.train.env));
    } else if (mode.rfind("waypoints:", 0) == 0) {
        const std::string file = mode.substr(10);
        rep = trainer.evaluate_static(fixed_path_from_waypoints(file, cfg.train.env));
        tag = "waypoints";
    } else {
        throw UsageError("eval: mode must be adaptive, spiral or waypoints:PATH, got \"" + mode + "\"");
    }

    const std::string line = fmt_double(rep.mean) + "," + fmt_double(rep.std_dev) + "," +
                             std::to_string(rep.count);
    std::printf("%s\n", line.c_str());
    write_file_atomic((fs::path(cfg.out_dir) / ("eval_" + tag + ".csv")).string(), "mean,std,count\n" + line + "\n");

    EvalResult out;
    out.mode = mode;
    out.mean = rep.mean;
    out.std_dev = rep.std_dev;
    out.count = rep.count;
    return out;
}

void cmd_render(const RunConfig& cfg, int image_index) {
    fs::create_directories(cfg.out_dir);
    Trainer trainer = make_trainer(cfg, true);
    if (image_index < 0 || image_index >= trainer.test_split().count()) {
        throw UsageError("render: image index " + std::to_string(image_index) + " outside test split of " +
                         std::to_string(trainer.test_split().count()));
    }

    const EnvConfig& env = cfg.train.env;
    const ProcessedImage& img = trainer.processed_test(image_index);
    std::vector<ScanHistory> hist = rollout_deterministic(trainer.nets().actor, {&img}, env);
    PartialScan scan = rasterize_scan(hist[0], env);

    // unsampled pixels render as byte 0 rather than mid-gray
    {
        std::vector<unsigned char> bytes;
        std::string header = "P5\n" + std::to_string(env.width) + " " + std::to_string(env.height) + "\n255\n";
        bytes.assign(header.begin(), header.end());
        for (size_t i = 0; i < scan.values.size(); i++) {
            bytes.push_back(scan.mask[i] > 0.5f ? pgm_byte(scan.values[i]) : 0);
        }
        write_file_atomic((fs::path(cfg.out_dir) / "scan.pgm").string(),
                          std::string(bytes.begin(), bytes.end()));
    }

    Tensor<float> in({1, 2, env.height, env.width});
    std::copy(scan.values.begin(), scan.values.end(), in.data().begin());
    std::copy(scan.mask.begin(), scan.mask.end(), in.data().begin() + scan.values.size());
    Tensor<float> out = trainer.nets().generator.forward(nullptr, in, NetMode::infer);
    std::vector<float> completion(out.data().begin(), out.data().end());
    write_pgm(completion, env.height, env.width, (fs::path(cfg.out_dir) / "completion.pgm").string());
    write_pgm(img.target_blur, env.height, env.width, (fs::path(cfg.out_dir) / "target.pgm").string());
}

}  // namespace scanrl
