#include <CLI11.hpp>
#include <cstdio>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "scanrl/commands.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string preset;
    std::string dataset;
    std::string out_dir;
    std::string checkpoint;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* app, CommonFlags& flags) {
    app->add_option("--config", flags.config_path, "key = value configuration file");
    app->add_option("--preset", flags.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--dataset", flags.dataset, "WEM1 dataset file");
    app->add_option("--out", flags.out_dir, "output directory");
    app->add_option("--checkpoint", flags.checkpoint, "checkpoint file");
    app->add_option_function<std::uint64_t>(
           "--seed", [&flags](const std::uint64_t& v) {
               flags.seed = v;
               flags.seed_set = true;
           },
           "RNG seed");
}

scanrl::RunConfig resolve(const CommonFlags& flags) {
    scanrl::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = scanrl::parse_config_file(flags.config_path);
    if (!flags.preset.empty()) scanrl::apply_preset(cfg, flags.preset);
    if (flags.seed_set) cfg.train.seed = flags.seed;
    if (!flags.dataset.empty()) cfg.dataset_path = flags.dataset;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.checkpoint.empty()) cfg.checkpoint_path = flags.checkpoint;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // large activation buffers churn every iteration; keep them on the heap
    // instead of round-tripping through mmap
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Adaptive sparse-scan training and evaluation toolkit"};
    app.require_subcommand(1);

    // synth
    int synth_count = 0, synth_h = 96, synth_w = 96;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    CLI::App* synth = app.add_subcommand("synth", "write a synthetic WEM1 dataset");
    synth->add_option("--count", synth_count, "number of images")->required();
    synth->add_option("--height", synth_h, "image height");
    synth->add_option("--width", synth_w, "image width");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--out", synth_out, "output WEM1 path")->required();

    CommonFlags train_flags;
    CLI::App* train = app.add_subcommand("train", "train the adaptive scan system");
    add_common(train, train_flags);

    CommonFlags eval_flags;
    std::string eval_mode = "adaptive";
    CLI::App* eval = app.add_subcommand("eval", "test-set evaluation of a checkpoint");
    add_common(eval, eval_flags);
    eval->add_option("--mode", eval_mode, "adaptive, spiral or waypoints:PATH");

    CommonFlags render_flags;
    int image_index = 0;
    CLI::App* render = app.add_subcommand("render", "render scan, completion and target as PGM");
    add_common(render, render_flags);
    render->add_option("--image-index", image_index, "index into the test split");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            scanrl::cmd_synth(synth_count, synth_h, synth_w, synth_seed, synth_out);
        } else if (train->parsed()) {
            scanrl::cmd_train(resolve(train_flags));
        } else if (eval->parsed()) {
            scanrl::cmd_eval(resolve(eval_flags), eval_mode);
        } else if (render->parsed()) {
            scanrl::cmd_render(resolve(render_flags), image_index);
        }
    } catch (const scanrl::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
