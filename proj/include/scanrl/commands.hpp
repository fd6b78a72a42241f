#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanrl/run_config.hpp"

namespace scanrl {

// Binary PGM (P5, maxval 255) of a [-1, 1] raster: round((v+1)/2*255),
// clamped. unsampled-pixel bytes in scan renders are 0.
std::vector<unsigned char> pgm_bytes(const std::vector<float>& raster, int height, int width);
unsigned char pgm_byte(float v);
void write_pgm(const std::vector<float>& raster, int height, int width, const std::string& path);

// Writes a synthetic WEM1 dataset.
void cmd_synth(int count, int height, int width, std::uint64_t seed, const std::string& out_path);

// Trains per the run configuration: learning_curve.csv, periodic and final
// checkpoints, and run.log land in out_dir. A checkpoint path resumes from
// that snapshot.
void cmd_train(const RunConfig& cfg);

struct EvalResult {
    std::string mode;
    double mean = 0.0;
    double std_dev = 0.0;
    int count = 0;
};

// Per-image generator MSE over the test split under mode "adaptive",
// "spiral" or "waypoints:<path>"; prints and writes "mean,std,count".
EvalResult cmd_eval(const RunConfig& cfg, const std::string& mode);

// Emits scan.pgm, completion.pgm and target.pgm for one test-split image.
void cmd_render(const RunConfig& cfg, int image_index);

// CSV row assembly shared with the tests. Test columns are empty off
// evaluation iterations.
std::string csv_header();

}  // namespace scanrl
