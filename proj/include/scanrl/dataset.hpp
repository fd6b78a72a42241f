#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scanrl/errors.hpp"

namespace scanrl {

// A stack of equally sized single-channel float rasters, row-major.
struct ImageDataset {
    int height = 0;
    int width = 0;
    std::vector<std::vector<float>> images;

    int count() const { return static_cast<int>(images.size()); }
};

// Sampling source plus generator target for one image: raw_norm is the
// image linearly mapped onto [-1, 1] (all zeros when the source is
// constant); target_blur is its 5x5 Gaussian blur (sigma 2.5 px,
// zero-padded).
struct ProcessedImage {
    int height = 0;
    int width = 0;
    std::vector<float> raw_norm;
    std::vector<float> target_blur;
};

// WEM1 container: magic "WEM1"; u32le count, height, width; then
// count*height*width IEEE-754 32-bit little-endian floats, images
// concatenated row-major.
ImageDataset load_dataset(const std::string& path);
void save_dataset(const ImageDataset& ds, const std::string& path);

// Seeded mixture of Gaussian blobs, periodic bump lattices, uniform
// plateaus and pixel noise; deterministic per (count, h, w, seed).
ImageDataset synth_dataset(int count, int height, int width, std::uint64_t seed);

ProcessedImage preprocess(const std::vector<float>& image, int height, int width);
ProcessedImage preprocess(const ImageDataset& ds, int index);

// The normalized 5x5 blur kernel (row-major), exposed for verification.
std::vector<float> gaussian5x5_kernel();

// First floor(train_fraction * count) images go to the train side, the rest
// to the test side, order preserved (no shuffling).
std::pair<ImageDataset, ImageDataset> split_dataset(const ImageDataset& ds, double train_fraction = 0.8);

}  // namespace scanrl
