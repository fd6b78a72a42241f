#include "scanrl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "scanrl/rng.hpp"

namespace scanrl {

namespace {

constexpr char kMagic[4] = {'W', 'E', 'M', '1'};

std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

ImageDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("WEM1 " + path + ": cannot open");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("WEM1 " + path + ": bad magic at byte 0");
    }
    if (bytes.size() < 16) {
        throw FormatError("WEM1 " + path + ": truncated header at byte " + std::to_string(bytes.size()));
    }
    const std::uint32_t count = read_u32le(bytes.data() + 4);
    const std::uint32_t height = read_u32le(bytes.data() + 8);
    const std::uint32_t width = read_u32le(bytes.data() + 12);
    if (count == 0) throw FormatError("WEM1 " + path + ": zero image count at byte 4");
    if (height == 0 || width == 0) throw FormatError("WEM1 " + path + ": zero extent at byte 8");

    const std::uint64_t per_image = static_cast<std::uint64_t>(height) * width;
    const std::uint64_t want = 16 + count * per_image * 4;
    if (bytes.size() < want) {
        throw FormatError("WEM1 " + path + ": truncated payload at byte " + std::to_string(bytes.size()) +
                          " (expected " + std::to_string(want) + ")");
    }

    ImageDataset ds;
    ds.height = static_cast<int>(height);
    ds.width = static_cast<int>(width);
    ds.images.resize(count);
    const unsigned char* p = bytes.data() + 16;
    for (std::uint32_t i = 0; i < count; i++) {
        ds.images[i].resize(per_image);
        std::memcpy(ds.images[i].data(), p, per_image * 4);
        p += per_image * 4;
    }
    return ds;
}

void save_dataset(const ImageDataset& ds, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("WEM1 " + path + ": cannot open for writing");
        out.write(kMagic, 4);
        write_u32le(out, static_cast<std::uint32_t>(ds.count()));
        write_u32le(out, static_cast<std::uint32_t>(ds.height));
        write_u32le(out, static_cast<std::uint32_t>(ds.width));
        for (const auto& img : ds.images) {
            out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size() * 4));
        }
        if (!out) throw FormatError("WEM1 " + path + ": write failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw FormatError("WEM1 " + path + ": rename failed");
    }
}

ImageDataset synth_dataset(int count, int height, int width, std::uint64_t seed) {
    if (count < 1) throw ConfigError("synth_dataset: count must be >= 1, got " + std::to_string(count));
    Rng rng(seed);
    ImageDataset ds;
    ds.height = height;
    ds.width = width;
    ds.images.reserve(count);

    for (int n = 0; n < count; n++) {
        std::vector<float> img(static_cast<size_t>(height) * width,
                               static_cast<float>(rng.uniform(-0.2, 0.2)));

        const double motif = rng.uniform();
        const bool lattice = motif < 0.45 || motif >= 0.8;
        const bool blobs = motif >= 0.45;

        if (lattice) {
            // regular-atom motif: Gaussian bumps on a rotated lattice
            const double spacing = rng.uniform(6.0, 14.0);
            const double theta = rng.uniform(0.0, M_PI / 2.0);
            const double ct = std::cos(theta), st = std::sin(theta);
            const double px = rng.uniform(0.0, spacing), py = rng.uniform(0.0, spacing);
            const double sigma = rng.uniform(1.0, 2.5);
            const double amp = rng.uniform(0.4, 1.0);
            const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for (int y = 0; y < height; y++) {
                for (int x = 0; x < width; x++) {
                    const double u = ct * x + st * y + px;
                    const double v = -st * x + ct * y + py;
                    const double du = u - spacing * std::round(u / spacing);
                    const double dv = v - spacing * std::round(v / spacing);
                    img[y * width + x] += static_cast<float>(amp * std::exp(-(du * du + dv * dv) * inv2s2));
                }
            }
        }
        if (blobs) {
            const int k = 2 + static_cast<int>(rng.below(5));
            for (int b = 0; b < k; b++) {
                const double cx = rng.uniform(0.0, width - 1.0);
                const double cy = rng.uniform(0.0, height - 1.0);
                const double sigma = rng.uniform(5.0, 20.0);
                const double amp = rng.uniform(-1.0, 1.0);
                const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
                for (int y = 0; y < height; y++) {
                    for (int x = 0; x < width; x++) {
                        const double dx = x - cx, dy = y - cy;
                        img[y * width + x] += static_cast<float>(amp * std::exp(-(dx * dx + dy * dy) * inv2s2));
                    }
                }
            }
        }
        if (rng.uniform() < 0.5) {
            // uniform plateau on one side of a random line
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            const double nx = std::cos(ang), ny = std::sin(ang);
            const double off = rng.uniform(0.3, 0.7) * (nx * (width - 1) + ny * (height - 1));
            const float level = static_cast<float>(rng.uniform(-0.8, 0.8));
            for (int y = 0; y < height; y++) {
                for (int x = 0; x < width; x++) {
                    if (nx * x + ny * y > off) img[y * width + x] = level;
                }
            }
        }

        const double noise = rng.uniform(0.01, 0.08);
        for (auto& v : img) v += static_cast<float>(noise * rng.gaussian());
        ds.images.push_back(std::move(img));
    }
    return ds;
}

std::vector<float> gaussian5x5_kernel() {
    std::vector<float> k(25);
    double sum = 0.0;
    for (int i = -2; i <= 2; i++) {
        for (int j = -2; j <= 2; j++) {
            const double w = std::exp(-(i * i + j * j) / (2.0 * 2.5 * 2.5));
            k[(i + 2) * 5 + (j + 2)] = static_cast<float>(w);
            sum += w;
        }
    }
    for (auto& v : k) v = static_cast<float>(v / sum);
    return k;
}

ProcessedImage preprocess(const std::vector<float>& image, int height, int width) {
    if (static_cast<std::int64_t>(image.size()) != static_cast<std::int64_t>(height) * width) {
        throw DimensionError("preprocess: image size " + std::to_string(image.size()) + " != " +
                             std::to_string(height) + "x" + std::to_string(width));
    }
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : image) {
        if (!std::isfinite(v)) throw DataError("preprocess: non-finite pixel value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    ProcessedImage out;
    out.height = height;
    out.width = width;
    out.raw_norm.assign(image.size(), 0.0f);
    out.target_blur.assign(image.size(), 0.0f);
    if (lo == hi) return out;  // constant image -> all zeros

    const float scale = 2.0f / (hi - lo);
    for (size_t i = 0; i < image.size(); i++) out.raw_norm[i] = (image[i] - lo) * scale - 1.0f;

    static const std::vector<float> kernel = gaussian5x5_kernel();
    for (int y = 0; y < height; y++) {
        for (int x = 0; x < width; x++) {
            float acc = 0.0f;
            for (int dy = -2; dy <= 2; dy++) {
                const int yy = y + dy;
                if (yy < 0 || yy >= height) continue;
                for (int dx = -2; dx <= 2; dx++) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= width) continue;
                    acc += kernel[(dy + 2) * 5 + (dx + 2)] * out.raw_norm[yy * width + xx];
                }
            }
            out.target_blur[y * width + x] = acc;
        }
    }
    return out;
}

ProcessedImage preprocess(const ImageDataset& ds, int index) {
    return preprocess(ds.images.at(index), ds.height, ds.width);
}

std::pair<ImageDataset, ImageDataset> split_dataset(const ImageDataset& ds, double train_fraction) {
    if (ds.count() < 2) throw ConfigError("split_dataset: need at least 2 images, got " + std::to_string(ds.count()));
    const int n_train = static_cast<int>(std::floor(train_fraction * ds.count()));
    if (n_train < 1 || n_train >= ds.count()) {
        throw ConfigError("split_dataset: fraction " + std::to_string(train_fraction) + " of " +
                          std::to_string(ds.count()) + " images leaves an empty side");
    }
    ImageDataset train, test;
    train.height = test.height = ds.height;
    train.width = test.width = ds.width;
    train.images.assign(ds.images.begin(), ds.images.begin() + n_train);
    test.images.assign(ds.images.begin() + n_train, ds.images.end());
    return {std::move(train), std::move(test)};
}

}  // namespace scanrl
