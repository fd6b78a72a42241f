#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scanrl/tensor.hpp"
#include "scanrl/trainer.hpp"

namespace scanrl {

// ASC1 container: magic "ASC1"; u32le version; u32le tensor count; per
// tensor u16le name length, UTF-8 name, u8 rank, u32le dims, f32le data;
// then u32le RNG-state byte length, the RNG state bytes, and a u64le
// iteration counter. Everything little-endian; writes go through a
// temporary file and a rename.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::string rng_state;
    std::uint64_t iteration = 0;
};

void write_checkpoint_file(const CheckpointData& data, const std::string& path);
CheckpointData read_checkpoint_file(const std::string& path);

// Full trainer state: live and target parameters, batch-norm buffers, ADAM
// moments and step counters, running loss statistics, the replay buffer
// contents, the RNG state and the iteration counter.
CheckpointData snapshot_trainer(Trainer& trainer);
void save_checkpoint(Trainer& trainer, const std::string& path);

// Restores into a trainer built from the same configuration; shape or
// inventory mismatches raise errors naming the tensor.
void restore_trainer(Trainer& trainer, const CheckpointData& data);
void load_checkpoint(Trainer& trainer, const std::string& path);

}  // namespace scanrl
