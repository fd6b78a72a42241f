#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scanrl/adam.hpp"
#include "scanrl/dataset.hpp"
#include "scanrl/networks.hpp"
#include "scanrl/replay.hpp"
#include "scanrl/rng.hpp"

namespace scanrl {

enum class LossVariant { mse, mse_sobel, region_max };
enum class SupervisedMode { off, always, decayed };

struct TrainConfig {
    // scale (desk defaults; the paper preset raises these)
    std::uint64_t iterations = 5000;  // M
    int batch_size = 16;              // N
    std::size_t replay_capacity = 2000;
    int hidden_size = 64;
    int gen_base_channels = 8;
    int gen_res_blocks = 2;

    float gamma = 0.97f;
    float beta_omega = 0.9997f;  // critic target EMA
    float beta_theta = 0.9997f;  // actor target EMA
    float beta_loss = 0.997f;    // running generator-loss EMA

    float lr_actor = 0.0005f;
    float lr_critic = 0.0010f;
    float lr_gen = 0.0030f;
    float lr_decay_base = 0.75f;
    float lr_decay_exponent = 5.0f;      // base^(exponent * m / M)
    double saw_period_frac = 2.0 / 9.0;  // sawtooth period as a fraction of M
    float saw_floor = 0.2f;
    bool saw_ramp_up = false;  // default ramps down from 1.0 so lr(0) = lr_gen

    float ou_theta = 0.1f;
    float ou_sigma = 0.2f;
    float ou_mean = 0.0f;

    bool clip_enabled = true;
    LossVariant loss_variant = LossVariant::mse;
    float sobel_weight = 0.1f;
    int region_size = 5;
    SupervisedMode supervised = SupervisedMode::off;
    std::uint64_t supervised_decay_iters = 100000;

    float gen_weight_decay = 0.99999f;
    bool actor_live_actions = true;  // differentiate w.r.t. live actor actions
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    EnvConfig env;  // T, samples per segment, spacing, extents, over-edge penalty

    NetConfig net_config() const {
        NetConfig nc;
        nc.observation_size = env.samples_per_segment;
        nc.hidden_size = hidden_size;
        nc.gen_base_channels = gen_base_channels;
        nc.gen_res_blocks = gen_res_blocks;
        return nc;
    }
};

TrainConfig paper_train_config();
TrainConfig desk_train_config();

// EMA of the generator loss and of its square; the first batch initializes
// both, later batches update them. Variance estimate is clamped at zero.
struct RunningStats {
    float l_avg = 0.0f;
    float l_sq_avg = 0.0f;
    bool initialized = false;

    float std_dev() const {
        const float var = l_sq_avg - l_avg * l_avg;
        return var > 0.0f ? std::sqrt(var) : 0.0f;
    }
};

void update_running_stats(RunningStats& stats, const std::vector<float>& batch_gen_losses, float beta_loss);

struct NoiseState {
    float eps_prev = 0.0f;  // pre-decay angle, radians
};

// One autocorrelated draw: eps <- eps + theta*(mean - eps) + sigma*W, stored
// undecayed; the returned angle is scaled by the linear decay (1 - m/M).
float ou_noise_step(NoiseState& state, Rng& rng, std::uint64_t m, std::uint64_t iterations,
                    const TrainConfig& cfg);

std::array<float, 2> rotate_action(const std::array<float, 2>& direction, float angle);

// Generator learning rate at iteration m: exponential envelope times the
// sawtooth cycle.
float lr_envelope(std::uint64_t m, const TrainConfig& cfg);
float lr_schedule(std::uint64_t m, const TrainConfig& cfg);

// Per-step losses of one episode: over-edge penalty at its own step, plus
// the normalized clipped generator loss at the terminal step.
std::vector<float> compute_step_losses(float gen_loss, const std::vector<std::uint8_t>& over_edge,
                                       const RunningStats& stats, const TrainConfig& cfg);

// Discounted tails y_t = sum_{t' >= t} gamma^(t'-t) L_t', computed backward.
std::vector<float> supervised_targets(const std::vector<float>& step_losses, float gamma);

// Blend weight of the directly computed targets: 1 under full supervision,
// 0 when off, decayed linearly to zero by decay_iters otherwise.
double supervised_blend_weight(SupervisedMode mode, std::uint64_t m, std::uint64_t decay_iters);

// Replayed inputs of a minibatch, laid out per step for lockstep RNN
// processing, plus the augmented generator inputs/targets.
struct MiniBatch {
    std::vector<const Episode*> episodes;
    Tensor<float> scans;      // [N x 2 x h x w]
    Tensor<float> blur_targets;  // [N x 1 x h x w]
    // step k inputs: observation o_k (zeros at k=0), previous action
    // a_{k-1} (zeros at k=0), replayed action a_k
    std::vector<Tensor<float>> obs_in, prev_in, act_in;
    int steps = 0;
    int batch = 0;
};

// Exact-tail-sum style stub for the target critic: value(i, k) stands in
// for Q'(...) evaluated at step k of episode i.
using CriticStub = std::function<float(int episode, int step)>;

// Bootstrapped targets with live-state propagation: live actor/critic replay
// the episode, target networks are evaluated one step ahead from the live
// hidden states. Terminal step bootstraps nothing.
std::vector<std::vector<float>> compute_targets(NetworkBundle<float>& nets, const MiniBatch& batch,
                                                const std::vector<std::vector<float>>& step_losses,
                                                const TrainConfig& cfg, const CriticStub* stub = nullptr);

struct UpdateOutcome {
    float value = 0.0f;  // loss (critic/generator) or objective (actor)
    bool skipped = false;
    int adam_skips = 0;
};

UpdateOutcome critic_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                            const std::vector<std::vector<float>>& targets, const TrainConfig& cfg);

UpdateOutcome actor_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                           const TrainConfig& cfg);

// Runs the generator on the augmented scans, returns the per-episode losses
// for the configured variant, and takes one ADAM step at lr_schedule(m).
struct GeneratorOutcome {
    std::vector<float> per_episode;
    bool skipped = false;
    int adam_skips = 0;
};
GeneratorOutcome generator_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                                  const TrainConfig& cfg, std::uint64_t m);

// Noisy rollout of one training episode (OU-rotated actions).
Episode collect_episode(NetworkBundle<float>& nets, const ProcessedImage& image, int image_index,
                        NoiseState& noise, Rng& rng, const TrainConfig& cfg, std::uint64_t m);

// Deterministic-policy rollouts for a chunk of images, processed in lockstep.
std::vector<ScanHistory> rollout_deterministic(const DeepRecurrentNet<float>& actor,
                                               const std::vector<const ProcessedImage*>& images,
                                               const EnvConfig& env);

struct EvalReport {
    double mean = 0.0;
    double std_dev = 0.0;
    int count = 0;
};

class Trainer {
public:
    struct IterationRecord {
        std::uint64_t iteration = 0;  // 1-based
        bool updated = false;
        float gen_loss = 0.0f;
        float critic_loss = 0.0f;
        float actor_obj = 0.0f;
        float l_avg = 0.0f;
        float lr_gen = 0.0f;
        float noise_scale = 0.0f;
        bool evaluated = false;
        EvalReport test;
        std::vector<std::string> warnings;
    };

    Trainer(TrainConfig cfg, ImageDataset dataset);

    // Runs iteration m+1 (1-based in the record). eval_cadence == 0 disables
    // the periodic test-set evaluation.
    IterationRecord run_iteration(std::uint64_t eval_cadence);

    std::uint64_t iteration() const { return iteration_; }
    bool finished() const { return iteration_ >= cfg_.iterations; }

    const TrainConfig& config() const { return cfg_; }
    NetworkBundle<float>& nets() { return nets_; }
    ReplayBuffer& replay() { return replay_; }
    RunningStats& stats() { return stats_; }
    Rng& rng() { return rng_; }
    AdamState<float>& actor_opt() { return actor_opt_; }
    AdamState<float>& critic_opt() { return critic_opt_; }
    AdamState<float>& gen_opt() { return gen_opt_; }
    void set_iteration(std::uint64_t m) { iteration_ = m; }

    const ImageDataset& train_split() const { return train_; }
    const ImageDataset& test_split() const { return test_; }
    const ProcessedImage& processed_train(int index);
    const ProcessedImage& processed_test(int index);

    // Mean/std of per-image generator MSE over the test split, deterministic
    // policy, infer-mode generator.
    EvalReport evaluate_adaptive();
    // Same reduction for a fixed probe path shared by every image.
    EvalReport evaluate_static(const std::vector<Vec2>& positions);

    MiniBatch assemble_batch(const std::vector<const Episode*>& episodes);

private:
    TrainConfig cfg_;
    ImageDataset train_, test_;
    std::unordered_map<int, ProcessedImage> train_cache_, test_cache_;
    NetworkBundle<float> nets_;
    ReplayBuffer replay_;
    RunningStats stats_;
    Rng rng_;
    AdamState<float> actor_opt_, critic_opt_, gen_opt_;
    std::uint64_t iteration_ = 0;
};

}  // namespace scanrl
