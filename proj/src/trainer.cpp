#include "scanrl/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "scanrl/ops.hpp"
#include "scanrl/paths.hpp"

namespace scanrl {

namespace {

using TF = Tensor<float>;

TF zeros2(int n, int m) { return TF(Shape{n, m}); }

// Freezes a store's gradient accumulation for the enclosing scope.
class FreezeParams {
public:
    explicit FreezeParams(ParamStore<float>& store) : store_(store) { store_.set_requires_grad(false); }
    ~FreezeParams() { store_.set_requires_grad(true); }

private:
    ParamStore<float>& store_;
};

}  // namespace

TrainConfig paper_train_config() {
    TrainConfig cfg;
    cfg.iterations = 1000000;
    cfg.batch_size = 32;
    cfg.replay_capacity = 100000;
    cfg.hidden_size = 256;
    cfg.gen_base_channels = 32;
    cfg.gen_res_blocks = 4;
    return cfg;
}

TrainConfig desk_train_config() { return TrainConfig{}; }

void update_running_stats(RunningStats& stats, const std::vector<float>& batch_gen_losses, float beta_loss) {
    if (batch_gen_losses.empty()) throw UsageError("update_running_stats: empty batch");
    float mean = 0.0f, mean_sq = 0.0f;
    for (float v : batch_gen_losses) {
        mean += v;
        mean_sq += v * v;
    }
    mean /= static_cast<float>(batch_gen_losses.size());
    mean_sq /= static_cast<float>(batch_gen_losses.size());
    if (!stats.initialized) {
        stats.l_avg = mean;
        stats.l_sq_avg = mean_sq;
        stats.initialized = true;
    } else {
        stats.l_avg = beta_loss * stats.l_avg + (1.0f - beta_loss) * mean;
        stats.l_sq_avg = beta_loss * stats.l_sq_avg + (1.0f - beta_loss) * mean_sq;
    }
}

float ou_noise_step(NoiseState& state, Rng& rng, std::uint64_t m, std::uint64_t iterations,
                    const TrainConfig& cfg) {
    const float w = static_cast<float>(rng.gaussian());
    const float eps = state.eps_prev + cfg.ou_theta * (cfg.ou_mean - state.eps_prev) + cfg.ou_sigma * w;
    state.eps_prev = eps;
    const float decay =
        iterations == 0 ? 0.0f : 1.0f - static_cast<float>(static_cast<double>(m) / static_cast<double>(iterations));
    return eps * decay;
}

std::array<float, 2> rotate_action(const std::array<float, 2>& direction, float angle) {
    const float norm = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1]);
    if (std::abs(norm - 1.0f) > 1e-6f) {
        throw ContractError("rotate_action: direction norm " + std::to_string(norm) + " is not unit");
    }
    const float c = std::cos(angle), s = std::sin(angle);
    return {c * direction[0] - s * direction[1], s * direction[0] + c * direction[1]};
}

float lr_envelope(std::uint64_t m, const TrainConfig& cfg) {
    const double frac = static_cast<double>(m) / static_cast<double>(cfg.iterations);
    return static_cast<float>(std::pow(cfg.lr_decay_base, cfg.lr_decay_exponent * frac));
}

float lr_schedule(std::uint64_t m, const TrainConfig& cfg) {
    const double period = cfg.saw_period_frac * static_cast<double>(cfg.iterations);
    const double phase = period > 0.0 ? std::fmod(static_cast<double>(m), period) / period : 0.0;
    const double saw = cfg.saw_ramp_up ? cfg.saw_floor + (1.0 - cfg.saw_floor) * phase
                                       : 1.0 - (1.0 - cfg.saw_floor) * phase;
    return cfg.lr_gen * lr_envelope(m, cfg) * static_cast<float>(saw);
}

std::vector<float> compute_step_losses(float gen_loss, const std::vector<std::uint8_t>& over_edge,
                                       const RunningStats& stats, const TrainConfig& cfg) {
    if (!stats.initialized) throw UsageError("compute_step_losses: running stats not initialized");
    const int steps = static_cast<int>(over_edge.size());
    std::vector<float> losses(steps, 0.0f);
    for (int k = 0; k < steps; k++) {
        losses[k] = over_edge[k] ? cfg.env.over_edge_penalty : 0.0f;
    }
    float clipped = gen_loss;
    if (cfg.clip_enabled) {
        clipped = std::min(gen_loss, stats.l_avg + 3.0f * stats.std_dev());
    }
    losses[steps - 1] += clipped / stats.l_avg;
    return losses;
}

std::vector<float> supervised_targets(const std::vector<float>& step_losses, float gamma) {
    std::vector<float> y(step_losses.size());
    const int last = static_cast<int>(step_losses.size()) - 1;
    y[last] = step_losses[last];
    for (int k = last - 1; k >= 0; k--) y[k] = step_losses[k] + gamma * y[k + 1];
    return y;
}

double supervised_blend_weight(SupervisedMode mode, std::uint64_t m, std::uint64_t decay_iters) {
    switch (mode) {
        case SupervisedMode::off:
            return 0.0;
        case SupervisedMode::always:
            return 1.0;
        case SupervisedMode::decayed:
            if (decay_iters == 0) return 0.0;
            return std::max(0.0, 1.0 - static_cast<double>(m) / static_cast<double>(decay_iters));
    }
    return 0.0;
}

std::vector<std::vector<float>> compute_targets(NetworkBundle<float>& nets, const MiniBatch& batch,
                                                const std::vector<std::vector<float>>& step_losses,
                                                const TrainConfig& cfg, const CriticStub* stub) {
    const int n = batch.batch, steps = batch.steps;
    std::vector<std::vector<float>> y(n, std::vector<float>(steps, 0.0f));

    auto actor_state = nets.actor.initial_state(nullptr, n);
    auto critic_state = nets.critic.initial_state(nullptr, n);
    for (int k = 0; k < steps; k++) {
        // advance the live networks through replayed step k
        (void)actor_step<float>(nullptr, nets.actor, actor_state, batch.obs_in[k], batch.prev_in[k]);
        (void)critic_step<float>(nullptr, nets.critic, critic_state, batch.obs_in[k], batch.prev_in[k],
                                 batch.act_in[k]);

        if (k == steps - 1) {
            for (int i = 0; i < n; i++) y[i][k] = step_losses[i][k];  // terminal, no bootstrap
            continue;
        }
        if (stub) {
            for (int i = 0; i < n; i++) {
                y[i][k] = step_losses[i][k] + cfg.gamma * (*stub)(i, k + 1);
            }
            continue;
        }
        // target networks look one step ahead from the live hidden states
        auto a_state = actor_state;
        TF next_action =
            actor_step<float>(nullptr, nets.actor_target, a_state, batch.obs_in[k + 1], batch.prev_in[k + 1]);
        auto c_state = critic_state;
        TF q = critic_step<float>(nullptr, nets.critic_target, c_state, batch.obs_in[k + 1], batch.prev_in[k + 1],
                                  next_action);
        for (int i = 0; i < n; i++) y[i][k] = step_losses[i][k] + cfg.gamma * q.data()[i];
    }
    return y;
}

UpdateOutcome critic_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                            const std::vector<std::vector<float>>& targets, const TrainConfig& cfg) {
    const int n = batch.batch, steps = batch.steps;
    Tape<float> tape;
    nets.critic.params().zero_grad();

    auto state = nets.critic.initial_state(&tape, n);
    TF acc = TF::scalar(0.0f);
    for (int k = 0; k < steps; k++) {
        TF q = critic_step<float>(&tape, nets.critic, state, batch.obs_in[k], batch.prev_in[k], batch.act_in[k]);
        TF y(Shape{n, 1});
        for (int i = 0; i < n; i++) y.data()[i] = targets[i][k];
        acc = add(&tape, acc, sum(&tape, square(&tape, sub(&tape, q, y))));
    }
    TF loss = scale(&tape, acc, 0.5f / static_cast<float>(n * steps));

    UpdateOutcome out;
    out.value = loss.value();
    if (!std::isfinite(out.value)) {
        out.skipped = true;
        return out;
    }
    backward(loss, tape);
    out.adam_skips = opt.step(nets.critic.params());
    return out;
}

UpdateOutcome actor_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                           const TrainConfig& cfg) {
    const int n = batch.batch, steps = batch.steps;
    Tape<float> tape;
    nets.actor.params().zero_grad();
    FreezeParams freeze(nets.critic.params());

    auto actor_state = nets.actor.initial_state(&tape, n);
    auto critic_state = nets.critic.initial_state(&tape, n);
    TF acc = TF::scalar(0.0f);
    for (int k = 0; k < steps; k++) {
        TF live = actor_step<float>(&tape, nets.actor, actor_state, batch.obs_in[k], batch.prev_in[k]);
        TF action = cfg.actor_live_actions ? live : value_override(&tape, live, batch.act_in[k]);
        TF q = critic_step<float>(&tape, nets.critic, critic_state, batch.obs_in[k], batch.prev_in[k], action);
        acc = add(&tape, acc, sum(&tape, q));
    }
    TF objective = scale(&tape, acc, 1.0f / static_cast<float>(n * steps));

    UpdateOutcome out;
    out.value = objective.value();
    if (!std::isfinite(out.value)) {
        out.skipped = true;
        return out;
    }
    backward(objective, tape);
    out.adam_skips = opt.step(nets.actor.params());
    return out;
}

GeneratorOutcome generator_update(NetworkBundle<float>& nets, AdamState<float>& opt, const MiniBatch& batch,
                                  const TrainConfig& cfg, std::uint64_t m) {
    Tape<float> tape;
    nets.generator.params().zero_grad();

    TF out = nets.generator.forward(&tape, batch.scans, NetMode::train);
    TF per;
    switch (cfg.loss_variant) {
        case LossVariant::mse:
            per = batch_mse(&tape, out, batch.blur_targets);
            break;
        case LossVariant::mse_sobel:
            per = add(&tape, batch_mse(&tape, out, batch.blur_targets),
                      scale(&tape, batch_sobel_mse(&tape, out, batch.blur_targets), cfg.sobel_weight));
            break;
        case LossVariant::region_max:
            per = batch_region_max_mse(&tape, out, batch.blur_targets, cfg.region_size);
            break;
    }
    TF mean_loss = scale(&tape, sum(&tape, per), 1.0f / static_cast<float>(batch.batch));

    GeneratorOutcome res;
    res.per_episode.assign(per.data().begin(), per.data().end());
    if (!std::isfinite(mean_loss.value())) {
        res.skipped = true;
        return res;
    }
    backward(mean_loss, tape);
    opt.set_lr(lr_schedule(m, cfg));
    res.adam_skips = opt.step(nets.generator.params());
    return res;
}

Episode collect_episode(NetworkBundle<float>& nets, const ProcessedImage& image, int image_index,
                        NoiseState& noise, Rng& rng, const TrainConfig& cfg, std::uint64_t m) {
    EpisodeState env = episode_reset(cfg.env, image);
    auto state = nets.actor.initial_state(nullptr, 1);
    TF obs = zeros2(1, cfg.env.samples_per_segment);
    TF prev = zeros2(1, 2);
    for (int t = 0; t < cfg.env.segments; t++) {
        TF head = actor_step<float>(nullptr, nets.actor, state, obs, prev);
        const float eps = ou_noise_step(noise, rng, m, cfg.iterations, cfg);
        const std::array<float, 2> action = rotate_action({head.data()[0], head.data()[1]}, eps);
        auto [observation, over] = episode_step(env, action);
        (void)over;
        std::copy(observation.begin(), observation.end(), obs.data().begin());
        prev.data()[0] = action[0];
        prev.data()[1] = action[1];
    }
    return Episode{std::move(env.history), image_index};
}

std::vector<ScanHistory> rollout_deterministic(const DeepRecurrentNet<float>& actor,
                                               const std::vector<const ProcessedImage*>& images,
                                               const EnvConfig& env_cfg) {
    const int n = static_cast<int>(images.size());
    if (n == 0) return {};
    std::vector<EpisodeState> envs;
    envs.reserve(n);
    for (const ProcessedImage* img : images) envs.push_back(episode_reset(env_cfg, *img));

    auto state = actor.initial_state(nullptr, n);
    TF obs = zeros2(n, env_cfg.samples_per_segment);
    TF prev = zeros2(n, 2);
    for (int t = 0; t < env_cfg.segments; t++) {
        TF head = actor_step<float>(nullptr, actor, state, obs, prev);
        for (int i = 0; i < n; i++) {
            const std::array<float, 2> action = {head.data()[2 * i], head.data()[2 * i + 1]};
            auto [observation, over] = episode_step(envs[i], action);
            (void)over;
            std::copy(observation.begin(), observation.end(),
                      obs.data().begin() + static_cast<std::int64_t>(i) * env_cfg.samples_per_segment);
            prev.data()[2 * i] = action[0];
            prev.data()[2 * i + 1] = action[1];
        }
    }
    std::vector<ScanHistory> out;
    out.reserve(n);
    for (auto& e : envs) out.push_back(std::move(e.history));
    return out;
}

namespace {

void validate_config(const TrainConfig& cfg) {
    if (cfg.env.segments < 1) throw ConfigError("config: segments must be >= 1");
    if (cfg.env.samples_per_segment < 1) throw ConfigError("config: samples_per_segment must be >= 1");
    if (cfg.env.probe_spacing < std::sqrt(2.0f) - 1e-6f) {
        throw ConfigError("config: probe_spacing " + std::to_string(cfg.env.probe_spacing) +
                          " must be >= sqrt(2) so a segment cannot resample a pixel");
    }
    if (!(cfg.gamma >= 0.0f && cfg.gamma < 1.0f)) throw ConfigError("config: gamma must be in [0, 1)");
    for (auto [name, v] : {std::pair{"beta_omega", cfg.beta_omega}, {"beta_theta", cfg.beta_theta},
                           {"beta_loss", cfg.beta_loss}, {"gen_weight_decay", cfg.gen_weight_decay}}) {
        if (!(v > 0.0f && v <= 1.0f)) throw ConfigError(std::string("config: ") + name + " must be in (0, 1]");
    }
    for (auto [name, v] : {std::pair{"lr_actor", cfg.lr_actor}, {"lr_critic", cfg.lr_critic},
                           {"lr_gen", cfg.lr_gen}}) {
        if (!(v > 0.0f)) throw ConfigError(std::string("config: ") + name + " must be positive");
    }
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
        throw ConfigError("config: train_fraction must be in (0, 1)");
    }
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, ImageDataset dataset)
    : cfg_(cfg), replay_(cfg.replay_capacity, cfg.env.segments), rng_(cfg.seed) {
    validate_config(cfg_);
    auto [train, test] = split_dataset(dataset, cfg_.train_fraction);
    train_ = std::move(train);
    test_ = std::move(test);
    if (train_.height != cfg_.env.height || train_.width != cfg_.env.width) {
        throw ConfigError("trainer: dataset extents " + std::to_string(train_.height) + "x" +
                          std::to_string(train_.width) + " do not match environment " +
                          std::to_string(cfg_.env.height) + "x" + std::to_string(cfg_.env.width));
    }
    nets_ = init_networks<float>(cfg_.net_config(), rng_);
    actor_opt_ = AdamState<float>(nets_.actor.params(), {cfg_.lr_actor});
    critic_opt_ = AdamState<float>(nets_.critic.params(), {cfg_.lr_critic});
    AdamConfig<float> gen_cfg;
    gen_cfg.lr = cfg_.lr_gen;
    gen_cfg.weight_decay = cfg_.gen_weight_decay;
    gen_opt_ = AdamState<float>(nets_.generator.params(), gen_cfg);
}

const ProcessedImage& Trainer::processed_train(int index) {
    auto it = train_cache_.find(index);
    if (it == train_cache_.end()) {
        it = train_cache_.emplace(index, preprocess(train_, index)).first;
    }
    return it->second;
}

const ProcessedImage& Trainer::processed_test(int index) {
    auto it = test_cache_.find(index);
    if (it == test_cache_.end()) {
        it = test_cache_.emplace(index, preprocess(test_, index)).first;
    }
    return it->second;
}

MiniBatch Trainer::assemble_batch(const std::vector<const Episode*>& episodes) {
    const int n = static_cast<int>(episodes.size());
    const int steps = cfg_.env.segments;
    const int samples = cfg_.env.samples_per_segment;
    const int h = cfg_.env.height, w = cfg_.env.width;

    MiniBatch batch;
    batch.episodes = episodes;
    batch.batch = n;
    batch.steps = steps;
    batch.scans = TF({n, 2, h, w});
    batch.blur_targets = TF({n, 1, h, w});

    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; i++) {
        PartialScan scan = rasterize_scan(episodes[i]->history, cfg_.env);
        const ProcessedImage& img = processed_train(episodes[i]->image_index);
        const int aug = static_cast<int>(rng_.below(8));
        auto [scan_t, target_t] = augment_dihedral(scan, img.target_blur, aug);
        std::copy(scan_t.values.begin(), scan_t.values.end(), batch.scans.data().begin() + i * 2 * plane);
        std::copy(scan_t.mask.begin(), scan_t.mask.end(), batch.scans.data().begin() + (i * 2 + 1) * plane);
        std::copy(target_t.begin(), target_t.end(), batch.blur_targets.data().begin() + i * plane);
    }

    batch.obs_in.resize(steps);
    batch.prev_in.resize(steps);
    batch.act_in.resize(steps);
    for (int k = 0; k < steps; k++) {
        batch.obs_in[k] = zeros2(n, samples);
        batch.prev_in[k] = zeros2(n, 2);
        batch.act_in[k] = zeros2(n, 2);
        for (int i = 0; i < n; i++) {
            const ScanHistory& hist = episodes[i]->history;
            if (k > 0) {
                std::copy(hist.observations[k - 1].begin(), hist.observations[k - 1].end(),
                          batch.obs_in[k].data().begin() + static_cast<std::int64_t>(i) * samples);
                batch.prev_in[k].data()[2 * i] = hist.actions[k - 1][0];
                batch.prev_in[k].data()[2 * i + 1] = hist.actions[k - 1][1];
            }
            batch.act_in[k].data()[2 * i] = hist.actions[k][0];
            batch.act_in[k].data()[2 * i + 1] = hist.actions[k][1];
        }
    }
    return batch;
}

Trainer::IterationRecord Trainer::run_iteration(std::uint64_t eval_cadence) {
    IterationRecord rec;
    const std::uint64_t m = iteration_;
    rec.iteration = m + 1;
    rec.noise_scale = cfg_.iterations == 0
                          ? 0.0f
                          : 1.0f - static_cast<float>(static_cast<double>(m) / cfg_.iterations);
    rec.lr_gen = lr_schedule(m, cfg_);

    const int image_index = static_cast<int>(rng_.below(train_.count()));
    NoiseState noise;  // start noise is zero each episode
    Episode episode = collect_episode(nets_, processed_train(image_index), image_index, noise, rng_, cfg_, m);
    replay_.push(std::move(episode));

    if (replay_.ready(cfg_.batch_size)) {
        auto sampled = replay_.sample(cfg_.batch_size, rng_);
        MiniBatch batch = assemble_batch(sampled);

        GeneratorOutcome gen = generator_update(nets_, gen_opt_, batch, cfg_, m);
        if (gen.adam_skips > 0) {
            rec.warnings.push_back("generator: skipped " + std::to_string(gen.adam_skips) +
                                   " tensors with non-finite gradients");
        }
        if (gen.skipped) {
            rec.warnings.push_back("generator: non-finite loss, update phase skipped");
        } else {
            if (!stats_.initialized) update_running_stats(stats_, gen.per_episode, cfg_.beta_loss);

            std::vector<std::vector<float>> step_losses(batch.batch);
            for (int i = 0; i < batch.batch; i++) {
                step_losses[i] =
                    compute_step_losses(gen.per_episode[i], batch.episodes[i]->history.over_edge, stats_, cfg_);
            }
            std::vector<std::vector<float>> targets = compute_targets(nets_, batch, step_losses, cfg_);
            if (cfg_.supervised != SupervisedMode::off) {
                const double w_sup = supervised_blend_weight(cfg_.supervised, m, cfg_.supervised_decay_iters);
                if (w_sup > 0.0) {
                    for (int i = 0; i < batch.batch; i++) {
                        std::vector<float> sup = supervised_targets(step_losses[i], cfg_.gamma);
                        for (int k = 0; k < batch.steps; k++) {
                            targets[i][k] = static_cast<float>(w_sup * sup[k] + (1.0 - w_sup) * targets[i][k]);
                        }
                    }
                }
            }

            UpdateOutcome critic = critic_update(nets_, critic_opt_, batch, targets, cfg_);
            if (critic.skipped) rec.warnings.push_back("critic: non-finite loss, update skipped");
            if (critic.adam_skips > 0) rec.warnings.push_back("critic: non-finite gradients");
            UpdateOutcome actor = actor_update(nets_, actor_opt_, batch, cfg_);
            if (actor.skipped) rec.warnings.push_back("actor: non-finite objective, update skipped");
            if (actor.adam_skips > 0) rec.warnings.push_back("actor: non-finite gradients");

            soft_update<float>(nets_.critic.params(), nets_.critic_target.params(), cfg_.beta_omega);
            soft_update<float>(nets_.actor.params(), nets_.actor_target.params(), cfg_.beta_theta);
            update_running_stats(stats_, gen.per_episode, cfg_.beta_loss);

            rec.updated = true;
            float mean_gen = 0.0f;
            for (float v : gen.per_episode) mean_gen += v;
            rec.gen_loss = mean_gen / static_cast<float>(batch.batch);
            rec.critic_loss = critic.value;
            rec.actor_obj = actor.value;
            rec.l_avg = stats_.l_avg;
        }
    }

    iteration_ += 1;
    if (eval_cadence > 0 && rec.iteration % eval_cadence == 0) {
        rec.evaluated = true;
        rec.test = evaluate_adaptive();
    }
    return rec;
}

namespace {

EvalReport reduce_mse(const std::vector<double>& values) {
    EvalReport rep;
    rep.count = static_cast<int>(values.size());
    if (values.empty()) return rep;
    double acc = 0.0;
    for (double v : values) acc += v;
    rep.mean = acc / values.size();
    double var = 0.0;
    for (double v : values) var += (v - rep.mean) * (v - rep.mean);
    rep.std_dev = std::sqrt(var / values.size());
    return rep;
}

}  // namespace

EvalReport Trainer::evaluate_adaptive() {
    const int count = test_.count();
    std::vector<double> per_image;
    per_image.reserve(count);
    const int chunk = 32;
    const std::int64_t plane = static_cast<std::int64_t>(cfg_.env.height) * cfg_.env.width;
    for (int start = 0; start < count; start += chunk) {
        const int n = std::min(chunk, count - start);
        std::vector<const ProcessedImage*> images(n);
        for (int i = 0; i < n; i++) images[i] = &processed_test(start + i);
        std::vector<ScanHistory> histories = rollout_deterministic(nets_.actor, images, cfg_.env);

        TF scans({n, 2, cfg_.env.height, cfg_.env.width});
        TF targets({n, 1, cfg_.env.height, cfg_.env.width});
        for (int i = 0; i < n; i++) {
            PartialScan scan = rasterize_scan(histories[i], cfg_.env);
            std::copy(scan.values.begin(), scan.values.end(), scans.data().begin() + i * 2 * plane);
            std::copy(scan.mask.begin(), scan.mask.end(), scans.data().begin() + (i * 2 + 1) * plane);
            std::copy(images[i]->target_blur.begin(), images[i]->target_blur.end(),
                      targets.data().begin() + i * plane);
        }
        TF out = nets_.generator.forward(nullptr, scans, NetMode::infer);
        TF mse = batch_mse<float>(nullptr, out, targets);
        for (int i = 0; i < n; i++) per_image.push_back(mse.data()[i]);
    }
    return reduce_mse(per_image);
}

EvalReport Trainer::evaluate_static(const std::vector<Vec2>& positions) {
    const int count = test_.count();
    std::vector<double> per_image;
    per_image.reserve(count);
    const int chunk = 32;
    const std::int64_t plane = static_cast<std::int64_t>(cfg_.env.height) * cfg_.env.width;
    for (int start = 0; start < count; start += chunk) {
        const int n = std::min(chunk, count - start);
        TF scans({n, 2, cfg_.env.height, cfg_.env.width});
        TF targets({n, 1, cfg_.env.height, cfg_.env.width});
        for (int i = 0; i < n; i++) {
            const ProcessedImage& img = processed_test(start + i);
            PartialScan scan = scan_from_positions(positions, img, cfg_.env);
            std::copy(scan.values.begin(), scan.values.end(), scans.data().begin() + i * 2 * plane);
            std::copy(scan.mask.begin(), scan.mask.end(), scans.data().begin() + (i * 2 + 1) * plane);
            std::copy(img.target_blur.begin(), img.target_blur.end(), targets.data().begin() + i * plane);
        }
        TF out = nets_.generator.forward(nullptr, scans, NetMode::infer);
        TF mse = batch_mse<float>(nullptr, out, targets);
        for (int i = 0; i < n; i++) per_image.push_back(mse.data()[i]);
    }
    return reduce_mse(per_image);
}

}  // namespace scanrl
