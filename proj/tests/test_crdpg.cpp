#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scanrl/paths.hpp"
#include "scanrl/trainer.hpp"

using namespace scanrl;
using TF = Tensor<float>;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.iterations = 40;
    cfg.batch_size = 4;
    cfg.replay_capacity = 8;
    cfg.hidden_size = 8;
    cfg.gen_base_channels = 4;
    cfg.gen_res_blocks = 1;
    cfg.env.height = cfg.env.width = 16;
    cfg.env.segments = 3;
    cfg.env.samples_per_segment = 4;
    cfg.seed = 5;
    return cfg;
}

// Replayed inputs with arbitrary values; enough for target/update paths.
MiniBatch fake_batch(int n, int steps, int samples, std::uint64_t seed) {
    Rng rng(seed);
    MiniBatch batch;
    batch.batch = n;
    batch.steps = steps;
    batch.obs_in.resize(steps);
    batch.prev_in.resize(steps);
    batch.act_in.resize(steps);
    for (int k = 0; k < steps; k++) {
        batch.obs_in[k] = TF({n, samples});
        batch.prev_in[k] = TF({n, 2});
        batch.act_in[k] = TF({n, 2});
        if (k > 0) {
            for (auto& v : batch.obs_in[k].data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            for (auto& v : batch.prev_in[k].data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        }
        for (auto& v : batch.act_in[k].data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return batch;
}

NetworkBundle<float> small_nets(int samples, std::uint64_t seed) {
    NetConfig nc;
    nc.observation_size = samples;
    nc.hidden_size = 8;
    nc.gen_base_channels = 4;
    nc.gen_res_blocks = 1;
    Rng rng(seed);
    return init_networks<float>(nc, rng);
}

bool stores_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); i++) {
        auto av = a.tensors[i].data();
        auto bv = b.tensors[i].data();
        if (av.size() != bv.size()) return false;
        for (size_t j = 0; j < av.size(); j++) {
            if (av[j] != bv[j]) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("ou_noise_step: recurrence arithmetic and full decay") {
    TrainConfig cfg = tiny_config();
    {
        // sigma 0 isolates the mean-reversion term
        TrainConfig quiet = cfg;
        quiet.ou_sigma = 0.0f;
        NoiseState state{0.5f};
        Rng rng(1);
        const float eps = ou_noise_step(state, rng, 0, quiet.iterations, quiet);
        CHECK(eps == doctest::Approx(0.45).epsilon(1e-6));
        CHECK(state.eps_prev == doctest::Approx(0.45).epsilon(1e-6));
    }
    {
        NoiseState state{0.7f};
        Rng rng(2);
        const float eps = ou_noise_step(state, rng, cfg.iterations, cfg.iterations, cfg);
        CHECK(eps == 0.0f);                 // fully decayed
        CHECK(state.eps_prev != 0.0f);      // state keeps the pre-decay value
    }
}

TEST_CASE("ou_noise stationary spread matches the AR(1) closed form") {
    TrainConfig cfg = tiny_config();
    NoiseState state;
    Rng rng(99);
    double sum = 0.0, sum_sq = 0.0;
    const int steps = 100000;
    for (int i = 0; i < steps; i++) {
        const float eps = ou_noise_step(state, rng, 0, cfg.iterations, cfg);  // m = 0: no decay
        sum += eps;
        sum_sq += static_cast<double>(eps) * eps;
    }
    const double mean = sum / steps;
    const double sd = std::sqrt(sum_sq / steps - mean * mean);
    const double expected = 0.2 / std::sqrt(1.0 - 0.81);  // sigma / sqrt(1-(1-theta)^2)
    CHECK(expected == doctest::Approx(0.45883).epsilon(1e-4));
    CHECK(std::abs(sd - expected) / expected < 0.05);
}

TEST_CASE("rotate_action is an isometry with the usual conventions") {
    const std::array<float, 2> e1{1.0f, 0.0f};
    auto same = rotate_action(e1, 0.0f);
    CHECK(same[0] == doctest::Approx(1.0));
    CHECK(same[1] == doctest::Approx(0.0));

    auto up = rotate_action(e1, static_cast<float>(M_PI / 2));
    CHECK(up[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(up[1] == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(3);
    for (int i = 0; i < 20; i++) {
        const double a = rng.uniform(0.0, 2 * M_PI);
        const std::array<float, 2> dir{static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))};
        auto r = rotate_action(dir, static_cast<float>(rng.uniform(-3.0, 3.0)));
        CHECK(std::hypot(r[0], r[1]) == doctest::Approx(1.0).epsilon(1e-6));
    }

    CHECK_THROWS_AS(rotate_action({0.5f, 0.0f}, 0.1f), ContractError);
}

TEST_CASE("lr schedule: initial rate, envelope, sawtooth boundaries") {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 900000;  // divisible by 9 keeps the boundaries exact
    CHECK(lr_schedule(0, cfg) == doctest::Approx(0.0030).epsilon(1e-6));
    CHECK(lr_envelope(cfg.iterations, cfg) == doctest::Approx(0.2373046875).epsilon(1e-6));

    const std::uint64_t period = cfg.iterations * 2 / 9;
    CHECK(lr_schedule(period - 1, cfg) ==
          doctest::Approx(cfg.lr_gen * lr_envelope(period - 1, cfg) * 0.2).epsilon(1e-3));
    CHECK(lr_schedule(period, cfg) == doctest::Approx(cfg.lr_gen * lr_envelope(period, cfg)).epsilon(1e-6));

    // exactly 4 full periods complete within M
    CHECK(static_cast<std::uint64_t>(cfg.iterations / period) == 4);

    TrainConfig up = cfg;
    up.saw_ramp_up = true;
    CHECK(lr_schedule(0, up) == doctest::Approx(0.0030 * 0.2).epsilon(1e-6));
}

TEST_CASE("compute_step_losses: normalization, penalties, clipping") {
    TrainConfig cfg = tiny_config();
    RunningStats stats;
    CHECK_THROWS_AS(compute_step_losses(1.0f, {0, 0, 0}, stats, cfg), UsageError);

    update_running_stats(stats, {2.0f, 2.0f}, cfg.beta_loss);  // l_avg 2, std 0
    {
        auto losses = compute_step_losses(2.0f, {0, 0, 0}, stats, cfg);
        CHECK(losses[0] == 0.0f);
        CHECK(losses[1] == 0.0f);
        CHECK(losses[2] == doctest::Approx(1.0));  // L_G / l_avg with L_G == l_avg
    }
    {
        auto losses = compute_step_losses(2.0f, {1, 1, 1}, stats, cfg);
        CHECK(losses[0] == doctest::Approx(0.1));
        CHECK(losses[1] == doctest::Approx(0.1));
        CHECK(losses[2] == doctest::Approx(0.1 + 1.0));
    }
    {
        // spread stream: clip threshold l_avg + 3*std
        RunningStats spread;
        update_running_stats(spread, {1.0f, 3.0f}, cfg.beta_loss);  // mean 2, var 1
        CHECK(spread.std_dev() == doctest::Approx(1.0));
        auto losses = compute_step_losses(2.0f + 10.0f, {0, 0, 0}, spread, cfg);
        CHECK(losses[2] == doctest::Approx((2.0 + 3.0) / 2.0));
        TrainConfig noclip = cfg;
        noclip.clip_enabled = false;
        auto raw = compute_step_losses(12.0f, {0, 0, 0}, spread, noclip);
        CHECK(raw[2] == doctest::Approx(6.0));
    }
}

TEST_CASE("update_running_stats: init, EMA arithmetic, fixed point") {
    RunningStats stats;
    update_running_stats(stats, {1.5f, 2.5f}, 0.997f);
    CHECK(stats.initialized);
    CHECK(stats.l_avg == doctest::Approx(2.0));

    stats.l_avg = 1.0f;
    stats.l_sq_avg = 1.0f;
    update_running_stats(stats, {2.0f}, 0.997f);
    CHECK(stats.l_avg == doctest::Approx(1.003));

    RunningStats fixed;
    for (int i = 0; i < 3000; i++) update_running_stats(fixed, {0.75f}, 0.997f);
    CHECK(fixed.l_avg == doctest::Approx(0.75).epsilon(1e-5));
    CHECK(fixed.std_dev() == doctest::Approx(0.0).epsilon(1e-3));

    CHECK_THROWS_AS(update_running_stats(fixed, {}, 0.997f), UsageError);
}

TEST_CASE("running-mean normalization is scale invariant") {
    TrainConfig cfg = tiny_config();
    const float k = 37.5f;
    RunningStats a, b;
    Rng rng(8);
    float ratio_a = 0.0f, ratio_b = 0.0f;
    for (int i = 0; i < 2000; i++) {
        const float v = static_cast<float>(rng.uniform(0.8, 1.2));
        update_running_stats(a, {v}, cfg.beta_loss);
        update_running_stats(b, {k * v}, cfg.beta_loss);
        ratio_a = compute_step_losses(v, {0, 0, 0}, a, cfg)[2];
        ratio_b = compute_step_losses(k * v, {0, 0, 0}, b, cfg)[2];
    }
    CHECK(std::abs(ratio_a - ratio_b) / ratio_a < 0.01);
}

TEST_CASE("supervised_targets: discounted tails") {
    {
        auto y = supervised_targets({0.3f, 0.5f, 0.7f}, 0.0f);
        CHECK(y[0] == 0.3f);
        CHECK(y[1] == 0.5f);
        CHECK(y[2] == 0.7f);
    }
    {
        auto y = supervised_targets({1.0f, 1.0f, 1.0f}, 0.5f);
        CHECK(y[0] == doctest::Approx(1.75));
        CHECK(y[1] == doctest::Approx(1.5));
        CHECK(y[2] == doctest::Approx(1.0));
    }
}

TEST_CASE("supervised blend weight: off, always, linear decay to zero") {
    CHECK(supervised_blend_weight(SupervisedMode::off, 0, 100000) == 0.0);
    CHECK(supervised_blend_weight(SupervisedMode::always, 999999, 100000) == 1.0);
    CHECK(supervised_blend_weight(SupervisedMode::decayed, 0, 100000) == 1.0);
    CHECK(supervised_blend_weight(SupervisedMode::decayed, 50000, 100000) == doctest::Approx(0.5));
    // at and beyond the decay horizon the targets are purely bootstrapped
    CHECK(supervised_blend_weight(SupervisedMode::decayed, 100000, 100000) == 0.0);
    CHECK(supervised_blend_weight(SupervisedMode::decayed, 2000000, 100000) == 0.0);
}

TEST_CASE("over-edge penalties land only at their own steps") {
    TrainConfig cfg = tiny_config();
    RunningStats stats;
    update_running_stats(stats, {1.0f}, cfg.beta_loss);
    auto losses = compute_step_losses(1.0f, {0, 1, 0}, stats, cfg);
    CHECK(losses[0] == 0.0f);
    CHECK(losses[1] == doctest::Approx(0.1));
    CHECK(losses[2] == doctest::Approx(1.0));  // terminal normalized loss only
    // earlier steps see the penalty only through the discounted bootstrap
    auto tails = supervised_targets(losses, cfg.gamma);
    CHECK(tails[0] == doctest::Approx(cfg.gamma * tails[1]));
    CHECK(tails[1] == doctest::Approx(0.1f + cfg.gamma * tails[2]));
}

TEST_CASE("compute_targets: terminal convention, gamma 0, Bellman stub") {
    const int samples = 4;
    NetworkBundle<float> nets = small_nets(samples, 17);
    TrainConfig cfg = tiny_config();

    for (int steps : {3, 5}) {
        MiniBatch batch = fake_batch(2, steps, samples, 100 + steps);
        std::vector<std::vector<float>> losses(2);
        Rng rng(steps);
        for (auto& l : losses) {
            l.resize(steps);
            for (auto& v : l) v = static_cast<float>(rng.uniform(0.0, 1.0));
        }

        {
            TrainConfig g0 = cfg;
            g0.gamma = 0.0f;
            auto y = compute_targets(nets, batch, losses, g0);
            for (int i = 0; i < 2; i++) {
                for (int k = 0; k < steps; k++) CHECK(y[i][k] == losses[i][k]);
            }
        }
        {
            auto y = compute_targets(nets, batch, losses, cfg);
            for (int i = 0; i < 2; i++) CHECK(y[i][steps - 1] == losses[i][steps - 1]);
        }
        {
            // exact tail-sum critic stub reproduces the discounted sums
            std::vector<std::vector<float>> tails(2);
            for (int i = 0; i < 2; i++) tails[i] = supervised_targets(losses[i], cfg.gamma);
            CriticStub stub = [&](int episode, int step) { return tails[episode][step]; };
            auto y = compute_targets(nets, batch, losses, cfg, &stub);
            for (int i = 0; i < 2; i++) {
                auto expect = supervised_targets(losses[i], cfg.gamma);
                for (int k = 0; k < steps; k++) CHECK(y[i][k] == expect[k]);
            }
        }
    }
}

TEST_CASE("critic_update: fixed point, first-step direction, reported loss") {
    const int samples = 4, steps = 3, n = 2;
    TrainConfig cfg = tiny_config();
    MiniBatch batch = fake_batch(n, steps, samples, 7);

    {
        // targets equal to the critic's own predictions leave it untouched
        NetworkBundle<float> nets = small_nets(samples, 23);
        std::vector<std::vector<float>> targets(n, std::vector<float>(steps));
        auto state = nets.critic.initial_state(nullptr, n);
        for (int k = 0; k < steps; k++) {
            TF q = critic_step<float>(nullptr, nets.critic, state, batch.obs_in[k], batch.prev_in[k],
                                      batch.act_in[k]);
            for (int i = 0; i < n; i++) targets[i][k] = q.data()[i];
        }
        auto before = nets.critic.clone();
        AdamState<float> opt(nets.critic.params(), {cfg.lr_critic});
        auto out = critic_update(nets, opt, batch, targets, cfg);
        CHECK(out.value == doctest::Approx(0.0));
        CHECK(stores_equal(before.params(), nets.critic.params()));
    }
    {
        NetworkBundle<float> nets = small_nets(samples, 29);
        std::vector<std::vector<float>> targets(n, std::vector<float>(steps, 0.37f));

        // independent recomputation of the loss and its gradient
        Tape<float> tape;
        nets.critic.params().zero_grad();
        auto state = nets.critic.initial_state(&tape, n);
        TF acc = TF::scalar(0.0f);
        for (int k = 0; k < steps; k++) {
            TF q = critic_step<float>(&tape, nets.critic, state, batch.obs_in[k], batch.prev_in[k],
                                      batch.act_in[k]);
            TF y(Shape{n, 1}, 0.37f);
            acc = add(&tape, acc, sum(&tape, square(&tape, sub(&tape, q, y))));
        }
        TF expect_loss = scale(&tape, acc, 0.5f / (n * steps));
        backward(expect_loss, tape);
        std::vector<std::vector<float>> grads;
        for (auto& t : nets.critic.params().tensors) grads.emplace_back(t.grad().begin(), t.grad().end());

        auto before = nets.critic.clone();
        AdamState<float> opt(nets.critic.params(), {cfg.lr_critic});
        auto out = critic_update(nets, opt, batch, targets, cfg);
        CHECK(out.value == doctest::Approx(expect_loss.value()).epsilon(1e-6));

        // fresh-ADAM first step moves each parameter by ~ -lr * sign(grad)
        for (size_t p = 0; p < grads.size(); p++) {
            auto now = nets.critic.params().tensors[p].data();
            auto was = before.params().tensors[p].data();
            for (size_t j = 0; j < grads[p].size(); j++) {
                if (std::abs(grads[p][j]) < 1e-4f) continue;
                const float delta = now[j] - was[j];
                CHECK(delta == doctest::Approx(-cfg.lr_critic * (grads[p][j] > 0 ? 1.0f : -1.0f)).epsilon(1e-3));
            }
        }
    }
}

TEST_CASE("actor_update: frozen critic, zero-gradient case, descent, isolation") {
    const int samples = 4, steps = 3, n = 2;
    TrainConfig cfg = tiny_config();
    MiniBatch batch = fake_batch(n, steps, samples, 31);

    {
        // critic with zero weights is constant in the action -> no actor motion
        NetworkBundle<float> nets = small_nets(samples, 37);
        nets.critic = DeepRecurrentNet<float>(samples + 4, 8, 1);
        nets.critic.params().set_requires_grad(true);
        auto before = nets.actor.clone();
        AdamState<float> opt(nets.actor.params(), {cfg.lr_actor});
        auto out = actor_update(nets, opt, batch, cfg);
        CHECK(out.value == doctest::Approx(0.0));
        CHECK(stores_equal(before.params(), nets.actor.params()));
    }
    {
        NetworkBundle<float> nets = small_nets(samples, 41);
        auto critic_before = nets.critic.clone();
        auto gen_before = nets.generator.clone();
        AdamState<float> opt(nets.actor.params(), {cfg.lr_actor});
        auto out = actor_update(nets, opt, batch, cfg);
        CHECK(std::isfinite(out.value));
        // critic and generator parameters bitwise unchanged
        CHECK(stores_equal(critic_before.params(), nets.critic.params()));
        CHECK(stores_equal(gen_before.params(), nets.generator.params()));
        // critic params still marked trainable after the freeze
        for (auto& t : nets.critic.params().tensors) CHECK(t.requires_grad());

        // objective decreases after the descent step
        auto objective = [&](NetworkBundle<float>& b) {
            auto sa = b.actor.initial_state(nullptr, n);
            auto sc = b.critic.initial_state(nullptr, n);
            double acc = 0.0;
            for (int k = 0; k < steps; k++) {
                TF a = actor_step<float>(nullptr, b.actor, sa, batch.obs_in[k], batch.prev_in[k]);
                TF q = critic_step<float>(nullptr, b.critic, sc, batch.obs_in[k], batch.prev_in[k], a);
                for (int i = 0; i < n; i++) acc += q.data()[i];
            }
            return acc / (n * steps);
        };
        CHECK(objective(nets) < out.value);
    }
}

TEST_CASE("replayed-action gradients equal live ones under zero noise") {
    TrainConfig cfg = tiny_config();
    cfg.ou_sigma = 0.0f;  // exploration rotations are identically zero
    ImageDataset ds = synth_dataset(12, 16, 16, 3);
    Trainer trainer(cfg, ds);

    // episodes must come from the current policy for a_t == mu(h_t), and from
    // the same batched forward layout the update recomputes them with
    std::vector<const ProcessedImage*> images;
    for (int i = 0; i < cfg.batch_size; i++) images.push_back(&trainer.processed_train(i));
    std::vector<ScanHistory> rollouts = rollout_deterministic(trainer.nets().actor, images, cfg.env);
    std::vector<Episode> episodes;
    for (int i = 0; i < cfg.batch_size; i++) episodes.push_back(Episode{std::move(rollouts[i]), i});
    std::vector<const Episode*> sampled;
    for (const Episode& e : episodes) sampled.push_back(&e);
    MiniBatch batch = trainer.assemble_batch(sampled);

    NetworkBundle<float> live_nets = clone_bundle(trainer.nets());
    NetworkBundle<float> replay_nets = clone_bundle(trainer.nets());

    AdamState<float> opt_live(live_nets.actor.params(), {cfg.lr_actor});
    TrainConfig live_cfg = cfg;
    live_cfg.actor_live_actions = true;
    auto out_live = actor_update(live_nets, opt_live, batch, live_cfg);

    AdamState<float> opt_replay(replay_nets.actor.params(), {cfg.lr_actor});
    TrainConfig replay_cfg = cfg;
    replay_cfg.actor_live_actions = false;
    auto out_replay = actor_update(replay_nets, opt_replay, batch, replay_cfg);

    CHECK(out_live.value == out_replay.value);
    CHECK(stores_equal(live_nets.actor.params(), replay_nets.actor.params()));
}

TEST_CASE("generator_update: zero-gradient fixed point and loss recomputation") {
    TrainConfig cfg = tiny_config();
    cfg.gen_weight_decay = 1.0f;
    const int n = 4, h = 16, w = 16;
    NetworkBundle<float> nets = small_nets(4, 43);
    Rng rng(44);

    MiniBatch batch;
    batch.batch = n;
    batch.steps = 1;
    batch.scans = TF({n, 2, h, w});
    for (auto& v : batch.scans.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    {
        // targets equal to the generator's output: zero loss, no motion
        NetworkBundle<float> fixed = clone_bundle(nets);
        GeneratorNet<float> probe = fixed.generator.clone();
        batch.blur_targets = probe.forward(nullptr, batch.scans, NetMode::train).detached_copy();
        auto before = fixed.generator.clone();
        AdamConfig<float> acfg;
        acfg.lr = cfg.lr_gen;
        acfg.weight_decay = 1.0f;
        AdamState<float> opt(fixed.generator.params(), acfg);
        auto out = generator_update(fixed, opt, batch, cfg, 0);
        for (float v : out.per_episode) CHECK(v == doctest::Approx(0.0));
        CHECK(stores_equal(before.params(), fixed.generator.params()));
    }

    for (LossVariant variant : {LossVariant::mse, LossVariant::mse_sobel, LossVariant::region_max}) {
        TrainConfig vcfg = cfg;
        vcfg.loss_variant = variant;
        NetworkBundle<float> work = clone_bundle(nets);
        batch.blur_targets = TF({n, 1, h, w});
        for (auto& v : batch.blur_targets.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

        // independent recomputation on an exact copy
        GeneratorNet<float> probe = work.generator.clone();
        TF out_probe = probe.forward(nullptr, batch.scans, NetMode::train);
        TF expect;
        switch (variant) {
            case LossVariant::mse:
                expect = batch_mse<float>(nullptr, out_probe, batch.blur_targets);
                break;
            case LossVariant::mse_sobel: {
                TF base = batch_mse<float>(nullptr, out_probe, batch.blur_targets);
                TF edge = batch_sobel_mse<float>(nullptr, out_probe, batch.blur_targets);
                expect = add<float>(nullptr, base, scale<float>(nullptr, edge, vcfg.sobel_weight));
                break;
            }
            case LossVariant::region_max:
                expect = batch_region_max_mse<float>(nullptr, out_probe, batch.blur_targets, vcfg.region_size);
                break;
        }

        AdamConfig<float> acfg;
        acfg.lr = vcfg.lr_gen;
        acfg.weight_decay = vcfg.gen_weight_decay;
        AdamState<float> opt(work.generator.params(), acfg);
        auto got = generator_update(work, opt, batch, vcfg, 0);
        REQUIRE(got.per_episode.size() == static_cast<size_t>(n));
        for (int i = 0; i < n; i++) CHECK(got.per_episode[i] == expect.data()[i]);

        // actor and critic parameters bitwise unchanged by the generator step
        CHECK(stores_equal(nets.actor.params(), work.actor.params()));
        CHECK(stores_equal(nets.critic.params(), work.critic.params()));
    }
}

TEST_CASE("collect_episode: contract, determinism, zero-noise rollout equality") {
    TrainConfig cfg = tiny_config();
    ImageDataset ds = synth_dataset(4, 16, 16, 9);
    ProcessedImage img = preprocess(ds, 0);
    NetworkBundle<float> nets = small_nets(cfg.env.samples_per_segment, 53);

    {
        NoiseState noise;
        Rng rng(1);
        Episode ep = collect_episode(nets, img, 0, noise, rng, cfg, 0);
        CHECK(ep.history.steps() == cfg.env.segments);
        for (const auto& obs : ep.history.observations) {
            CHECK(static_cast<int>(obs.size()) == cfg.env.samples_per_segment);
        }
        for (const auto& a : ep.history.actions) {
            CHECK(std::hypot(a[0], a[1]) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    {
        NoiseState n1, n2;
        Rng r1(77), r2(77);
        Episode a = collect_episode(nets, img, 0, n1, r1, cfg, 5);
        Episode b = collect_episode(nets, img, 0, n2, r2, cfg, 5);
        for (int t = 0; t < cfg.env.segments; t++) {
            CHECK(a.history.actions[t] == b.history.actions[t]);
            CHECK(a.history.observations[t] == b.history.observations[t]);
        }
    }
    {
        TrainConfig quiet = cfg;
        quiet.ou_sigma = 0.0f;
        NoiseState noise;
        Rng rng(5);
        Episode ep = collect_episode(nets, img, 0, noise, rng, quiet, 0);
        auto plain = rollout_deterministic(nets.actor, {&img}, quiet.env);
        for (int t = 0; t < quiet.env.segments; t++) {
            CHECK(ep.history.actions[t] == plain[0].actions[t]);
            CHECK(ep.history.observations[t] == plain[0].observations[t]);
        }
    }
}

TEST_CASE("trainer: zero iterations, warmup skips, bitwise determinism") {
    TrainConfig cfg = tiny_config();
    ImageDataset ds = synth_dataset(12, 16, 16, 3);

    {
        TrainConfig none = cfg;
        none.iterations = 0;
        Trainer t(none, ds);
        CHECK(t.finished());
    }
    {
        auto run = [&](std::uint64_t seed) {
            TrainConfig c = cfg;
            c.seed = seed;
            Trainer t(c, ds);
            std::vector<float> stream;
            while (!t.finished()) {
                auto rec = t.run_iteration(0);
                stream.push_back(rec.updated ? rec.gen_loss : -1.0f);
                stream.push_back(rec.updated ? rec.critic_loss : -1.0f);
                stream.push_back(rec.updated ? rec.actor_obj : -1.0f);
                stream.push_back(rec.l_avg);
            }
            for (auto& t2 : t.nets().actor.params().tensors) {
                for (float v : t2.data()) stream.push_back(v);
            }
            for (auto& t2 : t.nets().generator.params().tensors) {
                for (float v : t2.data()) stream.push_back(v);
            }
            return stream;
        };
        auto a = run(11);
        auto b = run(11);
        CHECK(a == b);
        auto c = run(12);
        CHECK(a != c);
    }
    {
        // before the buffer holds a full batch no update runs
        Trainer t(cfg, ds);
        for (int i = 0; i < static_cast<int>(cfg.batch_size) - 1; i++) {
            auto rec = t.run_iteration(0);
            CHECK_FALSE(rec.updated);
        }
        auto rec = t.run_iteration(0);
        CHECK(rec.updated);
        CHECK(t.stats().initialized);
        CHECK(std::isfinite(rec.gen_loss));
        CHECK(rec.l_avg > 0.0f);
    }
}

TEST_CASE("trainer rejects out-of-domain configurations") {
    ImageDataset ds = synth_dataset(12, 16, 16, 2);
    {
        TrainConfig bad = tiny_config();
        bad.env.probe_spacing = 1.0f;  // would let a diagonal resample pixels
        CHECK_THROWS_AS(Trainer(bad, ds), ConfigError);
    }
    {
        TrainConfig bad = tiny_config();
        bad.gamma = 1.0f;
        CHECK_THROWS_AS(Trainer(bad, ds), ConfigError);
    }
    {
        TrainConfig bad = tiny_config();
        bad.beta_omega = 0.0f;
        CHECK_THROWS_AS(Trainer(bad, ds), ConfigError);
    }
    {
        TrainConfig bad = tiny_config();
        bad.env.segments = 0;
        CHECK_THROWS_AS(Trainer(bad, ds), ConfigError);
    }
}

TEST_CASE("trainer evaluation reports finite statistics") {
    TrainConfig cfg = tiny_config();
    ImageDataset ds = synth_dataset(12, 16, 16, 21);
    Trainer t(cfg, ds);
    for (int i = 0; i < 5; i++) t.run_iteration(0);
    EvalReport rep = t.evaluate_adaptive();
    CHECK(rep.count == t.test_split().count());
    CHECK(std::isfinite(rep.mean));
    CHECK(std::isfinite(rep.std_dev));
    CHECK(rep.mean >= 0.0);

    EnvConfig env = cfg.env;
    std::vector<Vec2> spiral = spiral_path(env);
    EvalReport srep = t.evaluate_static(spiral);
    CHECK(srep.count == rep.count);
    CHECK(std::isfinite(srep.mean));
}
