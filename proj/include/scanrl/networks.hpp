#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scanrl/adam.hpp"
#include "scanrl/ops.hpp"
#include "scanrl/rng.hpp"
#include "scanrl/scan_env.hpp"
#include "scanrl/tape.hpp"

namespace scanrl {

namespace init_detail {

template <typename T>
inline void truncated_normal_fill(Tensor<T>& t, Rng& rng, double std_dev = 0.02) {
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_gaussian(std_dev));
}

template <typename T>
inline void xavier_fill(Tensor<T>& t, Rng& rng, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-a, a));
}

}  // namespace init_detail

// ---------------------------------------------------------------------------
// Two-layer LSTM with input-to-layer-2 and layer-1-to-output skip
// connections, trainable initial states, and a bias-free dense head.
// ---------------------------------------------------------------------------

template <typename T>
class DeepRecurrentNet {
public:
    struct State {
        Tensor<T> h1, c1, h2, c2;
    };

    DeepRecurrentNet() = default;

    DeepRecurrentNet(int input_size, int hidden_size, int outputs)
        : input_size_(input_size), hidden_size_(hidden_size), outputs_(outputs) {
        auto zeros = [](Shape s) { return Tensor<T>(std::move(s)); };
        w1x_ = params_.add("l1/w_x", zeros({input_size, 4 * hidden_size}));
        w1h_ = params_.add("l1/w_h", zeros({hidden_size, 4 * hidden_size}));
        b1_ = params_.add("l1/bias", zeros({4 * hidden_size}));
        h01_ = params_.add("l1/h0", zeros({hidden_size}));
        c01_ = params_.add("l1/c0", zeros({hidden_size}));
        const int in2 = hidden_size + input_size;  // skip from inputs
        w2x_ = params_.add("l2/w_x", zeros({in2, 4 * hidden_size}));
        w2h_ = params_.add("l2/w_h", zeros({hidden_size, 4 * hidden_size}));
        b2_ = params_.add("l2/bias", zeros({4 * hidden_size}));
        h02_ = params_.add("l2/h0", zeros({hidden_size}));
        c02_ = params_.add("l2/c0", zeros({hidden_size}));
        head_ = params_.add("head/w", zeros({2 * hidden_size, outputs}));  // layer-1 skip to output
    }

    void init_weights(Rng& rng) {
        init_detail::truncated_normal_fill(w1x_, rng);
        init_detail::truncated_normal_fill(w1h_, rng);
        init_detail::truncated_normal_fill(w2x_, rng);
        init_detail::truncated_normal_fill(w2h_, rng);
        init_detail::truncated_normal_fill(head_, rng);
        for (auto* b : {&b1_, &b2_}) {
            for (auto& v : b->data()) v = T(0);
            for (int j = 0; j < hidden_size_; j++) b->data()[hidden_size_ + j] = T(1);  // forget gate
        }
    }

    State initial_state(Tape<T>* tape, int batch) const {
        return State{broadcast_rows(tape, h01_, batch), broadcast_rows(tape, c01_, batch),
                     broadcast_rows(tape, h02_, batch), broadcast_rows(tape, c02_, batch)};
    }

    // One recurrent step over a [batch x input_size] slab; returns the raw
    // head output [batch x outputs] and advances the state.
    Tensor<T> step(Tape<T>* tape, State& state, const Tensor<T>& x) const {
        if (x.rank() != 2 || x.shape()[1] != input_size_) {
            throw DimensionError("recurrent step: input " + shape_str(x.shape()) + " does not match width " +
                                 std::to_string(input_size_));
        }
        auto [h1, c1] = lstm_cell(tape, x, state.h1, state.c1, w1x_, w1h_, b1_);
        Tensor<T> x2 = concat_cols(tape, {h1, x});
        auto [h2, c2] = lstm_cell(tape, x2, state.h2, state.c2, w2x_, w2h_, b2_);
        state = State{h1, c1, h2, c2};
        Tensor<T> head_in = concat_cols(tape, {h2, h1});
        return matmul(tape, head_in, head_);
    }

    int input_size() const { return input_size_; }
    int hidden_size() const { return hidden_size_; }
    int outputs() const { return outputs_; }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    DeepRecurrentNet clone() const {
        DeepRecurrentNet copy(input_size_, hidden_size_, outputs_);
        for (size_t i = 0; i < params_.size(); i++) {
            std::copy(params_.tensors[i].data().begin(), params_.tensors[i].data().end(),
                      copy.params_.tensors[i].data().begin());
        }
        return copy;
    }

private:
    int input_size_ = 0, hidden_size_ = 0, outputs_ = 0;
    ParamStore<T> params_;
    Tensor<T> w1x_, w1h_, b1_, h01_, c01_;
    Tensor<T> w2x_, w2h_, b2_, h02_, c02_;
    Tensor<T> head_;
};

// Actor step: input [observation || prev_action], tanh head normalized to
// unit length (fallback (1,0) for a degenerate head).
template <typename T>
Tensor<T> actor_step(Tape<T>* tape, const DeepRecurrentNet<T>& net, typename DeepRecurrentNet<T>::State& state,
                     const Tensor<T>& observation, const Tensor<T>& prev_action) {
    Tensor<T> x = concat_cols(tape, {observation, prev_action});
    return unit_rows(tape, activation(tape, net.step(tape, state, x), ActKind::tanh));
}

// Critic step: input [observation || prev_action || action] -> scalar column.
template <typename T>
Tensor<T> critic_step(Tape<T>* tape, const DeepRecurrentNet<T>& net, typename DeepRecurrentNet<T>::State& state,
                      const Tensor<T>& observation, const Tensor<T>& prev_action, const Tensor<T>& action) {
    Tensor<T> x = concat_cols(tape, {observation, prev_action, action});
    return net.step(tape, state, x);
}

// ---------------------------------------------------------------------------
// Convolutional generator: strided encoder, a stack of skip-3 residual
// blocks, mirrored transposed-convolution decoder, 3x3 single-channel head.
// Every convolution is followed by ReLU then batch normalization; the
// residual add sits between the third activation and its normalization.
// ---------------------------------------------------------------------------

template <typename T>
class GeneratorNet {
    struct ConvBn {
        Tensor<T> kernel, bias, gamma, beta;
        Tensor<T> run_mean, run_var;
    };

public:
    GeneratorNet() = default;

    GeneratorNet(int base_channels, int res_blocks) : base_(base_channels), blocks_(res_blocks) {
        const int b = base_channels;
        enc_.push_back(make_layer("enc1", 2, b));
        enc_.push_back(make_layer("enc2", b, 2 * b));
        enc_.push_back(make_layer("enc3", 2 * b, 4 * b));
        for (int r = 0; r < res_blocks; r++) {
            const std::string prefix = "block" + std::to_string(r);
            res_.push_back({make_layer(prefix + "/c1", 4 * b, 4 * b), make_layer(prefix + "/c2", 4 * b, 4 * b),
                            make_layer(prefix + "/c3", 4 * b, 4 * b)});
        }
        dec_.push_back(make_tlayer("dec1", 4 * b, 2 * b));
        dec_.push_back(make_tlayer("dec2", 2 * b, b));
        dec_.push_back(make_tlayer("dec3", b, b));
        head_kernel_ = params_.add("head/kernel", Tensor<T>({1, b, 3, 3}));
        head_bias_ = params_.add("head/bias", Tensor<T>({1}));
    }

    void init_weights(Rng& rng) {
        auto xavier_conv = [&](ConvBn& l, bool transposed) {
            const int k = l.kernel.shape()[2];
            const int c0 = l.kernel.shape()[0], c1 = l.kernel.shape()[1];
            const int fan_in = (transposed ? c0 : c1) * k * k;
            const int fan_out = (transposed ? c1 : c0) * k * k;
            init_detail::xavier_fill(l.kernel, rng, fan_in, fan_out);
        };
        for (auto& l : enc_) xavier_conv(l, false);
        for (auto& blk : res_) {
            for (auto& l : blk) xavier_conv(l, false);
        }
        for (auto& l : dec_) xavier_conv(l, true);
        {
            const int b = base_;
            init_detail::xavier_fill(head_kernel_, rng, b * 9, 9);
        }
    }

    // [n x 2 x h x w] -> [n x 1 x h x w]; extents must divide by the encoder
    // stride (8). Train mode uses batch statistics, infer the running ones.
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, NetMode mode) {
        if (x.rank() != 4 || x.shape()[1] != 2) {
            throw DimensionError("generator: input must be [n x 2 x h x w], got " + shape_str(x.shape()));
        }
        if (x.shape()[2] % 8 != 0 || x.shape()[3] % 8 != 0) {
            throw DimensionError("generator: extents " + shape_str(x.shape()) + " not divisible by stride 8");
        }
        Tensor<T> h = x;
        for (auto& l : enc_) h = conv_relu_bn(tape, l, h, 2, mode);
        for (auto& blk : res_) {
            Tensor<T> block_in = h;
            h = conv_relu_bn(tape, blk[0], h, 1, mode);
            h = conv_relu_bn(tape, blk[1], h, 1, mode);
            // residual joins after the activation, before normalization
            Tensor<T> a = activation(tape, add_channel_bias(tape, conv2d(tape, h, blk[2].kernel, 1), blk[2].bias),
                                     ActKind::relu);
            h = batch_norm(tape, add(tape, a, block_in), blk[2].gamma, blk[2].beta, blk[2].run_mean,
                           blk[2].run_var, mode);
        }
        for (auto& l : dec_) {
            Tensor<T> a = activation(
                tape, add_channel_bias(tape, conv2d_transpose(tape, h, l.kernel, 2), l.bias), ActKind::relu);
            h = batch_norm(tape, a, l.gamma, l.beta, l.run_mean, l.run_var, mode);
        }
        return add_channel_bias(tape, conv2d(tape, h, head_kernel_, 1), head_bias_);
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Batch-norm running statistics, ordered; part of checkpoints but not of
    // optimization.
    std::vector<std::pair<std::string, Tensor<T>>> buffers() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        auto grab = [&](const std::string& name, ConvBn& l) {
            out.emplace_back(name + "/run_mean", l.run_mean);
            out.emplace_back(name + "/run_var", l.run_var);
        };
        for (size_t i = 0; i < enc_.size(); i++) grab("enc" + std::to_string(i + 1), enc_[i]);
        for (size_t r = 0; r < res_.size(); r++) {
            for (int j = 0; j < 3; j++) grab("block" + std::to_string(r) + "/c" + std::to_string(j + 1), res_[r][j]);
        }
        for (size_t i = 0; i < dec_.size(); i++) grab("dec" + std::to_string(i + 1), dec_[i]);
        return out;
    }

    int base_channels() const { return base_; }
    int res_blocks() const { return blocks_; }

    GeneratorNet clone() const {
        GeneratorNet copy(base_, blocks_);
        for (size_t i = 0; i < params_.size(); i++) {
            std::copy(params_.tensors[i].data().begin(), params_.tensors[i].data().end(),
                      copy.params_.tensors[i].data().begin());
        }
        auto copy_stats = [](const ConvBn& from, ConvBn& to) {
            std::copy(from.run_mean.data().begin(), from.run_mean.data().end(), to.run_mean.data().begin());
            std::copy(from.run_var.data().begin(), from.run_var.data().end(), to.run_var.data().begin());
        };
        for (size_t i = 0; i < enc_.size(); i++) copy_stats(enc_[i], copy.enc_[i]);
        for (size_t r = 0; r < res_.size(); r++) {
            for (int j = 0; j < 3; j++) copy_stats(res_[r][j], copy.res_[r][j]);
        }
        for (size_t i = 0; i < dec_.size(); i++) copy_stats(dec_[i], copy.dec_[i]);
        return copy;
    }

private:
    ConvBn make_layer(const std::string& name, int c_in, int c_out) {
        ConvBn l;
        l.kernel = params_.add(name + "/kernel", Tensor<T>({c_out, c_in, 3, 3}));
        l.bias = params_.add(name + "/bias", Tensor<T>({c_out}));
        l.gamma = params_.add(name + "/gamma", Tensor<T>(Shape{c_out}, T(1)));
        l.beta = params_.add(name + "/beta", Tensor<T>({c_out}));
        l.run_mean = Tensor<T>({c_out});
        l.run_var = Tensor<T>(Shape{c_out}, T(1));
        return l;
    }

    // Transposed layer: kernel [c_in x c_out x k x k] maps c_in -> c_out.
    ConvBn make_tlayer(const std::string& name, int c_in, int c_out) {
        ConvBn l;
        l.kernel = params_.add(name + "/kernel", Tensor<T>({c_in, c_out, 3, 3}));
        l.bias = params_.add(name + "/bias", Tensor<T>({c_out}));
        l.gamma = params_.add(name + "/gamma", Tensor<T>(Shape{c_out}, T(1)));
        l.beta = params_.add(name + "/beta", Tensor<T>({c_out}));
        l.run_mean = Tensor<T>({c_out});
        l.run_var = Tensor<T>(Shape{c_out}, T(1));
        return l;
    }

    Tensor<T> conv_relu_bn(Tape<T>* tape, ConvBn& l, const Tensor<T>& x, int stride, NetMode mode) {
        Tensor<T> a =
            activation(tape, add_channel_bias(tape, conv2d(tape, x, l.kernel, stride), l.bias), ActKind::relu);
        return batch_norm(tape, a, l.gamma, l.beta, l.run_mean, l.run_var, mode);
    }

    int base_ = 0, blocks_ = 0;
    ParamStore<T> params_;
    std::vector<ConvBn> enc_;
    std::vector<std::array<ConvBn, 3>> res_;
    std::vector<ConvBn> dec_;
    Tensor<T> head_kernel_, head_bias_;
};

// ---------------------------------------------------------------------------
// Bundle: live actor/critic/generator plus target copies of the recurrent
// nets. Targets start as exact copies and never require gradients.
// ---------------------------------------------------------------------------

template <typename T>
struct NetworkBundle {
    DeepRecurrentNet<T> actor, critic;
    DeepRecurrentNet<T> actor_target, critic_target;
    GeneratorNet<T> generator;
};

struct NetConfig {
    int observation_size = 20;  // samples per segment
    int hidden_size = 256;
    int gen_base_channels = 32;
    int gen_res_blocks = 4;
};

template <typename T>
NetworkBundle<T> init_networks(const NetConfig& cfg, Rng& rng) {
    NetworkBundle<T> b;
    b.actor = DeepRecurrentNet<T>(cfg.observation_size + 2, cfg.hidden_size, 2);
    b.critic = DeepRecurrentNet<T>(cfg.observation_size + 4, cfg.hidden_size, 1);
    b.generator = GeneratorNet<T>(cfg.gen_base_channels, cfg.gen_res_blocks);
    b.actor.init_weights(rng);
    b.critic.init_weights(rng);
    b.generator.init_weights(rng);
    b.actor.params().set_requires_grad(true);
    b.critic.params().set_requires_grad(true);
    b.generator.params().set_requires_grad(true);
    b.actor_target = b.actor.clone();
    b.critic_target = b.critic.clone();
    return b;
}

// Deep copy, live stores marked trainable again.
template <typename T>
NetworkBundle<T> clone_bundle(const NetworkBundle<T>& b) {
    NetworkBundle<T> copy;
    copy.actor = b.actor.clone();
    copy.critic = b.critic.clone();
    copy.actor_target = b.actor_target.clone();
    copy.critic_target = b.critic_target.clone();
    copy.generator = b.generator.clone();
    copy.actor.params().set_requires_grad(true);
    copy.critic.params().set_requires_grad(true);
    copy.generator.params().set_requires_grad(true);
    return copy;
}

// Exponential moving average onto the target store: t <- beta*t + (1-beta)*l.
template <typename T>
void soft_update(const ParamStore<T>& live, ParamStore<T>& target, T beta) {
    if (live.size() != target.size()) {
        throw DimensionError("soft_update: store sizes " + std::to_string(live.size()) + " and " +
                             std::to_string(target.size()) + " differ");
    }
    for (size_t i = 0; i < live.size(); i++) {
        auto lv = live.tensors[i].data();
        auto tv = target.tensors[i].data();
        if (lv.size() != tv.size()) {
            throw DimensionError("soft_update: tensor " + live.names[i] + " sizes differ");
        }
        for (size_t j = 0; j < lv.size(); j++) tv[j] = beta * tv[j] + (T(1) - beta) * lv[j];
    }
}

// [2 x h x w] tensor view of a partial scan (values then mask).
template <typename T>
Tensor<T> scan_to_tensor(const PartialScan& scan) {
    Tensor<T> t({2, scan.height, scan.width});
    auto d = t.data();
    for (size_t i = 0; i < scan.values.size(); i++) d[i] = static_cast<T>(scan.values[i]);
    for (size_t i = 0; i < scan.mask.size(); i++) d[scan.values.size() + i] = static_cast<T>(scan.mask[i]);
    return t;
}

}  // namespace scanrl
