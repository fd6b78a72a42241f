#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scanrl/tensor.hpp"

namespace scanrl {

// Ordered, named collection of trainable tensors. Order is the identity that
// optimizer state, soft updates and checkpoints are aligned against.
template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;

    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        names.push_back(name);
        tensors.push_back(std::move(t));
        return tensors.back();
    }

    size_t size() const { return tensors.size(); }

    void set_requires_grad(bool on) {
        for (auto& t : tensors) t.set_requires_grad(on);
    }

    void zero_grad() {
        for (auto& t : tensors) t.zero_grad();
    }
};

template <typename T>
struct AdamConfig {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    // Parameters are multiplied by this factor after every update; 1 disables.
    T weight_decay = T(1);
};

// Bias-corrected ADAM with per-tensor moment accumulators. A tensor whose
// gradient contains a non-finite value is skipped for that step (the skip is
// counted and surfaced to the caller) so one bad minibatch cannot poison the
// parameters.
template <typename T>
class AdamState {
public:
    AdamState() = default;

    AdamState(const ParamStore<T>& params, AdamConfig<T> cfg) : cfg_(cfg) {
        for (const auto& t : params.tensors) {
            m_.emplace_back(t.size(), T(0));
            v_.emplace_back(t.size(), T(0));
        }
    }

    void set_lr(T lr) { cfg_.lr = lr; }
    T lr() const { return cfg_.lr; }
    long step_count() const { return step_; }
    long skipped_total() const { return skipped_; }

    // One update over the whole store; returns how many tensors were skipped
    // for non-finite gradients this step.
    int step(ParamStore<T>& params) {
        if (params.size() != m_.size()) {
            throw UsageError("adam_step: state built for " + std::to_string(m_.size()) + " tensors, got " +
                             std::to_string(params.size()));
        }
        step_ += 1;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
        int skipped = 0;
        for (size_t p = 0; p < params.size(); p++) {
            Tensor<T>& t = params.tensors[p];
            auto g = t.grad();
            bool finite = true;
            for (T v : g) {
                if (!std::isfinite(v)) {
                    finite = false;
                    break;
                }
            }
            if (!finite) {
                skipped++;
                continue;
            }
            auto d = t.data();
            auto& m = m_[p];
            auto& v = v_[p];
            for (size_t i = 0; i < m.size(); i++) {
                m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                d[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (cfg_.weight_decay != T(1)) d[i] *= cfg_.weight_decay;
            }
        }
        skipped_ += skipped;
        return skipped;
    }

    // Checkpoint access: moments plus the step counter.
    std::vector<std::vector<T>>& moments1() { return m_; }
    std::vector<std::vector<T>>& moments2() { return v_; }
    void set_step_count(long s) { step_ = s; }

private:
    AdamConfig<T> cfg_;
    std::vector<std::vector<T>> m_, v_;
    long step_ = 0;
    long skipped_ = 0;
};

template <typename T>
inline int adam_step(ParamStore<T>& params, AdamState<T>& state) {
    return state.step(params);
}

}  // namespace scanrl
