#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "scanrl/tensor.hpp"

namespace scanrl {

// Record of executed operations. Each entry owns a closure that pulls the
// gradient of its outputs and accumulates into its inputs; replaying the
// entries in exact reverse execution order is the whole backward pass.
template <typename T>
class Tape {
public:
    void record(const Tensor<T>& out, std::function<void()> back) {
        outputs_.insert(out.node_id());
        entries_.push_back(std::move(back));
    }

    void record2(const Tensor<T>& out_a, const Tensor<T>& out_b, std::function<void()> back) {
        outputs_.insert(out_a.node_id());
        outputs_.insert(out_b.node_id());
        entries_.push_back(std::move(back));
    }

    bool produced(const Tensor<T>& t) const { return outputs_.count(t.node_id()) != 0; }
    size_t size() const { return entries_.size(); }

    void backward(Tensor<T> loss) {
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!produced(loss)) throw UsageError("backward: loss was not produced through this tape");
        loss.grad()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

    void clear() {
        entries_.clear();
        outputs_.clear();
    }

private:
    std::vector<std::function<void()>> entries_;
    std::unordered_set<const void*> outputs_;
};

// Reverse-mode accumulation of d(loss)/d(x) for every requires-grad tensor
// reachable from the loss. Repeated use of a tensor sums its contributions.
template <typename T>
inline void backward(const Tensor<T>& loss, Tape<T>& tape) {
    tape.backward(loss);
}

}  // namespace scanrl
