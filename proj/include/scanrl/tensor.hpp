#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "scanrl/errors.hpp"

namespace scanrl {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); i++) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major tensor. Copying a Tensor copies the handle, not the
// buffer; operations always allocate fresh nodes, so values written by one
// operation are never observed to change by another. Gradient storage lives
// on the node and is allocated on first touch, which keeps tensors that
// never receive a contribution at an exactly-zero gradient.
template <typename T>
class Tensor {
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until touched
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(numel(node_->shape)), fill);
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        Tensor t(shape);
        if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not fill shape " + shape_str(shape));
        }
        t.node_->data = std::move(data);
        return t;
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<T> data() { return {node_->data.data(), node_->data.size()}; }
    std::span<const T> data() const { return {node_->data.data(), node_->data.size()}; }

    T value() const {
        if (size() != 1) throw UsageError("value() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }

    // Gradient storage is a side channel on the shared node: a const handle
    // may still accumulate into it. Allocates (to zero) on first access.
    std::span<T> grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
        return {node_->grad.data(), node_->grad.size()};
    }

    void zero_grad() const {
        if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    }

    void drop_grad() const { node_->grad.clear(); }

    // Fresh node with the same values and no tape lineage.
    Tensor detached_copy() const {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const void* node_id() const { return node_.get(); }

private:
    std::shared_ptr<Node> node_;
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

}  // namespace scanrl
