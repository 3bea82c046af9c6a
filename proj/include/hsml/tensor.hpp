#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsml/error.hpp"

namespace hsml {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

template <typename T>
class Tape;

template <typename T>
struct GradNode {
    std::vector<T> grad; // sized lazily on first accumulation
    std::function<void(std::span<const T>)> backprop;
    bool trainable = false;
};

/// Dense row-major array of rank 1..3 with an optional link into a Tape.
///
/// Values are immutable and shared between copies; ops always allocate a
/// fresh result. A tensor that is not on a tape is a constant.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 3) {
            throw InvalidShape("tensor rank must be 1..3, got " + shape_str(shape_));
        }
        for (auto d : shape_) {
            if (d == 0) throw InvalidShape("tensor mode sizes must be positive, got " + shape_str(shape_));
        }
        if (data.size() != shape_size(shape_)) {
            throw InvalidShape("data length " + std::to_string(data.size()) + " does not match shape " +
                               shape_str(shape_));
        }
        data_ = std::make_shared<const std::vector<T>>(std::move(data));
    }

    static Tensor full(Shape shape, T value) {
        auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }
    static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
    std::size_t size() const noexcept { return data_ ? data_->size() : 0; }
    bool empty() const noexcept { return !data_; }

    std::span<const T> values() const noexcept {
        return data_ ? std::span<const T>(*data_) : std::span<const T>{};
    }
    const T* data() const noexcept { return data_ ? data_->data() : nullptr; }
    std::vector<T> to_vector() const { return data_ ? *data_ : std::vector<T>{}; }

    T operator[](std::size_t i) const { return (*data_)[i]; }
    T at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }
    T at(std::size_t i, std::size_t j, std::size_t k) const {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }

    Tape<T>* tape() const noexcept { return tape_; }
    GradNode<T>* node() const noexcept { return node_.get(); }
    bool on_tape() const noexcept { return tape_ != nullptr; }

    /// Copy of the values with the tape link dropped.
    Tensor detach() const {
        Tensor out = *this;
        out.tape_ = nullptr;
        out.node_.reset();
        return out;
    }

    /// Same data under a different shape (same element count).
    Tensor with_shape(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw InvalidShape("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

private:
    friend class Tape<T>;

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    std::shared_ptr<GradNode<T>> node_;
    Tape<T>* tape_ = nullptr;
};

/// Records differentiable ops for one forward pass; consumed by backward().
///
/// Not copyable or movable: recorded tensors hold a pointer to their tape.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a trainable leaf carrying the values of `value`.
    Tensor<T> watch(const Tensor<T>& value) {
        Tensor<T> out = value.detach();
        auto node = std::make_shared<GradNode<T>>();
        node->trainable = true;
        attach(out, std::move(node));
        return out;
    }

    /// Result of a differentiable op. `backprop` receives the output
    /// gradient and must accumulate into the inputs through grad_of().
    Tensor<T> record(Tensor<T> result, std::function<void(std::span<const T>)> backprop) {
        auto node = std::make_shared<GradNode<T>>();
        node->backprop = std::move(backprop);
        attach(result, std::move(node));
        return result;
    }

    /// Mutable gradient buffer of an on-tape tensor, or an empty span for
    /// constants and tensors on other tapes.
    std::span<T> grad_of(const Tensor<T>& t) {
        if (t.tape_ != this || !t.node_) return {};
        auto& g = t.node_->grad;
        if (g.empty()) g.assign(t.size(), T{0});
        return g;
    }

    void backward(const Tensor<T>& loss) {
        if (consumed_) throw UsageError("backward called twice on the same tape");
        if (loss.tape_ != this) throw UsageError("loss is not recorded on this tape");
        if (loss.size() != 1) throw UsageError("loss must be scalar, got shape " + shape_str(loss.shape()));
        consumed_ = true;
        loss.node_->grad.assign(1, T{1});
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& node = **it;
            if (node.backprop && !node.grad.empty()) node.backprop(node.grad);
        }
    }

    /// Gradient for `t` after backward(); zeros when `t` was not on the path.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (!consumed_) throw UsageError("gradients requested before backward");
        if (t.tape_ != this || !t.node_ || t.node_->grad.empty()) return Tensor<T>::zeros(t.shape());
        return Tensor<T>(t.shape(), t.node_->grad);
    }

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    void attach(Tensor<T>& t, std::shared_ptr<GradNode<T>> node) {
        if (consumed_) throw UsageError("cannot record onto a tape after backward");
        t.tape_ = this;
        t.node_ = node;
        nodes_.push_back(std::move(node));
    }

    std::vector<std::shared_ptr<GradNode<T>>> nodes_;
    bool consumed_ = false;
};

} // namespace hsml
