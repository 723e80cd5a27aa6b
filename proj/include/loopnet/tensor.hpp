#pragma once

#include <memory>
#include <type_traits>
#include <utility>

#include "loopnet/common.hpp"

namespace loopnet {

/// Dense row-major tensor of a real scalar type, with an optional gradient
/// buffer of the same shape. Copying a Tensor copies the handle, not the
/// storage; two handles to the same storage alias (used for weight tying).
template <typename F>
class Tensor {
  static_assert(std::is_floating_point_v<F>);

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    Tensor t;
    t.p_ = std::make_shared<Impl>();
    t.p_->shape = std::move(shape);
    t.p_->data.assign(static_cast<size_t>(numel_of(t.p_->shape)), F(0));
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<int64_t> shape, F value,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (F& v : t.data()) {
      v = value;
    }
    return t;
  }

  static Tensor scalar(F value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  static Tensor from_data(std::vector<int64_t> shape, std::vector<F> data,
                          bool requires_grad = false) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
    Tensor t;
    t.p_ = std::make_shared<Impl>();
    t.p_->shape = std::move(shape);
    t.p_->data = std::move(data);
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, F stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (F& v : t.data()) {
      v = static_cast<F>(rng.gaussian()) * stddev;
    }
    return t;
  }

  bool defined() const { return static_cast<bool>(p_); }
  const std::vector<int64_t>& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int64_t dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(p_->data.size()); }

  // A Tensor is a handle onto shared storage: a const handle still refers
  // to mutable values, like a const shared_ptr.
  std::vector<F>& data() const { return p_->data; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool on) { p_->requires_grad = on; }

  /// Gradient buffer, allocated as zeros on first access.
  std::vector<F>& grad() const {
    if (p_->grad.empty()) {
      p_->grad.assign(p_->data.size(), F(0));
    }
    return p_->grad;
  }
  bool has_grad_storage() const { return !p_->grad.empty(); }
  void zero_grad() const {
    if (!p_->grad.empty()) {
      std::fill(p_->grad.begin(), p_->grad.end(), F(0));
    }
  }

  F item() const {
    if (size() != 1) {
      throw ContractError("item() requires a scalar tensor, got shape " +
                          shape_string(shape()));
    }
    return p_->data[0];
  }

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

  /// Deep copy (fresh storage, no grad carried over).
  Tensor clone() const {
    Tensor t = from_data(p_->shape, p_->data);
    t.p_->requires_grad = p_->requires_grad;
    return t;
  }

  void check_finite(const char* context) const {
    for (size_t i = 0; i < p_->data.size(); ++i) {
      if (!std::isfinite(static_cast<double>(p_->data[i]))) {
        throw NonFiniteError(std::string(context) + ": non-finite value at flat index " +
                             std::to_string(i) + " in tensor of shape " +
                             shape_string(p_->shape));
      }
    }
  }

 private:
  struct Impl {
    std::vector<int64_t> shape;
    std::vector<F> data;
    std::vector<F> grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Impl> p_;
};

/// Integer tensor for token ids and targets. Not differentiable.
struct ITensor {
  std::vector<int64_t> shape;
  std::vector<int32_t> data;

  static ITensor zeros(std::vector<int64_t> s) {
    ITensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), 0);
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }
};

/// Reverse-mode tape: an ordered record of backward closures, one per
/// executed primitive, replayed in reverse by backward().
template <typename F>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays all recorded nodes in reverse.
  /// Gradients accumulate additively into each tensor's grad buffer.
  void backward(Tensor<F> loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_string(loss.shape()));
    }
    loss.grad()[0] += F(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      nodes_[i]();
    }
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace loopnet
