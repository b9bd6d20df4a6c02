#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "qgan/tensor.hpp"

namespace qgan::ad {

/// Records differentiable operations in creation order.
///
/// Constructing a Tape makes it the active tape for the calling thread until
/// it is destroyed; ops only record when a tape is active and one of their
/// inputs requires a gradient. Nodes are appended as results are produced, so
/// the node list is already topologically ordered.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward);

  /// Seeds d(output)/d(output) = 1 and runs every node in reverse. Leaf
  /// gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<T>& output);

  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string_view> op_names() const;

 private:
  struct Node {
    std::string_view op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

/// Suspends recording on this thread for the guard's lifetime.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* saved_;
};

/// Max over coordinates of |autodiff - central difference| / max(|central difference|, 1e-8).
double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& input, double eps);

/// max |autodiff - central difference| / max |central difference| over `coords`
/// coordinates picked by `seed` (all coordinates when coords >= numel).
double grad_check_normwise(const std::function<TensorD(const TensorD&)>& f, const TensorD& input, double eps,
                           std::size_t coords, std::uint64_t seed);

extern template class Tape<float>;
extern template class Tape<double>;
extern template class NoGradGuard<float>;
extern template class NoGradGuard<double>;

}  // namespace qgan::ad
