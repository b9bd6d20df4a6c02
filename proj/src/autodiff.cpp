#include "qgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace qgan::ad {
namespace {
template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_slot<T>()) {
  active_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_slot<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot<T>();
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& output) {
  if (output.numel() != 1)
    throw ShapeError("backward: output must be a scalar, got " + shape_str(output.shape()));
  for (auto& node : nodes_) node.output.zero_grad();
  Tensor<T> out = output;
  out.grad_mut()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

template <typename T>
std::vector<std::string_view> Tape<T>::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n.op);
  return names;
}

template <typename T>
NoGradGuard<T>::NoGradGuard() : saved_(active_slot<T>()) {
  active_slot<T>() = nullptr;
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
  active_slot<T>() = saved_;
}

double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& input, double eps) {
  TensorD x = input.detach();
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape<double> tape;
    TensorD y = f(x);
    tape.backward(y);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  NoGradGuard<double> no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    TensorD xp = input.detach();
    TensorD xm = input.detach();
    xp.data_mut()[i] += eps;
    xm.data_mut()[i] -= eps;
    const double numeric = (f(xp).item() - f(xm).item()) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_normwise(const std::function<TensorD(const TensorD&)>& f, const TensorD& input, double eps,
                           std::size_t coords, std::uint64_t seed) {
  TensorD x = input.detach();
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape<double> tape;
    TensorD y = f(x);
    tape.backward(y);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  std::vector<std::size_t> order(x.numel());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 engine(seed);
  const std::size_t picks = std::min(coords, order.size());
  for (std::size_t i = 0; i < picks; ++i) std::swap(order[i], order[i + engine() % (order.size() - i)]);

  NoGradGuard<double> no_grad;
  double worst = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < picks; ++k) {
    const std::size_t i = order[k];
    TensorD xp = input.detach();
    TensorD xm = input.detach();
    xp.data_mut()[i] += eps;
    xm.data_mut()[i] -= eps;
    const double numeric = (f(xp).item() - f(xm).item()) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric));
    scale = std::max(scale, std::abs(numeric));
  }
  return worst / std::max(scale, 1e-300);
}

template class Tape<float>;
template class Tape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;

}  // namespace qgan::ad
