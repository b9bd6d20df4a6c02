#include "qgan/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "qgan/autodiff.hpp"
#include "qgan/fft.hpp"
#include "qgan/kernels.hpp"

namespace qgan::ad {
namespace {

template <typename T, typename Backward>
Tensor<T> finish(std::string_view op, Tensor<T> out, std::vector<Tensor<T>> inputs, Backward&& backward) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out, std::forward<Backward>(backward));
  return out;
}

template <typename T>
void require_same(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch(op, a.shape(), b.shape());
}

template <typename T>
void require_rank(std::string_view op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

// out = f(a, b); da = d out / d a, db = d out / d b evaluated at (a, b, out).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  require_same(op, a, b);
  Tensor<T> out(a.shape());
  auto o = out.data_mut();
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i], bv[i]);
  return finish(op, out, {a, b}, [a, b, out, da, db]() mutable {
    const auto g = out.grad();
    const auto av = a.data(), bv = b.data(), ov = out.data();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[i], ov[i]);
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(av[i], bv[i], ov[i]);
    }
  });
}

template <typename T, typename F, typename D>
Tensor<T> unary(std::string_view op, const Tensor<T>& a, F f, D d) {
  Tensor<T> out(a.shape());
  auto o = out.data_mut();
  const auto av = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i]);
  return finish(op, out, {a}, [a, out, d]() mutable {
    const auto g = out.grad();
    const auto av = a.data(), ov = out.data();
    auto ga = a.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(av[i], ov[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T o) { return -o / y; });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "maximum", a, b, [](T x, T y) { return x >= y ? x : y; }, [](T x, T y, T) { return x >= y ? T(1) : T(0); },
      [](T x, T y, T) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  const T k = T(s);
  return unary("scale", a, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
  const T k = T(s);
  return unary("add_scalar", a, [k](T x) { return x + k; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sqrt_eps(const Tensor<T>& a, double eps) {
  const T e = T(eps);
  return unary("sqrt_eps", a, [e](T x) { return std::sqrt(x + e); }, [](T, T o) { return T(0.5) / o; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary("relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  const T s = T(slope);
  return unary(
      "leaky_relu", a, [s](T x) { return x > T(0) ? x : s * x; }, [s](T x, T) { return x > T(0) ? T(1) : s; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T v : a.data())
    if (!(v > T(0))) throw std::domain_error("log: non-positive input " + std::to_string(double(v)));
  return unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary("tanh", a, [](T x) { return std::tanh(x); }, [](T, T o) { return T(1) - o * o; });
}

template <typename T>
Tensor<T> real_pow(const Tensor<T>& a, double p) {
  const double phase = std::cos(p * std::numbers::pi);
  auto f = [p, phase](T x) {
    const double m = std::max(std::abs(double(x)), 1e-12);
    return T(std::pow(m, p) * (x < T(0) ? phase : 1.0));
  };
  auto d = [p, phase](T x, T) {
    const double m = std::max(std::abs(double(x)), 1e-12);
    // d/dx |x|^p = p |x|^(p-1) sign(x)
    return x < T(0) ? T(-p * std::pow(m, p - 1.0) * phase) : T(p * std::pow(m, p - 1.0));
  };
  return unary("real_pow", a, f, d);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += double(v);
  Tensor<T> out = Tensor<T>::scalar(T(acc));
  return finish("sum", out, {a}, [a, out]() mutable {
    const T g = out.grad()[0];
    for (auto& v : a.grad_mut()) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += double(v);
  const double n = double(a.numel());
  Tensor<T> out = Tensor<T>::scalar(T(acc / n));
  return finish("mean", out, {a}, [a, out, n]() mutable {
    const T g = T(double(out.grad()[0]) / n);
    for (auto& v : a.grad_mut()) v += g;
  });
}

template <typename T>
Tensor<T> median(const Tensor<T>& a) {
  const auto v = a.data();
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  const std::size_t n = v.size();
  std::vector<std::size_t> picks;
  if (n % 2 == 1) {
    picks = {idx[n / 2]};
  } else {
    picks = {idx[n / 2 - 1], idx[n / 2]};
  }
  double acc = 0.0;
  for (auto i : picks) acc += double(v[i]);
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(picks.size())));
  return finish("median", out, {a}, [a, out, picks]() mutable {
    const T g = T(double(out.grad()[0]) / double(picks.size()));
    auto ga = a.grad_mut();
    for (auto i : picks) ga[i] += g;
  });
}

template <typename T>
Tensor<T> broadcast(const Tensor<T>& scalar, const Shape& shape) {
  if (scalar.numel() != 1) throw_shape_mismatch("broadcast", scalar.shape(), Shape{1});
  Tensor<T> out(shape, scalar[0]);
  return finish("broadcast", out, {scalar}, [scalar, out]() mutable {
    double acc = 0.0;
    for (T g : out.grad()) acc += double(g);
    scalar.grad_mut()[0] += T(acc);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) throw_shape_mismatch("reshape", a.shape(), shape);
  Tensor<T> out(shape, std::vector<T>(a.data().begin(), a.data().end()));
  return finish("reshape", out, {a}, [a, out]() mutable {
    auto ga = a.grad_mut();
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> select(const Tensor<T>& a, std::size_t index) {
  const std::size_t lead = a.dim(0);
  if (index >= lead) throw ShapeError("select: index " + std::to_string(index) + " out of " + shape_str(a.shape()));
  Shape shape(a.shape().begin() + 1, a.shape().end());
  if (shape.empty()) shape = {1};
  const std::size_t block = a.numel() / lead;
  const auto av = a.data();
  Tensor<T> out(shape, std::vector<T>(av.begin() + index * block, av.begin() + (index + 1) * block));
  return finish("select", out, {a}, [a, out, index, block]() mutable {
    auto ga = a.grad_mut();
    const auto g = out.grad();
    for (std::size_t i = 0; i < block; ++i) ga[index * block + i] += g[i];
  });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner = parts.front().shape();
  for (const auto& p : parts) require_same("stack", parts.front(), p);
  Shape shape{parts.size()};
  if (inner != Shape{1}) shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t block = parts.front().numel();
  std::vector<T> values;
  values.reserve(block * parts.size());
  for (const auto& p : parts) values.insert(values.end(), p.data().begin(), p.data().end());
  Tensor<T> out(shape, std::move(values));
  return finish("stack", out, parts, [parts, out, block]() mutable {
    const auto g = out.grad();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k].requires_grad()) continue;
      auto gp = parts[k].grad_mut();
      for (std::size_t i = 0; i < block; ++i) gp[i] += g[k * block + i];
    }
  });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& a, std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  require_rank("crop2d", a, 2);
  const std::size_t h = a.dim(0), w = a.dim(1);
  if (row + height > h || col + width > w)
    throw ShapeError("crop2d: window exceeds plane " + shape_str(a.shape()));
  Tensor<T> out(Shape{height, width});
  auto o = out.data_mut();
  const auto av = a.data();
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) o[r * width + c] = av[(row + r) * w + col + c];
  return finish("crop2d", out, {a}, [a, out, row, col, height, width, w]() mutable {
    auto ga = a.grad_mut();
    const auto g = out.grad();
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) ga[(row + r) * w + col + c] += g[r * width + c];
  });
}

template <typename T>
Tensor<T> circshift2d(const Tensor<T>& a, long dr, long dc) {
  require_rank("circshift2d", a, 2);
  const long h = long(a.dim(0)), w = long(a.dim(1));
  auto src = [h, w, dr, dc](long r, long c) {
    const long sr = ((r - dr) % h + h) % h;
    const long sc = ((c - dc) % w + w) % w;
    return std::size_t(sr * w + sc);
  };
  Tensor<T> out(a.shape());
  auto o = out.data_mut();
  const auto av = a.data();
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) o[std::size_t(r * w + c)] = av[src(r, c)];
  return finish("circshift2d", out, {a}, [a, out, h, w, src]() mutable {
    auto ga = a.grad_mut();
    const auto g = out.grad();
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) ga[src(r, c)] += g[std::size_t(r * w + c)];
  });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw_shape_mismatch("concat_channels", a.shape(), b.shape());
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  auto o = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca * hw, ca * hw, o.begin() + i * (ca + cb) * hw);
    std::copy_n(b.data().begin() + i * cb * hw, cb * hw, o.begin() + (i * (ca + cb) + ca) * hw);
  }
  return finish("concat_channels", out, {a, b}, [a, b, out, n, ca, cb, hw]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < ca * hw; ++k) ga[i * ca * hw + k] += g[i * (ca + cb) * hw + k];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cb * hw; ++k) gb[i * cb * hw + k] += g[(i * (ca + cb) + ca) * hw + k];
    }
  });
}

template <typename T>
Tensor<T> plane(const Tensor<T>& x, std::size_t n, std::size_t c) {
  require_rank("plane", x, 4);
  if (n >= x.dim(0) || c >= x.dim(1)) throw ShapeError("plane: index out of range for " + shape_str(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t offset = (n * x.dim(1) + c) * h * w;
  Tensor<T> out(Shape{h, w}, std::vector<T>(x.data().begin() + offset, x.data().begin() + offset + h * w));
  return finish("plane", out, {x}, [x, out, offset]() mutable {
    auto gx = x.grad_mut();
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
}

namespace {
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;
}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) throw_shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  MMap<T>(out.data_mut().data(), m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  return finish("matmul", out, {a, b}, [a, b, out, m, k, n]() mutable {
    CMap<T> g(out.grad().data(), m, n);
    if (a.requires_grad()) MMap<T>(a.grad_mut().data(), m, k).noalias() += g * CMap<T>(b.data().data(), k, n).transpose();
    if (b.requires_grad()) MMap<T>(b.grad_mut().data(), k, n).noalias() += CMap<T>(a.data().data(), m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out(Shape{n, m});
  MMap<T>(out.data_mut().data(), n, m) = CMap<T>(a.data().data(), m, n).transpose();
  return finish("transpose", out, {a}, [a, out, m, n]() mutable {
    MMap<T>(a.grad_mut().data(), m, n) += CMap<T>(out.grad().data(), n, m).transpose();
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  require_rank("mean_rows", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c});
  auto o = out.data_mut();
  const auto av = a.data();
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < r; ++i) acc += double(av[i * c + j]);
    o[j] = T(acc / double(r));
  }
  return finish("mean_rows", out, {a}, [a, out, r, c]() mutable {
    auto ga = a.grad_mut();
    const auto g = out.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] / T(r);
  });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& v, std::size_t rows) {
  require_rank("repeat_rows", v, 1);
  const std::size_t c = v.dim(0);
  Tensor<T> out(Shape{rows, c});
  auto o = out.data_mut();
  for (std::size_t i = 0; i < rows; ++i) std::copy(v.data().begin(), v.data().end(), o.begin() + i * c);
  return finish("repeat_rows", out, {v}, [v, out, rows, c]() mutable {
    auto gv = v.grad_mut();
    const auto g = out.grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
  });
}

template <typename T>
Tensor<T> mahalanobis(const Tensor<T>& d, const Tensor<T>& s) {
  require_rank("mahalanobis", d, 1);
  require_rank("mahalanobis", s, 2);
  const std::size_t n = d.dim(0);
  if (s.dim(0) != n || s.dim(1) != n) throw_shape_mismatch("mahalanobis", d.shape(), s.shape());
  Eigen::MatrixXd sm(n, n);
  Eigen::VectorXd dv(n);
  for (std::size_t i = 0; i < n; ++i) {
    dv(i) = double(d[i]);
    for (std::size_t j = 0; j < n; ++j) sm(i, j) = double(s[i * n + j]);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sm);
  const Eigen::MatrixXd pinv = cod.pseudoInverse();
  const double value = dv.dot(pinv * dv);
  Tensor<T> out = Tensor<T>::scalar(T(value));
  return finish("mahalanobis", out, {d, s}, [d, s, out, pinv, dv, n]() mutable {
    const double g = double(out.grad()[0]);
    const Eigen::VectorXd right = pinv * dv;
    const Eigen::VectorXd left = pinv.transpose() * dv;
    if (d.requires_grad()) {
      auto gd = d.grad_mut();
      for (std::size_t i = 0; i < n; ++i) gd[i] += T(g * (right(i) + left(i)));
    }
    if (s.requires_grad()) {
      auto gs = s.grad_mut();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += T(-g * left(i) * right(j));
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) throw_shape_mismatch("conv2d", x.shape(), w.shape());
  if (stride == 0 || x.dim(2) + 2 * pad < w.dim(2) || x.dim(3) + 2 * pad < w.dim(3))
    throw_shape_mismatch("conv2d", x.shape(), w.shape());
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
    throw_shape_mismatch("conv2d", w.shape(), bias.shape());
  kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad};
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward<T>(g, x.data(), w.data(), out.data_mut());
  const std::size_t pix = g.out_h() * g.out_w();
  if (bias.defined()) {
    auto o = out.data_mut();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.out_channels; ++c)
        for (std::size_t p = 0; p < pix; ++p) o[(n * g.out_channels + c) * pix + p] += bias[c];
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return finish("conv2d", out, std::move(inputs), [x, w, bias, out, g, pix]() mutable {
    const auto gy = out.grad();
    if (x.requires_grad()) kernels::conv2d_backward_input<T>(g, gy, w.data(), x.grad_mut());
    if (w.requires_grad()) kernels::conv2d_backward_weight<T>(g, x.data(), gy, w.grad_mut());
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad_mut();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < g.out_channels; ++c) {
          T acc = 0;
          for (std::size_t p = 0; p < pix; ++p) acc += gy[(n * g.out_channels + c) * pix + p];
          gb[c] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                           std::size_t pad) {
  require_rank("conv_transpose2d", x, 4);
  require_rank("conv_transpose2d", w, 4);
  if (w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3) || stride == 0)
    throw_shape_mismatch("conv_transpose2d", x.shape(), w.shape());
  const std::size_t k = w.dim(2);
  if ((x.dim(2) - 1) * stride + k <= 2 * pad || (x.dim(3) - 1) * stride + k <= 2 * pad)
    throw_shape_mismatch("conv_transpose2d", x.shape(), w.shape());
  const std::size_t oh = (x.dim(2) - 1) * stride + k - 2 * pad;
  const std::size_t ow = (x.dim(3) - 1) * stride + k - 2 * pad;
  // Geometry of the forward convolution this op is the adjoint of.
  kernels::ConvGeometry g{x.dim(0), w.dim(1), oh, ow, w.dim(0), k, stride, pad};
  if (g.out_h() != x.dim(2) || g.out_w() != x.dim(3)) throw_shape_mismatch("conv_transpose2d", x.shape(), w.shape());
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(1)))
    throw_shape_mismatch("conv_transpose2d", w.shape(), bias.shape());
  Tensor<T> out(Shape{g.batch, g.in_channels, oh, ow});
  kernels::conv2d_backward_input<T>(g, x.data(), w.data(), out.data_mut());
  const std::size_t pix = oh * ow;
  if (bias.defined()) {
    auto o = out.data_mut();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t p = 0; p < pix; ++p) o[(n * g.in_channels + c) * pix + p] += bias[c];
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return finish("conv_transpose2d", out, std::move(inputs), [x, w, bias, out, g, pix]() mutable {
    const auto gy = out.grad();
    if (x.requires_grad()) {
      std::vector<T> tmp(x.numel());
      kernels::conv2d_forward<T>(g, gy, w.data(), tmp);
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
    }
    if (w.requires_grad()) kernels::conv2d_backward_weight<T>(g, gy, x.data(), w.grad_mut());
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad_mut();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          T acc = 0;
          for (std::size_t p = 0; p < pix; ++p) acc += gy[(n * g.in_channels + c) * pix + p];
          gb[c] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, double eps) {
  require_rank("instance_norm", x, 4);
  if (!(eps > 0.0)) throw std::invalid_argument("instance_norm: eps must be positive");
  const std::size_t groups = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<double> inv_std(groups);
  auto o = out.data_mut();
  const auto xv = x.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double m = 0.0;
    for (std::size_t p = 0; p < hw; ++p) m += double(xv[gi * hw + p]);
    m /= double(hw);
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double d = double(xv[gi * hw + p]) - m;
      var += d * d;
    }
    var /= double(hw);
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    for (std::size_t p = 0; p < hw; ++p) o[gi * hw + p] = T((double(xv[gi * hw + p]) - m) * inv_std[gi]);
  }
  return finish("instance_norm", out, {x}, [x, out, inv_std, groups, hw]() mutable {
    const auto gy = out.grad();
    const auto yv = out.data();
    auto gx = x.grad_mut();
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        mg += double(gy[gi * hw + p]);
        mgy += double(gy[gi * hw + p]) * double(yv[gi * hw + p]);
      }
      mg /= double(hw);
      mgy /= double(hw);
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = gi * hw + p;
        gx[i] += T(inv_std[gi] * (double(gy[i]) - mg - double(yv[i]) * mgy));
      }
    }
  });
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() < 2) throw ShapeError("avg_pool: need at least rank 2, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (factor == 0 || factor > h || factor > w)
    throw ShapeError("avg_pool: factor " + std::to_string(factor) + " too large for " + shape_str(x.shape()));
  const std::size_t oh = h / factor, ow = w / factor, planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  Tensor<T> out(shape);
  auto o = out.data_mut();
  const auto xv = x.data();
  const double inv = 1.0 / double(factor * factor);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < factor; ++a)
          for (std::size_t b = 0; b < factor; ++b) acc += double(xv[(p * h + i * factor + a) * w + j * factor + b]);
        o[(p * oh + i) * ow + j] = T(acc * inv);
      }
  return finish("avg_pool", out, {x}, [x, out, planes, h, w, oh, ow, factor, inv]() mutable {
    auto gx = x.grad_mut();
    const auto g = out.grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const T v = T(double(g[(p * oh + i) * ow + j]) * inv);
          for (std::size_t a = 0; a < factor; ++a)
            for (std::size_t b = 0; b < factor; ++b) gx[(p * h + i * factor + a) * w + j * factor + b] += v;
        }
  });
}

template <typename T>
Tensor<T> filter2d(const Tensor<T>& x, const std::vector<double>& kernel, std::size_t kh, std::size_t kw) {
  if (x.rank() < 2) throw ShapeError("filter2d: need at least rank 2, got " + shape_str(x.shape()));
  if (kh % 2 == 0 || kw % 2 == 0 || kernel.size() != kh * kw)
    throw ShapeError("filter2d: kernel must be odd-sized with kh*kw entries");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), planes = x.numel() / (h * w);
  Tensor<T> out(x.shape());
  kernels::filter2d_symmetric<T>(planes, h, w, x.data(), kernel, kh, kw, out.data_mut());
  return finish("filter2d", out, {x}, [x, out, kernel, kh, kw, planes, h, w]() mutable {
    kernels::filter2d_symmetric_adjoint<T>(planes, h, w, out.grad(), kernel, kh, kw, x.grad_mut());
  });
}

template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& x, std::shared_ptr<const SpectralBank> bank) {
  require_rank("spectral_filter", x, 2);
  const std::size_t h = x.dim(0), w = x.dim(1), n = h * w;
  if (!bank || bank->rows != h || bank->cols != w)
    throw ShapeError("spectral_filter: filter bank does not match plane " + shape_str(x.shape()));
  const std::size_t k = bank->responses.size();
  std::vector<fft::Complex> spectrum(n);
  for (std::size_t i = 0; i < n; ++i) spectrum[i] = fft::Complex(double(x[i]), 0.0);
  fft::transform2d(spectrum, h, w, false);
  Tensor<T> out(Shape{k, 2, h, w});
  auto o = out.data_mut();
  std::vector<fft::Complex> buf(n);
  for (std::size_t f = 0; f < k; ++f) {
    const auto& resp = bank->responses[f];
    for (std::size_t i = 0; i < n; ++i) buf[i] = spectrum[i] * resp[i];
    fft::transform2d(buf, h, w, true);
    for (std::size_t i = 0; i < n; ++i) {
      o[(2 * f) * n + i] = T(buf[i].real());
      o[(2 * f + 1) * n + i] = T(buf[i].imag());
    }
  }
  return finish("spectral_filter", out, {x}, [x, out, bank, h, w, n, k]() mutable {
    const auto g = out.grad();
    std::vector<fft::Complex> acc(n, fft::Complex(0.0, 0.0));
    std::vector<fft::Complex> buf(n);
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = fft::Complex(double(g[(2 * f) * n + i]), double(g[(2 * f + 1) * n + i]));
      fft::transform2d(buf, h, w, false);
      const auto& resp = bank->responses[f];
      for (std::size_t i = 0; i < n; ++i) acc[i] += buf[i] * resp[i];
    }
    fft::transform2d(acc, h, w, true);
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < n; ++i) gx[i] += T(acc[i].real());
  });
}

#define QGAN_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, double);                                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                               \
  template Tensor<T> square(const Tensor<T>&);                                                            \
  template Tensor<T> sqrt_eps(const Tensor<T>&, double);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                                \
  template Tensor<T> log(const Tensor<T>&);                                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                              \
  template Tensor<T> real_pow(const Tensor<T>&, double);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> median(const Tensor<T>&);                                                            \
  template Tensor<T> broadcast(const Tensor<T>&, const Shape&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                             \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                                \
  template Tensor<T> crop2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);        \
  template Tensor<T> circshift2d(const Tensor<T>&, long, long);                                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> plane(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> transpose(const Tensor<T>&);                                                         \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                         \
  template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> mahalanobis(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,   \
                                      std::size_t);                                                       \
  template Tensor<T> instance_norm(const Tensor<T>&, double);                                             \
  template Tensor<T> avg_pool(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> filter2d(const Tensor<T>&, const std::vector<double>&, std::size_t, std::size_t);    \
  template Tensor<T> spectral_filter(const Tensor<T>&, std::shared_ptr<const SpectralBank>);

QGAN_INSTANTIATE_OPS(float)
QGAN_INSTANTIATE_OPS(double)

#undef QGAN_INSTANTIATE_OPS

}  // namespace qgan::ad
