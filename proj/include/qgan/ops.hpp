#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "qgan/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// ShapeError naming itself and the offending shapes. When a Tape is active
// and an input requires a gradient, the op records its adjoint.
//
// Subgradients at kinks: abs'(0) = 0, relu'(0) = 0, leaky_relu'(0) = slope,
// max(a, b) routes the gradient to a on ties.

namespace qgan::ad {

struct OpDefaults {
  static constexpr double sqrt_eps = 1e-8;
  static constexpr double instance_norm_eps = 1e-5;
};

// Elementwise, equal shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, double s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, double s);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
/// sqrt(x + eps); callers keep x + eps > 0.
template <typename T> Tensor<T> sqrt_eps(const Tensor<T>& a, double eps = OpDefaults::sqrt_eps);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, double slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
/// Natural log; inputs must be positive.
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// Real part of the principal power x^p: |x|^p for x >= 0, |x|^p cos(p*pi) for x < 0.
/// |x| is floored at 1e-12 so the derivative stays finite.
template <typename T> Tensor<T> real_pow(const Tensor<T>& a, double p);

// Reductions to shape {1}.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Median over all elements (mean of the two middle values for even counts).
template <typename T> Tensor<T> median(const Tensor<T>& a);

// Structure.
template <typename T> Tensor<T> broadcast(const Tensor<T>& scalar, const Shape& shape);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
/// a[index] along the leading dimension.
template <typename T> Tensor<T> select(const Tensor<T>& a, std::size_t index);
/// Stacks equal-shaped tensors along a new leading dimension.
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& parts);
/// Window of a [H, W] plane.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& a, std::size_t row, std::size_t col, std::size_t height, std::size_t width);
/// Periodic shift of a [H, W] plane: out[r][c] = a[(r - dr) mod H][(c - dc) mod W].
template <typename T> Tensor<T> circshift2d(const Tensor<T>& a, long dr, long dc);
/// NCHW concatenation along channels.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Plane [H, W] of sample n, channel c of an NCHW tensor.
template <typename T> Tensor<T> plane(const Tensor<T>& x, std::size_t n, std::size_t c);

// Linear algebra on rank-2 tensors.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
/// Column means of [R, C] -> [C].
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);
/// Repeats a [C] vector into [R, C].
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& v, std::size_t rows);
/// d^T S^-1 d for d [n] and symmetric S [n, n]. Uses a pseudo-inverse when S is
/// singular; the adjoint treats S^-1 as locally constant-rank.
template <typename T> Tensor<T> mahalanobis(const Tensor<T>& d, const Tensor<T>& s);

// Convolution family, NCHW activations, weights [Cout, Cin, k, k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
/// Adjoint of conv2d in x; weights [Cin_of_conv, Cout_of_conv, k, k] i.e. [C_in(x), C_out, k, k].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad);
/// Per-sample, per-channel normalisation to zero mean and unit variance.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& x, double eps = OpDefaults::instance_norm_eps);
/// Mean of non-overlapping factor x factor blocks over the last two dims; ragged edges truncated.
template <typename T> Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor);
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& x) { return avg_pool(x, 2); }

/// Fixed-kernel convolution over the last two dims with symmetric borders.
/// kernel is row-major, odd-sized kh x kw.
template <typename T>
Tensor<T> filter2d(const Tensor<T>& x, const std::vector<double>& kernel, std::size_t kh, std::size_t kw);

/// Real frequency responses applied through the DFT.
struct SpectralBank {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> responses;  // each rows * cols, unshifted (DC at [0])
};

/// For a [H, W] plane returns [K, 2, H, W]: real and imaginary parts of
/// ifft2(fft2(x) * response_k) for every response in the bank.
template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& x, std::shared_ptr<const SpectralBank> bank);

}  // namespace qgan::ad
