#pragma once

#include <cstddef>
#include <span>

// Compute kernels behind the convolution ops and the metric filters.
//
// Each kernel comes in two flavours: the production version (OpenMP over
// rows/channels, GEMM through Eigen) and a plain serial loop nest kept as the
// reference that tests and the benchmark compare against. All backward
// kernels accumulate into their output.

namespace qgan::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

// y = conv(x, w); y is overwritten.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);
template <typename T>
void conv2d_forward_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<T> y);

// dx += conv^T(dy, w)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                                     std::span<T> dx);

// dw += sum_n dy (x) x
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);
template <typename T>
void conv2d_backward_weight_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                                      std::span<T> dw);

/// Index reflection with edge duplication (..., 1, 0 | 0, 1, ... | n-1, n-2, ...).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// True 2-D convolution of `planes` stacked h x w planes with a kh x kw kernel
// under symmetric borders. y is overwritten.
template <typename T>
void filter2d_symmetric(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                        std::span<const double> kernel, std::size_t kh, std::size_t kw, std::span<T> y);
template <typename T>
void filter2d_symmetric_reference(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                                  std::span<const double> kernel, std::size_t kh, std::size_t kw,
                                  std::span<T> y);
// dx += adjoint(dy)
template <typename T>
void filter2d_symmetric_adjoint(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> dy,
                                std::span<const double> kernel, std::size_t kh, std::size_t kw,
                                std::span<T> dx);

}  // namespace qgan::kernels
