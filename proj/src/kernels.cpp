#include "qgan/kernels.hpp"

#include <Eigen/Core>
#include <vector>

namespace qgan::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// col[(ci * k + ky) * k + kx][oy * Wo + ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(g.kernel);
  const std::ptrdiff_t ho = static_cast<std::ptrdiff_t>(g.out_h());
  const std::ptrdiff_t wo = static_cast<std::ptrdiff_t>(g.out_w());
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.in_w);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const T* xc = x + ci * h * w;
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::ptrdiff_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = oy * s - p + ky;
          T* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            for (std::ptrdiff_t ox = 0; ox < wo; ++ox) out[ox] = T(0);
            continue;
          }
          const T* xr = xc + iy * w;
          for (std::ptrdiff_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = ox * s - p + kx;
            out[ox] = (ix < 0 || ix >= w) ? T(0) : xr[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(g.kernel);
  const std::ptrdiff_t ho = static_cast<std::ptrdiff_t>(g.out_h());
  const std::ptrdiff_t wo = static_cast<std::ptrdiff_t>(g.out_w());
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.in_w);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    T* xc = x + ci * h * w;
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::ptrdiff_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          T* xr = xc + iy * w;
          const T* in = row + oy * wo;
          for (std::ptrdiff_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const std::size_t pix = g.out_h() * g.out_w();
  std::vector<T> col(kdim * pix);
  ConstMapMat<T> wm(w.data(), g.out_channels, kdim);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, x.data() + n * g.in_channels * g.in_h * g.in_w, col.data());
    ConstMapMat<T> cm(col.data(), kdim, pix);
    MapMat<T> ym(y.data() + n * g.out_channels * pix, g.out_channels, pix);
    ym.noalias() = wm * cm;
  }
}

template <typename T>
void conv2d_forward_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<T> y) {
  const std::size_t ho = g.out_h(), wo = g.out_w(), k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(g.in_h) || ix >= std::ptrdiff_t(g.in_w)) continue;
                acc += double(x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix]) *
                       double(w[((co * g.in_channels + ci) * k + ky) * k + kx]);
              }
          y[((n * g.out_channels + co) * ho + oy) * wo + ox] = T(acc);
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const std::size_t pix = g.out_h() * g.out_w();
  std::vector<T> col(kdim * pix);
  ConstMapMat<T> wm(w.data(), g.out_channels, kdim);
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMapMat<T> dym(dy.data() + n * g.out_channels * pix, g.out_channels, pix);
    MapMat<T> cm(col.data(), kdim, pix);
    cm.noalias() = wm.transpose() * dym;
    col2im_add(g, col.data(), dx.data() + n * g.in_channels * g.in_h * g.in_w);
  }
}

template <typename T>
void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                                     std::span<T> dx) {
  const std::size_t ho = g.out_h(), wo = g.out_w(), k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T gy = dy[((n * g.out_channels + co) * ho + oy) * wo + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(g.in_h) || ix >= std::ptrdiff_t(g.in_w)) continue;
                dx[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] +=
                    gy * w[((co * g.in_channels + ci) * k + ky) * k + kx];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const std::size_t pix = g.out_h() * g.out_w();
  std::vector<T> col(kdim * pix);
  MapMat<T> dwm(dw.data(), g.out_channels, kdim);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, x.data() + n * g.in_channels * g.in_h * g.in_w, col.data());
    ConstMapMat<T> cm(col.data(), kdim, pix);
    ConstMapMat<T> dym(dy.data() + n * g.out_channels * pix, g.out_channels, pix);
    dwm.noalias() += dym * cm.transpose();
  }
}

template <typename T>
void conv2d_backward_weight_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                                      std::span<T> dw) {
  const std::size_t ho = g.out_h(), wo = g.out_w(), k = g.kernel;
  for (std::size_t co = 0; co < g.out_channels; ++co)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oy = 0; oy < ho; ++oy)
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(g.in_h) || ix >= std::ptrdiff_t(g.in_w)) continue;
                acc += double(dy[((n * g.out_channels + co) * ho + oy) * wo + ox]) *
                       double(x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix]);
              }
          dw[((co * g.in_channels + ci) * k + ky) * k + kx] += T(acc);
        }
}

template <typename T>
void filter2d_symmetric(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                        std::span<const double> kernel, std::size_t kh, std::size_t kw, std::span<T> y) {
  const std::size_t ph = h + kh - 1, pw = w + kw - 1;
  const std::ptrdiff_t ch = std::ptrdiff_t(kh / 2), cw = std::ptrdiff_t(kw / 2);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < std::ptrdiff_t(planes); ++p) {
    std::vector<double> pad(ph * pw);
    const T* xp = x.data() + p * h * w;
    for (std::size_t r = 0; r < ph; ++r) {
      const std::ptrdiff_t sr = reflect_index(std::ptrdiff_t(r) - ch, std::ptrdiff_t(h));
      for (std::size_t c = 0; c < pw; ++c) {
        const std::ptrdiff_t sc = reflect_index(std::ptrdiff_t(c) - cw, std::ptrdiff_t(w));
        pad[r * pw + c] = double(xp[sr * w + sc]);
      }
    }
    T* yp = y.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < kh; ++a) {
          const double* prow = pad.data() + (i + kh - 1 - a) * pw + (j + kw - 1);
          const double* krow = kernel.data() + a * kw;
          for (std::size_t b = 0; b < kw; ++b) acc += krow[b] * prow[-std::ptrdiff_t(b)];
        }
        yp[i * w + j] = T(acc);
      }
    }
  }
}

template <typename T>
void filter2d_symmetric_reference(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                                  std::span<const double> kernel, std::size_t kh, std::size_t kw,
                                  std::span<T> y) {
  const std::ptrdiff_t ch = std::ptrdiff_t(kh / 2), cw = std::ptrdiff_t(kw / 2);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            const auto r = reflect_index(std::ptrdiff_t(i) + ch - std::ptrdiff_t(a), std::ptrdiff_t(h));
            const auto c = reflect_index(std::ptrdiff_t(j) + cw - std::ptrdiff_t(b), std::ptrdiff_t(w));
            acc += kernel[a * kw + b] * double(x[(p * h + r) * w + c]);
          }
        y[(p * h + i) * w + j] = T(acc);
      }
}

template <typename T>
void filter2d_symmetric_adjoint(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> dy,
                                std::span<const double> kernel, std::size_t kh, std::size_t kw,
                                std::span<T> dx) {
  const std::ptrdiff_t ch = std::ptrdiff_t(kh / 2), cw = std::ptrdiff_t(kw / 2);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < std::ptrdiff_t(planes); ++p) {
    std::vector<double> acc(h * w, 0.0);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double g = double(dy[(p * h + i) * w + j]);
        if (g == 0.0) continue;
        for (std::size_t a = 0; a < kh; ++a) {
          const auto r = reflect_index(std::ptrdiff_t(i) + ch - std::ptrdiff_t(a), std::ptrdiff_t(h));
          for (std::size_t b = 0; b < kw; ++b) {
            const auto c = reflect_index(std::ptrdiff_t(j) + cw - std::ptrdiff_t(b), std::ptrdiff_t(w));
            acc[r * w + c] += kernel[a * kw + b] * g;
          }
        }
      }
    T* out = dx.data() + p * h * w;
    for (std::size_t i = 0; i < h * w; ++i) out[i] += T(acc[i]);
  }
}

#define QGAN_INSTANTIATE_KERNELS(T)                                                                         \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_forward_reference<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,     \
                                            std::span<T>);                                                \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,        \
                                         std::span<T>);                                                   \
  template void conv2d_backward_input_reference<T>(const ConvGeometry&, std::span<const T>,                 \
                                                   std::span<const T>, std::span<T>);                     \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,       \
                                          std::span<T>);                                                  \
  template void conv2d_backward_weight_reference<T>(const ConvGeometry&, std::span<const T>,                \
                                                    std::span<const T>, std::span<T>);                    \
  template void filter2d_symmetric<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,             \
                                      std::span<const double>, std::size_t, std::size_t, std::span<T>);    \
  template void filter2d_symmetric_reference<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,   \
                                                std::span<const double>, std::size_t, std::size_t,         \
                                                std::span<T>);                                            \
  template void filter2d_symmetric_adjoint<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,     \
                                              std::span<const double>, std::size_t, std::size_t,           \
                                              std::span<T>);

QGAN_INSTANTIATE_KERNELS(float)
QGAN_INSTANTIATE_KERNELS(double)

#undef QGAN_INSTANTIATE_KERNELS

}  // namespace qgan::kernels
