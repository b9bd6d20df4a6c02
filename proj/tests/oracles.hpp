#pragma once

// Direct transcriptions of the published metric definitions, kept independent
// of the library: their own DFT, padding, filters and pooling. Slow on
// purpose; only used on small fixed images.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;
using CGrid = std::vector<std::vector<std::complex<double>>>;

inline Grid zeros(std::size_t h, std::size_t w) { return Grid(h, std::vector<double>(w, 0.0)); }

inline CGrid dft2(const CGrid& x, bool inverse) {
  const std::size_t h = x.size(), w = x[0].size();
  const double sign = inverse ? 1.0 : -1.0;
  CGrid tmp(h, std::vector<std::complex<double>>(w)), out = tmp;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < w; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t c = 0; c < w; ++c)
        acc += x[r][c] * std::polar(1.0, sign * 2.0 * std::numbers::pi * double(k * c % w) / double(w));
      tmp[r][k] = acc;
    }
  for (std::size_t k = 0; k < w; ++k)
    for (std::size_t q = 0; q < h; ++q) {
      std::complex<double> acc = 0;
      for (std::size_t r = 0; r < h; ++r)
        acc += tmp[r][k] * std::polar(1.0, sign * 2.0 * std::numbers::pi * double(q * r % h) / double(h));
      out[q][k] = inverse ? acc / double(h * w) : acc;
    }
  return out;
}

// ifftshift of a grid: element at the centre moves to [0][0].
inline Grid ifftshift(const Grid& g) {
  const std::size_t h = g.size(), w = g[0].size();
  Grid out = zeros(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r][c] = g[(r + h / 2) % h][(c + w / 2) % w];
  return out;
}

inline std::size_t mirror(long i, long n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return std::size_t(i);
}

// conv2(x, k, 'same') with symmetric padding instead of zeros.
inline Grid conv_same_symmetric(const Grid& x, const Grid& k) {
  const long h = long(x.size()), w = long(x[0].size()), kh = long(k.size()), kw = long(k[0].size());
  Grid out = zeros(std::size_t(h), std::size_t(w));
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long a = 0; a < kh; ++a)
        for (long b = 0; b < kw; ++b)
          acc += k[std::size_t(a)][std::size_t(b)] * x[mirror(r - a + kh / 2, h)][mirror(c - b + kw / 2, w)];
      out[std::size_t(r)][std::size_t(c)] = acc;
    }
  return out;
}

inline Grid phasecong(const Grid& im) {
  const int nscale = 4, norient = 4;
  const double min_wave = 6, mult = 2, sigma_onf = 0.55, d_theta_on_sigma = 1.2, k = 2.0, epsilon = 1e-4;
  const double theta_sigma = std::numbers::pi / norient / d_theta_on_sigma;
  const std::size_t rows = im.size(), cols = im[0].size();
  CGrid cim(rows, std::vector<std::complex<double>>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) cim[r][c] = im[r][c];
  const CGrid imagefft = dft2(cim, false);

  auto range = [](std::size_t n) {
    std::vector<double> v;
    if (n % 2)
      for (long i = -long(n - 1) / 2; i <= long(n - 1) / 2; ++i) v.push_back(double(i) / double(n - 1));
    else
      for (long i = -long(n) / 2; i <= long(n) / 2 - 1; ++i) v.push_back(double(i) / double(n));
    return v;
  };
  const auto xr = range(cols), yr = range(rows);
  Grid radius = zeros(rows, cols), theta = zeros(rows, cols), lp = zeros(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      radius[r][c] = std::sqrt(xr[c] * xr[c] + yr[r] * yr[r]);
      theta[r][c] = std::atan2(-yr[r], xr[c]);
      lp[r][c] = 1.0 / (1.0 + std::pow(radius[r][c] / 0.45, 2 * 15));
    }
  radius = ifftshift(radius);
  theta = ifftshift(theta);
  lp = ifftshift(lp);
  radius[0][0] = 1;

  std::vector<Grid> log_gabor;
  for (int s = 0; s < nscale; ++s) {
    const double fo = 1.0 / (min_wave * std::pow(mult, s));
    Grid g = zeros(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        g[r][c] = std::exp(-std::pow(std::log(radius[r][c] / fo), 2) / (2 * std::pow(std::log(sigma_onf), 2))) * lp[r][c];
    g[0][0] = 0;
    log_gabor.push_back(g);
  }

  Grid energy_all = zeros(rows, cols), an_all = zeros(rows, cols);
  for (int o = 0; o < norient; ++o) {
    const double angl = o * std::numbers::pi / norient;
    Grid spread = zeros(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double ds = std::sin(theta[r][c]) * std::cos(angl) - std::cos(theta[r][c]) * std::sin(angl);
        const double dc = std::cos(theta[r][c]) * std::cos(angl) + std::sin(theta[r][c]) * std::sin(angl);
        const double dtheta = std::abs(std::atan2(ds, dc));
        spread[r][c] = std::exp(-dtheta * dtheta / (2 * theta_sigma * theta_sigma));
      }
    Grid sum_e = zeros(rows, cols), sum_o = zeros(rows, cols), sum_an = zeros(rows, cols), energy = zeros(rows, cols);
    std::vector<CGrid> eo;
    std::vector<Grid> ifft_filters;
    double em_n = 0;
    for (int s = 0; s < nscale; ++s) {
      CGrid filt(rows, std::vector<std::complex<double>>(cols)), prod = filt;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          filt[r][c] = log_gabor[std::size_t(s)][r][c] * spread[r][c];
          prod[r][c] = imagefft[r][c] * filt[r][c];
        }
      const CGrid sp = dft2(filt, true);
      Grid ifilt = zeros(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ifilt[r][c] = sp[r][c].real() * std::sqrt(double(rows * cols));
      ifft_filters.push_back(ifilt);
      eo.push_back(dft2(prod, true));
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          sum_an[r][c] += std::abs(eo.back()[r][c]);
          sum_e[r][c] += eo.back()[r][c].real();
          sum_o[r][c] += eo.back()[r][c].imag();
          if (s == 0) em_n += std::norm(filt[r][c]);
        }
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double xe = std::sqrt(sum_e[r][c] * sum_e[r][c] + sum_o[r][c] * sum_o[r][c]) + epsilon;
        const double me = sum_e[r][c] / xe, mo = sum_o[r][c] / xe;
        for (int s = 0; s < nscale; ++s) {
          const double e = eo[std::size_t(s)][r][c].real(), od = eo[std::size_t(s)][r][c].imag();
          energy[r][c] += e * me + od * mo - std::abs(e * mo - od * me);
        }
      }
    std::vector<double> e2;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) e2.push_back(std::norm(eo[0][r][c]));
    std::sort(e2.begin(), e2.end());
    const std::size_t n = e2.size();
    const double median = n % 2 ? e2[n / 2] : (e2[n / 2 - 1] + e2[n / 2]) / 2;
    const double mean_e2n = -median / std::log(0.5);
    const double noise_power = mean_e2n / em_n;
    double sum_an2 = 0, sum_aiaj = 0;
    for (int si = 0; si < nscale; ++si)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          sum_an2 += ifft_filters[std::size_t(si)][r][c] * ifft_filters[std::size_t(si)][r][c];
          for (int sj = si + 1; sj < nscale; ++sj)
            sum_aiaj += ifft_filters[std::size_t(si)][r][c] * ifft_filters[std::size_t(sj)][r][c];
        }
    const double est_noise_energy2 = 2 * noise_power * sum_an2 + 4 * noise_power * sum_aiaj;
    const double tau = std::sqrt(est_noise_energy2 / 2);
    const double est_noise_energy = tau * std::sqrt(std::numbers::pi / 2);
    const double est_noise_sigma = std::sqrt((2 - std::numbers::pi / 2) * tau * tau);
    const double t = (est_noise_energy + k * est_noise_sigma) / 1.7;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        energy_all[r][c] += std::max(energy[r][c] - t, 0.0);
        an_all[r][c] += sum_an[r][c];
      }
  }
  Grid pc = zeros(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) pc[r][c] = energy_all[r][c] / (an_all[r][c] + epsilon);
  return pc;
}

// Luminance-only FSIM (no downsampling needed below 384 px).
inline double fsim(const Grid& y1, const Grid& y2) {
  const Grid pc1 = phasecong(y1), pc2 = phasecong(y2);
  const Grid dx = {{3 / 16.0, 0, -3 / 16.0}, {10 / 16.0, 0, -10 / 16.0}, {3 / 16.0, 0, -3 / 16.0}};
  const Grid dy = {{3 / 16.0, 10 / 16.0, 3 / 16.0}, {0, 0, 0}, {-3 / 16.0, -10 / 16.0, -3 / 16.0}};
  const Grid ix1 = conv_same_symmetric(y1, dx), iy1 = conv_same_symmetric(y1, dy);
  const Grid ix2 = conv_same_symmetric(y2, dx), iy2 = conv_same_symmetric(y2, dy);
  double num = 0, den = 0;
  for (std::size_t r = 0; r < y1.size(); ++r)
    for (std::size_t c = 0; c < y1[0].size(); ++c) {
      const double g1 = std::sqrt(ix1[r][c] * ix1[r][c] + iy1[r][c] * iy1[r][c]);
      const double g2 = std::sqrt(ix2[r][c] * ix2[r][c] + iy2[r][c] * iy2[r][c]);
      const double spc = (2 * pc1[r][c] * pc2[r][c] + 0.85) / (pc1[r][c] * pc1[r][c] + pc2[r][c] * pc2[r][c] + 0.85);
      const double sg = (2 * g1 * g2 + 160) / (g1 * g1 + g2 * g2 + 160);
      const double pcm = std::max(pc1[r][c], pc2[r][c]);
      num += sg * spc * pcm;
      den += pcm;
    }
  return num / den;
}

inline double gmsd(const Grid& a, const Grid& b) {
  const std::size_t h = a.size() / 2, w = a[0].size() / 2;
  auto pool = [&](const Grid& x) {
    Grid out = zeros(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[r][c] = (x[2 * r][2 * c] + x[2 * r + 1][2 * c] + x[2 * r][2 * c + 1] + x[2 * r + 1][2 * c + 1]) / 4;
    return out;
  };
  const Grid pa = pool(a), pb = pool(b);
  auto grad = [&](const Grid& x, std::size_t r, std::size_t c) {
    auto px = [&](long dr, long dc) { return x[mirror(long(r) + dr, long(h))][mirror(long(c) + dc, long(w))]; };
    double gx = 0, gy = 0;
    for (long d = -1; d <= 1; ++d) {
      gx += (px(d, 1) - px(d, -1)) / 3.0;
      gy += (px(1, d) - px(-1, d)) / 3.0;
    }
    return std::sqrt(gx * gx + gy * gy);
  };
  std::vector<double> map;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double ga = grad(pa, r, c), gb = grad(pb, r, c);
      map.push_back((2 * ga * gb + 170) / (ga * ga + gb * gb + 170));
    }
  double mean = 0;
  for (double v : map) mean += v;
  mean /= double(map.size());
  double ss = 0;
  for (double v : map) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / double(map.size() - 1));
}

}  // namespace oracle
