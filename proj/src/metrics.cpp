#include "qgan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "qgan/kernels.hpp"

namespace qgan::metrics {

using image::ComplexPlane;
using image::convolve2d_same;
using image::downsample_avg;

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::SSIM: return "SSIM";
    case Metric::FSIM: return "FSIM";
    case Metric::GMSD: return "GMSD";
    case Metric::NIQE: return "NIQE";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Metric m : {Metric::SSIM, Metric::FSIM, Metric::GMSD, Metric::NIQE})
    if (metric_name(m) == s) return m;
  throw std::invalid_argument("unknown metric '" + std::string(name) + "' (ssim, fsim, gmsd, niqe)");
}

namespace {

void require_same_size(std::string_view op, const Plane& a, const Plane& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
}

void require_same_size(std::string_view op, const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                                std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                                std::to_string(b.channels()));
}

// Correlation restricted to positions where the window fits.
Plane filter_valid(const Plane& x, const Plane& k) {
  Plane out(x.height - k.height + 1, x.width - k.width + 1);
#pragma omp parallel for if (out.height >= 64)
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k.height; ++a)
        for (std::size_t b = 0; b < k.width; ++b) acc += k.at(a, b) * x.at(r + a, c + b);
      out.at(r, c) = acc;
    }
  return out;
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Plane gradient_magnitude(const Plane& p, const Plane& dx, const Plane& dy) {
  const Plane gx = convolve2d_same(p, dx), gy = convolve2d_same(p, dy);
  Plane out(p.height, p.width);
  for (std::size_t i = 0; i < p.size(); ++i) out.data[i] = std::hypot(gx.data[i], gy.data[i]);
  return out;
}

std::size_t ifftshift_index(std::size_t i, std::size_t n) { return (i + n / 2) % n; }

std::vector<double> centred_range(std::size_t n) {
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (n % 2) {
      r[i] = (double(i) - double(n - 1) / 2.0) / double(n - 1);
    } else {
      r[i] = (double(i) - double(n) / 2.0) / double(n);
    }
  }
  return r;
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---- SSIM -------------------------------------------------------------------

QualityScore ssim(const Plane& a, const Plane& b, const SsimParams& p) {
  require_same_size("ssim", a, b);
  if (a.height < p.window || a.width < p.window)
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(p.window) + "px window");
  const Plane w = image::gaussian_kernel(p.window, p.sigma);
  const Plane mu_a = filter_valid(a, w), mu_b = filter_valid(b, w);
  const Plane saa = filter_valid(multiply(a, a), w), sbb = filter_valid(multiply(b, b), w);
  const Plane sab = filter_valid(multiply(a, b), w);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data[i], mb = mu_b.data[i];
    const double va = saa.data[i] - ma * ma, vb = sbb.data[i] - mb * mb, cov = sab.data[i] - ma * mb;
    total += ((2 * ma * mb + p.c1) * (2 * cov + p.c2)) / ((ma * ma + mb * mb + p.c1) * (va + vb + p.c2));
  }
  return {Metric::SSIM, total / double(mu_a.size())};
}

QualityScore ssim(const Image& a, const Image& b, const SsimParams& p) {
  require_same_size("ssim", a, b);
  return ssim(image::luminance(a), image::luminance(b), p);
}

// ---- Phase congruency ---------------------------------------------------------

PcBank make_pc_bank(std::size_t rows, std::size_t cols, const PcParams& p) {
  if (rows < p.min_size || cols < p.min_size)
    throw std::invalid_argument("phase_congruency: plane " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " below minimum " + std::to_string(p.min_size));
  const std::size_t n = rows * cols;
  const auto xr = centred_range(cols), yr = centred_range(rows);
  std::vector<double> radius(n), theta(n), lowpass(n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = xr[ifftshift_index(c, cols)], y = yr[ifftshift_index(r, rows)];
      const double rad = std::sqrt(x * x + y * y);
      radius[r * cols + c] = rad;
      theta[r * cols + c] = std::atan2(-y, x);
      lowpass[r * cols + c] = 1.0 / (1.0 + std::pow(rad / p.lowpass_cutoff, 2.0 * p.lowpass_order));
    }
  radius[0] = 1.0;

  const double theta_sigma = std::numbers::pi / p.orientations / p.d_theta_on_sigma;
  const double log_onf = std::log(p.sigma_onf);
  std::vector<std::vector<double>> log_gabor(std::size_t(p.scales), std::vector<double>(n));
  for (int s = 0; s < p.scales; ++s) {
    const double fo = 1.0 / (p.min_wavelength * std::pow(p.mult, s));
    for (std::size_t i = 0; i < n; ++i) {
      const double l = std::log(radius[i] / fo);
      log_gabor[std::size_t(s)][i] = std::exp(-(l * l) / (2.0 * log_onf * log_onf)) * lowpass[i];
    }
    log_gabor[std::size_t(s)][0] = 0.0;
  }

  PcBank bank;
  bank.rows = rows;
  bank.cols = cols;
  bank.params = p;
  const double k_noise = (std::sqrt(std::numbers::pi / 2.0) + p.k * std::sqrt(2.0 - std::numbers::pi / 2.0)) /
                         p.noise_divisor;
  for (int o = 0; o < p.orientations; ++o) {
    const double angle = o * std::numbers::pi / p.orientations;
    std::vector<double> spread(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double ds = std::sin(theta[i]) * std::cos(angle) - std::cos(theta[i]) * std::sin(angle);
      const double dc = std::cos(theta[i]) * std::cos(angle) + std::sin(theta[i]) * std::sin(angle);
      const double dtheta = std::abs(std::atan2(ds, dc));
      spread[i] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
    }
    std::vector<std::vector<double>> spatial;
    double em_n = 0.0;
    for (int s = 0; s < p.scales; ++s) {
      std::vector<double> f(n);
      for (std::size_t i = 0; i < n; ++i) f[i] = log_gabor[std::size_t(s)][i] * spread[i];
      if (s == 0)
        for (double v : f) em_n += v * v;
      ComplexPlane cp{rows, cols, std::vector<fft::Complex>(f.begin(), f.end())};
      cp = image::ifft2(cp);
      std::vector<double> sp(n);
      for (std::size_t i = 0; i < n; ++i) sp[i] = cp.data[i].real() * std::sqrt(double(n));
      spatial.push_back(std::move(sp));
      bank.filters.push_back(std::move(f));
    }
    double sum_an2 = 0.0, sum_aiaj = 0.0;
    for (int si = 0; si < p.scales; ++si) {
      for (double v : spatial[std::size_t(si)]) sum_an2 += v * v;
      for (int sj = si + 1; sj < p.scales; ++sj)
        for (std::size_t i = 0; i < n; ++i) sum_aiaj += spatial[std::size_t(si)][i] * spatial[std::size_t(sj)][i];
    }
    // noisePower = median / ln2 / EM_n; tau = sqrt(noisePower * (sum_an2 + 2 sum_aiaj)).
    bank.threshold_gain.push_back(std::sqrt((sum_an2 + 2.0 * sum_aiaj) / (std::numbers::ln2 * em_n)) * k_noise);
  }
  return bank;
}

const PcBank& pc_bank(std::size_t rows, std::size_t cols) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<PcBank>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{rows, cols}];
  if (!slot) slot = std::make_unique<PcBank>(make_pc_bank(rows, cols, PcParams{}));
  return *slot;
}

PcMap phase_congruency(const Plane& plane, const PcParams& p) {
  PcBank owned;
  if (!(p == PcParams{})) owned = make_pc_bank(plane.height, plane.width, p);
  const PcBank& bank = p == PcParams{} ? pc_bank(plane.height, plane.width) : owned;
  const std::size_t n = plane.size();
  const auto spectrum = image::fft2(plane);
  std::vector<double> energy_all(n, 0.0), an_all(n, 0.0);
  std::vector<double> sum_e(n), sum_o(n), sum_an(n), energy(n);
  std::vector<std::vector<fft::Complex>> eo(std::size_t(p.scales));
  for (int o = 0; o < p.orientations; ++o) {
    std::fill(sum_e.begin(), sum_e.end(), 0.0);
    std::fill(sum_o.begin(), sum_o.end(), 0.0);
    std::fill(sum_an.begin(), sum_an.end(), 0.0);
    std::fill(energy.begin(), energy.end(), 0.0);
    for (int s = 0; s < p.scales; ++s) {
      const auto& f = bank.filters[std::size_t(o * p.scales + s)];
      ComplexPlane prod{plane.height, plane.width, std::vector<fft::Complex>(n)};
      for (std::size_t i = 0; i < n; ++i) prod.data[i] = spectrum.data[i] * f[i];
      eo[std::size_t(s)] = image::ifft2(prod).data;
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = eo[std::size_t(s)][i];
        sum_an[i] += std::abs(v);
        sum_e[i] += v.real();
        sum_o[i] += v.imag();
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double x = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + p.epsilon;
      const double me = sum_e[i] / x, mo = sum_o[i] / x;
      for (int s = 0; s < p.scales; ++s) {
        const double e = eo[std::size_t(s)][i].real(), od = eo[std::size_t(s)][i].imag();
        energy[i] += e * me + od * mo - std::abs(e * mo - od * me);
      }
    }
    std::vector<double> e2(n);
    for (std::size_t i = 0; i < n; ++i) e2[i] = std::norm(eo[0][i]);
    const double t = bank.threshold_gain[std::size_t(o)] * std::sqrt(median_of(std::move(e2)));
    for (std::size_t i = 0; i < n; ++i) {
      energy_all[i] += std::max(energy[i] - t, 0.0);
      an_all[i] += sum_an[i];
    }
  }
  PcMap out{Plane(plane.height, plane.width), p};
  for (std::size_t i = 0; i < n; ++i) out.pc.data[i] = energy_all[i] / (an_all[i] + p.epsilon);
  return out;
}

// ---- FSIM -------------------------------------------------------------------

const Plane& scharr_dx() {
  static const Plane k(3, 3, {3 / 16.0, 0, -3 / 16.0, 10 / 16.0, 0, -10 / 16.0, 3 / 16.0, 0, -3 / 16.0});
  return k;
}

const Plane& scharr_dy() {
  static const Plane k(3, 3, {3 / 16.0, 10 / 16.0, 3 / 16.0, 0, 0, 0, -3 / 16.0, -10 / 16.0, -3 / 16.0});
  return k;
}

std::size_t fsim_downsample_factor(std::size_t h, std::size_t w) {
  return std::max<std::size_t>(1, std::size_t(std::lround(double(std::min(h, w)) / 256.0)));
}

QualityScore fsim(const Image& a, const Image& b, bool chromatic, const FsimParams& p) {
  require_same_size("fsim", a, b);
  const std::size_t f = fsim_downsample_factor(a.height(), a.width());
  auto ya = image::rgb_to_yiq(a), yb = image::rgb_to_yiq(b);
  for (auto* q : {&ya, &yb}) {
    q->y = downsample_avg(q->y, f);
    q->i = downsample_avg(q->i, f);
    q->q = downsample_avg(q->q, f);
  }
  const Plane pc1 = phase_congruency(ya.y).pc, pc2 = phase_congruency(yb.y).pc;
  const Plane g1 = gradient_magnitude(ya.y, scharr_dx(), scharr_dy());
  const Plane g2 = gradient_magnitude(yb.y, scharr_dx(), scharr_dy());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pc1.size(); ++i) {
    const double spc = (2 * pc1.data[i] * pc2.data[i] + p.t1) / (pc1.data[i] * pc1.data[i] + pc2.data[i] * pc2.data[i] + p.t1);
    const double sg = (2 * g1.data[i] * g2.data[i] + p.t2) / (g1.data[i] * g1.data[i] + g2.data[i] * g2.data[i] + p.t2);
    double s = spc * sg;
    if (chromatic) {
      const double i1 = ya.i.data[i], i2 = yb.i.data[i], q1 = ya.q.data[i], q2 = yb.q.data[i];
      const double si = (2 * i1 * i2 + p.t3) / (i1 * i1 + i2 * i2 + p.t3);
      const double sq = (2 * q1 * q2 + p.t4) / (q1 * q1 + q2 * q2 + p.t4);
      const double iq = si * sq;
      // Real part of the principal power for negative bases.
      s *= iq >= 0 ? std::pow(iq, p.lambda) : std::pow(-iq, p.lambda) * std::cos(p.lambda * std::numbers::pi);
    }
    const double w = std::max(pc1.data[i], pc2.data[i]) + p.weight_floor;
    num += s * w;
    den += w;
  }
  return {Metric::FSIM, num / den};
}

// ---- GMSD -------------------------------------------------------------------

const Plane& prewitt_dx() {
  static const Plane k(3, 3, {1 / 3.0, 0, -1 / 3.0, 1 / 3.0, 0, -1 / 3.0, 1 / 3.0, 0, -1 / 3.0});
  return k;
}

const Plane& prewitt_dy() {
  static const Plane k(3, 3, {1 / 3.0, 1 / 3.0, 1 / 3.0, 0, 0, 0, -1 / 3.0, -1 / 3.0, -1 / 3.0});
  return k;
}

QualityScore gmsd(const Plane& a, const Plane& b, const GmsdParams& p) {
  require_same_size("gmsd", a, b);
  const Plane da = downsample_avg(a, 2), db = downsample_avg(b, 2);
  const Plane ga = gradient_magnitude(da, prewitt_dx(), prewitt_dy());
  const Plane gb = gradient_magnitude(db, prewitt_dx(), prewitt_dy());
  const std::size_t n = ga.size();
  std::vector<double> map(n);
  for (std::size_t i = 0; i < n; ++i)
    map[i] = (2 * ga.data[i] * gb.data[i] + p.c) / (ga.data[i] * ga.data[i] + gb.data[i] * gb.data[i] + p.c);
  if (n < 2) return {Metric::GMSD, 0.0};
  const double mean = std::accumulate(map.begin(), map.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : map) ss += (v - mean) * (v - mean);
  return {Metric::GMSD, std::sqrt(ss / double(n - 1))};
}

QualityScore gmsd(const Image& a, const Image& b, const GmsdParams& p) {
  require_same_size("gmsd", a, b);
  return gmsd(image::luminance(a), image::luminance(b), p);
}

// ---- NIQE -------------------------------------------------------------------

namespace {

struct GammaTable {
  std::vector<double> gam, ratio;
  GammaTable() {
    for (int i = 0; i <= 9800; ++i) {
      const double g = 0.2 + 0.001 * i;
      gam.push_back(g);
      ratio.push_back(std::exp(2.0 * std::lgamma(2.0 / g) - std::lgamma(1.0 / g) - std::lgamma(3.0 / g)));
    }
  }
};

const GammaTable& gamma_table() {
  static const GammaTable t;
  return t;
}

std::vector<double> circshift_product(const Plane& p, long dr, long dc) {
  const long h = long(p.height), w = long(p.width);
  std::vector<double> out(p.size());
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      const long sr = ((r - dr) % h + h) % h, sc = ((c - dc) % w + w) % w;
      out[std::size_t(r * w + c)] = p.data[std::size_t(r * w + c)] * p.data[std::size_t(sr * w + sc)];
    }
  return out;
}

Plane crop(const Plane& p, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
  Plane out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = p.at(r0 + r, c0 + c);
  return out;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
}
void write_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) os.put(char((v >> (8 * i)) & 0xff));
}
std::uint64_t read_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("niqe model: truncated file");
    v |= std::uint64_t(std::uint8_t(c)) << (8 * i);
  }
  return v;
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian fit_gaussian(const std::vector<std::array<double, kNiqeFeatures>>& rows) {
  const Eigen::Index d = kNiqeFeatures, n = Eigen::Index(rows.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[std::size_t(i)][std::size_t(j)];
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  g.cov = Eigen::MatrixXd::Zero(d, d);
  if (n > 1) {
    const Eigen::MatrixXd c = x.rowwise() - g.mean.transpose();
    g.cov = (c.transpose() * c) / double(n - 1);
  }
  return g;
}

bool finite_row(const std::array<double, kNiqeFeatures>& r) {
  return std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

double aggd_alpha_for_ratio(double rhat_norm) {
  const auto& t = gamma_table();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.gam.size(); ++i) {
    const double d = (t.ratio[i] - rhat_norm) * (t.ratio[i] - rhat_norm);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return t.gam[best];
}

AggdFit fit_aggd(const std::vector<double>& v) {
  double sl = 0.0, sr = 0.0, sabs = 0.0, s2 = 0.0;
  std::size_t nl = 0, nr = 0;
  for (double x : v) {
    if (x < 0) {
      sl += x * x;
      ++nl;
    } else if (x > 0) {
      sr += x * x;
      ++nr;
    }
    sabs += std::abs(x);
    s2 += x * x;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (nl == 0 || nr == 0 || s2 == 0.0) return {nan, nan, nan};
  const double left = std::sqrt(sl / double(nl)), right = std::sqrt(sr / double(nr));
  const double gh = left / right;
  const double m_abs = sabs / double(v.size());
  const double rhat = m_abs * m_abs / (s2 / double(v.size()));
  const double rhat_norm = rhat * (gh * gh * gh + 1) * (gh + 1) / ((gh * gh + 1) * (gh * gh + 1));
  const double alpha = aggd_alpha_for_ratio(rhat_norm);
  const double c = std::sqrt(std::tgamma(1.0 / alpha) / std::tgamma(3.0 / alpha));
  return {alpha, left * c, right * c};
}

Mscn mscn(const Plane& plane) {
  static const Plane window = image::gaussian_kernel(7, 7.0 / 6.0);
  const Plane mu = convolve2d_same(plane, window);
  const Plane sq = convolve2d_same(multiply(plane, plane), window);
  Mscn out{Plane(plane.height, plane.width), Plane(plane.height, plane.width)};
  for (std::size_t i = 0; i < plane.size(); ++i) {
    out.sigma.data[i] = std::sqrt(std::abs(sq.data[i] - mu.data[i] * mu.data[i]));
    out.coeffs.data[i] = (plane.data[i] - mu.data[i]) / (out.sigma.data[i] + 1.0);
  }
  return out;
}

std::array<double, 18> patch_features(const Plane& coeffs) {
  std::array<double, 18> f{};
  const AggdFit base = fit_aggd(coeffs.data);
  f[0] = base.alpha;
  f[1] = (base.beta_left + base.beta_right) / 2.0;
  static constexpr long shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {-1, 1}};
  for (int k = 0; k < 4; ++k) {
    const AggdFit a = fit_aggd(circshift_product(coeffs, shifts[k][0], shifts[k][1]));
    const double mean_param = (a.beta_right - a.beta_left) * std::tgamma(2.0 / a.alpha) / std::tgamma(1.0 / a.alpha);
    f[std::size_t(2 + 4 * k)] = a.alpha;
    f[std::size_t(3 + 4 * k)] = mean_param;
    f[std::size_t(4 + 4 * k)] = a.beta_left;
    f[std::size_t(5 + 4 * k)] = a.beta_right;
  }
  return f;
}

PatchFeatures niqe_patch_features(const Plane& plane, std::size_t patch) {
  if (patch < 2 || patch % 2) throw std::invalid_argument("niqe: patch size must be even and >= 2");
  const std::size_t br = plane.height / patch, bc = plane.width / patch;
  if (br == 0 || bc == 0)
    throw std::invalid_argument("niqe: image " + std::to_string(plane.height) + "x" + std::to_string(plane.width) +
                                " smaller than one " + std::to_string(patch) + "px patch");
  const Plane cropped = crop(plane, 0, 0, br * patch, bc * patch);
  const Mscn s1 = mscn(cropped);
  const Mscn s2 = mscn(downsample_avg(cropped, 2));
  const std::size_t half = patch / 2;
  PatchFeatures out;
  for (std::size_t i = 0; i < br; ++i)
    for (std::size_t j = 0; j < bc; ++j) {
      std::array<double, kNiqeFeatures> row{};
      const auto f1 = patch_features(crop(s1.coeffs, i * patch, j * patch, patch, patch));
      const auto f2 = patch_features(crop(s2.coeffs, i * half, j * half, half, half));
      std::copy(f1.begin(), f1.end(), row.begin());
      std::copy(f2.begin(), f2.end(), row.begin() + 18);
      out.rows.push_back(row);
      const Plane sg = crop(s1.sigma, i * patch, j * patch, patch, patch);
      out.sharpness.push_back(std::accumulate(sg.data.begin(), sg.data.end(), 0.0) / double(sg.size()));
    }
  return out;
}

NiqeModel niqe_fit(const std::vector<Image>& corpus, const NiqeParams& p) {
  if (corpus.size() < 10)
    throw std::invalid_argument("niqe_fit: need at least 10 images, got " + std::to_string(corpus.size()));
  std::vector<std::array<double, kNiqeFeatures>> kept;
  std::size_t total = 0;
  for (const auto& im : corpus) {
    if (im.height() < 2 * p.patch || im.width() < 2 * p.patch)
      throw std::invalid_argument("niqe_fit: image " + std::to_string(im.height()) + "x" + std::to_string(im.width()) +
                                  " smaller than twice the patch size " + std::to_string(p.patch));
    const auto pf = niqe_patch_features(image::luminance(im), p.patch);
    total += pf.rows.size();
    const double max_sharp = *std::max_element(pf.sharpness.begin(), pf.sharpness.end());
    for (std::size_t k = 0; k < pf.rows.size(); ++k)
      if (pf.sharpness[k] > 0.0 && pf.sharpness[k] >= p.sharpness_threshold * max_sharp && finite_row(pf.rows[k]))
        kept.push_back(pf.rows[k]);
  }
  if (kept.empty())
    throw std::invalid_argument("niqe_fit: no patches left after sharpness filtering (0 of " + std::to_string(total) +
                                ")");
  const Gaussian g = fit_gaussian(kept);
  NiqeModel m;
  m.patch = p.patch;
  m.sharpness_threshold = p.sharpness_threshold;
  m.patch_count = kept.size();
  for (std::size_t i = 0; i < kNiqeFeatures; ++i) {
    m.mean[i] = g.mean(Eigen::Index(i));
    for (std::size_t j = 0; j < kNiqeFeatures; ++j) {
      const auto a = Eigen::Index(std::min(i, j)), b = Eigen::Index(std::max(i, j));
      m.cov[i * kNiqeFeatures + j] = g.cov(a, b);
    }
  }
  return m;
}

QualityScore niqe(const Image& image, const NiqeModel& model) {
  const auto pf = niqe_patch_features(image::luminance(image), model.patch);
  std::vector<std::array<double, kNiqeFeatures>> rows;
  for (const auto& r : pf.rows)
    if (finite_row(r)) rows.push_back(r);
  if (rows.empty()) throw std::invalid_argument("niqe: no patch with finite features");
  const Gaussian g = fit_gaussian(rows);
  const Eigen::Index d = kNiqeFeatures;
  Eigen::MatrixXd s(d, d);
  Eigen::VectorXd diff(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    diff(i) = model.mean[std::size_t(i)] - g.mean(i);
    for (Eigen::Index j = 0; j < d; ++j) s(i, j) = (model.cov[std::size_t(i * d + j)] + g.cov(i, j)) / 2.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = double(d) * ev.cwiseAbs().maxCoeff() * std::numeric_limits<double>::epsilon();
  Eigen::VectorXd inv(d);
  bool singular = false;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(ev(i)) > tol) {
      inv(i) = 1.0 / ev(i);
    } else {
      inv(i) = 0.0;
      singular = true;
    }
  }
  const Eigen::VectorXd proj = es.eigenvectors().transpose() * diff;
  const double q = proj.cwiseProduct(inv).dot(proj);
  return {Metric::NIQE, std::sqrt(std::max(0.0, q)), singular};
}

void NiqeModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("QNIQ", 4);
  write_u32(os, 1);
  write_u32(os, std::uint32_t(patch));
  write_f64(os, sharpness_threshold);
  for (double v : mean) write_f64(os, v);
  for (std::size_t i = 0; i < kNiqeFeatures; ++i)
    for (std::size_t j = i; j < kNiqeFeatures; ++j) write_f64(os, cov[i * kNiqeFeatures + j]);
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

NiqeModel NiqeModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "QNIQ", 4) != 0)
    throw std::runtime_error(path.string() + ": not a NIQE model file");
  if (read_le(is, 4) != 1) throw std::runtime_error(path.string() + ": unsupported NIQE model version");
  NiqeModel m;
  m.patch = std::size_t(read_le(is, 4));
  m.sharpness_threshold = std::bit_cast<double>(read_le(is, 8));
  for (auto& v : m.mean) v = std::bit_cast<double>(read_le(is, 8));
  for (std::size_t i = 0; i < kNiqeFeatures; ++i)
    for (std::size_t j = i; j < kNiqeFeatures; ++j) {
      const double v = std::bit_cast<double>(read_le(is, 8));
      m.cov[i * kNiqeFeatures + j] = v;
      m.cov[j * kNiqeFeatures + i] = v;
    }
  return m;
}

std::string NiqeModel::to_json() const {
  nlohmann::json j;
  j["patch_size"] = patch;
  j["sharpness_threshold"] = sharpness_threshold;
  j["patch_count"] = patch_count;
  j["mean"] = std::vector<double>(mean.begin(), mean.end());
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < kNiqeFeatures; ++i)
    rows.push_back(std::vector<double>(cov.begin() + long(i * kNiqeFeatures), cov.begin() + long((i + 1) * kNiqeFeatures)));
  j["covariance"] = rows;
  return j.dump(2);
}

}  // namespace qgan::metrics
