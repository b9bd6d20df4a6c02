#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "qgan/image.hpp"

namespace qgan::metrics {

using image::Image;
using image::Plane;

enum class Metric { SSIM, FSIM, GMSD, NIQE };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

struct QualityScore {
  Metric metric = Metric::SSIM;
  double value = 0.0;
  /// NIQE only: the combined covariance was singular and a pseudo-inverse was used.
  bool pseudo_inverse = false;
};

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 6.5025;   // (0.01 * 255)^2
  double c2 = 58.5225;  // (0.03 * 255)^2
};

/// Mean of the SSIM map over the valid (unpadded) window positions.
QualityScore ssim(const Plane& a, const Plane& b, const SsimParams& p = {});
/// On luminance for RGB inputs.
QualityScore ssim(const Image& a, const Image& b, const SsimParams& p = {});

struct PcParams {
  int scales = 4;
  int orientations = 4;
  double min_wavelength = 6.0;
  double mult = 2.0;
  double sigma_onf = 0.55;
  double d_theta_on_sigma = 1.2;
  double k = 2.0;
  double epsilon = 1e-4;
  double lowpass_cutoff = 0.45;
  int lowpass_order = 15;
  double noise_divisor = 1.7;
  std::size_t min_size = 32;

  bool operator==(const PcParams&) const = default;
};

/// Log-Gabor bank for one image size plus the per-orientation constants of
/// the noise compensation, all independent of image content.
struct PcBank {
  std::size_t rows = 0;
  std::size_t cols = 0;
  PcParams params;
  /// filters[o * scales + s], unshifted (DC at index 0).
  std::vector<std::vector<double>> filters;
  /// T_o = threshold_gain[o] * sqrt(median(|EO_{0,o}|^2)).
  std::vector<double> threshold_gain;
};

/// Banks are cached per (rows, cols); the default parameters are used.
const PcBank& pc_bank(std::size_t rows, std::size_t cols);
PcBank make_pc_bank(std::size_t rows, std::size_t cols, const PcParams& p);

struct PcMap {
  Plane pc;
  PcParams params;
};

PcMap phase_congruency(const Plane& plane, const PcParams& p = {});

struct FsimParams {
  double t1 = 0.85;
  double t2 = 160.0;
  double t3 = 200.0;
  double t4 = 200.0;
  double lambda = 0.03;
  /// Added to max(PC_a, PC_b) before pooling so that flat pairs pool to a defined value.
  double weight_floor = 1e-12;
};

/// Scharr kernel for the x derivative, true-convolution orientation; dy is its transpose.
const Plane& scharr_dx();
const Plane& scharr_dy();

/// Downsampling factor max(1, round(min(H, W) / 256)).
std::size_t fsim_downsample_factor(std::size_t h, std::size_t w);

/// FSIM (luminance) or FSIMc (chromatic) on [0, 255] images.
QualityScore fsim(const Image& a, const Image& b, bool chromatic, const FsimParams& p = {});

struct GmsdParams {
  double c = 170.0;  // on [0, 255]
};
const Plane& prewitt_dx();
const Plane& prewitt_dy();
QualityScore gmsd(const Plane& a, const Plane& b, const GmsdParams& p = {});
QualityScore gmsd(const Image& a, const Image& b, const GmsdParams& p = {});

// ---- NIQE ----------------------------------------------------------------

inline constexpr std::size_t kNiqeFeatures = 36;

struct NiqeParams {
  std::size_t patch = 96;
  double sharpness_threshold = 0.75;
};

struct NiqeModel {
  std::array<double, kNiqeFeatures> mean{};
  std::array<double, kNiqeFeatures * kNiqeFeatures> cov{};  // row-major
  std::size_t patch = 96;
  double sharpness_threshold = 0.75;
  std::size_t patch_count = 0;

  /// Little-endian: "QNIQ", u32 version (1), u32 patch, f64 threshold,
  /// 36 f64 means, 666 f64 upper-triangle covariance entries row by row.
  void save(const std::filesystem::path& path) const;
  static NiqeModel load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// AGGD fit by moment matching against the gamma table 0.2:0.001:10.
struct AggdFit {
  double alpha = 0.0;
  double beta_left = 0.0;
  double beta_right = 0.0;
};
AggdFit fit_aggd(const std::vector<double>& values);
/// Nearest shape parameter on the table for a normalised moment ratio.
double aggd_alpha_for_ratio(double rhat_norm);

/// Mean-subtracted contrast-normalised coefficients and local deviation.
struct Mscn {
  Plane coeffs;
  Plane sigma;
};
Mscn mscn(const Plane& plane);
/// 18 features of one MSCN patch.
std::array<double, 18> patch_features(const Plane& coeffs);

struct PatchFeatures {
  std::vector<std::array<double, kNiqeFeatures>> rows;
  std::vector<double> sharpness;  // mean local deviation per patch at scale 1
};
/// Features of all non-overlapping patches of a luminance plane (cropped to a
/// multiple of patch size). Scale 2 is the 2x box-downsampled plane with half-size patches.
PatchFeatures niqe_patch_features(const Plane& plane, std::size_t patch);

NiqeModel niqe_fit(const std::vector<Image>& corpus, const NiqeParams& p = {});
QualityScore niqe(const Image& image, const NiqeModel& model);

}  // namespace qgan::metrics
