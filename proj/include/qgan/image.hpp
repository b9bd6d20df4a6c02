#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "qgan/fft.hpp"
#include "qgan/tensor.hpp"

namespace qgan::image {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single real-valued channel, row-major.
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}
  Plane(std::size_t h, std::size_t w, std::vector<double> values);

  double& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t size() const { return data.size(); }
};

struct ComplexPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<fft::Complex> data;
};

/// Interleaved (HWC) pixels in [0, 255]; 1 or 3 channels.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> pixels);
  static Image from_plane(const Plane& gray);
  static Image from_planes(const Plane& r, const Plane& g, const Plane& b);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  double at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels_[(r * width_ + c) * channels_ + ch]; }
  void set(std::size_t r, std::size_t c, std::size_t ch, double v);

  Plane channel(std::size_t ch) const;
  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> pixels_;
};

/// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA, palette) or binary PNM (P5/P6, maxval 255).
/// Alpha is dropped. Throws ImageError with a format diagnostic.
Image load(const std::filesystem::path& path);
/// Writes PNG for ".png", PNM otherwise (P5 for gray, P6 for RGB). Pixels are rounded.
void save(const Image& image, const std::filesystem::path& path);

struct Yiq {
  Plane y, i, q;
};
Yiq rgb_to_yiq(const Image& image);
/// Luma for RGB, the plane itself for gray.
Plane luminance(const Image& image);

/// Mean of non-overlapping factor x factor blocks; trailing rows/columns dropped.
Plane downsample_avg(const Plane& plane, std::size_t factor);
/// True 2-D convolution, output the size of the input, symmetric borders.
Plane convolve2d_same(const Plane& plane, const Plane& kernel);
/// Normalised size x size Gaussian (size odd).
Plane gaussian_kernel(std::size_t size, double sigma);
/// Gaussian blur with a kernel of half-width ceil(3 sigma), per channel.
Image gaussian_blur(const Image& image, double sigma);

ComplexPlane fft2(const Plane& plane);
ComplexPlane fft2(const ComplexPlane& plane);
ComplexPlane ifft2(const ComplexPlane& plane);

/// [0, 255] -> [-1, 1] as pixel / 127.5 - 1, NCHW with N = 1.
TensorF to_tensor(const Image& image);
/// Stacks equally sized images into one NCHW batch.
TensorF to_tensor(const std::vector<Image>& images);
/// Inverse of to_tensor for sample n; values are clamped into [0, 255].
Image from_tensor(const TensorF& tensor, std::size_t n = 0);

}  // namespace qgan::image
