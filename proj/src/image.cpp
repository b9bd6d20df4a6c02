#include "qgan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qgan/kernels.hpp"

namespace qgan::image {

Plane::Plane(std::size_t h, std::size_t w, std::vector<double> values) : height(h), width(w), data(std::move(values)) {
  if (data.size() != h * w) throw std::invalid_argument("plane: value count does not match height*width");
}

namespace {

void check_pixel(double v) {
  if (!(v >= 0.0 && v <= 255.0)) throw std::invalid_argument("image: pixel value outside [0, 255]");
}

void check_geometry(std::size_t h, std::size_t w, std::size_t c) {
  if (h == 0 || w == 0) throw std::invalid_argument("image: empty geometry");
  if (c != 1 && c != 3) throw std::invalid_argument("image: channels must be 1 or 3");
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ImageError(name + ": corrupt PNG: " + img.message);
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw ImageError(name + ": unsupported bit depth 16 (8-bit PNG required)");
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  const png_color black{0, 0, 0};
  if (!png_image_finish_read(&img, &black, buf.data(), 0, nullptr))
    throw ImageError(name + ": corrupt PNG: " + img.message);
  return Image(img.height, img.width, color ? 3 : 1, std::vector<double>(buf.begin(), buf.end()));
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start || v > (1L << 24)) throw ImageError(name + ": corrupt PNM header");
    return v;
  };
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0) throw ImageError(name + ": corrupt PNM header");
  if (maxval != 255) throw ImageError(name + ": unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageError(name + ": corrupt PNM header");
  ++pos;
  const std::size_t need = std::size_t(w) * std::size_t(h) * channels;
  if (bytes.size() - pos < need) throw ImageError(name + ": truncated PNM data");
  return Image(std::size_t(h), std::size_t(w), channels,
               std::vector<double>(bytes.begin() + long(pos), bytes.begin() + long(pos + need)));
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels), pixels_(height * width * channels, fill) {
  check_geometry(height, width, channels);
  check_pixel(fill);
}

Image::Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  check_geometry(height, width, channels);
  if (pixels_.size() != height * width * channels) throw std::invalid_argument("image: pixel count mismatch");
  for (double v : pixels_) check_pixel(v);
}

Image Image::from_plane(const Plane& gray) { return Image(gray.height, gray.width, 1, gray.data); }

Image Image::from_planes(const Plane& r, const Plane& g, const Plane& b) {
  if (r.height != g.height || r.height != b.height || r.width != g.width || r.width != b.width)
    throw std::invalid_argument("image: channel planes differ in size");
  std::vector<double> px(r.size() * 3);
  for (std::size_t i = 0; i < r.size(); ++i) {
    px[3 * i] = r.data[i];
    px[3 * i + 1] = g.data[i];
    px[3 * i + 2] = b.data[i];
  }
  return Image(r.height, r.width, 3, std::move(px));
}

void Image::set(std::size_t r, std::size_t c, std::size_t ch, double v) {
  check_pixel(v);
  pixels_[(r * width_ + c) * channels_ + ch] = v;
}

Plane Image::channel(std::size_t ch) const {
  if (ch >= channels_) throw std::invalid_argument("image: channel index out of range");
  Plane p(height_, width_);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = pixels_[i * channels_ + ch];
  return p;
}

Image load(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const std::string name = path.string();
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(std::begin(kPngMagic), std::end(kPngMagic), bytes.begin()))
    return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '5')) return decode_pnm(bytes, name);
  throw ImageError(name + ": unrecognised format (expected PNG or binary PNM)");
}

void save(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), bytes.begin(), to_byte);
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr))
      throw ImageError(path.string() + ": PNG write failed: " + img.message);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot open " + path.string() + " for writing");
  out << (image.channels() == 3 ? "P6" : "P5") << '\n' << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw ImageError(path.string() + ": write failed");
}

Yiq rgb_to_yiq(const Image& image) {
  const std::size_t h = image.height(), w = image.width();
  Yiq out{Plane(h, w), Plane(h, w), Plane(h, w)};
  if (image.channels() == 1) {
    out.y = image.channel(0);
    return out;
  }
  const auto& px = image.pixels();
  for (std::size_t i = 0; i < h * w; ++i) {
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    out.y.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    out.i.data[i] = 0.596 * r - 0.274 * g - 0.322 * b;
    out.q.data[i] = 0.211 * r - 0.523 * g + 0.312 * b;
  }
  return out;
}

Plane luminance(const Image& image) { return image.channels() == 1 ? image.channel(0) : rgb_to_yiq(image).y; }

Plane downsample_avg(const Plane& plane, std::size_t factor) {
  if (factor == 0 || factor > plane.height || factor > plane.width)
    throw std::invalid_argument("downsample_avg: factor " + std::to_string(factor) + " exceeds plane " +
                                std::to_string(plane.height) + "x" + std::to_string(plane.width));
  if (factor == 1) return plane;
  const std::size_t oh = plane.height / factor, ow = plane.width / factor;
  Plane out(oh, ow);
  const double inv = 1.0 / double(factor * factor);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < factor; ++a)
        for (std::size_t b = 0; b < factor; ++b) acc += plane.at(i * factor + a, j * factor + b);
      out.at(i, j) = acc * inv;
    }
  return out;
}

Plane convolve2d_same(const Plane& plane, const Plane& kernel) {
  if (kernel.height % 2 == 0 || kernel.width % 2 == 0)
    throw std::invalid_argument("convolve2d_same: kernel must be odd-sized");
  Plane out(plane.height, plane.width);
  kernels::filter2d_symmetric<double>(1, plane.height, plane.width, plane.data, kernel.data, kernel.height,
                                      kernel.width, out.data);
  return out;
}

Plane gaussian_kernel(std::size_t size, double sigma) {
  if (size % 2 == 0 || !(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: odd size and sigma > 0 required");
  Plane k(size, size);
  const double c = double(size / 2);
  double total = 0.0;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t s = 0; s < size; ++s) {
      const double dr = double(r) - c, ds = double(s) - c;
      k.at(r, s) = std::exp(-(dr * dr + ds * ds) / (2.0 * sigma * sigma));
      total += k.at(r, s);
    }
  for (auto& v : k.data) v /= total;
  return k;
}

Image gaussian_blur(const Image& image, double sigma) {
  const std::size_t half = std::size_t(std::ceil(3.0 * sigma));
  const Plane k = gaussian_kernel(2 * half + 1, sigma);
  std::vector<Plane> planes;
  for (std::size_t c = 0; c < image.channels(); ++c) {
    Plane p = convolve2d_same(image.channel(c), k);
    for (auto& v : p.data) v = std::clamp(v, 0.0, 255.0);
    planes.push_back(std::move(p));
  }
  return image.channels() == 1 ? Image::from_plane(planes[0]) : Image::from_planes(planes[0], planes[1], planes[2]);
}

ComplexPlane fft2(const ComplexPlane& plane) {
  ComplexPlane out = plane;
  fft::transform2d(out.data, out.height, out.width, false);
  return out;
}

ComplexPlane fft2(const Plane& plane) {
  ComplexPlane c{plane.height, plane.width, std::vector<fft::Complex>(plane.data.begin(), plane.data.end())};
  return fft2(c);
}

ComplexPlane ifft2(const ComplexPlane& plane) {
  ComplexPlane out = plane;
  fft::transform2d(out.data, out.height, out.width, true);
  return out;
}

TensorF to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const std::size_t h = images[0].height(), w = images[0].width(), c = images[0].channels();
  TensorF t(Shape{images.size(), c, h, w});
  auto d = t.data_mut();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.height() != h || im.width() != w || im.channels() != c)
      throw std::invalid_argument("to_tensor: images differ in geometry");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p)
        d[((n * c + ch) * h * w) + p] = float(im.pixels()[p * c + ch] / 127.5 - 1.0);
  }
  return t;
}

TensorF to_tensor(const Image& image) { return to_tensor(std::vector<Image>{image}); }

Image from_tensor(const TensorF& tensor, std::size_t n) {
  if (tensor.rank() != 4 || n >= tensor.dim(0) || (tensor.dim(1) != 1 && tensor.dim(1) != 3))
    throw ShapeError("from_tensor: expected NCHW with 1 or 3 channels, got " + shape_str(tensor.shape()));
  const std::size_t c = tensor.dim(1), h = tensor.dim(2), w = tensor.dim(3);
  std::vector<double> px(h * w * c);
  const auto d = tensor.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p)
      px[p * c + ch] = std::clamp((double(d[(n * c + ch) * h * w + p]) + 1.0) * 127.5, 0.0, 255.0);
  return Image(h, w, c, std::move(px));
}

}  // namespace qgan::image
