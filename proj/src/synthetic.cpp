#include "qgan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace qgan::synthetic {

namespace fs = std::filesystem;
using image::Plane;

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  have_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

constexpr std::size_t kSide = 32;

struct Rgb {
  double r, g, b;
};

Rgb random_color(Rng& rng, double lo = 0.0, double hi = 255.0) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

class Canvas {
 public:
  Canvas(std::size_t h, std::size_t w, Rgb fill) : h_(h), w_(w), px_(h * w * 3) {
    for (std::size_t i = 0; i < h * w; ++i) put(i, fill);
  }
  void put(std::size_t i, Rgb c) {
    px_[3 * i] = c.r;
    px_[3 * i + 1] = c.g;
    px_[3 * i + 2] = c.b;
  }
  template <typename Inside, typename Shade>
  void paint(Inside inside, Shade shade) {
    for (std::size_t r = 0; r < h_; ++r)
      for (std::size_t c = 0; c < w_; ++c)
        if (inside(double(r) + 0.5, double(c) + 0.5)) put(r * w_ + c, shade(double(r), double(c)));
  }
  double& at(std::size_t r, std::size_t c, std::size_t ch) { return px_[(r * w_ + c) * 3 + ch]; }
  Image finish() {
    for (auto& v : px_) v = std::clamp(std::round(v), 0.0, 255.0);
    return Image(h_, w_, 3, px_);
  }

 private:
  std::size_t h_, w_;
  std::vector<double> px_;
};

// Flat-coloured shapes over a smoothly shaded background.
Image colored_shapes(Rng& rng) {
  const Rgb bg = random_color(rng, 20, 235);
  const double gr = rng.uniform(-1.5, 1.5), gc = rng.uniform(-1.5, 1.5);
  Canvas cv(kSide, kSide, bg);
  cv.paint([](double, double) { return true; },
           [&](double r, double c) {
             const double d = gr * (r - 16) + gc * (c - 16);
             return Rgb{bg.r + d, bg.g + d, bg.b + d};
           });
  const std::size_t shapes = 1 + rng.index(3);
  for (std::size_t k = 0; k < shapes; ++k) {
    const Rgb col = random_color(rng);
    const double cr = rng.uniform(6, 26), cc = rng.uniform(6, 26), size = rng.uniform(4, 10);
    auto flat = [col](double, double) { return col; };
    switch (rng.index(3)) {
      case 0:
        cv.paint([=](double r, double c) { return (r - cr) * (r - cr) + (c - cc) * (c - cc) <= size * size; }, flat);
        break;
      case 1: {
        const double hr = size * rng.uniform(0.5, 1.0), hc = size * rng.uniform(0.5, 1.0);
        cv.paint([=](double r, double c) { return std::abs(r - cr) <= hr && std::abs(c - cc) <= hc; }, flat);
        break;
      }
      default:
        cv.paint(
            [=](double r, double c) {
              const double dy = r - (cr - size), dx = std::abs(c - cc);
              return dy >= 0 && dy <= 2 * size && dx <= dy / 2;
            },
            flat);
    }
  }
  return cv.finish();
}

struct FacadeLayout {
  std::size_t rows, cols;
  double top, left, cell_h, cell_w, win_h, win_w;
  double door_w;
};

FacadeLayout random_facade(Rng& rng) {
  FacadeLayout f{};
  f.rows = 2 + rng.index(2);
  f.cols = 2 + rng.index(3);
  f.top = rng.uniform(1, 4);
  f.left = rng.uniform(1, 3);
  f.cell_h = (kSide - 9 - f.top) / double(f.rows);
  f.cell_w = (kSide - 2 * f.left) / double(f.cols);
  f.win_h = f.cell_h * rng.uniform(0.45, 0.7);
  f.win_w = f.cell_w * rng.uniform(0.4, 0.7);
  f.door_w = rng.uniform(5, 9);
  return f;
}

// 0 wall, 1 window, 2 door, 3 ground strip.
int facade_class(const FacadeLayout& f, double r, double c) {
  if (r >= kSide - 3) return 3;
  if (r >= kSide - 10 && std::abs(c - kSide / 2.0) <= f.door_w / 2) return 2;
  if (r >= f.top && r < f.top + f.cell_h * double(f.rows)) {
    const double lr = std::fmod(r - f.top, f.cell_h), lc = std::fmod(c - f.left, f.cell_w);
    if (c >= f.left && c < kSide - f.left && lr >= (f.cell_h - f.win_h) / 2 && lr < (f.cell_h + f.win_h) / 2 &&
        lc >= (f.cell_w - f.win_w) / 2 && lc < (f.cell_w + f.win_w) / 2)
      return 1;
  }
  return 0;
}

Pair facade_pair(Rng& rng) {
  const FacadeLayout f = random_facade(rng);
  static constexpr Rgb kLabels[4] = {{0, 0, 170}, {0, 85, 255}, {170, 255, 85}, {255, 170, 0}};
  Canvas label(kSide, kSide, kLabels[0]);
  label.paint([](double, double) { return true; }, [&](double r, double c) { return kLabels[facade_class(f, r, c)]; });

  const Rgb wall = random_color(rng, 120, 220), glass = random_color(rng, 20, 80), door = random_color(rng, 40, 120);
  const double brick = rng.uniform(10, 25);
  Canvas photo(kSide, kSide, wall);
  photo.paint([](double, double) { return true; },
              [&](double r, double c) {
                const int cls = facade_class(f, r + 0.5, c + 0.5);
                const double grain = rng.normal() * 6.0;
                if (cls == 1) {
                  const double glint = (r + c) * 1.2;
                  return Rgb{glass.r + glint + grain, glass.g + glint + grain, glass.b + glint * 1.5 + grain};
                }
                if (cls == 2) return Rgb{door.r + grain, door.g + grain, door.b + grain};
                if (cls == 3) return Rgb{90 + grain * 2, 90 + grain * 2, 90 + grain * 2};
                const bool mortar = std::fmod(r, 4.0) < 1.0 || std::fmod(c + (std::fmod(r, 8.0) < 4 ? 0 : 3), 6.0) < 1.0;
                const double m = mortar ? -brick : 0.0;
                return Rgb{wall.r + m + grain, wall.g + m + grain, wall.b + m + grain};
              });
  return {label.finish(), photo.finish()};
}

}  // namespace

Image step_edge(std::size_t h, std::size_t w, std::size_t edge_col, double lo, double hi) {
  Plane p(h, w, lo);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = edge_col; c < w; ++c) p.at(r, c) = hi;
  return Image::from_plane(p);
}

Image dead_leaves(std::size_t h, std::size_t w, std::uint64_t seed, bool color) {
  Rng rng(seed);
  const double rmin = 2.0, rmax = double(std::min(h, w)) / 3.0;
  std::vector<double> px(h * w * 3, 0.0);
  std::vector<bool> covered(h * w, false);
  std::size_t remaining = h * w;
  for (int disc = 0; disc < 20000 && remaining > 0; ++disc) {
    // Radii with density proportional to r^-3 on [rmin, rmax].
    const double u = rng.uniform();
    const double rad = 1.0 / std::sqrt(1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax)));
    const double cr = rng.uniform(-rad, double(h) + rad), cc = rng.uniform(-rad, double(w) + rad);
    const double base = rng.uniform(30, 225);
    Rgb tint = color ? Rgb{rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)} : Rgb{1, 1, 1};
    const double sr = rng.uniform(-1.0, 1.0), sc = rng.uniform(-1.0, 1.0);
    const auto r0 = std::size_t(std::max(0.0, std::floor(cr - rad)));
    const auto r1 = std::size_t(std::clamp(std::ceil(cr + rad), 0.0, double(h)));
    const auto c0 = std::size_t(std::max(0.0, std::floor(cc - rad)));
    const auto c1 = std::size_t(std::clamp(std::ceil(cc + rad), 0.0, double(w)));
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        const std::size_t i = r * w + c;
        if (covered[i]) continue;
        const double dr = double(r) + 0.5 - cr, dc = double(c) + 0.5 - cc;
        if (dr * dr + dc * dc > rad * rad) continue;
        covered[i] = true;
        --remaining;
        const double v = base + sr * dr + sc * dc + rng.normal() * 4.0;
        px[3 * i] = v * tint.r;
        px[3 * i + 1] = v * tint.g;
        px[3 * i + 2] = v * tint.b;
      }
  }
  for (auto& v : px) v = std::clamp(v, 0.0, 255.0);
  Image img(h, w, 3, std::move(px));
  img = image::gaussian_blur(img, 0.7);
  if (!color) return Image::from_plane(image::luminance(img));
  return img;
}

Image uniform_noise(std::size_t h, std::size_t w, std::uint64_t seed, bool color) {
  Rng rng(seed);
  const std::size_t ch = color ? 3 : 1;
  std::vector<double> px(h * w * ch);
  for (auto& v : px) v = std::floor(rng.uniform() * 256.0);
  return Image(h, w, ch, std::move(px));
}

Image add_gaussian_noise(const Image& im, double var, Rng& rng) {
  const double sd = std::sqrt(var) * 255.0;
  std::vector<double> px = im.pixels();
  for (auto& v : px) v = std::clamp(v + sd * rng.normal(), 0.0, 255.0);
  return Image(im.height(), im.width(), im.channels(), std::move(px));
}

Task parse_task(std::string_view name) {
  if (name == "inverted") return Task::Inverted;
  if (name == "facade") return Task::Facade;
  if (name == "noise") return Task::Noise;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (inverted, facade, noise)");
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Inverted: return "inverted";
    case Task::Facade: return "facade";
    case Task::Noise: return "noise";
  }
  return "?";
}

Pair sample_pair(Task task, Rng& rng) {
  switch (task) {
    case Task::Inverted: {
      Image u = colored_shapes(rng);
      std::vector<double> inv = u.pixels();
      for (auto& v : inv) v = 255.0 - v;
      return {u, Image(u.height(), u.width(), 3, std::move(inv))};
    }
    case Task::Facade: return facade_pair(rng);
    case Task::Noise: {
      Image u = colored_shapes(rng);
      Image v = add_gaussian_noise(u, 0.001, rng);
      std::vector<double> q = v.pixels();
      for (auto& x : q) x = std::round(x);
      return {u, Image(u.height(), u.width(), 3, std::move(q))};
    }
  }
  throw std::logic_error("unreachable");
}

Dataset make_synthetic_dataset(const DatasetSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  // Separate streams so that U and V training images never share a source pair.
  Rng ru(spec.seed * 3 + 0), rv(spec.seed * 3 + 1), re(spec.seed * 3 + 2);
  for (std::size_t i = 0; i < spec.train_size; ++i) ds.train_u.push_back(sample_pair(spec.task, ru).u);
  for (std::size_t i = 0; i < spec.train_size; ++i) ds.train_v.push_back(sample_pair(spec.task, rv).v);
  for (std::size_t i = 0; i < spec.eval_size; ++i) {
    Pair p = sample_pair(spec.task, re);
    ds.eval_u.push_back(std::move(p.u));
    ds.eval_v.push_back(std::move(p.v));
  }
  return ds;
}

namespace {

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

void write_set(const std::vector<Image>& images, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) image::save(images[i], dir / image_name(i));
}

std::vector<Image> read_set(const fs::path& dir) {
  std::vector<Image> out;
  for (const auto& p : list_images(dir)) out.push_back(image::load(p));
  return out;
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  write_set(ds.train_u, dir / "train_u");
  write_set(ds.train_v, dir / "train_v");
  write_set(ds.eval_u, dir / "eval_u");
  write_set(ds.eval_v, dir / "eval_v");
  nlohmann::json m;
  m["task"] = task_name(ds.spec.task);
  m["seed"] = ds.spec.seed;
  m["train_size"] = ds.spec.train_size;
  m["eval_size"] = ds.spec.eval_size;
  m["height"] = kSide;
  m["width"] = kSide;
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
  const auto m = nlohmann::json::parse(in);
  Dataset ds;
  ds.spec.task = parse_task(m.at("task").get<std::string>());
  ds.spec.seed = m.at("seed").get<std::uint64_t>();
  ds.spec.train_size = m.at("train_size").get<std::size_t>();
  ds.spec.eval_size = m.at("eval_size").get<std::size_t>();
  ds.train_u = read_set(dir / "train_u");
  ds.train_v = read_set(dir / "train_v");
  ds.eval_u = read_set(dir / "eval_u");
  ds.eval_v = read_set(dir / "eval_v");
  return ds;
}

}  // namespace qgan::synthetic
