#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qgan/image.hpp"

namespace qgan::synthetic {

using image::Image;

/// Seeded generator with distribution code written out, so that sequences are
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::size_t(uniform() * double(n)); }
  double normal();
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Vertical step: columns < edge_col get lo, the rest hi.
Image step_edge(std::size_t h, std::size_t w, std::size_t edge_col, double lo, double hi);

/// Dead-leaves scene: occluding discs with power-law radii, smooth shading and
/// fine grain, lightly blurred. Stands in for natural photographs.
Image dead_leaves(std::size_t h, std::size_t w, std::uint64_t seed, bool color = true);

/// Independent uniform noise in [0, 255].
Image uniform_noise(std::size_t h, std::size_t w, std::uint64_t seed, bool color = true);

/// Adds N(0, var) noise on the [0, 1] scale and clips.
Image add_gaussian_noise(const Image& im, double var, Rng& rng);

enum class Task { Inverted, Facade, Noise };
Task parse_task(std::string_view name);
std::string_view task_name(Task t);

struct Pair {
  Image u;
  Image v;
};

/// One 32x32 sample from domain U and its counterpart in V.
Pair sample_pair(Task task, Rng& rng);

struct DatasetSpec {
  Task task = Task::Inverted;
  std::size_t train_size = 200;
  std::size_t eval_size = 40;
  std::uint64_t seed = 1;
};

/// In-memory dataset: unpaired training halves and paired evaluation images.
struct Dataset {
  DatasetSpec spec;
  std::vector<Image> train_u, train_v;
  std::vector<Image> eval_u, eval_v;
};

Dataset make_synthetic_dataset(const DatasetSpec& spec);

/// Layout: train_u/, train_v/, eval_u/, eval_v/ of NNNNNN.png plus manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Sorted PNG/PNM files of a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace qgan::synthetic
