#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qgan/tensor.hpp"

namespace qgan::nn {

// Generator layout for depth d: 4d convolutional layers. The encoder alternates
// a stride-1 3x3 conv and a stride-2 4x4 conv per stage; the decoder mirrors it
// with stride-2 4x4 transpose convs. Layer i's output is concatenated onto layer
// (4d - i)'s output before layer 4d - i + 1, for 0 < i < 2d.
//
// depth 4, base 16, 3 input channels, 32x32 input:
//
//   layer  op          out channels  spatial
//   1      conv k3s1   16            32       (no norm)
//   2      conv k4s2   32            16
//   3      conv k3s1   32            16
//   4      conv k4s2   64            8
//   5      conv k3s1   64            8
//   6      conv k4s2   128           4        <- default tap
//   7      conv k3s1   128           4
//   8      conv k4s2   256           2
//   9      convT k4s2  128           4        + skip from 7
//   10     conv k3s1   128           4        + skip from 6
//   11     convT k4s2  64            8        + skip from 5
//   12     conv k3s1   64            8        + skip from 4
//   13     convT k4s2  32            16       + skip from 3
//   14     conv k3s1   32            16       + skip from 2
//   15     convT k4s2  16            32       + skip from 1
//   16     conv k3s1   3             32       (tanh, no norm)
struct GeneratorConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 16;
  std::size_t channels = 3;
  std::size_t kernel = 4;  // stride-2 layers; stride-1 layers use 3
  std::size_t tap_layer = 6;
  double leaky_slope = 0.2;

  std::size_t layers() const { return 4 * depth; }
  /// Throws std::invalid_argument when the configuration is unusable.
  void validate() const;
};

struct DiscriminatorConfig {
  std::size_t base_channels = 16;
  std::size_t channels = 3;
  std::size_t kernel = 4;
  double leaky_slope = 0.2;
};

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined on normalised layers
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool transpose = false;
  bool norm = true;
};

template <typename T>
struct Generator {
  GeneratorConfig config;
  std::vector<Conv<T>> layers;  // layers[i] is layer i + 1
};

template <typename T>
struct Discriminator {
  DiscriminatorConfig config;
  std::vector<Conv<T>> layers;
};

using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

/// Uniform(-scale, scale) initialisation drawn from a seeded stream.
Generator<float> make_generator(const GeneratorConfig& config, std::uint64_t seed, double scale = 0.05);
Discriminator<float> make_discriminator(const DiscriminatorConfig& config, std::uint64_t seed, double scale = 0.05);

template <typename T>
struct GeneratorOutput {
  Tensor<T> output;
  Tensor<T> feature;  // undefined unless a tap was requested
};

struct ForwardOptions {
  std::optional<std::size_t> tap;
  /// Return right after the tap layer; output is left undefined.
  bool stop_at_tap = false;
  /// Bit i - 1 set: the skip leaving layer i carries zeros.
  std::uint32_t disabled_skips = 0;
};

/// x is NCHW in [-1, 1]; H and W must be multiples of 2^depth.
template <typename T>
GeneratorOutput<T> generator_forward(const Generator<T>& g, const Tensor<T>& x, const ForwardOptions& options = {});

/// Raw patch scores, N x 1 x h' x w'.
template <typename T>
Tensor<T> discriminator_forward(const Discriminator<T>& d, const Tensor<T>& x);

/// Patch map side for an input side s: s/2 -> s/4 -> s/4 - 1 -> s/4 - 2.
std::size_t discriminator_output_size(std::size_t input_size);

template <typename T>
std::vector<Tensor<T>> parameters(const Generator<T>& g);
template <typename T>
std::vector<Tensor<T>> parameters(const Discriminator<T>& d);

template <typename U, typename T>
Generator<U> cast(const Generator<T>& g);
template <typename U, typename T>
Discriminator<U> cast(const Discriminator<T>& d);

struct ModelParams {
  Generator<float> g_u;  // U -> V
  Generator<float> g_v;  // V -> U
  Discriminator<float> d_u;
  Discriminator<float> d_v;

  /// Stable names such as "G_U.layer03.weight" over shared tensor handles.
  NamedTensors named() const;
};

ModelParams make_model(const GeneratorConfig& gc, const DiscriminatorConfig& dc, std::uint64_t seed);

struct CheckpointMeta {
  std::string manifest_json = "{}";  // free-form training config
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
};

/// Binary container "QGCK" (u32 version, u32 count, then per tensor: u32 name
/// length, name bytes, u32 rank, u64 dims, f32 values, all little-endian) plus
/// a JSON manifest written next to it as <path>.json.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta);
/// Restores into a model built from the manifest's configuration.
std::pair<ModelParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace qgan::nn
