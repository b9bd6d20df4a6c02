#include "qgan/networks.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "qgan/ops.hpp"
#include "qgan/synthetic.hpp"

namespace qgan::nn {
namespace {

using nlohmann::json;

template <typename T>
Conv<T> make_conv(std::size_t cout, std::size_t cin, std::size_t k, std::size_t stride, std::size_t pad, bool transpose,
                  bool norm, synthetic::Rng& rng, double scale) {
  Conv<T> c;
  const Shape ws = transpose ? Shape{cin, cout, k, k} : Shape{cout, cin, k, k};
  std::vector<T> w(shape_numel(ws));
  for (auto& v : w) v = T(rng.uniform(-scale, scale));
  c.weight = Tensor<T>(ws, std::move(w));
  // A bias ahead of instance norm is cancelled by the mean subtraction.
  if (!norm) {
    std::vector<T> b(cout);
    for (auto& v : b) v = T(rng.uniform(-scale, scale));
    c.bias = Tensor<T>(Shape{cout}, std::move(b));
  }
  c.stride = stride;
  c.pad = pad;
  c.transpose = transpose;
  c.norm = norm;
  return c;
}

template <typename T>
Tensor<T> apply_conv(const Conv<T>& c, const Tensor<T>& x) {
  return c.transpose ? ad::conv_transpose2d(x, c.weight, c.bias, c.stride, c.pad)
                     : ad::conv2d(x, c.weight, c.bias, c.stride, c.pad);
}

std::size_t encoder_channels(const GeneratorConfig& c, std::size_t layer) {
  if (layer == 1) return c.base_channels;
  return c.base_channels << (layer / 2);
}

template <typename U, typename T>
Conv<U> cast_conv(const Conv<T>& c) {
  Conv<U> out;
  out.weight = c.weight.template cast<U>();
  if (c.bias.defined()) out.bias = c.bias.template cast<U>();
  out.stride = c.stride;
  out.pad = c.pad;
  out.transpose = c.transpose;
  out.norm = c.norm;
  return out;
}

json to_json(const GeneratorConfig& c) {
  return {{"depth", c.depth},   {"base_channels", c.base_channels}, {"channels", c.channels},
          {"kernel", c.kernel}, {"tap_layer", c.tap_layer},         {"leaky_slope", c.leaky_slope}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"base_channels", c.base_channels},
          {"channels", c.channels},
          {"kernel", c.kernel},
          {"leaky_slope", c.leaky_slope}};
}

void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le(std::istream& is, int bytes, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error(path.string() + ": truncated checkpoint");
    v |= std::uint64_t(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (depth == 0) throw std::invalid_argument("generator: depth must be >= 1");
  if (base_channels == 0) throw std::invalid_argument("generator: base_channels must be >= 1");
  if (channels == 0) throw std::invalid_argument("generator: channels must be >= 1");
  if (kernel < 2 || kernel % 2) throw std::invalid_argument("generator: kernel must be even and >= 2");
  if (tap_layer == 0 || tap_layer > 2 * depth)
    throw std::invalid_argument("generator: tap_layer " + std::to_string(tap_layer) + " outside the encoder (1.." +
                                std::to_string(2 * depth) + ")");
}

Generator<float> make_generator(const GeneratorConfig& config, std::uint64_t seed, double scale) {
  config.validate();
  synthetic::Rng rng(seed);
  Generator<float> g;
  g.config = config;
  const std::size_t n = config.layers(), half = 2 * config.depth, k = config.kernel, pad = (k - 2) / 2;
  for (std::size_t layer = 1; layer <= half; ++layer) {
    const std::size_t cin = layer == 1 ? config.channels : encoder_channels(config, layer - 1);
    const bool down = layer % 2 == 0;
    g.layers.push_back(make_conv<float>(encoder_channels(config, layer), cin, down ? k : 3, down ? 2 : 1,
                                        down ? pad : 1, false, layer != 1, rng, scale));
  }
  for (std::size_t layer = half + 1; layer <= n; ++layer) {
    const std::size_t prev = layer == half + 1 ? encoder_channels(config, half)
                                               : encoder_channels(config, n - layer + 1) * 2;
    const std::size_t cout = layer == n ? config.channels : encoder_channels(config, n - layer);
    const bool up = (layer - half) % 2 == 1;
    g.layers.push_back(
        make_conv<float>(cout, prev, up ? k : 3, up ? 2 : 1, up ? pad : 1, up, layer != n, rng, scale));
  }
  return g;
}

Discriminator<float> make_discriminator(const DiscriminatorConfig& config, std::uint64_t seed, double scale) {
  if (config.base_channels == 0 || config.channels == 0 || config.kernel < 2 || config.kernel % 2)
    throw std::invalid_argument("discriminator: invalid configuration");
  synthetic::Rng rng(seed);
  Discriminator<float> d;
  d.config = config;
  const std::size_t b = config.base_channels, k = config.kernel, pad = (k - 2) / 2;
  d.layers.push_back(make_conv<float>(b, config.channels, k, 2, pad, false, false, rng, scale));
  d.layers.push_back(make_conv<float>(2 * b, b, k, 2, pad, false, true, rng, scale));
  d.layers.push_back(make_conv<float>(4 * b, 2 * b, k, 1, pad, false, true, rng, scale));
  d.layers.push_back(make_conv<float>(1, 4 * b, k, 1, pad, false, false, rng, scale));
  return d;
}

template <typename T>
GeneratorOutput<T> generator_forward(const Generator<T>& g, const Tensor<T>& x, const ForwardOptions& options) {
  const GeneratorConfig& c = g.config;
  const std::size_t n = c.layers(), half = 2 * c.depth, multiple = std::size_t(1) << c.depth;
  if (x.rank() != 4 || x.dim(1) != c.channels)
    throw ShapeError("generator_forward: expected N x " + std::to_string(c.channels) + " x H x W input, got " +
                     shape_str(x.shape()));
  if (x.dim(2) % multiple || x.dim(3) % multiple)
    throw ShapeError("generator_forward: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " must be a multiple of " + std::to_string(multiple));
  if (options.tap && (*options.tap == 0 || *options.tap > n))
    throw std::invalid_argument("generator_forward: tap " + std::to_string(*options.tap) + " outside 1.." +
                                std::to_string(n));

  GeneratorOutput<T> out;
  std::vector<Tensor<T>> enc(half + 1);
  Tensor<T> h = x;
  for (std::size_t layer = 1; layer <= n; ++layer) {
    const Conv<T>& conv = g.layers[layer - 1];
    if (layer > half + 1) {
      const std::size_t from = n - layer + 1;
      Tensor<T> skip = enc[from];
      if (options.disabled_skips & (std::uint32_t(1) << (from - 1))) skip = Tensor<T>(skip.shape());
      h = ad::concat_channels(h, skip);
    }
    h = apply_conv(conv, h);
    if (conv.norm) h = ad::instance_norm(h);
    if (layer == n)
      h = ad::tanh(h);
    else if (layer <= half)
      h = ad::leaky_relu(h, c.leaky_slope);
    else
      h = ad::relu(h);
    if (layer <= half) enc[layer] = h;
    if (options.tap && *options.tap == layer) {
      out.feature = h;
      if (options.stop_at_tap) return out;
    }
  }
  out.output = h;
  return out;
}

std::size_t discriminator_output_size(std::size_t s) {
  if (s < 12) throw std::invalid_argument("discriminator: input side " + std::to_string(s) + " below 12");
  return s / 4 - 2;
}

template <typename T>
Tensor<T> discriminator_forward(const Discriminator<T>& d, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != d.config.channels)
    throw ShapeError("discriminator_forward: expected N x " + std::to_string(d.config.channels) +
                     " x H x W input, got " + shape_str(x.shape()));
  Tensor<T> h = x;
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    h = apply_conv(d.layers[i], h);
    if (d.layers[i].norm) h = ad::instance_norm(h);
    if (i + 1 < d.layers.size()) h = ad::leaky_relu(h, d.config.leaky_slope);
  }
  return h;
}

template <typename T>
std::vector<Tensor<T>> parameters(const Generator<T>& g) {
  std::vector<Tensor<T>> out;
  for (const auto& l : g.layers) {
    out.push_back(l.weight);
    if (l.bias.defined()) out.push_back(l.bias);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> parameters(const Discriminator<T>& d) {
  std::vector<Tensor<T>> out;
  for (const auto& l : d.layers) {
    out.push_back(l.weight);
    if (l.bias.defined()) out.push_back(l.bias);
  }
  return out;
}

template <typename U, typename T>
Generator<U> cast(const Generator<T>& g) {
  Generator<U> out;
  out.config = g.config;
  for (const auto& l : g.layers) out.layers.push_back(cast_conv<U>(l));
  return out;
}

template <typename U, typename T>
Discriminator<U> cast(const Discriminator<T>& d) {
  Discriminator<U> out;
  out.config = d.config;
  for (const auto& l : d.layers) out.layers.push_back(cast_conv<U>(l));
  return out;
}

NamedTensors ModelParams::named() const {
  NamedTensors out;
  auto add = [&](const std::string& prefix, const auto& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      char idx[8];
      std::snprintf(idx, sizeof idx, "%02zu", i + 1);
      out.emplace_back(prefix + ".layer" + idx + ".weight", layers[i].weight);
      if (layers[i].bias.defined()) out.emplace_back(prefix + ".layer" + idx + ".bias", layers[i].bias);
    }
  };
  add("G_U", g_u.layers);
  add("G_V", g_v.layers);
  add("D_U", d_u.layers);
  add("D_V", d_v.layers);
  return out;
}

ModelParams make_model(const GeneratorConfig& gc, const DiscriminatorConfig& dc, std::uint64_t seed) {
  synthetic::Rng streams(seed);
  ModelParams p;
  p.g_u = make_generator(gc, streams.next());
  p.g_v = make_generator(gc, streams.next());
  p.d_u = make_discriminator(dc, streams.next());
  p.d_v = make_discriminator(dc, streams.next());
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const NamedTensors named = params.named();
  os.write("QGCK", 4);
  write_u32(os, 1);
  write_u32(os, std::uint32_t(named.size()));
  for (const auto& [name, t] : named) {
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) write_u64(os, d);
    for (float v : t.data()) write_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw std::runtime_error(path.string() + ": write failed");

  json manifest;
  manifest["format"] = "QGCK";
  manifest["version"] = 1;
  manifest["iteration"] = meta.iteration;
  manifest["seed"] = meta.seed;
  manifest["generator"] = to_json(params.g_u.config);
  manifest["discriminator"] = to_json(params.d_u.config);
  manifest["config"] = json::parse(meta.manifest_json);
  std::ofstream ms(path.string() + ".json");
  ms << manifest.dump(2) << '\n';
  if (!ms) throw std::runtime_error(path.string() + ".json: write failed");
}

std::pair<ModelParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream ms(path.string() + ".json");
  if (!ms) throw std::runtime_error("missing checkpoint manifest " + path.string() + ".json");
  json manifest;
  try {
    manifest = json::parse(ms);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ".json: " + e.what());
  }
  GeneratorConfig gc;
  const json& gj = manifest.at("generator");
  gc.depth = gj.at("depth");
  gc.base_channels = gj.at("base_channels");
  gc.channels = gj.at("channels");
  gc.kernel = gj.at("kernel");
  gc.tap_layer = gj.at("tap_layer");
  gc.leaky_slope = gj.at("leaky_slope");
  DiscriminatorConfig dc;
  const json& dj = manifest.at("discriminator");
  dc.base_channels = dj.at("base_channels");
  dc.channels = dj.at("channels");
  dc.kernel = dj.at("kernel");
  dc.leaky_slope = dj.at("leaky_slope");

  CheckpointMeta meta;
  meta.iteration = manifest.at("iteration");
  meta.seed = manifest.at("seed");
  meta.manifest_json = manifest.at("config").dump();

  ModelParams params = make_model(gc, dc, 0);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "QGCK", 4) != 0)
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  if (read_le(is, 4, path) != 1) throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  const NamedTensors named = params.named();
  if (read_le(is, 4, path) != named.size())
    throw std::runtime_error(path.string() + ": tensor count does not match the manifest architecture");
  for (const auto& [name, t] : named) {
    const std::size_t len = read_le(is, 4, path);
    std::string got(len, '\0');
    if (!is.read(got.data(), std::streamsize(len))) throw std::runtime_error(path.string() + ": truncated checkpoint");
    if (got != name) throw std::runtime_error(path.string() + ": expected tensor " + name + ", found " + got);
    Shape shape(read_le(is, 4, path));
    for (auto& d : shape) d = read_le(is, 8, path);
    if (shape != t.shape())
      throw std::runtime_error(path.string() + ": " + name + " has shape " + shape_str(shape) + ", expected " +
                               shape_str(t.shape()));
    auto dst = TensorF(t).data_mut();
    for (auto& v : dst) v = std::bit_cast<float>(std::uint32_t(read_le(is, 4, path)));
  }
  return {std::move(params), std::move(meta)};
}

#define QGAN_INSTANTIATE_NN(T)                                                                         \
  template GeneratorOutput<T> generator_forward(const Generator<T>&, const Tensor<T>&, const ForwardOptions&); \
  template Tensor<T> discriminator_forward(const Discriminator<T>&, const Tensor<T>&);                \
  template std::vector<Tensor<T>> parameters(const Generator<T>&);                                    \
  template std::vector<Tensor<T>> parameters(const Discriminator<T>&);

QGAN_INSTANTIATE_NN(float)
QGAN_INSTANTIATE_NN(double)
#undef QGAN_INSTANTIATE_NN

template Generator<double> cast<double, float>(const Generator<float>&);
template Generator<float> cast<float, double>(const Generator<double>&);
template Discriminator<double> cast<double, float>(const Discriminator<float>&);
template Discriminator<float> cast<float, double>(const Discriminator<double>&);

}  // namespace qgan::nn
