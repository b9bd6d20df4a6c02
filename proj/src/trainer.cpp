#include "qgan/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "qgan/autodiff.hpp"
#include "qgan/image.hpp"

namespace qgan::train {

using ad::NoGradGuard;
using ad::Tape;

template <typename T>
void rmsprop_step(std::span<T> param, std::span<const T> grad, std::span<T> state, const RmsPropParams& p) {
  if (param.size() != grad.size() || param.size() != state.size())
    throw std::invalid_argument("rmsprop_step: parameter, gradient and state sizes differ");
  const T rho = T(p.rho), keep = T(1) - T(p.rho), lr = T(p.learning_rate), eps = T(p.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state[i] = rho * state[i] + keep * g * g;
    param[i] = param[i] - lr * g / (std::sqrt(state[i]) + eps);
  }
}

template <typename T>
void clip_params(std::span<T> values, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("clip bound must be > 0");
  const T lo = T(-c), hi = T(c);
  for (T& v : values) v = std::clamp(v, lo, hi);
}

template void rmsprop_step<float>(std::span<float>, std::span<const float>, std::span<float>, const RmsPropParams&);
template void rmsprop_step<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   const RmsPropParams&);
template void clip_params<float>(std::span<float>, double);
template void clip_params<double>(std::span<double>, double);

// ---- config ---------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (critic_iters < 2 || critic_iters > 5) throw std::invalid_argument("critic_iters must be in [2, 5]");
  if (clip < 0.01 || clip > 0.1) throw std::invalid_argument("clip must be in [0.01, 0.1]");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(rmsprop_rho >= 0.0 && rmsprop_rho < 1.0)) throw std::invalid_argument("rmsprop_rho must be in [0, 1)");
  if (!(rmsprop_eps > 0.0)) throw std::invalid_argument("rmsprop_eps must be > 0");
  if (dataset.train_size == 0) throw std::invalid_argument("train_size must be >= 1");
  weights.validate();
  generator.validate();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  using S = std::size_t;
  if (key == "batch") batch = parse_number<S>(key, value);
  else if (key == "critic_iters") critic_iters = parse_number<S>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "rmsprop_rho") rmsprop_rho = parse_number<double>(key, value);
  else if (key == "rmsprop_eps") rmsprop_eps = parse_number<double>(key, value);
  else if (key == "clip") clip = parse_number<double>(key, value);
  else if (key == "iterations") iterations = parse_number<S>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "variant") variant = losses::parse_variant(value);
  else if (key == "theta_u") weights.theta_u = parse_number<double>(key, value);
  else if (key == "theta_v") weights.theta_v = parse_number<double>(key, value);
  else if (key == "alpha_u") weights.alpha_u = parse_number<double>(key, value);
  else if (key == "alpha_v") weights.alpha_v = parse_number<double>(key, value);
  else if (key == "beta_u") weights.beta_u = parse_number<double>(key, value);
  else if (key == "beta_v") weights.beta_v = parse_number<double>(key, value);
  else if (key == "tap_layer") weights.tap_layer = generator.tap_layer = parse_number<S>(key, value);
  else if (key == "chromatic") chromatic = parse_bool(key, value);
  else if (key == "depth") generator.depth = parse_number<S>(key, value);
  else if (key == "generator_base") generator.base_channels = parse_number<S>(key, value);
  else if (key == "discriminator_base") discriminator.base_channels = parse_number<S>(key, value);
  else if (key == "task") dataset.task = synthetic::parse_task(value);
  else if (key == "train_size") dataset.train_size = parse_number<S>(key, value);
  else if (key == "eval_size") dataset.eval_size = parse_number<S>(key, value);
  else if (key == "dataset_seed") dataset.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "niqe_patch") niqe_patch = parse_number<S>(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_number<S>(key, value);
  else if (key == "checkpoint_dir") checkpoint_dir = value;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig TrainConfig::parse(std::istream& in) { return parse(in, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return load(path, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in, std::move(base));
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "batch = " << batch << "\n"
     << "critic_iters = " << critic_iters << "\n"
     << "learning_rate = " << fmt(learning_rate) << "\n"
     << "rmsprop_rho = " << fmt(rmsprop_rho) << "\n"
     << "rmsprop_eps = " << fmt(rmsprop_eps) << "\n"
     << "clip = " << fmt(clip) << "\n"
     << "iterations = " << iterations << "\n"
     << "seed = " << seed << "\n"
     << "variant = " << losses::variant_name(variant) << "\n"
     << "theta_u = " << fmt(weights.theta_u) << "\n"
     << "theta_v = " << fmt(weights.theta_v) << "\n"
     << "alpha_u = " << fmt(weights.alpha_u) << "\n"
     << "alpha_v = " << fmt(weights.alpha_v) << "\n"
     << "beta_u = " << fmt(weights.beta_u) << "\n"
     << "beta_v = " << fmt(weights.beta_v) << "\n"
     << "tap_layer = " << weights.tap_layer << "\n"
     << "chromatic = " << (chromatic ? "true" : "false") << "\n"
     << "depth = " << generator.depth << "\n"
     << "generator_base = " << generator.base_channels << "\n"
     << "discriminator_base = " << discriminator.base_channels << "\n"
     << "task = " << synthetic::task_name(dataset.task) << "\n"
     << "train_size = " << dataset.train_size << "\n"
     << "eval_size = " << dataset.eval_size << "\n"
     << "dataset_seed = " << dataset.seed << "\n"
     << "niqe_patch = " << niqe_patch << "\n"
     << "checkpoint_interval = " << checkpoint_interval << "\n"
     << "checkpoint_dir = " << checkpoint_dir.string() << "\n";
  return os.str();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

// ---- log, events, errors -------------------------------------------------------------

void write_log_csv(std::ostream& out, const std::vector<LogRecord>& log) {
  out << "iteration,L_d,L_g,L_R,L_Q,ms\n";
  out << std::setprecision(9);
  for (const LogRecord& r : log) {
    out << r.iteration << ',';
    if (r.critic) out << r.l_d << ",,,,";
    else out << ',' << r.l_g << ',' << r.l_r << ',' << r.l_q << ',';
    out << std::fixed << std::setprecision(3) << r.ms << std::defaultfloat << std::setprecision(9) << '\n';
  }
}

std::string_view event_name(Event::Kind k) {
  switch (k) {
    case Event::Kind::SampleCritic: return "sample_critic";
    case Event::Kind::CriticUpdate: return "critic_update";
    case Event::Kind::Clip: return "clip";
    case Event::Kind::SampleGenerator: return "sample_generator";
    case Event::Kind::GeneratorUpdate: return "generator_update";
    case Event::Kind::Checkpoint: return "checkpoint";
  }
  return "?";
}

namespace {

std::string diverged_message(std::size_t iteration, const LogRecord& r) {
  std::ostringstream os;
  os << "non-finite loss at generator iteration " << iteration << "; last finite losses: L_d=" << r.l_d
     << " L_g=" << r.l_g << " L_R=" << r.l_r << " L_Q=" << r.l_q;
  return os.str();
}

double value_or_zero(const TensorF& t) { return t.defined() ? double(t.item()) : 0.0; }

void set_trainable(std::vector<TensorF>& params, bool on) {
  for (auto& p : params) {
    p.set_requires_grad(on);
    p.zero_grad();
  }
}

void update(std::vector<TensorF>& params, std::vector<std::vector<float>>& state, const RmsPropParams& rp) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorF& p = params[i];
    if (!p.has_grad()) throw std::logic_error("parameter received no gradient");
    rmsprop_step<float>(p.data_mut(), p.grad(), state[i], rp);
    p.zero_grad();
  }
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::size_t it, const LogRecord& last)
    : std::runtime_error(diverged_message(it, last)), iteration(it), last_finite(last) {}

metrics::NiqeModel natural_niqe_model(std::size_t side, std::size_t patch, std::uint64_t seed) {
  std::vector<image::Image> corpus;
  for (std::uint64_t i = 0; i < 100; ++i) corpus.push_back(synthetic::dead_leaves(side, side, seed + i));
  metrics::NiqeParams p;
  p.patch = patch;
  return metrics::niqe_fit(corpus, p);
}

// ---- trainer ------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, const synthetic::Dataset& data)
    : config_(std::move(config)), data_(&data), rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.generator.tap_layer = config_.weights.tap_layer;
  config_.validate();
  if (data.train_u.empty() || data.train_v.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& im : data.train_u) train_u_.push_back(image::to_tensor(im));
  for (const auto& im : data.train_v) train_v_.push_back(image::to_tensor(im));

  model_ = nn::make_model(config_.generator, config_.discriminator, config_.seed);
  g_params_ = nn::parameters(model_.g_u);
  for (auto& p : nn::parameters(model_.g_v)) g_params_.push_back(p);
  d_params_ = nn::parameters(model_.d_u);
  for (auto& p : nn::parameters(model_.d_v)) d_params_.push_back(p);
  for (const auto& p : g_params_) g_state_.emplace_back(p.numel(), 0.0f);
  for (const auto& p : d_params_) d_state_.emplace_back(p.numel(), 0.0f);
  set_trainable(g_params_, false);
  set_trainable(d_params_, false);

  if (config_.variant == losses::Variant::QganNiqe)
    niqe_ = natural_niqe_model(train_u_.front().dim(2), config_.niqe_patch, config_.seed * 1000 + 17);
}

Trainer::Batch Trainer::sample(Event::Kind kind) {
  Batch b;
  const std::size_t m = config_.batch;
  auto draw = [&](const std::vector<TensorF>& pool, std::vector<std::size_t>& index) {
    std::vector<float> values;
    for (std::size_t i = 0; i < m; ++i) {
      index.push_back(rng_.index(pool.size()));
      const auto d = pool[index.back()].data();
      values.insert(values.end(), d.begin(), d.end());
    }
    Shape s = pool.front().shape();
    s[0] = m;
    return TensorF(s, std::move(values));
  };
  b.u = draw(train_u_, b.u_index);
  b.v = draw(train_v_, b.v_index);
  trace_.push_back({kind, generator_steps_ + 1, b.u_index, b.v_index});
  return b;
}

void Trainer::check_finite(const LogRecord& r) {
  for (double v : {r.l_d, r.l_g, r.l_r, r.l_q})
    if (!std::isfinite(v)) throw TrainingDiverged(generator_steps_ + 1, last_finite_);
  if (r.critic) last_finite_.l_d = r.l_d;
  else {
    last_finite_.l_g = r.l_g;
    last_finite_.l_r = r.l_r;
    last_finite_.l_q = r.l_q;
  }
  last_finite_.iteration = r.iteration;
}

void Trainer::critic_step() {
  const auto t0 = std::chrono::steady_clock::now();
  const Batch b = sample(Event::Kind::SampleCritic);
  TensorF fake_u, fake_v;
  {
    NoGradGuard<float> off;
    fake_v = nn::generator_forward(model_.g_u, b.u).output;
    fake_u = nn::generator_forward(model_.g_v, b.v).output;
  }
  set_trainable(d_params_, true);
  LogRecord r{generator_steps_ + 1, true};
  {
    Tape<float> tape;
    const losses::Networks<float> nets{&model_.g_u, &model_.g_v, &model_.d_u, &model_.d_v};
    const TensorF loss = losses::critic_loss(nets, b.u, b.v, fake_u, fake_v);
    r.l_d = loss.item();
    check_finite(r);
    tape.backward(loss);
  }
  update(d_params_, d_state_, config_.rmsprop());
  trace_.push_back({Event::Kind::CriticUpdate, generator_steps_ + 1, {}, {}});
  for (auto& p : d_params_) clip_params<float>(p.data_mut(), config_.clip);
  trace_.push_back({Event::Kind::Clip, generator_steps_ + 1, {}, {}});
  set_trainable(d_params_, false);

  ++critic_steps_;
  ++critic_in_iteration_;
  r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  log_.push_back(r);
}

void Trainer::generator_step() {
  const auto t0 = std::chrono::steady_clock::now();
  const Batch b = sample(Event::Kind::SampleGenerator);
  set_trainable(g_params_, true);
  LogRecord r{generator_steps_ + 1, false};
  {
    Tape<float> tape;
    const losses::Networks<float> nets{&model_.g_u, &model_.g_v, &model_.d_u, &model_.d_v};
    losses::QualityContext ctx;
    ctx.chromatic = config_.chromatic;
    if (niqe_) ctx.niqe_u = ctx.niqe_v = &*niqe_;
    const losses::LossTerms<float> terms = losses::total_loss(config_.variant, nets, b.u, b.v, config_.weights, ctx);
    r.l_g = value_or_zero(terms.gan);
    r.l_r = value_or_zero(terms.reconstruction);
    r.l_q = value_or_zero(terms.quality);
    check_finite(r);
    tape.backward(terms.total);
  }
  update(g_params_, g_state_, config_.rmsprop());
  set_trainable(g_params_, false);
  ++generator_steps_;
  critic_in_iteration_ = 0;
  trace_.push_back({Event::Kind::GeneratorUpdate, generator_steps_, {}, {}});
  r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  log_.push_back(r);
}

void Trainer::iteration() {
  while (critic_in_iteration_ < config_.critic_iters) critic_step();
  generator_step();
  const std::size_t k = config_.checkpoint_interval;
  if (!config_.checkpoint_dir.empty() && k > 0 && generator_steps_ % k == 0) {
    std::ostringstream name;
    name << "iter_" << std::setw(6) << std::setfill('0') << generator_steps_ << ".qgck";
    save(config_.checkpoint_dir / name.str());
    trace_.push_back({Event::Kind::Checkpoint, generator_steps_, {}, {}});
  }
}

void Trainer::run(const std::function<void(std::size_t)>& progress) {
  while (generator_steps_ < config_.iterations) {
    iteration();
    if (progress) progress(generator_steps_);
  }
  if (!config_.checkpoint_dir.empty()) save(config_.checkpoint_dir / "final.qgck");
}

void Trainer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nn::CheckpointMeta meta;
  meta.manifest_json = config_.to_json().dump();
  meta.iteration = generator_steps_;
  meta.seed = config_.seed;
  nn::save_checkpoint(path, model_, meta);
}

}  // namespace qgan::train
