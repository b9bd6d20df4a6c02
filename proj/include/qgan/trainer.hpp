#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qgan/losses.hpp"
#include "qgan/metrics.hpp"
#include "qgan/networks.hpp"
#include "qgan/synthetic.hpp"

namespace qgan::train {

struct RmsPropParams {
  double learning_rate = 5e-5;
  double rho = 0.9;
  double eps = 1e-8;
};

/// s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps).
template <typename T>
void rmsprop_step(std::span<T> param, std::span<const T> grad, std::span<T> state, const RmsPropParams& p);

/// Clamps every value into [-c, c].
template <typename T>
void clip_params(std::span<T> values, double c);

struct TrainConfig {
  std::size_t batch = 1;
  std::size_t critic_iters = 5;
  double learning_rate = 5e-5;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-8;
  double clip = 0.05;
  std::size_t iterations = 2000;  // generator iterations
  std::uint64_t seed = 1;
  losses::Variant variant = losses::Variant::QganA;
  losses::LossWeights weights;
  bool chromatic = true;
  nn::GeneratorConfig generator;
  nn::DiscriminatorConfig discriminator;
  synthetic::DatasetSpec dataset;
  std::size_t niqe_patch = 16;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints

  void validate() const;
  RmsPropParams rmsprop() const { return {learning_rate, rmsprop_rho, rmsprop_eps}; }

  /// Applies one documented key; throws std::invalid_argument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Plain-text "key = value" lines; '#' starts a comment.
  static TrainConfig parse(std::istream& in, TrainConfig base);
  static TrainConfig parse(std::istream& in);
  static TrainConfig load(const std::filesystem::path& path, TrainConfig base);
  static TrainConfig load(const std::filesystem::path& path);
  /// Every key with its resolved value, in a fixed order; parse(to_text()) round-trips.
  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// One row of the training log. Critic rows carry L_d only, generator rows the rest.
struct LogRecord {
  std::size_t iteration = 0;
  bool critic = false;
  double l_d = 0.0;
  double l_g = 0.0;
  double l_r = 0.0;
  double l_q = 0.0;
  double ms = 0.0;
};

void write_log_csv(std::ostream& out, const std::vector<LogRecord>& log);

struct Event {
  enum class Kind { SampleCritic, CriticUpdate, Clip, SampleGenerator, GeneratorUpdate, Checkpoint };
  Kind kind;
  std::size_t iteration = 0;  // generator iteration this event belongs to (1-based)
  std::vector<std::size_t> u_index, v_index;  // sample events only
};

std::string_view event_name(Event::Kind k);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t iteration, const LogRecord& last_finite);
  std::size_t iteration;
  LogRecord last_finite;
};

/// The model a NIQE-loss run scores against: fitted on dead-leaves scenes of
/// the training resolution, standing in for a pristine natural-image corpus.
metrics::NiqeModel natural_niqe_model(std::size_t side, std::size_t patch, std::uint64_t seed);

/// Alternates n critic updates (each on a fresh minibatch, followed by
/// clipping the discriminator weights) with one generator update on another
/// fresh minibatch. Single-threaded and deterministic given the seed.
class Trainer {
 public:
  Trainer(TrainConfig config, const synthetic::Dataset& data);

  void critic_step();
  void generator_step();
  /// n critic steps, one generator step, and the checkpoint if one is due.
  void iteration();
  /// Runs until config.iterations generator steps are done; `progress` sees each finished iteration.
  void run(const std::function<void(std::size_t)>& progress = {});

  const TrainConfig& config() const { return config_; }
  const nn::ModelParams& model() const { return model_; }
  const std::vector<LogRecord>& log() const { return log_; }
  const std::vector<Event>& trace() const { return trace_; }
  std::size_t generator_steps() const { return generator_steps_; }
  std::size_t critic_steps() const { return critic_steps_; }

  void save(const std::filesystem::path& path) const;

 private:
  struct Batch {
    TensorF u, v;
    std::vector<std::size_t> u_index, v_index;
  };
  Batch sample(Event::Kind kind);
  void check_finite(const LogRecord& r);

  TrainConfig config_;
  const synthetic::Dataset* data_;
  std::vector<TensorF> train_u_, train_v_;
  nn::ModelParams model_;
  std::vector<TensorF> g_params_, d_params_;
  std::vector<std::vector<float>> g_state_, d_state_;
  std::optional<metrics::NiqeModel> niqe_;
  synthetic::Rng rng_;
  std::vector<LogRecord> log_;
  std::vector<Event> trace_;
  LogRecord last_finite_;
  std::size_t critic_in_iteration_ = 0;
  std::size_t generator_steps_ = 0;
  std::size_t critic_steps_ = 0;
};

}  // namespace qgan::train
