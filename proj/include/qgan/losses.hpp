#pragma once

#include <cstddef>
#include <memory>
#include <string_view>
#include <vector>

#include "qgan/metrics.hpp"
#include "qgan/networks.hpp"
#include "qgan/ops.hpp"
#include "qgan/tensor.hpp"

namespace qgan::losses {

struct LossWeights {
  double theta_u = 10.0;   // reconstruction
  double theta_v = 10.0;
  double alpha_u = 150.0;  // FSIM quality
  double alpha_v = 150.0;
  double beta_u = 200.0;   // content quality
  double beta_v = 200.0;
  std::size_t tap_layer = 6;

  void validate() const;
};

enum class Variant { CycleGanBaseline, QganA, QganC, QganNiqe, QganANorec, QganCNorec };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
const std::vector<Variant>& all_variants();

/// The weights a variant actually uses: terms outside the variant are zeroed and
/// the *_norec variants drop reconstruction.
LossWeights effective_weights(Variant v, const LossWeights& w);

// ---- adversarial ---------------------------------------------------------------

/// Least-squares generator objective on raw patch maps:
/// mean((D_U(G_V(v)) - 1)^2) + mean((D_V(G_U(u)) - 1)^2).
template <typename T>
Tensor<T> adversarial_g(const Tensor<T>& du_fake, const Tensor<T>& dv_fake);

/// Least-squares critic objective: mean((1 - D_U(u))^2) + mean(D_U(G_V(v))^2)
/// + mean((1 - D_V(v))^2) + mean(D_V(G_U(u))^2).
template <typename T>
Tensor<T> adversarial_d(const Tensor<T>& du_real, const Tensor<T>& du_fake, const Tensor<T>& dv_real,
                        const Tensor<T>& dv_fake);

/// Log-form minimax objective on discriminator probabilities in (0, 1):
/// mean log D_V(v) + mean log(1 - D_V(G_U(u))) + mean log D_U(u) + mean log(1 - D_U(G_V(v))).
/// Kept for reference; training uses the least-squares pair above.
template <typename T>
Tensor<T> gan_log_objective(const Tensor<T>& dv_real, const Tensor<T>& dv_fake, const Tensor<T>& du_real,
                            const Tensor<T>& du_fake);

// ---- reconstruction and quality -------------------------------------------------

/// theta_u * mean|u - u_rec| + theta_v * mean|v - v_rec|; zero-weight terms are omitted.
template <typename T>
Tensor<T> reconstruction_l1(const Tensor<T>& u, const Tensor<T>& u_rec, const Tensor<T>& v, const Tensor<T>& v_rec,
                            const LossWeights& w);

/// Differentiable FSIM (chromatic FSIMc for 3-channel input) between NCHW
/// batches in [-1, 1], averaged over the batch. Agrees with metrics::fsim.
template <typename T>
Tensor<T> fsim_similarity(const Tensor<T>& a, const Tensor<T>& b, bool chromatic = true);

/// alpha_u (1 - FSIM(u, u_rec)) + alpha_v (1 - FSIM(v, v_rec)).
template <typename T>
Tensor<T> quality_fsim_loss(const Tensor<T>& u, const Tensor<T>& u_rec, const Tensor<T>& v, const Tensor<T>& v_rec,
                            const LossWeights& w, bool chromatic = true);

/// beta_u mean|phi(u) - phi(u_rec)| + beta_v mean|phi(v) - phi(v_rec)|.
template <typename T>
Tensor<T> quality_content_loss(const Tensor<T>& fu, const Tensor<T>& fu_rec, const Tensor<T>& fv,
                               const Tensor<T>& fv_rec, const LossWeights& w);

/// AGGD shape parameters of the NIQE loss are looked up without gradient. In
/// Record mode every looked-up value is appended; in Replay mode they are read
/// back in order, which pins the lookups while finite differences run.
struct AlphaMemo {
  enum class Mode { Record, Replay } mode = Mode::Record;
  std::vector<double> values;
  std::size_t cursor = 0;

  double next(double looked_up);
};

/// Differentiable NIQE of one [H, W] luminance plane on the [0, 255] scale.
template <typename T>
Tensor<T> niqe_score(const Tensor<T>& plane, const metrics::NiqeModel& model, AlphaMemo* memo = nullptr);

/// theta_u NIQE(u_rec) + theta_v NIQE(v_rec), batch-averaged, each against its domain's model.
template <typename T>
Tensor<T> quality_niqe_loss(const Tensor<T>& u_rec, const Tensor<T>& v_rec, const metrics::NiqeModel& model_u,
                            const metrics::NiqeModel& model_v, const LossWeights& w, AlphaMemo* memo = nullptr);

// ---- whole objectives ------------------------------------------------------------

template <typename T>
struct Networks {
  const nn::Generator<T>* g_u = nullptr;
  const nn::Generator<T>* g_v = nullptr;
  const nn::Discriminator<T>* d_u = nullptr;
  const nn::Discriminator<T>* d_v = nullptr;
};

struct QualityContext {
  const metrics::NiqeModel* niqe_u = nullptr;
  const metrics::NiqeModel* niqe_v = nullptr;
  bool chromatic = true;
  AlphaMemo* memo = nullptr;
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> gan;
  Tensor<T> reconstruction;  // undefined when the variant has none
  Tensor<T> quality;         // undefined when the variant has none
};

/// Generator-side objective L_g + L_R + L_Q of a variant on batches u, v.
template <typename T>
LossTerms<T> total_loss(Variant variant, const Networks<T>& nets, const Tensor<T>& u, const Tensor<T>& v,
                        const LossWeights& w, const QualityContext& ctx = {});

/// Critic objective on real batches and generator outputs (treated as constants).
template <typename T>
Tensor<T> critic_loss(const Networks<T>& nets, const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& fake_u,
                      const Tensor<T>& fake_v);

/// Log-Gabor bank of the evaluation FSIM as a spectral bank (cached per size).
std::shared_ptr<const ad::SpectralBank> fsim_spectral_bank(std::size_t rows, std::size_t cols);

}  // namespace qgan::losses
