#include "qgan/losses.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

namespace qgan::losses {
namespace {

using namespace qgan::ad;

template <typename T>
void require_same(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch(op, a.shape(), b.shape());
}

template <typename T>
Tensor<T> add_opt(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  return add(a, b);
}

// [-1, 1] -> [0, 255]
template <typename T>
Tensor<T> to_255(const Tensor<T>& x) {
  return scale(add_scalar(x, 1.0), 127.5);
}

template <typename T>
Tensor<T> mix3(const Tensor<T>& r, const Tensor<T>& g, const Tensor<T>& b, double cr, double cg, double cb) {
  return add(add(scale(r, cr), scale(g, cg)), scale(b, cb));
}

template <typename T>
struct YiqT {
  Tensor<T> y, i, q;  // i, q undefined for grey input
};

template <typename T>
YiqT<T> yiq(const Tensor<T>& x, std::size_t n) {
  if (x.dim(1) == 1) return {to_255(plane(x, n, 0)), {}, {}};
  const Tensor<T> r = to_255(plane(x, n, 0)), g = to_255(plane(x, n, 1)), b = to_255(plane(x, n, 2));
  return {mix3(r, g, b, 0.299, 0.587, 0.114), mix3(r, g, b, 0.596, -0.274, -0.322),
          mix3(r, g, b, 0.211, -0.523, 0.312)};
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& a, const Tensor<T>& b, double c) {
  return div(add_scalar(scale(mul(a, b), 2.0), c), add_scalar(add(square(a), square(b)), c));
}

template <typename T>
Tensor<T> phase_congruency(const Tensor<T>& y) {
  const std::size_t rows = y.dim(0), cols = y.dim(1);
  const metrics::PcBank& pb = metrics::pc_bank(rows, cols);
  const metrics::PcParams& p = pb.params;
  const Tensor<T> eo = spectral_filter(y, fsim_spectral_bank(rows, cols));
  Tensor<T> energy_all, an_all;
  for (int o = 0; o < p.orientations; ++o) {
    std::vector<Tensor<T>> re, im;
    Tensor<T> sum_e, sum_o, sum_an, e2;
    for (int s = 0; s < p.scales; ++s) {
      const Tensor<T> pair = select(eo, std::size_t(o * p.scales + s));
      re.push_back(select(pair, 0));
      im.push_back(select(pair, 1));
      const Tensor<T> power = add(square(re.back()), square(im.back()));
      if (s == 0) e2 = power;
      sum_e = add_opt(sum_e, re.back());
      sum_o = add_opt(sum_o, im.back());
      sum_an = add_opt(sum_an, sqrt_eps(power));
    }
    const Tensor<T> x = add_scalar(sqrt_eps(add(square(sum_e), square(sum_o))), p.epsilon);
    const Tensor<T> me = div(sum_e, x), mo = div(sum_o, x);
    Tensor<T> energy;
    for (int s = 0; s < p.scales; ++s) {
      const Tensor<T>& e = re[std::size_t(s)];
      const Tensor<T>& od = im[std::size_t(s)];
      energy = add_opt(energy, sub(add(mul(e, me), mul(od, mo)), abs(sub(mul(e, mo), mul(od, me)))));
    }
    const Tensor<T> t = scale(sqrt_eps(median(e2)), pb.threshold_gain[std::size_t(o)]);
    energy_all = add_opt(energy_all, relu(sub(energy, broadcast(t, energy.shape()))));
    an_all = add_opt(an_all, sum_an);
  }
  return div(energy_all, add_scalar(an_all, p.epsilon));
}

template <typename T>
Tensor<T> gradient_magnitude(const Tensor<T>& y) {
  const auto& dx = metrics::scharr_dx().data;
  const auto& dy = metrics::scharr_dy().data;
  return sqrt_eps(add(square(filter2d(y, dx, 3, 3)), square(filter2d(y, dy, 3, 3))));
}

template <typename T>
Tensor<T> fsim_pair(YiqT<T> a, YiqT<T> b, bool chromatic) {
  const metrics::FsimParams p;
  const std::size_t f = metrics::fsim_downsample_factor(a.y.dim(0), a.y.dim(1));
  if (f > 1)
    for (auto* q : {&a, &b}) {
      q->y = avg_pool(q->y, f);
      if (q->i.defined()) q->i = avg_pool(q->i, f);
      if (q->q.defined()) q->q = avg_pool(q->q, f);
    }
  const Tensor<T> pc1 = phase_congruency(a.y), pc2 = phase_congruency(b.y);
  Tensor<T> s = mul(similarity(pc1, pc2, p.t1), similarity(gradient_magnitude(a.y), gradient_magnitude(b.y), p.t2));
  if (chromatic && a.i.defined() && b.i.defined())
    s = mul(s, real_pow(mul(similarity(a.i, b.i, p.t3), similarity(a.q, b.q, p.t4)), p.lambda));
  const Tensor<T> w = add_scalar(maximum(pc1, pc2), p.weight_floor);
  return div(sum(mul(s, w)), sum(w));
}

// ---- NIQE pieces ----

template <typename T>
struct AggdT {
  Tensor<T> alpha;  // constant
  Tensor<T> beta_left, beta_right;
  double alpha_value = 0.0;
  bool ok = false;
};

template <typename T>
AggdT<T> fit_aggd(const Tensor<T>& x, AlphaMemo* memo) {
  const auto v = x.data();
  std::vector<double> values(v.begin(), v.end());
  const metrics::AggdFit fit = metrics::fit_aggd(values);
  AggdT<T> out;
  if (!std::isfinite(fit.alpha)) return out;
  const double alpha = memo ? memo->next(fit.alpha) : fit.alpha;
  std::vector<T> left(v.size()), right(v.size());
  double nl = 0, nr = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    left[i] = v[i] < 0 ? T(1) : T(0);
    right[i] = v[i] > 0 ? T(1) : T(0);
    nl += double(left[i]);
    nr += double(right[i]);
  }
  const double c = std::sqrt(std::tgamma(1.0 / alpha) / std::tgamma(3.0 / alpha));
  const Tensor<T> sq = square(x);
  out.alpha = Tensor<T>::scalar(T(alpha));
  out.alpha_value = alpha;
  out.beta_left = scale(sqrt_eps(scale(sum(mul(sq, Tensor<T>(x.shape(), std::move(left)))), 1.0 / nl)), c);
  out.beta_right = scale(sqrt_eps(scale(sum(mul(sq, Tensor<T>(x.shape(), std::move(right)))), 1.0 / nr)), c);
  out.ok = true;
  return out;
}

template <typename T>
Tensor<T> mscn(const Tensor<T>& x) {
  static const std::vector<double> window = image::gaussian_kernel(7, 7.0 / 6.0).data;
  const Tensor<T> mu = filter2d(x, window, 7, 7);
  const Tensor<T> sigma = sqrt_eps(abs(sub(filter2d(square(x), window, 7, 7), square(mu))));
  return div(sub(x, mu), add_scalar(sigma, 1.0));
}

// 18 scalar features of one MSCN patch, or empty when a fit is undefined.
template <typename T>
std::vector<Tensor<T>> patch_features(const Tensor<T>& coeffs, AlphaMemo* memo) {
  std::vector<Tensor<T>> f;
  const AggdT<T> base = fit_aggd(coeffs, memo);
  if (!base.ok) return {};
  f.push_back(base.alpha);
  f.push_back(scale(add(base.beta_left, base.beta_right), 0.5));
  static constexpr long shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {-1, 1}};
  for (const auto& sh : shifts) {
    const AggdT<T> a = fit_aggd(mul(coeffs, circshift2d(coeffs, sh[0], sh[1])), memo);
    if (!a.ok) return {};
    const double g = std::tgamma(2.0 / a.alpha_value) / std::tgamma(1.0 / a.alpha_value);
    f.push_back(a.alpha);
    f.push_back(scale(sub(a.beta_right, a.beta_left), g));
    f.push_back(a.beta_left);
    f.push_back(a.beta_right);
  }
  return f;
}

template <typename T>
Tensor<T> luminance_255(const Tensor<T>& x, std::size_t n) {
  return yiq(x, n).y;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {theta_u, theta_v, alpha_u, alpha_v, beta_u, beta_v})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  if (tap_layer == 0) throw std::invalid_argument("tap_layer must be >= 1");
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants())
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (cyclegan_baseline, qgan_a, qgan_c, qgan_niqe, qgan_a_norec, qgan_c_norec)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::CycleGanBaseline: return "cyclegan_baseline";
    case Variant::QganA: return "qgan_a";
    case Variant::QganC: return "qgan_c";
    case Variant::QganNiqe: return "qgan_niqe";
    case Variant::QganANorec: return "qgan_a_norec";
    case Variant::QganCNorec: return "qgan_c_norec";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = {Variant::CycleGanBaseline, Variant::QganA,      Variant::QganC,
                                           Variant::QganNiqe,         Variant::QganANorec, Variant::QganCNorec};
  return all;
}

LossWeights effective_weights(Variant v, const LossWeights& w) {
  LossWeights e = w;
  const bool fsim = v == Variant::QganA || v == Variant::QganANorec;
  const bool content = v == Variant::QganC || v == Variant::QganCNorec;
  if (!fsim) e.alpha_u = e.alpha_v = 0.0;
  if (!content) e.beta_u = e.beta_v = 0.0;
  if (v == Variant::QganANorec || v == Variant::QganCNorec) e.theta_u = e.theta_v = 0.0;
  return e;
}

double AlphaMemo::next(double looked_up) {
  if (mode == Mode::Record) {
    values.push_back(looked_up);
    return looked_up;
  }
  if (cursor >= values.size()) throw std::logic_error("AlphaMemo: replay ran past the recorded values");
  return values[cursor++];
}

template <typename T>
Tensor<T> adversarial_g(const Tensor<T>& du_fake, const Tensor<T>& dv_fake) {
  return add(mean(square(add_scalar(du_fake, -1.0))), mean(square(add_scalar(dv_fake, -1.0))));
}

template <typename T>
Tensor<T> adversarial_d(const Tensor<T>& du_real, const Tensor<T>& du_fake, const Tensor<T>& dv_real,
                        const Tensor<T>& dv_fake) {
  const Tensor<T> u = add(mean(square(add_scalar(du_real, -1.0))), mean(square(du_fake)));
  const Tensor<T> v = add(mean(square(add_scalar(dv_real, -1.0))), mean(square(dv_fake)));
  return add(u, v);
}

template <typename T>
Tensor<T> gan_log_objective(const Tensor<T>& dv_real, const Tensor<T>& dv_fake, const Tensor<T>& du_real,
                            const Tensor<T>& du_fake) {
  auto one_minus = [](const Tensor<T>& p) { return add_scalar(scale(p, -1.0), 1.0); };
  const Tensor<T> v = add(mean(log(dv_real)), mean(log(one_minus(dv_fake))));
  const Tensor<T> u = add(mean(log(du_real)), mean(log(one_minus(du_fake))));
  return add(v, u);
}

template <typename T>
Tensor<T> reconstruction_l1(const Tensor<T>& u, const Tensor<T>& u_rec, const Tensor<T>& v, const Tensor<T>& v_rec,
                            const LossWeights& w) {
  require_same("reconstruction_l1", u, u_rec);
  require_same("reconstruction_l1", v, v_rec);
  Tensor<T> out;
  if (w.theta_u != 0.0) out = scale(mean(abs(sub(u, u_rec))), w.theta_u);
  if (w.theta_v != 0.0) out = add_opt(out, scale(mean(abs(sub(v, v_rec))), w.theta_v));
  return out.defined() ? out : Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> fsim_similarity(const Tensor<T>& a, const Tensor<T>& b, bool chromatic) {
  require_same("fsim_similarity", a, b);
  if (a.rank() != 4 || (a.dim(1) != 1 && a.dim(1) != 3))
    throw ShapeError("fsim_similarity: expected N x {1,3} x H x W, got " + shape_str(a.shape()));
  Tensor<T> total;
  for (std::size_t n = 0; n < a.dim(0); ++n) total = add_opt(total, fsim_pair(yiq(a, n), yiq(b, n), chromatic));
  return scale(total, 1.0 / double(a.dim(0)));
}

template <typename T>
Tensor<T> quality_fsim_loss(const Tensor<T>& u, const Tensor<T>& u_rec, const Tensor<T>& v, const Tensor<T>& v_rec,
                            const LossWeights& w, bool chromatic) {
  Tensor<T> out;
  if (w.alpha_u != 0.0) out = scale(add_scalar(scale(fsim_similarity(u, u_rec, chromatic), -1.0), 1.0), w.alpha_u);
  if (w.alpha_v != 0.0)
    out = add_opt(out, scale(add_scalar(scale(fsim_similarity(v, v_rec, chromatic), -1.0), 1.0), w.alpha_v));
  return out.defined() ? out : Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> quality_content_loss(const Tensor<T>& fu, const Tensor<T>& fu_rec, const Tensor<T>& fv,
                               const Tensor<T>& fv_rec, const LossWeights& w) {
  require_same("quality_content_loss", fu, fu_rec);
  require_same("quality_content_loss", fv, fv_rec);
  Tensor<T> out;
  if (w.beta_u != 0.0) out = scale(mean(abs(sub(fu, fu_rec))), w.beta_u);
  if (w.beta_v != 0.0) out = add_opt(out, scale(mean(abs(sub(fv, fv_rec))), w.beta_v));
  return out.defined() ? out : Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> niqe_score(const Tensor<T>& plane, const metrics::NiqeModel& model, AlphaMemo* memo) {
  if (plane.rank() != 2) throw ShapeError("niqe_score: expected an H x W plane, got " + shape_str(plane.shape()));
  const std::size_t patch = model.patch, half = patch / 2;
  const std::size_t br = plane.dim(0) / patch, bc = plane.dim(1) / patch;
  if (br == 0 || bc == 0)
    throw std::invalid_argument("niqe_score: plane " + shape_str(plane.shape()) + " smaller than one " +
                                std::to_string(patch) + "px patch");
  const Tensor<T> cropped = crop2d(plane, 0, 0, br * patch, bc * patch);
  const Tensor<T> s1 = mscn(cropped), s2 = mscn(avg_pool(cropped, 2));
  std::vector<Tensor<T>> rows;
  for (std::size_t i = 0; i < br; ++i)
    for (std::size_t j = 0; j < bc; ++j) {
      auto f = patch_features(crop2d(s1, i * patch, j * patch, patch, patch), memo);
      if (f.empty()) continue;
      auto f2 = patch_features(crop2d(s2, i * half, j * half, half, half), memo);
      if (f2.empty()) continue;
      f.insert(f.end(), f2.begin(), f2.end());
      rows.push_back(reshape(stack(f), Shape{metrics::kNiqeFeatures}));
    }
  if (rows.empty())
    throw std::invalid_argument("niqe_score: no patch with finite features (patch shortage)");
  const std::size_t d = metrics::kNiqeFeatures, p = rows.size();
  const Tensor<T> x = stack(rows);  // [p, d]
  const Tensor<T> mu = mean_rows(x);
  Tensor<T> cov;
  if (p > 1) {
    const Tensor<T> centred = sub(x, repeat_rows(mu, p));
    cov = scale(matmul(transpose(centred), centred), 1.0 / double(p - 1));
  } else {
    cov = Tensor<T>(Shape{d, d});
  }
  std::vector<T> mm(model.mean.begin(), model.mean.end()), mc(model.cov.begin(), model.cov.end());
  const Tensor<T> diff = sub(Tensor<T>(Shape{d}, std::move(mm)), mu);
  const Tensor<T> pooled = scale(add(Tensor<T>(Shape{d, d}, std::move(mc)), cov), 0.5);
  return sqrt_eps(mahalanobis(diff, pooled));
}

template <typename T>
Tensor<T> quality_niqe_loss(const Tensor<T>& u_rec, const Tensor<T>& v_rec, const metrics::NiqeModel& model_u,
                            const metrics::NiqeModel& model_v, const LossWeights& w, AlphaMemo* memo) {
  auto batch = [&](const Tensor<T>& x, const metrics::NiqeModel& m) {
    Tensor<T> total;
    for (std::size_t n = 0; n < x.dim(0); ++n) total = add_opt(total, niqe_score(luminance_255(x, n), m, memo));
    return scale(total, 1.0 / double(x.dim(0)));
  };
  Tensor<T> out;
  if (w.theta_u != 0.0) out = scale(batch(u_rec, model_u), w.theta_u);
  if (w.theta_v != 0.0) out = add_opt(out, scale(batch(v_rec, model_v), w.theta_v));
  return out.defined() ? out : Tensor<T>::scalar(T(0));
}

template <typename T>
LossTerms<T> total_loss(Variant variant, const Networks<T>& nets, const Tensor<T>& u, const Tensor<T>& v,
                        const LossWeights& w, const QualityContext& ctx) {
  const LossWeights e = effective_weights(variant, w);
  e.validate();
  const bool content = e.beta_u != 0.0 || e.beta_v != 0.0;
  nn::ForwardOptions tap;
  if (content) tap.tap = e.tap_layer;

  const auto fake_v = nn::generator_forward(*nets.g_u, u, tap);  // G_U(u), phi_U(u)
  const auto fake_u = nn::generator_forward(*nets.g_v, v, tap);  // G_V(v), phi_V(v)
  const Tensor<T> u_rec = nn::generator_forward(*nets.g_v, fake_v.output).output;
  const Tensor<T> v_rec = nn::generator_forward(*nets.g_u, fake_u.output).output;

  LossTerms<T> out;
  out.gan = adversarial_g(nn::discriminator_forward(*nets.d_u, fake_u.output),
                          nn::discriminator_forward(*nets.d_v, fake_v.output));
  if (e.theta_u != 0.0 || e.theta_v != 0.0) out.reconstruction = reconstruction_l1(u, u_rec, v, v_rec, e);

  if (e.alpha_u != 0.0 || e.alpha_v != 0.0) out.quality = quality_fsim_loss(u, u_rec, v, v_rec, e, ctx.chromatic);
  if (content) {
    nn::ForwardOptions stop = tap;
    stop.stop_at_tap = true;
    const Tensor<T> fu_rec = nn::generator_forward(*nets.g_u, u_rec, stop).feature;
    const Tensor<T> fv_rec = nn::generator_forward(*nets.g_v, v_rec, stop).feature;
    out.quality = add_opt(out.quality, quality_content_loss(fake_v.feature, fu_rec, fake_u.feature, fv_rec, e));
  }
  if (variant == Variant::QganNiqe && (e.theta_u != 0.0 || e.theta_v != 0.0)) {
    if (!ctx.niqe_u || !ctx.niqe_v) throw std::invalid_argument("qgan_niqe needs NIQE models for both domains");
    out.quality = quality_niqe_loss(u_rec, v_rec, *ctx.niqe_u, *ctx.niqe_v, e, ctx.memo);
  }
  out.total = add_opt(add_opt(out.gan, out.reconstruction), out.quality);
  return out;
}

template <typename T>
Tensor<T> critic_loss(const Networks<T>& nets, const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& fake_u,
                      const Tensor<T>& fake_v) {
  return adversarial_d(nn::discriminator_forward(*nets.d_u, u), nn::discriminator_forward(*nets.d_u, fake_u),
                       nn::discriminator_forward(*nets.d_v, v), nn::discriminator_forward(*nets.d_v, fake_v));
}

std::shared_ptr<const SpectralBank> fsim_spectral_bank(std::size_t rows, std::size_t cols) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const SpectralBank>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{rows, cols}];
  if (!slot) {
    const metrics::PcBank& pb = metrics::pc_bank(rows, cols);
    auto bank = std::make_shared<SpectralBank>();
    bank->rows = rows;
    bank->cols = cols;
    bank->responses = pb.filters;
    slot = std::move(bank);
  }
  return slot;
}

#define QGAN_INSTANTIATE_LOSSES(T)                                                                              \
  template Tensor<T> adversarial_g(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> adversarial_d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> gan_log_objective(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> reconstruction_l1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const LossWeights&);                                                     \
  template Tensor<T> fsim_similarity(const Tensor<T>&, const Tensor<T>&, bool);                                 \
  template Tensor<T> quality_fsim_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const LossWeights&, bool);                                               \
  template Tensor<T> quality_content_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                          const Tensor<T>&, const LossWeights&);                                \
  template Tensor<T> niqe_score(const Tensor<T>&, const metrics::NiqeModel&, AlphaMemo*);                       \
  template Tensor<T> quality_niqe_loss(const Tensor<T>&, const Tensor<T>&, const metrics::NiqeModel&,           \
                                       const metrics::NiqeModel&, const LossWeights&, AlphaMemo*);              \
  template LossTerms<T> total_loss(Variant, const Networks<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                   const LossWeights&, const QualityContext&);                                  \
  template Tensor<T> critic_loss(const Networks<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                 const Tensor<T>&);

QGAN_INSTANTIATE_LOSSES(float)
QGAN_INSTANTIATE_LOSSES(double)
#undef QGAN_INSTANTIATE_LOSSES

}  // namespace qgan::losses
