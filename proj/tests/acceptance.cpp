// Acceptance gate: one PASS/FAIL line per criterion.
//
//   qgan_acceptance [criteria...] [--cache DIR] [--iterations N]
//
// Criteria: metrics blur autodiff alg1 toy niqe noise mos (default: all).
// Training criteria keep their final checkpoints in the cache directory, keyed
// by task, variant, seed and a hash of the full training configuration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "helpers.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "qgan/autodiff.hpp"
#include "qgan/eval.hpp"
#include "qgan/image.hpp"
#include "qgan/losses.hpp"
#include "qgan/metrics.hpp"
#include "qgan/mos.hpp"
#include "qgan/synthetic.hpp"
#include "qgan/trainer.hpp"

using namespace qgan;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Collects failed sub-checks; the first few go into the summary line.
struct Checks {
  std::size_t run = 0, failed = 0;
  std::vector<std::string> notes;
  void expect(bool ok, const std::string& what) {
    ++run;
    if (ok) return;
    ++failed;
    if (notes.size() < 4) notes.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    std::string d = summary + fmt(" [%zu/%zu checks]", run - failed, run);
    for (const auto& n : notes) d += "; " + n;
    return {failed == 0, d};
  }
};

oracle::Grid to_grid(const image::Plane& p) {
  oracle::Grid g = oracle::zeros(p.height, p.width);
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) g[r][c] = p.at(r, c);
  return g;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- metrics -------------------------------------------------------------------

Outcome metric_suite() {
  const auto t0 = Clock::now();
  Checks ck;
  std::mt19937_64 rng(20240);
  double worst_identity = 0.0, worst_symmetry = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t s = rng();
    const bool noise_x = i % 4 == 3, noise_y = i % 5 == 4, color = i % 2 == 0;
    const image::Image x = noise_x ? synthetic::uniform_noise(32, 32, s, color) : synthetic::dead_leaves(32, 32, s, color);
    const image::Image y =
        noise_y ? synthetic::uniform_noise(32, 32, s + 1, color) : synthetic::dead_leaves(32, 32, s + 1, color);
    const double sxy = metrics::ssim(x, y).value, syx = metrics::ssim(y, x).value;
    const double fxy = metrics::fsim(x, y, color).value, fyx = metrics::fsim(y, x, color).value;
    const double gxy = metrics::gmsd(x, y).value, gyx = metrics::gmsd(y, x).value;
    const double sxx = metrics::ssim(x, x).value, fxx = metrics::fsim(x, x, color).value,
                 gxx = metrics::gmsd(x, x).value;
    worst_identity = std::max({worst_identity, std::abs(sxx - 1.0), std::abs(fxx - 1.0), std::abs(gxx)});
    worst_symmetry = std::max({worst_symmetry, std::abs(sxy - syx), std::abs(fxy - fyx), std::abs(gxy - gyx)});
    ck.expect(sxy >= -1.0 && sxy <= 1.0, fmt("SSIM %.6f out of range (pair %d)", sxy, i));
    ck.expect(fxy >= 0.0 && fxy <= 1.0, fmt("FSIM %.6f out of range (pair %d)", fxy, i));
    ck.expect(gxy >= 0.0 && gxy <= 0.5, fmt("GMSD %.6f out of range (pair %d)", gxy, i));
  }
  ck.expect(worst_identity <= 1e-12, fmt("identity error %.3g", worst_identity));
  ck.expect(worst_symmetry <= 1e-12, fmt("symmetry error %.3g", worst_symmetry));

  const double constant = metrics::ssim(image::Plane(32, 32, 100.0), image::Plane(32, 32, 105.0)).value;
  ck.expect(std::abs(constant - 0.998811) <= 1e-6, fmt("constant SSIM %.9f", constant));

  const std::vector<std::pair<image::Image, image::Image>> fixed = {
      {synthetic::step_edge(64, 64, 32, 40.0, 200.0),
       image::gaussian_blur(synthetic::step_edge(64, 64, 32, 40.0, 200.0), 1.5)},
      {synthetic::dead_leaves(64, 64, 11, false), synthetic::dead_leaves(64, 64, 12, false)},
      {synthetic::dead_leaves(64, 64, 13, false), synthetic::uniform_noise(64, 64, 14, false)},
  };
  double worst_g = 0.0, worst_f = 0.0;
  for (const auto& [a, b] : fixed) {
    const auto ga = to_grid(a.channel(0)), gb = to_grid(b.channel(0));
    worst_g = std::max(worst_g, std::abs(metrics::gmsd(a, b).value - oracle::gmsd(ga, gb)));
    worst_f = std::max(worst_f, std::abs(metrics::fsim(a, b, false).value - oracle::fsim(ga, gb)));
  }
  ck.expect(worst_g <= 1e-9, fmt("GMSD vs reference %.3g", worst_g));
  ck.expect(worst_f <= 1e-6, fmt("FSIM vs reference %.3g", worst_f));
  const double secs = seconds_since(t0);
  ck.expect(secs < 120.0, fmt("runtime %.1fs", secs));
  return ck.outcome(fmt("1000 pairs, identity err %.2g, symmetry err %.2g, SSIM const %.6f, GMSD ref err %.2g, "
                        "FSIM ref err %.2g, %.1fs",
                        worst_identity, worst_symmetry, constant, worst_g, worst_f, secs));
}

Outcome blur_suite() {
  const auto t0 = Clock::now();
  Checks ck;
  const image::Image x = synthetic::dead_leaves(64, 64, 21);
  double prev_f = 1.0, prev_s = 1.0, prev_g = 0.0;
  std::string trail;
  for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
    const image::Image y = image::gaussian_blur(x, sigma);
    const double f = metrics::fsim(x, y, true).value, s = metrics::ssim(x, y).value, g = metrics::gmsd(x, y).value;
    ck.expect(f < prev_f, fmt("FSIM not decreasing at sigma %.1f", sigma));
    ck.expect(s < prev_s, fmt("SSIM not decreasing at sigma %.1f", sigma));
    ck.expect(g > prev_g, fmt("GMSD not increasing at sigma %.1f", sigma));
    trail += fmt(" s%.1f:%.4f/%.4f/%.4f", sigma, s, f, g);
    prev_f = f;
    prev_s = s;
    prev_g = g;
  }
  const double secs = seconds_since(t0);
  ck.expect(secs < 30.0, fmt("runtime %.1fs", secs));
  return ck.outcome("SSIM/FSIM/GMSD" + trail + fmt(", %.2fs", secs));
}

// ---- autodiff ------------------------------------------------------------------

TensorD image_tensor(const image::Image& im) {
  const std::size_t c = im.channels(), h = im.height(), w = im.width(), hw = h * w;
  std::vector<double> v(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) v[ch * hw + i] = im.pixels()[i * c + ch] / 127.5 - 1.0;
  return TensorD(Shape{1, c, h, w}, std::move(v));
}

metrics::NiqeModel small_niqe_model(std::uint64_t seed0) {
  std::vector<image::Image> corpus;
  for (std::uint64_t i = 0; i < 12; ++i) corpus.push_back(synthetic::dead_leaves(32, 32, seed0 + i));
  metrics::NiqeParams p;
  p.patch = 16;
  p.sharpness_threshold = 0.0;
  return metrics::niqe_fit(corpus, p);
}

Outcome autodiff_suite() {
  const auto t0 = Clock::now();
  constexpr int kSeeds = 20;
  Checks ck;
  double worst_op = 0.0;
  std::string worst_name;
  const auto cases = testing::op_cases();
  for (const auto& c : cases) {
    const double err = testing::op_case_error(c, kSeeds);
    if (err > worst_op) {
      worst_op = err;
      worst_name = c.name;
    }
    ck.expect(err < 1e-3, fmt("%s err %.3g", c.name.c_str(), err));
  }

  losses::LossWeights w;
  double worst_fsim = 0.0, worst_content = 0.0, worst_niqe = 0.0;
  const TensorD u = image_tensor(synthetic::dead_leaves(32, 32, 14));
  const nn::Generator<double> g = nn::cast<double>(nn::make_generator({}, 3));
  const TensorD fu = nn::generator_forward(g, u, {.tap = 6}).feature.detach();
  const TensorD fv = testing::random_tensor(fu.shape(), 77);
  const metrics::NiqeModel mu = small_niqe_model(200), mv = small_niqe_model(300);
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const TensorD noise = testing::random_tensor(u.shape(), seed, -0.2, 0.2);
    const TensorD u_rec = ad::add(ad::scale(u, 0.8), noise).detach();
    const double ef = ad::grad_check_normwise(
        [&](const TensorD& r) {
          return ad::scale(ad::add_scalar(ad::scale(losses::fsim_similarity(u, r), -1.0), 1.0), w.alpha_u);
        },
        u_rec, 1e-6, 48, seed);
    const double ec = ad::grad_check_normwise(
        [&](const TensorD& r) {
          const TensorD fr = nn::generator_forward(g, r, {.tap = 6}).feature;
          return losses::quality_content_loss(fu, fr, fv, ad::scale(fv, 0.5), w);
        },
        u_rec, 1e-6, 48, seed);
    const TensorD a = image_tensor(synthetic::dead_leaves(32, 32, 900 + seed));
    const TensorD b = image_tensor(synthetic::dead_leaves(32, 32, 950 + seed));
    losses::AlphaMemo memo;
    losses::quality_niqe_loss(a, b, mu, mv, w, &memo);
    memo.mode = losses::AlphaMemo::Mode::Replay;
    const double en = ad::grad_check_normwise(
        [&](const TensorD& r) {
          memo.cursor = 0;
          return losses::quality_niqe_loss(r, b, mu, mv, w, &memo);
        },
        a, 1e-6, 48, seed);
    worst_fsim = std::max(worst_fsim, ef);
    worst_content = std::max(worst_content, ec);
    worst_niqe = std::max(worst_niqe, en);
    ck.expect(ef < 5e-3, fmt("FSIM loss seed %llu err %.3g", (unsigned long long)seed, ef));
    ck.expect(ec < 5e-3, fmt("content loss seed %llu err %.3g", (unsigned long long)seed, ec));
    ck.expect(en < 5e-3, fmt("NIQE loss seed %llu err %.3g", (unsigned long long)seed, en));
  }
  const double secs = seconds_since(t0);
  ck.expect(secs < 300.0, fmt("runtime %.1fs", secs));
  return ck.outcome(fmt("%zu ops x %d seeds worst %.2g (%s); FSIM %.2g, content %.2g, NIQE %.2g; %.1fs", cases.size(),
                        kSeeds, worst_op, worst_name.c_str(), worst_fsim, worst_content, worst_niqe, secs));
}

// ---- training loop ---------------------------------------------------------------

float max_abs_critic(const nn::ModelParams& m) {
  float mx = 0.0f;
  for (const auto* d : {&m.d_u, &m.d_v})
    for (const auto& p : nn::parameters(*d))
      for (float v : p.data()) mx = std::max(mx, std::abs(v));
  return mx;
}

Outcome alg1_suite() {
  Checks ck;
  const synthetic::Dataset ds = synthetic::make_synthetic_dataset({synthetic::Task::Inverted, 24, 4, 3});
  for (std::size_t n : {2u, 5u}) {
    for (double c : {0.01, 0.05, 0.1}) {
      train::TrainConfig cfg;
      cfg.critic_iters = n;
      cfg.iterations = 3;
      cfg.clip = c;
      cfg.seed = 5;
      cfg.dataset = ds.spec;
      train::Trainer t(cfg, ds);
      for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t k = 0; k < n; ++k) {
          t.critic_step();
          const float m = max_abs_critic(t.model());
          ck.expect(m <= float(c), fmt("n=%zu c=%.2f critic weight %.4g after step", n, c, double(m)));
        }
        t.generator_step();
      }
      using K = train::Event::Kind;
      std::vector<K> expected;
      for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t k = 0; k < n; ++k) expected.insert(expected.end(), {K::SampleCritic, K::CriticUpdate, K::Clip});
        expected.insert(expected.end(), {K::SampleGenerator, K::GeneratorUpdate});
      }
      std::vector<K> got;
      for (const auto& e : t.trace()) got.push_back(e.kind);
      ck.expect(got == expected, fmt("n=%zu c=%.2f event sequence differs", n, c));
      ck.expect(t.critic_steps() == n * cfg.iterations && t.generator_steps() == cfg.iterations,
                fmt("n=%zu step counts %zu/%zu", n, t.critic_steps(), t.generator_steps()));
    }
  }

  // Fresh minibatches: every update is preceded by its own draw, and draws differ.
  {
    train::TrainConfig cfg;
    cfg.critic_iters = 5;
    cfg.iterations = 20;
    cfg.batch = 2;
    cfg.dataset = ds.spec;
    train::Trainer t(cfg, ds);
    t.run();
    std::size_t samples = 0, updates = 0;
    std::vector<std::vector<std::size_t>> draws;
    const auto& tr = t.trace();
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const auto k = tr[i].kind;
      if (k == train::Event::Kind::CriticUpdate || k == train::Event::Kind::GeneratorUpdate) {
        ++updates;
        const auto prev = i > 0 ? tr[i - 1].kind : k;
        ck.expect(prev == train::Event::Kind::SampleCritic || prev == train::Event::Kind::SampleGenerator,
                  fmt("update at event %zu without a fresh draw", i));
      }
      if (k == train::Event::Kind::SampleCritic || k == train::Event::Kind::SampleGenerator) {
        ++samples;
        auto d = tr[i].u_index;
        d.insert(d.end(), tr[i].v_index.begin(), tr[i].v_index.end());
        draws.push_back(d);
      }
    }
    ck.expect(samples == updates && samples == 120, fmt("samples %zu updates %zu", samples, updates));
    std::sort(draws.begin(), draws.end());
    const auto distinct = std::size_t(std::unique(draws.begin(), draws.end()) - draws.begin());
    ck.expect(distinct > 100, fmt("only %zu distinct draws of 120", distinct));
  }

  // RMSProp against a hand-computed two-step oracle.
  {
    train::RmsPropParams p;
    std::vector<double> theta{0.3, -0.2}, state{0.0, 0.0};
    const std::vector<double> g1{0.5, -0.01}, g2{-0.25, 0.04};
    train::rmsprop_step<double>(theta, g1, state, p);
    std::vector<double> after1 = theta;
    train::rmsprop_step<double>(theta, g2, state, p);
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double s1 = 0.1 * g1[i] * g1[i];
      const double t1 = (i == 0 ? 0.3 : -0.2) - 5e-5 * g1[i] / (std::sqrt(s1) + 1e-8);
      const double s2 = 0.9 * s1 + 0.1 * g2[i] * g2[i];
      const double t2 = t1 - 5e-5 * g2[i] / (std::sqrt(s2) + 1e-8);
      worst = std::max({worst, std::abs(after1[i] - t1), std::abs(theta[i] - t2)});
    }
    ck.expect(worst == 0.0, fmt("RMSProp differs from oracle by %.3g", worst));
  }
  return ck.outcome("trace, clipping after every critic step, fresh draws, RMSProp two-step oracle");
}

// ---- training criteria -----------------------------------------------------------

struct RunCache {
  fs::path dir;
  std::size_t iterations = 2000;
  std::map<synthetic::Task, synthetic::Dataset> datasets;

  const synthetic::Dataset& dataset(synthetic::Task task) {
    auto it = datasets.find(task);
    if (it == datasets.end()) it = datasets.emplace(task, synthetic::make_synthetic_dataset({task, 200, 40, 2024})).first;
    return it->second;
  }

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
  }

  nn::ModelParams model(synthetic::Task task, losses::Variant variant, std::uint64_t seed) {
    train::TrainConfig cfg;
    cfg.variant = variant;
    cfg.seed = seed;
    cfg.iterations = iterations;
    cfg.dataset = dataset(task).spec;
    const std::string name = fmt("%s_%s_s%llu_%016llx.qgck", std::string(synthetic::task_name(task)).c_str(),
                                 std::string(losses::variant_name(variant)).c_str(), (unsigned long long)seed,
                                 (unsigned long long)fnv1a(cfg.to_text()));
    const fs::path path = dir / name;
    if (fs::exists(path)) {
      std::fprintf(stderr, "cache hit  %s\n", name.c_str());
      return nn::load_checkpoint(path).first;
    }
    std::fprintf(stderr, "training   %s\n", name.c_str());
    const auto t0 = Clock::now();
    train::Trainer t(cfg, dataset(task));
    t.run([&](std::size_t it) {
      if (it % 500 == 0) std::fprintf(stderr, "  iteration %zu (%.0fs)\n", it, seconds_since(t0));
    });
    const fs::path tmp = dir / (name + ".partial");
    t.save(tmp);
    fs::rename(tmp.string() + ".json", path.string() + ".json");
    fs::rename(tmp, path);
    return t.model();
  }

  double recon_fsim(synthetic::Task task, losses::Variant variant, std::uint64_t seed) {
    const auto& ds = dataset(task);
    return eval::mean_fsim(eval::reconstruct(model(task, variant, seed), ds.eval_u), ds.eval_u);
  }
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

std::map<losses::Variant, double> median_recon(RunCache& cache, synthetic::Task task,
                                               const std::vector<losses::Variant>& variants, std::string& table) {
  std::map<losses::Variant, double> med;
  for (auto v : variants) {
    std::vector<double> per_seed;
    for (auto s : kSeeds) per_seed.push_back(cache.recon_fsim(task, v, s));
    med[v] = median(per_seed);
    table += fmt(" %s=%.4f(%.4f,%.4f,%.4f)", std::string(losses::variant_name(v)).c_str(), med[v], per_seed[0],
                 per_seed[1], per_seed[2]);
  }
  return med;
}

Outcome toy_suite(RunCache& cache) {
  using V = losses::Variant;
  std::string table;
  auto m = median_recon(cache, synthetic::Task::Inverted,
                        {V::CycleGanBaseline, V::QganA, V::QganC, V::QganANorec, V::QganCNorec}, table);
  Checks ck;
  ck.expect(m[V::QganA] > m[V::CycleGanBaseline], "qgan_a <= baseline");
  ck.expect(m[V::QganC] > m[V::CycleGanBaseline], "qgan_c <= baseline");
  ck.expect(m[V::QganANorec] < m[V::QganA], "qgan_a_norec >= qgan_a");
  ck.expect(m[V::QganCNorec] < m[V::QganC], "qgan_c_norec >= qgan_c");
  return ck.outcome(fmt("median FSIM(u,u_rec), %zu iterations, seeds 1-3:", cache.iterations) + table);
}

Outcome niqe_suite(RunCache& cache) {
  Checks ck;
  std::vector<image::Image> corpus;
  for (std::uint64_t i = 0; i < 25; ++i) corpus.push_back(synthetic::dead_leaves(192, 192, 7000 + i));
  const metrics::NiqeModel model = metrics::niqe_fit(corpus);
  double worst_natural = 0.0, best_noise = 1e300;
  for (std::uint64_t i = 0; i < 10; ++i) {
    worst_natural = std::max(worst_natural, metrics::niqe(synthetic::dead_leaves(192, 192, 8000 + i), model).value);
    best_noise = std::min(best_noise, metrics::niqe(synthetic::uniform_noise(192, 192, 9000 + i), model).value);
  }
  ck.expect(worst_natural < best_noise, fmt("held-out natural max %.3f >= noise min %.3f", worst_natural, best_noise));

  using V = losses::Variant;
  std::string table;
  auto m = median_recon(cache, synthetic::Task::Facade, {V::CycleGanBaseline, V::QganNiqe}, table);
  ck.expect(m[V::QganNiqe] <= m[V::CycleGanBaseline], "qgan_niqe beats baseline");
  return ck.outcome(fmt("10 held-out scenes max %.3f < 10 noise min %.3f; facade median FSIM(u,u_rec):", worst_natural,
                        best_noise) +
                    table);
}

Outcome noise_suite(RunCache& cache) {
  using V = losses::Variant;
  const auto& ds = cache.dataset(synthetic::Task::Inverted);
  std::vector<double> da, dc;
  std::string table;
  for (auto s : kSeeds) {
    const auto r = eval::noise_experiment(cache.model(synthetic::Task::Inverted, V::QganA, s),
                                          cache.model(synthetic::Task::Inverted, V::QganC, s), ds.eval_u, ds.eval_v,
                                          0.001, 100 + s);
    da.push_back(r.delta_a);
    dc.push_back(r.delta_c);
    table += fmt(" s%llu a=%.4f c=%.4f", (unsigned long long)s, r.delta_a, r.delta_c);
  }
  Checks ck;
  const double ma = median(da), mc = median(dc);
  ck.expect(ma >= mc, "qgan_a degrades less than qgan_c");
  return ck.outcome(fmt("var 0.001 median FSIMc drop qgan_a %.4f vs qgan_c %.4f;", ma, mc) + table);
}

// ---- MOS ---------------------------------------------------------------------

Outcome mos_suite() {
  Checks ck;
  const std::vector<std::string> methods{"cyclegan_baseline", "qgan_a", "qgan_c"}, tasks{"sketch2photo", "facade"};
  std::vector<mos::ImageEntry> images;
  for (const auto& t : tasks)
    for (const auto& m : methods)
      for (int i = 0; i < 8; ++i) images.push_back({t + "-" + m + "-" + std::to_string(i), m, t, ""});
  auto truth = [](const mos::ImageEntry& im) {
    return im.method == "qgan_a" ? 4 : im.method == "qgan_c" ? 3 : 2;
  };

  // In memory: 10 raters, every third changes their mind on the repeats.
  const mos::Study st = mos::create_study(images, 0.25, 9);
  std::vector<mos::Session> sessions;
  for (int r = 0; r < 10; ++r) {
    mos::Session s = mos::create_session(st, "s" + std::to_string(r), "r" + std::to_string(r), r);
    const bool liar = r % 3 == 2;
    while (!s.completed()) {
      const auto& item = s.order[s.cursor()];
      for (const auto& l : methods) ck.expect(mos::next_payload(s).dump().find(l) == std::string::npos, "label leak");
      for (const auto& l : tasks) ck.expect(mos::next_payload(s).dump().find(l) == std::string::npos, "label leak");
      mos::submit_rating(s, s.cursor(), liar && item.probe ? 5 : truth(st.images[item.image]));
    }
    sessions.push_back(s);
  }
  const auto f = mos::consistency_filter(sessions, st);
  ck.expect(f.removed.size() == 3 && f.kept.size() == 7, fmt("kept %zu removed %zu", f.kept.size(), f.removed.size()));
  const auto rep = mos::aggregate(f.kept, st, f.removed.size());
  ck.expect(rep.rows.size() == 6, "expected six (method, task) rows");
  for (const auto& row : rep.rows) {
    const double want = row.method == "qgan_a" ? 4 : row.method == "qgan_c" ? 3 : 2;
    ck.expect(row.mean == want, fmt("%s/%s mean %.3f", row.method.c_str(), row.task.c_str(), row.mean));
  }

  // Headless over HTTP.
  mos::Store store;
  mos::HttpService http(store);
  const int port = http.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);
  json body{{"probe_fraction", 0.25}, {"seed", 9}, {"images", json::array()}};
  for (const auto& im : images) body["images"].push_back({{"id", im.id}, {"method", im.method}, {"task", im.task}});
  auto created = cli.Post("/studies", body.dump(), "application/json");
  ck.expect(created && created->status == 201, "study creation over HTTP");
  const std::string study = created ? json::parse(created->body).value("study", "") : "";
  std::map<std::string, int> truth_by_index;
  for (int r = 0; r < 4; ++r) {
    auto s = cli.Post("/studies/" + study + "/sessions", json{{"rater", "h" + std::to_string(r)}}.dump(),
                      "application/json");
    if (!s || s->status != 201) {
      ck.expect(false, "session creation over HTTP");
      break;
    }
    const std::string sid = json::parse(s->body)["session"];
    const mos::Session view = store.session(sid);
    for (std::size_t k = 0; k < view.order.size(); ++k) {
      const auto& item = view.order[k];
      const int score = r == 3 && item.probe ? 1 : truth(st.images[item.image]);
      auto res = cli.Post("/sessions/" + sid + "/ratings", json{{"item", k}, {"score", score}}.dump(),
                          "application/json");
      ck.expect(res && res->status == 200, "rating over HTTP");
      if (res) ck.expect(res->body.find("qgan") == std::string::npos, "label leak over HTTP");
    }
  }
  auto report = cli.Get("/studies/" + study + "/report");
  ck.expect(report && report->status == 200, "report over HTTP");
  if (report && report->status == 200) {
    const json j = json::parse(report->body);
    ck.expect(j["kept_raters"] == 3 && j["removed_raters"] == 1, "HTTP filter kept 3 of 4");
    for (const auto& row : j["rows"]) {
      const double want = row["method"] == "qgan_a" ? 4 : row["method"] == "qgan_c" ? 3 : 2;
      ck.expect(row["mean"] == want, "HTTP mean");
    }
  }
  http.stop();
  return ck.outcome("synthetic raters filtered, per (method, task) means exact, payloads blind, HTTP pipeline");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QGAN acceptance gate"};
  std::vector<std::string> criteria;
  std::string cache_dir = "acceptance_cache";
  std::size_t iterations = 2000;
  const std::vector<std::string> all{"metrics", "blur", "autodiff", "alg1", "mos", "toy", "niqe", "noise"};
  app.add_option("criteria", criteria, "criteria to run (default: all)")->check(CLI::IsMember(all));
  app.add_option("--cache", cache_dir, "checkpoint cache for training criteria");
  app.add_option("--iterations", iterations, "generator iterations per training run")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = all;

  RunCache cache{cache_dir, iterations, {}};
  fs::create_directories(cache.dir);
  const std::map<std::string, std::pair<std::string, std::function<Outcome()>>> table{
      {"metrics", {"metric correctness suite", metric_suite}},
      {"blur", {"monotone degradation under blur", blur_suite}},
      {"autodiff", {"autodiff gradient checks", autodiff_suite}},
      {"alg1", {"training loop fidelity", alg1_suite}},
      {"toy", {"toy training ordering", [&] { return toy_suite(cache); }}},
      {"niqe", {"NIQE sanity", [&] { return niqe_suite(cache); }}},
      {"noise", {"noise robustness", [&] { return noise_suite(cache); }}},
      {"mos", {"MOS engine", mos_suite}},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto& [title, fn] = table.at(c);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", title.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
