#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "qgan/eval.hpp"
#include "qgan/synthetic.hpp"

using namespace qgan;
using namespace qgan::eval;
namespace fs = std::filesystem;

namespace {

std::vector<Image> scenes(std::size_t n, std::uint64_t seed) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic::dead_leaves(32, 32, seed + i));
  return out;
}

std::vector<Image> blurred(const std::vector<Image>& in, double sigma) {
  std::vector<Image> out;
  for (const auto& im : in) out.push_back(image::gaussian_blur(im, sigma));
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qgan_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("translation produces 8-bit images of the input size") {
  const nn::ModelParams m = nn::make_model({}, {}, 5);
  const auto in = scenes(5, 1);
  const auto out = translate(m.g_u, in, 2);
  REQUIRE(out.size() == 5);
  for (const auto& im : out) {
    CHECK(im.height() == 32);
    CHECK(im.channels() == 3);
    for (double p : im.pixels()) CHECK((p == std::round(p) && p >= 0 && p <= 255));
  }
  CHECK(translate(m.g_u, in, 8) == out);
  CHECK(reconstruct(m, in).size() == 5);

  nn::Generator<float> zero = nn::make_generator({}, 1);
  for (auto& p : nn::parameters(zero))
    for (auto& v : TensorF(p).data_mut()) v = 0.0f;
  for (double p : translate(zero, in).front().pixels()) CHECK(p == 128.0);
  CHECK_THROWS(translate(m.g_u, in, 0));
}

TEST_CASE("scoring identical sets") {
  const auto a = scenes(4, 10);
  const EvalRow r = score_images(a, a, "identity");
  CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.fsim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.gmsd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.count == 4);
  CHECK(r.method == "identity");
  CHECK(mean_fsim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(score_images({}, {}));
  CHECK_THROWS(score_images(a, scenes(3, 10)));
}

TEST_CASE("scores do not depend on pair order") {
  auto a = scenes(10, 30);
  auto b = blurred(a, 1.2);
  const EvalRow base = score_images(a, b);
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  std::vector<Image> pa, pb;
  for (auto i : perm) {
    pa.push_back(a[i]);
    pb.push_back(b[i]);
  }
  const EvalRow shuffled = score_images(pa, pb);
  CHECK(std::abs(shuffled.ssim - base.ssim) <= 1e-12);
  CHECK(std::abs(shuffled.fsim - base.fsim) <= 1e-12);
  CHECK(std::abs(shuffled.gmsd - base.gmsd) <= 1e-12);
  CHECK(base.ssim < 1.0);
  CHECK(base.gmsd > 0.0);
}

TEST_CASE("directory pairs") {
  const fs::path gen = scratch("gen"), truth = scratch("truth");
  const auto a = scenes(3, 50);
  const auto b = blurred(a, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    image::save(b[i], gen / ("img" + std::to_string(i) + ".png"));
    image::save(a[i], truth / ("img" + std::to_string(i) + ".png"));
  }
  const EvalRow r = score_pairs(gen, truth, "blur");
  CHECK(r.count == 3);
  const EvalRow mem = score_images(b, a);
  std::vector<Image> fa, fb;  // files hold 8-bit levels
  for (std::size_t i = 0; i < a.size(); ++i) {
    fb.push_back(image::load(gen / ("img" + std::to_string(i) + ".png")));
    fa.push_back(image::load(truth / ("img" + std::to_string(i) + ".png")));
  }
  CHECK(r.fsim == score_images(fb, fa).fsim);
  CHECK(r.fsim == doctest::Approx(mem.fsim).epsilon(1e-3));

  image::save(a[0], gen / "extra.png");
  try {
    score_pairs(gen, truth);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("extra.png") != std::string::npos);
  }
  const fs::path empty = scratch("empty");
  CHECK_THROWS_AS(score_pairs(empty, truth), std::invalid_argument);
  for (const auto& p : {gen, truth, empty}) fs::remove_all(p);
}

TEST_CASE("noise experiment") {
  const nn::ModelParams a = nn::make_model({}, {}, 1), c = nn::make_model({}, {}, 2);
  const auto in = scenes(4, 70);
  const auto truth = scenes(4, 80);
  const NoiseReport zero = noise_experiment(a, c, in, truth, 0.0, 3);
  REQUIRE(zero.rows.size() == 4);
  CHECK(zero.delta_a == 0.0);
  CHECK(zero.delta_c == 0.0);
  CHECK(zero.rows[0].method == "qgan_a");
  CHECK(zero.rows[1].condition == "noisy");
  CHECK(zero.rows[2].method == "qgan_c");

  const NoiseReport noisy = noise_experiment(a, c, in, truth, 0.01, 3);
  CHECK(noisy.delta_a == doctest::Approx(noisy.rows[0].fsim - noisy.rows[1].fsim));
  CHECK(noisy.rows[1].fsim != noisy.rows[0].fsim);
  CHECK(noise_experiment(a, c, in, truth, 0.01, 3).delta_c == noisy.delta_c);
  CHECK_THROWS_AS(noise_experiment(fs::path("/nonexistent/a.qgck"), fs::path("/nonexistent/c.qgck"), in, truth,
                                   0.001, 1),
                  std::invalid_argument);

  std::ostringstream csv, md;
  emit_noise_report(noisy, Format::Csv, csv);
  emit_noise_report(noisy, Format::Markdown, md);
  CHECK(csv.str().rfind("method,condition,FSIMc\n", 0) == 0);
  CHECK(md.str().find("| qgan_c |") != std::string::npos);
}

TEST_CASE("report formats") {
  EvalReport rep;
  rep.rows.push_back({"cyclegan_baseline", 0.71, 0.8123456789, 0.12, 40, "inverted/2024", "runs/a.qgck"});
  rep.rows.push_back({"qgan_a", 0.75, 0.83, 0.1, 40, "inverted/2024", "runs/b, final.qgck"});

  std::ostringstream csv;
  emit_report(rep, Format::Csv, csv);
  std::istringstream lines(csv.str());
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(header == "method,SSIM,FSIMc,GMSD,count,dataset,checkpoint");
  CHECK(first == "cyclegan_baseline,0.710000,0.812346,0.120000,40,inverted/2024,runs/a.qgck");
  CHECK(second.find("\"runs/b, final.qgck\"") != std::string::npos);

  std::ostringstream js;
  emit_report(rep, Format::Json, js);
  CHECK(report_from_json(nlohmann::json::parse(js.str())) == rep);

  std::ostringstream md;
  emit_report(rep, Format::Markdown, md);
  CHECK(md.str().rfind("| Method | SSIM | FSIMc | GMSD | n |\n|---|---|---|---|---|\n", 0) == 0);
  CHECK(md.str().find("| qgan_a | 0.750000 | 0.830000 | 0.100000 | 40 |") != std::string::npos);

  CHECK(parse_format("markdown") == Format::Markdown);
  CHECK_THROWS_AS(parse_format("xml"), std::invalid_argument);
}
