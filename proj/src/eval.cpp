#include "qgan/eval.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "qgan/autodiff.hpp"
#include "qgan/metrics.hpp"
#include "qgan/synthetic.hpp"

namespace qgan::eval {

namespace fs = std::filesystem;

std::vector<Image> translate(const nn::Generator<float>& g, const std::vector<Image>& inputs, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("translate: batch must be >= 1");
  ad::NoGradGuard<float> off;
  std::vector<Image> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    const std::vector<Image> chunk(inputs.begin() + start, inputs.begin() + std::min(inputs.size(), start + batch));
    const TensorF y = nn::generator_forward(g, image::to_tensor(chunk)).output;
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      std::vector<double> px = image::from_tensor(y, n).pixels();
      for (double& p : px) p = std::round(p);
      out.emplace_back(chunk[n].height(), chunk[n].width(), y.dim(1), std::move(px));
    }
  }
  return out;
}

std::vector<Image> reconstruct(const nn::ModelParams& m, const std::vector<Image>& u) {
  return translate(m.g_v, translate(m.g_u, u));
}

namespace {

void check_aligned(const std::vector<Image>& a, const std::vector<Image>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("generated and truth sets differ in size");
  if (a.empty()) throw std::invalid_argument("no image pairs to score");
}

}  // namespace

EvalRow score_images(const std::vector<Image>& generated, const std::vector<Image>& truth, std::string method) {
  check_aligned(generated, truth);
  const std::size_t n = generated.size();
  std::vector<double> s(n), f(n), g(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = metrics::ssim(generated[i], truth[i]).value;
    f[i] = metrics::fsim(generated[i], truth[i], generated[i].channels() == 3).value;
    g[i] = metrics::gmsd(generated[i], truth[i]).value;
  }
  EvalRow row;
  row.method = std::move(method);
  row.count = n;
  for (std::size_t i = 0; i < n; ++i) {
    row.ssim += s[i];
    row.fsim += f[i];
    row.gmsd += g[i];
  }
  row.ssim /= double(n);
  row.fsim /= double(n);
  row.gmsd /= double(n);
  return row;
}

double mean_fsim(const std::vector<Image>& generated, const std::vector<Image>& truth) {
  check_aligned(generated, truth);
  std::vector<double> f(generated.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < generated.size(); ++i)
    f[i] = metrics::fsim(generated[i], truth[i], generated[i].channels() == 3).value;
  double sum = 0.0;
  for (double v : f) sum += v;
  return sum / double(f.size());
}

EvalRow score_pairs(const fs::path& generated, const fs::path& truth, std::string method) {
  std::map<std::string, fs::path> gen, ref;
  for (const auto& p : synthetic::list_images(generated)) gen[p.filename().string()] = p;
  for (const auto& p : synthetic::list_images(truth)) ref[p.filename().string()] = p;
  std::vector<std::string> missing;
  for (const auto& [name, _] : gen)
    if (!ref.count(name)) missing.push_back(name + " (no ground truth)");
  for (const auto& [name, _] : ref)
    if (!gen.count(name)) missing.push_back(name + " (not generated)");
  if (!missing.empty() || gen.empty()) {
    std::string msg = gen.empty() || ref.empty() ? "no image pairs to score" : "unmatched files:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  std::vector<Image> a, b;
  for (const auto& [name, path] : gen) {
    a.push_back(image::load(path));
    b.push_back(image::load(ref.at(name)));
    if (a.back().height() != b.back().height() || a.back().width() != b.back().width() ||
        a.back().channels() != b.back().channels())
      throw std::invalid_argument("size mismatch for " + name);
  }
  EvalRow row = score_images(a, b, std::move(method));
  row.dataset = truth.string();
  row.checkpoint = generated.string();
  return row;
}

NoiseReport noise_experiment(const nn::ModelParams& a, const nn::ModelParams& c, const std::vector<Image>& inputs,
                             const std::vector<Image>& truth, double variance, std::uint64_t seed) {
  if (!(variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  check_aligned(inputs, truth);
  synthetic::Rng rng(seed);
  std::vector<Image> noisy;
  for (const auto& im : inputs) noisy.push_back(synthetic::add_gaussian_noise(im, variance, rng));

  NoiseReport r;
  r.variance = variance;
  for (const auto& [name, model] : {std::pair{"qgan_a", &a}, std::pair{"qgan_c", &c}}) {
    const double clean = mean_fsim(translate(model->g_u, inputs), truth);
    const double dirty = mean_fsim(translate(model->g_u, noisy), truth);
    r.rows.push_back({name, "clean", clean});
    r.rows.push_back({name, "noisy", dirty});
  }
  r.delta_a = r.rows[0].fsim - r.rows[1].fsim;
  r.delta_c = r.rows[2].fsim - r.rows[3].fsim;
  return r;
}

NoiseReport noise_experiment(const fs::path& checkpoint_a, const fs::path& checkpoint_c,
                             const std::vector<Image>& inputs, const std::vector<Image>& truth, double variance,
                             std::uint64_t seed) {
  for (const auto& p : {checkpoint_a, checkpoint_c})
    if (!fs::exists(p)) throw std::invalid_argument("checkpoint not found: " + p.string());
  return noise_experiment(nn::load_checkpoint(checkpoint_a).first, nn::load_checkpoint(checkpoint_c).first, inputs,
                          truth, variance, seed);
}

// ---- reports --------------------------------------------------------------------

Format parse_format(std::string_view name) {
  if (name == "csv") return Format::Csv;
  if (name == "json") return Format::Json;
  if (name == "markdown" || name == "md") return Format::Markdown;
  throw std::invalid_argument("unknown format '" + std::string(name) + "' (csv, json, markdown)");
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"method", r.method},
                    {"SSIM", r.ssim},
                    {"FSIMc", r.fsim},
                    {"GMSD", r.gmsd},
                    {"count", r.count},
                    {"dataset", r.dataset},
                    {"checkpoint", r.checkpoint}});
  return {{"rows", rows}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  for (const auto& r : j.at("rows"))
    report.rows.push_back({r.at("method").get<std::string>(), r.at("SSIM").get<double>(), r.at("FSIMc").get<double>(),
                           r.at("GMSD").get<double>(), r.at("count").get<std::size_t>(),
                           r.at("dataset").get<std::string>(), r.at("checkpoint").get<std::string>()});
  return report;
}

void emit_report(const EvalReport& report, Format format, std::ostream& out) {
  switch (format) {
    case Format::Csv:
      out << "method,SSIM,FSIMc,GMSD,count,dataset,checkpoint\n";
      for (const auto& r : report.rows)
        out << csv_field(r.method) << ',' << num(r.ssim) << ',' << num(r.fsim) << ',' << num(r.gmsd) << ','
            << r.count << ',' << csv_field(r.dataset) << ',' << csv_field(r.checkpoint) << '\n';
      break;
    case Format::Json: out << to_json(report).dump(2) << '\n'; break;
    case Format::Markdown:
      out << "| Method | SSIM | FSIMc | GMSD | n |\n|---|---|---|---|---|\n";
      for (const auto& r : report.rows)
        out << "| " << r.method << " | " << num(r.ssim) << " | " << num(r.fsim) << " | " << num(r.gmsd) << " | "
            << r.count << " |\n";
      break;
  }
}

void emit_noise_report(const NoiseReport& report, Format format, std::ostream& out) {
  switch (format) {
    case Format::Csv:
      out << "method,condition,FSIMc\n";
      for (const auto& r : report.rows) out << r.method << ',' << r.condition << ',' << num(r.fsim) << '\n';
      break;
    case Format::Json: {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : report.rows) rows.push_back({{"method", r.method}, {"condition", r.condition}, {"FSIMc", r.fsim}});
      out << nlohmann::json{{"variance", report.variance},
                            {"rows", rows},
                            {"delta", {{"qgan_a", report.delta_a}, {"qgan_c", report.delta_c}}}}
                 .dump(2)
          << '\n';
      break;
    }
    case Format::Markdown:
      out << "| Method | Clean FSIMc | Noisy FSIMc | Degradation |\n|---|---|---|---|\n";
      for (std::size_t i = 0; i + 1 < report.rows.size(); i += 2)
        out << "| " << report.rows[i].method << " | " << num(report.rows[i].fsim) << " | "
            << num(report.rows[i + 1].fsim) << " | " << num(report.rows[i].fsim - report.rows[i + 1].fsim) << " |\n";
      break;
  }
}

}  // namespace qgan::eval
