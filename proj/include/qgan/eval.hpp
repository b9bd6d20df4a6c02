#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qgan/image.hpp"
#include "qgan/networks.hpp"

namespace qgan::eval {

using image::Image;

/// Runs a generator over images without recording gradients. Outputs are
/// rounded to 8-bit levels, so in-memory scores equal scores of saved PNGs.
std::vector<Image> translate(const nn::Generator<float>& g, const std::vector<Image>& inputs,
                             std::size_t batch = 8);

/// G_V(G_U(u)) for each u.
std::vector<Image> reconstruct(const nn::ModelParams& m, const std::vector<Image>& u);

struct EvalRow {
  std::string method;
  double ssim = 0.0;
  double fsim = 0.0;  // FSIMc for colour images, FSIM for grey
  double gmsd = 0.0;
  std::size_t count = 0;
  std::string dataset;
  std::string checkpoint;

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  bool operator==(const EvalReport&) const = default;
};

/// Mean SSIM, FSIM and GMSD over aligned (generated, truth) pairs.
EvalRow score_images(const std::vector<Image>& generated, const std::vector<Image>& truth, std::string method = {});

/// Mean FSIM only; used where the other metrics are not reported.
double mean_fsim(const std::vector<Image>& generated, const std::vector<Image>& truth);

/// Pairs same-named files of two directories. Throws std::invalid_argument
/// listing the unmatched names when the sets differ, or when nothing matches.
EvalRow score_pairs(const std::filesystem::path& generated, const std::filesystem::path& truth,
                    std::string method = {});

struct NoiseRow {
  std::string method;
  std::string condition;  // "clean" or "noisy"
  double fsim = 0.0;
};

struct NoiseReport {
  double variance = 0.0;
  std::vector<NoiseRow> rows;  // qgan_a clean, qgan_a noisy, qgan_c clean, qgan_c noisy
  double delta_a = 0.0;        // FSIM(clean) - FSIM(noisy)
  double delta_c = 0.0;
};

/// Translates clean and noise-added inputs with G_U of both models and scores
/// each against the ground truth.
NoiseReport noise_experiment(const nn::ModelParams& a, const nn::ModelParams& c, const std::vector<Image>& inputs,
                             const std::vector<Image>& truth, double variance, std::uint64_t seed);
/// Same, loading both checkpoints; a missing file is rejected.
NoiseReport noise_experiment(const std::filesystem::path& checkpoint_a, const std::filesystem::path& checkpoint_c,
                             const std::vector<Image>& inputs, const std::vector<Image>& truth, double variance,
                             std::uint64_t seed);

enum class Format { Csv, Json, Markdown };
Format parse_format(std::string_view name);

/// Columns: method, SSIM, FSIMc, GMSD, count, dataset, checkpoint.
void emit_report(const EvalReport& report, Format format, std::ostream& out);
void emit_noise_report(const NoiseReport& report, Format format, std::ostream& out);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace qgan::eval
