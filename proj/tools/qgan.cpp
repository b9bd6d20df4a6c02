// qgan: dataset generation, training, translation, scoring and the MOS service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "qgan/eval.hpp"
#include "qgan/metrics.hpp"
#include "qgan/mos.hpp"
#include "qgan/synthetic.hpp"
#include "qgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace qgan;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void echo_config(const CLI::App& sub) {
  std::istringstream lines(sub.config_to_str(true, false));
  std::string line;
  std::cerr << "# " << sub.get_name() << " resolved configuration\n";
  while (std::getline(lines, line))
    if (!line.empty()) std::cerr << "#   " << line << '\n';
}

void write_or_print(const std::string& out, const std::function<void(std::ostream&)>& emit) {
  if (out.empty()) {
    emit(std::cout);
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  emit(f);
}

std::vector<image::Image> load_all(const fs::path& dir, std::vector<fs::path>* names = nullptr) {
  const auto files = synthetic::list_images(dir);
  if (files.empty()) throw std::runtime_error("no images in " + dir.string());
  std::vector<image::Image> out;
  for (const auto& f : files) {
    out.push_back(image::load(f));
    if (names) names->push_back(f.filename());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quality-aware unpaired image translation toolkit"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // dataset
  auto* ds = app.add_subcommand("dataset", "Generate a synthetic two-domain dataset");
  std::string ds_task = "inverted", ds_out;
  std::size_t ds_size = 200, ds_eval = 40;
  std::uint64_t ds_seed = 1;
  const auto tasks = CLI::IsMember({"inverted", "facade", "noise"});
  const auto variants =
      CLI::IsMember({"cyclegan_baseline", "qgan_a", "qgan_c", "qgan_niqe", "qgan_a_norec", "qgan_c_norec"});
  const auto formats = CLI::IsMember({"csv", "json", "markdown"});
  ds->add_option("--task", ds_task, "inverted | facade | noise")->check(tasks)->capture_default_str();
  ds->add_option("--size", ds_size, "Training images per domain")->capture_default_str();
  ds->add_option("--eval-size", ds_eval, "Paired evaluation images")->capture_default_str();
  ds->add_option("--seed", ds_seed)->capture_default_str();
  ds->add_option("--out", ds_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a variant (flags > config file > defaults)");
  std::string tr_config, tr_data, tr_out, tr_variant, tr_task;
  std::uint64_t tr_seed = 1;
  std::size_t tr_iters = 0, tr_n = 0, tr_batch = 0, tr_ckpt = 0;
  double tr_clip = 0, tr_lr = 0;
  tr->add_option("--config", tr_config, "key = value training config file");
  tr->add_option("--data", tr_data, "Dataset directory (default: generate from the config's dataset keys)");
  tr->add_option("--out", tr_out, "Run directory for checkpoints, log.csv and config.txt")->required();
  tr->add_option("--variant", tr_variant)->check(variants);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--iterations", tr_iters, "Generator iterations");
  tr->add_option("--critic-iters", tr_n, "Critic updates per generator update");
  tr->add_option("--batch", tr_batch);
  tr->add_option("--clip", tr_clip);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--task", tr_task)->check(tasks);
  tr->add_option("--checkpoint-interval", tr_ckpt);

  // translate
  auto* tl = app.add_subcommand("translate", "Translate a directory of images with a checkpoint");
  std::string tl_ckpt, tl_in, tl_out, tl_dir = "u2v";
  tl->add_option("--checkpoint", tl_ckpt)->required();
  tl->add_option("--input", tl_in)->required();
  tl->add_option("--output", tl_out)->required();
  tl->add_option("--direction", tl_dir, "u2v (G_U) | v2u (G_V)")->check(CLI::IsMember({"u2v", "v2u"}))->capture_default_str();

  // iqa
  auto* iq = app.add_subcommand("iqa", "Score one image pair (or one image for NIQE)");
  std::string iq_metric, iq_ref, iq_test, iq_model;
  bool iq_gray = false;
  iq->add_option("--metric", iq_metric)->check(CLI::IsMember({"ssim", "fsim", "gmsd", "niqe"}))->required();
  iq->add_option("--ref", iq_ref, "Reference image (full-reference metrics)");
  iq->add_option("--test", iq_test, "Test image")->required();
  iq->add_option("--model", iq_model, "NIQE model file");
  iq->add_flag("--gray", iq_gray, "Grey FSIM instead of FSIMc");

  // niqe-fit
  auto* nf = app.add_subcommand("niqe-fit", "Fit a NIQE model on a directory of pristine images");
  std::string nf_images, nf_out;
  std::size_t nf_patch = 96;
  double nf_threshold = 0.75;
  nf->add_option("--images", nf_images)->required();
  nf->add_option("--out", nf_out)->required();
  nf->add_option("--patch", nf_patch)->capture_default_str();
  nf->add_option("--threshold", nf_threshold, "Sharpness selection threshold")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Score generated images against same-named ground truth");
  std::string ev_gen, ev_truth, ev_format = "csv", ev_method = "generated", ev_out;
  ev->add_option("--generated", ev_gen)->required();
  ev->add_option("--truth", ev_truth)->required();
  ev->add_option("--format", ev_format)->check(formats)->capture_default_str();
  ev->add_option("--method", ev_method)->capture_default_str();
  ev->add_option("--out", ev_out, "Report file (default: stdout)");

  // noise-exp
  auto* ne = app.add_subcommand("noise-exp", "Input-noise degradation of qgan_a vs qgan_c");
  std::string ne_a, ne_c, ne_data, ne_format = "markdown", ne_out;
  double ne_var = 0.001;
  std::uint64_t ne_seed = 1;
  ne->add_option("--checkpoint-a", ne_a)->required();
  ne->add_option("--checkpoint-c", ne_c)->required();
  ne->add_option("--data", ne_data, "Dataset directory with eval_u/ and eval_v/")->required();
  ne->add_option("--var", ne_var)->capture_default_str();
  ne->add_option("--seed", ne_seed)->capture_default_str();
  ne->add_option("--format", ne_format)->check(formats)->capture_default_str();
  ne->add_option("--out", ne_out);

  // mos-serve
  auto* ms = app.add_subcommand("mos-serve", "Serve the MOS rating API");
  std::string ms_log = "mos_events.jsonl", ms_host = "127.0.0.1", ms_ready;
  int ms_port = 8080, ms_tol = 0;
  ms->add_option("--log", ms_log, "Event log (replayed on start)")->capture_default_str();
  ms->add_option("--host", ms_host)->capture_default_str();
  ms->add_option("--port", ms_port, "0 picks a free port")->capture_default_str();
  ms->add_option("--tolerance", ms_tol, "Allowed probe-pair score difference")->capture_default_str();
  ms->add_option("--ready-file", ms_ready, "Write the bound port here once listening");

  // mos-report
  auto* mr = app.add_subcommand("mos-report", "Replay an event log and print per-method MOS");
  std::string mr_log, mr_study, mr_format = "json";
  int mr_tol = 0;
  std::uint64_t mr_seed = 0;
  mr->add_option("--log", mr_log)->required();
  mr->add_option("--study", mr_study, "Study id (default: every study)");
  mr->add_option("--format", mr_format, "json | csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  mr->add_option("--tolerance", mr_tol)->capture_default_str();
  for (auto* sub : {tl, iq, nf, ev, ms, mr})
    sub->add_option("--seed", mr_seed, "Accepted everywhere; this command is deterministic")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (app.get_subcommands().empty()) std::cerr << app.help();
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    for (auto* sub : app.get_subcommands()) echo_config(*sub);

    if (ds->parsed()) {
      const synthetic::Dataset d = synthetic::make_synthetic_dataset({synthetic::parse_task(ds_task), ds_size, ds_eval, ds_seed});
      synthetic::write_dataset(d, ds_out);
      std::cout << "wrote " << ds_out << '\n';
    } else if (tr->parsed()) {
      train::TrainConfig c;
      if (!tr_config.empty()) c = train::TrainConfig::load(tr_config);
      if (tr->count("--variant")) c.set("variant", tr_variant);
      if (tr->count("--seed")) c.seed = tr_seed;
      if (tr->count("--iterations")) c.iterations = tr_iters;
      if (tr->count("--critic-iters")) c.critic_iters = tr_n;
      if (tr->count("--batch")) c.batch = tr_batch;
      if (tr->count("--clip")) c.clip = tr_clip;
      if (tr->count("--lr")) c.learning_rate = tr_lr;
      if (tr->count("--task")) c.set("task", tr_task);
      if (tr->count("--checkpoint-interval")) c.checkpoint_interval = tr_ckpt;
      c.checkpoint_dir = tr_out;
      synthetic::Dataset d = tr_data.empty() ? synthetic::make_synthetic_dataset(c.dataset) : synthetic::read_dataset(tr_data);
      c.dataset = d.spec;
      c.validate();
      std::cerr << c.to_text();
      fs::create_directories(tr_out);
      { std::ofstream(fs::path(tr_out) / "config.txt") << c.to_text(); }
      train::Trainer t(c, d);
      std::ofstream log(fs::path(tr_out) / "log.csv");
      try {
        t.run([&](std::size_t it) {
          if (it % 100 == 0 || it == c.iterations) std::cerr << "iteration " << it << "/" << c.iterations << '\n';
        });
      } catch (...) {
        train::write_log_csv(log, t.log());
        throw;
      }
      train::write_log_csv(log, t.log());
      std::cout << (fs::path(tr_out) / "final.qgck").string() << '\n';
    } else if (tl->parsed()) {
      const auto [model, meta] = nn::load_checkpoint(tl_ckpt);
      std::vector<fs::path> names;
      const auto in = load_all(tl_in, &names);
      const auto out = eval::translate(tl_dir == "u2v" ? model.g_u : model.g_v, in);
      fs::create_directories(tl_out);
      for (std::size_t i = 0; i < out.size(); ++i)
        image::save(out[i], fs::path(tl_out) / names[i].replace_extension(".png"));
      std::cout << "translated " << out.size() << " images\n";
    } else if (iq->parsed()) {
      const metrics::Metric m = metrics::parse_metric(iq_metric);
      const image::Image test = image::load(iq_test);
      double v = 0.0;
      if (m == metrics::Metric::NIQE) {
        if (iq_model.empty()) throw CLI::RequiredError("--model (NIQE needs a fitted model)");
        v = metrics::niqe(test, metrics::NiqeModel::load(iq_model)).value;
      } else {
        if (iq_ref.empty()) throw CLI::RequiredError("--ref");
        const image::Image ref = image::load(iq_ref);
        v = m == metrics::Metric::SSIM   ? metrics::ssim(ref, test).value
            : m == metrics::Metric::GMSD ? metrics::gmsd(ref, test).value
                                         : metrics::fsim(ref, test, !iq_gray && ref.channels() == 3).value;
      }
      std::cout << std::fixed << std::setprecision(6) << v << '\n';
    } else if (nf->parsed()) {
      metrics::NiqeParams p;
      p.patch = nf_patch;
      p.sharpness_threshold = nf_threshold;
      const metrics::NiqeModel model = metrics::niqe_fit(load_all(nf_images), p);
      model.save(nf_out);
      std::cout << "fitted on " << model.patch_count << " patches; wrote " << nf_out << '\n';
    } else if (ev->parsed()) {
      const eval::Format f = eval::parse_format(ev_format);
      eval::EvalReport rep;
      rep.rows.push_back(eval::score_pairs(ev_gen, ev_truth, ev_method));
      write_or_print(ev_out, [&](std::ostream& o) { eval::emit_report(rep, f, o); });
    } else if (ne->parsed()) {
      const eval::Format f = eval::parse_format(ne_format);
      const auto u = load_all(fs::path(ne_data) / "eval_u");
      const auto v = load_all(fs::path(ne_data) / "eval_v");
      const eval::NoiseReport rep = eval::noise_experiment(fs::path(ne_a), fs::path(ne_c), u, v, ne_var, ne_seed);
      write_or_print(ne_out, [&](std::ostream& o) { eval::emit_noise_report(rep, f, o); });
    } else if (ms->parsed()) {
      mos::Store store(ms_log, ms_tol);
      mos::HttpService service(store);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int port = service.start(ms_host, ms_port);
      std::cerr << "listening on " << ms_host << ":" << port << '\n';
      if (!ms_ready.empty()) {
        const fs::path tmp = ms_ready + ".tmp";
        { std::ofstream(tmp) << port << '\n'; }
        fs::rename(tmp, ms_ready);
      }
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      service.stop();
    } else if (mr->parsed()) {
      if (!fs::exists(mr_log)) throw std::runtime_error("event log not found: " + mr_log);
      const mos::Store store(mr_log, mr_tol);
      const auto ids = mr_study.empty() ? store.study_ids() : std::vector<std::string>{mr_study};
      nlohmann::json all = nlohmann::json::object();
      if (mr_format == "csv") std::cout << "study,task,method,mean,ratings,raters,removed_raters\n";
      for (const auto& id : ids) {
        const mos::Report r = store.report(id);
        if (mr_format == "json") {
          all[id] = mos::to_json(r);
          continue;
        }
        for (const auto& row : r.rows)
          std::cout << id << ',' << row.task << ',' << row.method << ',' << std::setprecision(10) << row.mean << ','
                    << row.ratings << ',' << row.raters << ',' << row.removed << '\n';
      }
      if (mr_format == "json") std::cout << all.dump(2) << '\n';
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}
