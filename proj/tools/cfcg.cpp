// cfcg: dataset generation, training, inference, evaluation and checks.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cfcg/checks.hpp"
#include "cfcg/config.hpp"
#include "cfcg/ctsim.hpp"
#include "cfcg/metrics.hpp"
#include "cfcg/pgm.hpp"
#include "cfcg/train.hpp"

namespace fs = std::filesystem;
using cfcg::Tensor;
using nlohmann::json;

namespace {

// Training and inference run in single precision.
using Real = float;

constexpr double kHuPerUnit = 4000.0;
constexpr int kExitError = 1;
constexpr int kExitNonFinite = 3;

struct CommonOptions {
  std::string config_path;
  std::string preset;
};

cfcg::RunConfig resolve_config(const CommonOptions& o) {
  if (!o.config_path.empty()) return cfcg::load_run_config(o.config_path, o.preset);
  return cfcg::run_preset(o.preset.empty() ? "desk" : o.preset);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<fs::path> list_tensors(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".ntsr") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(input)) {
    files.push_back(input);
  } else {
    throw std::runtime_error("input not found: " + input.string());
  }
  if (files.empty()) throw std::runtime_error("no .ntsr tensors in " + input.string());
  return files;
}

// --------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  CommonOptions common;
  std::string out;
  std::optional<std::size_t> grid, n_ld, n_sd, n_eval;
  std::optional<double> alpha;
};

int cmd_gen_data(const GenDataOptions& o) {
  auto rc = resolve_config(o.common);
  if (!o.out.empty()) rc.paths.data_dir = o.out;
  if (o.grid) rc.data.scan.grid = *o.grid;
  if (o.alpha) rc.data.alpha = *o.alpha;
  if (o.n_ld) rc.data.train_ld.count = *o.n_ld;
  if (o.n_sd) rc.data.train_sd.count = *o.n_sd;
  if (o.n_eval) rc.data.eval.count = *o.n_eval;
  if (rc.paths.data_dir.empty()) throw std::invalid_argument("gen-data: no output directory (--out or paths.data_dir)");
  cfcg::ctsim::validate(rc.data);
  const auto t0 = std::chrono::steady_clock::now();
  cfcg::ctsim::build_dataset(rc.data, rc.paths.data_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << rc.data.train_ld.count << " low-dose + " << rc.data.train_sd.count
            << " standard-dose training images and " << rc.data.eval.count << " eval pairs (grid "
            << rc.data.scan.grid << ") to " << rc.paths.data_dir << " in " << std::fixed << std::setprecision(1)
            << secs << " s\n";
  return 0;
}

// --------------------------------------------------------------------------
// train

struct TrainOptions {
  CommonOptions common;
  std::string data, out, resume;
  std::optional<std::size_t> iterations, latent, levels, batch, checkpoint_every, image_size;
  std::optional<double> lr, eta, gan_weight;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

// Keeps the first `rows` data rows of an existing loss log.
// Keeps the first `rows` entries of an existing log so it lines up with the
// resumed checkpoint. Resuming into a fresh directory starts a new log.
void truncate_loss_log(const fs::path& path, std::uint64_t rows) {
  std::vector<std::string> keep;
  if (std::ifstream is(path); is) {
    std::string line;
    std::getline(is, line);
    while (keep.size() < rows && std::getline(is, line)) keep.push_back(line);
    if (keep.size() != rows) throw std::runtime_error("loss log " + path.string() + " has fewer rows than the checkpoint");
  }
  std::ofstream os(path, std::ios::trunc);
  os << "iter,d_loss,g_adv,g_id,lr\n";
  for (const auto& l : keep) os << l << "\n";
}

int cmd_train(const TrainOptions& o) {
  auto rc = resolve_config(o.common);
  if (!o.data.empty()) rc.paths.data_dir = o.data;
  if (!o.out.empty()) rc.paths.out_dir = o.out;
  auto& t = rc.train;
  if (o.iterations) t.iterations = *o.iterations;
  if (o.latent) t.latent = *o.latent;
  if (o.levels) t.wavelet_levels = *o.levels;
  if (o.batch) t.batch = *o.batch;
  if (o.checkpoint_every) t.checkpoint_every = *o.checkpoint_every;
  if (o.image_size) t.image_size = *o.image_size;
  if (o.lr) t.lr = *o.lr;
  if (o.eta) t.eta = *o.eta;
  if (o.gan_weight) t.gan_weight = *o.gan_weight;
  if (o.seed) t.seed = *o.seed;
  if (rc.paths.data_dir.empty()) throw std::invalid_argument("train: no dataset directory (--data or paths.data_dir)");
  if (rc.paths.out_dir.empty()) throw std::invalid_argument("train: no output directory (--out or paths.out_dir)");

  const fs::path out = rc.paths.out_dir;
  fs::create_directories(out / "checkpoints");
  const fs::path loss_path = out / "loss.csv";

  cfcg::TrainState<Real> st;
  if (!o.resume.empty()) {
    st = cfcg::load_checkpoint<Real>(o.resume);
    if (o.iterations) st.config.iterations = *o.iterations;
    rc.train = st.config;
    truncate_loss_log(loss_path, st.iteration);
  } else {
    cfcg::validate(rc.train);
    st = cfcg::make_train_state<Real>(rc.train);
    std::ofstream(loss_path, std::ios::trunc) << "iter,d_loss,g_adv,g_id,lr\n";
  }
  write_text(out / "config.json", cfcg::to_json(rc).dump(2) + "\n");

  const auto ds = cfcg::ctsim::load_dataset(rc.paths.data_dir, true, false);
  std::vector<Tensor<Real>> ld, sd;
  for (const auto& x : ds.train_ld) ld.push_back(x.cast<Real>());
  for (const auto& x : ds.train_sd) sd.push_back(x.cast<Real>());

  std::ofstream log(loss_path, std::ios::app);
  log.precision(9);
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t start = st.iteration;
  auto on_step = [&](const cfcg::StepRecord& r) {
    log << r.iteration << "," << r.d_loss << "," << r.g_adv << "," << r.g_id << "," << r.lr << "\n";
    if (r.rolled_back) std::cerr << "iteration " << r.iteration << ": near-singular W update rolled back\n";
    if (!o.quiet && (r.iteration % 100 == 0 || r.iteration == st.config.iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "iter " << r.iteration << "/" << st.config.iterations << "  d " << r.d_loss << "  g_adv "
                << r.g_adv << "  g_id " << r.g_id << "  (" << std::fixed << std::setprecision(3)
                << secs / static_cast<double>(r.iteration - start) << " s/iter)" << std::defaultfloat << "\n";
    }
  };
  auto on_checkpoint = [&](const cfcg::TrainState<Real>& s) {
    log.flush();
    char name[64];
    std::snprintf(name, sizeof name, "iter_%07llu.cfcg", static_cast<unsigned long long>(s.iteration));
    cfcg::save_checkpoint(out / "checkpoints" / name, s);
  };
  try {
    cfcg::train<Real>(st, ld, sd, on_step, on_checkpoint);
  } catch (const cfcg::NonFiniteLossError& e) {
    log.flush();
    const fs::path diag = out / "diagnostic";
    fs::create_directories(diag);
    cfcg::save_tensor(diag / "low_dose_batch.ntsr", e.low_dose_batch());
    cfcg::save_tensor(diag / "standard_dose_batch.ntsr", e.standard_dose_batch());
    cfcg::save_checkpoint(diag / "state_at_failure.cfcg", st);
    write_text(diag / "diagnostic.json",
               json{{"error", e.what()}, {"iteration", e.iteration()}}.dump(2) + "\n");
    std::cerr << "error: " << e.what() << "; last batch and state written to " << diag << "\n";
    return kExitNonFinite;
  }
  log.flush();
  cfcg::save_checkpoint(out / "final.cfcg", st);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto done = st.iteration - start;
  write_text(out / "train_summary.json",
             json{{"iterations", st.iteration},
                  {"iterations_this_run", done},
                  {"seconds", secs},
                  {"seconds_per_iteration", done ? secs / static_cast<double>(done) : 0.0},
                  {"rollbacks", st.rollbacks}}
                     .dump(2) +
                 "\n");
  std::cout << "trained " << done << " iterations in " << std::fixed << std::setprecision(1) << secs
            << " s; final checkpoint " << (out / "final.cfcg").string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// denoise / synthesize-noise

struct MapOptions {
  std::string checkpoint, input, out;
  bool identity = false;
  bool previews = true;
};

cfcg::GeneratorParams<Real> load_generator(const std::string& checkpoint, bool identity, std::size_t levels = 2) {
  if (identity) {
    // Exact identity map: W = I and zero coupling outputs.
    cfcg::GeneratorConfig gc;
    gc.latent = 8;
    gc.blocks = 1;
    gc.wavelet_levels = levels;
    gc.mix_init_noise = 0.0;
    return cfcg::make_generator<Real>(gc);
  }
  if (checkpoint.empty()) throw std::invalid_argument("a --checkpoint is required (or --identity)");
  return cfcg::load_checkpoint<Real>(checkpoint).gen;
}

void write_previews(const fs::path& dir, const std::string& stem, const Tensor<Real>& input,
                    const Tensor<Real>& output, const char* tag) {
  const cfcg::PgmWindow image_window{-1000.0, 1000.0, "HU"};
  const cfcg::PgmWindow diff_window{-200.0, 200.0, "HU"};
  const auto diff = cfcg::sub(input, output);
  for (std::size_t n = 0; n < input.shape().n; ++n) {
    const std::string s = input.shape().n > 1 ? stem + "_" + std::to_string(n) : stem;
    cfcg::write_pgm(dir / (s + "_input.pgm"), input, image_window, kHuPerUnit, n);
    cfcg::write_pgm(dir / (s + "_" + tag + ".pgm"), output, image_window, kHuPerUnit, n);
    cfcg::write_pgm(dir / (s + "_difference.pgm"), diff, diff_window, kHuPerUnit, n);
  }
}

int cmd_map(const MapOptions& o, bool forward) {
  auto g = load_generator(o.checkpoint, o.identity);
  const auto files = list_tensors(o.input);
  fs::create_directories(o.out);
  const char* tag = forward ? "denoised" : "synthetic_low_dose";
  for (const auto& f : files) {
    const auto x = cfcg::load_tensor<Real>(f);
    const auto y = forward ? cfcg::denoise(x, g) : cfcg::synthesize_noise(x, g);
    const std::string stem = f.stem().string();
    cfcg::save_tensor(fs::path(o.out) / (stem + "_" + tag + ".ntsr"), y);
    if (o.previews) write_previews(o.out, stem, x, y, tag);
  }
  std::cout << "wrote " << files.size() << " " << tag << " image(s) to " << o.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string checkpoint, data, out;
  bool identity = false;
  bool global = false;
};

Tensor<double> to_hu_window(const Tensor<Real>& x) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::clamp(static_cast<double>(x.data()[i]) * kHuPerUnit, -1000.0, 1000.0);
  return Tensor<double>(x.shape(), std::move(v));
}

json summary_json(const cfcg::metrics::MetricReport& r) {
  const auto p = r.psnr_summary(), s = r.ssim_summary();
  return json{{"psnr_db_mean", p.mean}, {"psnr_db_std", p.stddev}, {"ssim_mean", s.mean}, {"ssim_std", s.stddev}};
}

void write_report(const fs::path& path, const cfcg::metrics::MetricReport& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  r.write_csv(os);
}

int cmd_eval(const EvalOptions& o) {
  if (o.data.empty()) throw std::invalid_argument("eval: --data is required");
  const auto ds = cfcg::ctsim::load_dataset(o.data, false, true);
  if (ds.eval.empty()) throw std::runtime_error("eval: dataset has no eval pairs");
  auto g = load_generator(o.checkpoint, o.identity);
  fs::create_directories(o.out);

  namespace m = cfcg::metrics;
  const std::size_t n = ds.eval.size();
  std::vector<Tensor<Real>> clean(n), noisy(n), den(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(ds.eval[i].clean.shape() == ds.eval[i].noisy.shape())) {
      throw cfcg::ShapeError("eval pair " + ds.eval[i].id + " is unpaired: shapes differ");
    }
    clean[i] = ds.eval[i].clean.cast<Real>();
    noisy[i] = ds.eval[i].noisy.cast<Real>();
    den[i] = cfcg::denoise(noisy[i], g);
  }
  struct Row {
    double pn, sn, pd, sd, pn_hu, sn_hu, pd_hu, sd_hu, gn, gd;
  };
  std::vector<Row> rows(n);
  cfcg::parallel_for(n, [&](std::size_t i) {
    Row& r = rows[i];
    r.pn = m::psnr(noisy[i], clean[i]);
    r.pd = m::psnr(den[i], clean[i]);
    r.sn = m::ssim(noisy[i], clean[i]);
    r.sd = m::ssim(den[i], clean[i]);
    const auto c_hu = to_hu_window(clean[i]), n_hu = to_hu_window(noisy[i]), d_hu = to_hu_window(den[i]);
    r.pn_hu = m::psnr(n_hu, c_hu, m::kRangeHu);
    r.pd_hu = m::psnr(d_hu, c_hu, m::kRangeHu);
    r.sn_hu = m::ssim(n_hu, c_hu, m::kRangeHu);
    r.sd_hu = m::ssim(d_hu, c_hu, m::kRangeHu);
    r.gn = o.global ? m::ssim_global(noisy[i], clean[i]) : 0.0;
    r.gd = o.global ? m::ssim_global(den[i], clean[i]) : 0.0;
  });

  m::MetricReport rn, rd, rn_hu, rd_hu;
  std::ofstream os(fs::path(o.out) / "eval.csv");
  os.precision(10);
  os << "image_id,psnr_noisy_db,ssim_noisy,psnr_denoised_db,ssim_denoised,delta_psnr_db,delta_ssim";
  if (o.global) os << ",ssim_global_noisy,ssim_global_denoised";
  os << "\n";
  std::vector<double> dp, dsim;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i];
    const auto& id = ds.eval[i].id;
    rn.add(id, r.pn, r.sn);
    rd.add(id, r.pd, r.sd);
    rn_hu.add(id, r.pn_hu, r.sn_hu);
    rd_hu.add(id, r.pd_hu, r.sd_hu);
    dp.push_back(r.pd - r.pn);
    dsim.push_back(r.sd - r.sn);
    os << id << "," << r.pn << "," << r.sn << "," << r.pd << "," << r.sd << "," << dp.back() << "," << dsim.back();
    if (o.global) os << "," << r.gn << "," << r.gd;
    os << "\n";
  }
  const auto mdp = m::summarize(dp), mds = m::summarize(dsim);
  os << "mean," << rn.psnr_summary().mean << "," << rn.ssim_summary().mean << "," << rd.psnr_summary().mean << ","
     << rd.ssim_summary().mean << "," << mdp.mean << "," << mds.mean << (o.global ? ",," : "") << "\n";
  write_report(fs::path(o.out) / "noisy.csv", rn);
  write_report(fs::path(o.out) / "denoised.csv", rd);
  write_report(fs::path(o.out) / "noisy_hu.csv", rn_hu);
  write_report(fs::path(o.out) / "denoised_hu.csv", rd_hu);

  const json summary{{"pairs", n},
                     {"normalized", {{"noisy", summary_json(rn)}, {"denoised", summary_json(rd)}}},
                     {"hu_window", {{"noisy", summary_json(rn_hu)}, {"denoised", summary_json(rd_hu)}}},
                     {"delta_psnr_db_mean", mdp.mean},
                     {"delta_ssim_mean", mds.mean}};
  write_text(fs::path(o.out) / "summary.json", summary.dump(2) + "\n");
  std::cout << std::fixed << std::setprecision(3) << "pairs " << n << "\n"
            << "noisy     PSNR " << rn.psnr_summary().mean << " dB  SSIM " << std::setprecision(4)
            << rn.ssim_summary().mean << "\n"
            << std::setprecision(3) << "denoised  PSNR " << rd.psnr_summary().mean << " dB  SSIM "
            << std::setprecision(4) << rd.ssim_summary().mean << "\n"
            << std::setprecision(3) << "delta     PSNR " << mdp.mean << " dB  SSIM " << std::setprecision(4)
            << mds.mean << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// info

struct InfoOptions {
  CommonOptions common;
  std::string checkpoint;
  bool as_json = false;
};

constexpr std::size_t kReferenceGenerator = 1204320;
constexpr std::size_t kReferenceTotal = 1866721;

int cmd_info(const InfoOptions& o) {
  cfcg::TrainConfig cfg;
  cfcg::GeneratorParams<double> gen;
  cfcg::DiscriminatorParams<double> disc;
  if (!o.checkpoint.empty()) {
    auto st = cfcg::load_checkpoint<double>(o.checkpoint);
    cfg = st.config;
    gen = std::move(st.gen);
    disc = std::move(st.disc);
  } else {
    cfg = resolve_config(o.common).train;
    gen = cfcg::make_generator<double>(cfcg::generator_config(cfg));
    cfcg::DiscriminatorConfig dc;
    dc.widths = cfg.disc_widths;
    disc = cfcg::make_discriminator<double>(dc);
  }
  const std::size_t g_count = gen.parameter_count(), d_count = disc.parameter_count();
  const std::size_t g_closed = cfcg::generator_parameter_count(cfg.blocks, cfg.latent);
  const std::size_t d_closed = cfcg::discriminator_parameter_count(cfg.disc_widths);
  std::vector<double> dets;
  for (const auto& b : gen.blocks) dets.push_back(std::abs(b.mix.determinant()));
  const double lip = cfcg::lipschitz_bound(gen);

  json j{{"preset", cfg.preset},
         {"L", cfg.blocks},
         {"J", cfg.wavelet_levels},
         {"c", cfg.latent},
         {"generator_parameters", g_count},
         {"generator_closed_form", g_closed},
         {"discriminator_parameters", d_count},
         {"discriminator_closed_form", d_closed},
         {"total_parameters", g_count + d_count},
         {"lipschitz_bound", lip},
         {"abs_det_W", dets},
         {"reference_generator_parameters", kReferenceGenerator},
         {"reference_total_parameters", kReferenceTotal},
         {"reference_note", "published complexity figures, shown for comparison; not an exact-match claim"}};
  if (o.as_json) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "preset          " << cfg.preset << "\n"
            << "L (blocks)      " << cfg.blocks << "\n"
            << "J (levels)      " << cfg.wavelet_levels << "\n"
            << "c (latent)      " << cfg.latent << "\n"
            << "generator       " << g_count << "  (closed form " << g_closed << ")\n"
            << "discriminator   " << d_count << "  (closed form " << d_closed << ")\n"
            << "total           " << g_count + d_count << "\n"
            << "reference       generator " << kReferenceGenerator << ", total " << kReferenceTotal
            << "  (not an exact-match claim)\n"
            << "lipschitz_bound " << lip << "\n"
            << "|det W_i|      ";
  for (double d : dets) std::cout << " " << d;
  std::cout << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// verify

struct VerifyOptions {
  std::string checkpoint;
  std::size_t random = 0;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t latent = 32;
  std::size_t levels = 2;
  std::string precision = "f64";
  bool as_json = false;
};

template <class T>
std::vector<std::pair<std::string, std::vector<cfcg::CheckResult>>> verify_all(const VerifyOptions& o) {
  std::vector<std::pair<std::string, std::vector<cfcg::CheckResult>>> runs;
  if (!o.checkpoint.empty()) {
    auto g = cfcg::load_checkpoint<T>(o.checkpoint).gen;
    runs.emplace_back(o.checkpoint, cfcg::run_invariant_battery(g, o.seed, o.size));
  }
  for (std::size_t k = 0; k < o.random; ++k) {
    const std::uint64_t seed = o.seed + k;
    cfcg::GeneratorConfig gc;
    gc.latent = o.latent;
    gc.wavelet_levels = o.levels;
    gc.seed = seed;
    auto g = cfcg::make_generator<T>(gc);
    std::mt19937_64 rng(cfcg::derive_seed(seed, 11));
    cfcg::randomize_generator(g, rng);
    runs.emplace_back("random seed " + std::to_string(seed), cfcg::run_invariant_battery(g, seed, o.size));
  }
  return runs;
}

int cmd_verify(const VerifyOptions& o) {
  if (o.checkpoint.empty() && o.random == 0) throw std::invalid_argument("verify: give a checkpoint or --random n");
  const auto runs = o.precision == "f32" ? verify_all<float>(o) : verify_all<double>(o);
  bool all = true;
  json j = json::array();
  for (const auto& [label, checks] : runs) {
    bool ok = true;
    for (const auto& c : checks) ok = ok && c.pass;
    all = all && ok;
    j.push_back({{"target", label}, {"pass", ok}, {"checks", cfcg::to_json(checks)}});
    if (!o.as_json) {
      std::cout << (ok ? "PASS " : "FAIL ") << label << "\n";
      for (const auto& c : checks) std::cout << "  " << (c.pass ? "ok   " : "FAIL ") << c.name << ": " << c.detail << "\n";
    }
  }
  if (o.as_json) std::cout << json{{"pass", all}, {"precision", o.precision}, {"runs", j}}.dump(2) << "\n";
  else std::cout << (all ? "all checks passed" : "verification FAILED") << "\n";
  return all ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-free CycleGAN for low-dose CT denoising"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, CommonOptions& c) {
    sub->add_option("--config", c.config_path, "JSON run configuration");
    sub->add_option("--preset", c.preset, "desk or paper (overrides the config file)")
        ->check(CLI::IsMember({"desk", "paper"}));
  };

  GenDataOptions gd;
  auto* gen_cmd = app.add_subcommand("gen-data", "Simulate a synthetic CT dataset");
  add_common(gen_cmd, gd.common);
  gen_cmd->add_option("--out", gd.out, "Output dataset directory");
  gen_cmd->add_option("--grid", gd.grid, "Image side length");
  gen_cmd->add_option("--alpha", gd.alpha, "Low-dose fraction of the source counts");
  gen_cmd->add_option("--n-train-ld", gd.n_ld, "Unpaired low-dose training images");
  gen_cmd->add_option("--n-train-sd", gd.n_sd, "Unpaired standard-dose training images");
  gen_cmd->add_option("--n-eval", gd.n_eval, "Paired evaluation images");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train generator and discriminator");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--data", tr.data, "Dataset directory from gen-data");
  train_cmd->add_option("--out", tr.out, "Run directory (checkpoints, loss.csv)");
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
  train_cmd->add_option("--iterations", tr.iterations);
  train_cmd->add_option("--latent", tr.latent, "Coupling-net width c");
  train_cmd->add_option("--levels", tr.levels, "Wavelet levels J");
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--image-size", tr.image_size, "Training crop side");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--eta", tr.eta, "Identity-loss weight");
  train_cmd->add_option("--gan-weight", tr.gan_weight, "Adversarial-loss weight");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_flag("--quiet", tr.quiet, "No progress lines");

  MapOptions dn, sy;
  auto add_map = [](CLI::App* sub, MapOptions& m) {
    sub->add_option("--checkpoint", m.checkpoint);
    sub->add_option("--input", m.input, "A .ntsr file or a directory of them")->required();
    sub->add_option("--out", m.out, "Output directory")->required();
    sub->add_flag("--identity", m.identity, "Use the exact identity generator instead of a checkpoint");
    sub->add_flag("!--no-previews", m.previews, "Skip PGM previews");
  };
  auto* dn_cmd = app.add_subcommand("denoise", "Low-dose -> denoised (forward mapping)");
  add_map(dn_cmd, dn);
  auto* sy_cmd = app.add_subcommand("synthesize-noise", "Standard-dose -> synthetic low-dose (inverse mapping)");
  add_map(sy_cmd, sy);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of noisy and denoised eval pairs");
  eval_cmd->add_option("--checkpoint", ev.checkpoint);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();
  eval_cmd->add_flag("--identity", ev.identity, "Evaluate the identity generator");
  eval_cmd->add_flag("--global", ev.global, "Also report whole-image (single-window) SSIM");

  InfoOptions in;
  auto* info_cmd = app.add_subcommand("info", "Parameter counts and model diagnostics");
  add_common(info_cmd, in.common);
  info_cmd->add_option("--checkpoint", in.checkpoint);
  info_cmd->add_flag("--json", in.as_json);

  VerifyOptions vf;
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant battery");
  verify_cmd->add_option("checkpoint", vf.checkpoint, "Checkpoint to verify");
  verify_cmd->add_option("--random", vf.random, "Also verify n random parameter draws");
  verify_cmd->add_option("--seed", vf.seed, "First seed for random draws and probe inputs");
  verify_cmd->add_option("--size", vf.size, "Probe image side");
  verify_cmd->add_option("--latent", vf.latent, "c for random draws");
  verify_cmd->add_option("--levels", vf.levels, "J for random draws");
  verify_cmd->add_option("--precision", vf.precision)->check(CLI::IsMember({"f32", "f64"}));
  verify_cmd->add_flag("--json", vf.as_json);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gd);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (dn_cmd->parsed()) return cmd_map(dn, true);
    if (sy_cmd->parsed()) return cmd_map(sy, false);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (info_cmd->parsed()) return cmd_info(in);
    if (verify_cmd->parsed()) return cmd_verify(vf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
