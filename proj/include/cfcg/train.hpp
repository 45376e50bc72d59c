#pragma once

// Cycle-free adversarial training of the invertible generator against a
// residual-domain discriminator, plus inference helpers and checkpoints.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcg/disc.hpp"
#include "cfcg/invgen.hpp"
#include "cfcg/optim.hpp"
#include "cfcg/seed.hpp"
#include "cfcg/serialize.hpp"
#include "cfcg/tensor.hpp"
#include "cfcg/wavelet.hpp"

namespace cfcg {

struct TrainConfig {
  std::string preset = "desk";
  std::size_t iterations = 2000;
  std::size_t image_size = 64;  // training crop side
  std::size_t batch = 1;
  std::size_t blocks = 4;
  std::size_t latent = 32;
  std::size_t wavelet_levels = 2;
  double eta = 10.0;        // identity-loss weight
  double gan_weight = 2.0;  // adversarial-loss weight
  double lr = 1e-4;
  std::size_t lr_halving_period = 50000;
  std::array<std::size_t, 3> disc_widths{64, 128, 256};
  double mix_init_noise = 0.01;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;  // 0 disables periodic checkpoints
};

inline TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.iterations = 150000;
    c.latent = 256;
    c.wavelet_levels = 6;
    c.checkpoint_every = 5000;
    return c;
  }
  throw std::invalid_argument("unknown preset \"" + name + "\" (expected desk or paper)");
}

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid training config: " + m); };
  if (c.blocks == 0) fail("blocks must be >= 1");
  if (c.latent == 0) fail("latent must be >= 1");
  if (c.batch == 0) fail("batch must be >= 1");
  if (c.lr_halving_period == 0) fail("lr_halving_period must be >= 1");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) fail("lr must be a finite value >= 0");
  if (!(c.eta >= 0.0) || !std::isfinite(c.eta)) fail("eta must be a finite value >= 0");
  if (!(c.gan_weight >= 0.0) || !std::isfinite(c.gan_weight)) fail("gan_weight must be a finite value >= 0");
  for (auto w : c.disc_widths)
    if (w == 0) fail("discriminator widths must be >= 1");
  if (c.image_size % (std::size_t{1} << c.wavelet_levels) != 0) {
    fail("image_size " + std::to_string(c.image_size) + " is not divisible by 2^wavelet_levels = " +
         std::to_string(std::size_t{1} << c.wavelet_levels));
  }
  if (patch_output_size(c.image_size) == 0) {
    fail("image_size " + std::to_string(c.image_size) + " is below the discriminator minimum of " +
         std::to_string(min_discriminator_input()));
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"preset", c.preset},
                        {"iterations", c.iterations},
                        {"image_size", c.image_size},
                        {"batch", c.batch},
                        {"blocks", c.blocks},
                        {"latent", c.latent},
                        {"wavelet_levels", c.wavelet_levels},
                        {"eta", c.eta},
                        {"gan_weight", c.gan_weight},
                        {"lr", c.lr},
                        {"lr_halving_period", c.lr_halving_period},
                        {"disc_widths", c.disc_widths},
                        {"mix_init_noise", c.mix_init_noise},
                        {"seed", c.seed},
                        {"checkpoint_every", c.checkpoint_every}};
}

// Overlays `j` on top of `base`. A "preset" key first resets the base to
// that preset. Unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  if (j.contains("preset")) base = train_preset(j.at("preset").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "preset") continue;
      else if (key == "iterations") base.iterations = value.get<std::size_t>();
      else if (key == "image_size") base.image_size = value.get<std::size_t>();
      else if (key == "batch") base.batch = value.get<std::size_t>();
      else if (key == "blocks") base.blocks = value.get<std::size_t>();
      else if (key == "latent") base.latent = value.get<std::size_t>();
      else if (key == "wavelet_levels") base.wavelet_levels = value.get<std::size_t>();
      else if (key == "eta") base.eta = value.get<double>();
      else if (key == "gan_weight") base.gan_weight = value.get<double>();
      else if (key == "lr") base.lr = value.get<double>();
      else if (key == "lr_halving_period") base.lr_halving_period = value.get<std::size_t>();
      else if (key == "disc_widths") base.disc_widths = value.get<std::array<std::size_t, 3>>();
      else if (key == "mix_init_noise") base.mix_init_noise = value.get<double>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint_every") base.checkpoint_every = value.get<std::size_t>();
      else throw std::invalid_argument("unknown training config key \"" + key + "\"");
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("training config key \"" + key + "\": " + e.what());
    }
  }
  return base;
}

// Step size after `iteration` completed updates: halves every period.
inline double lr_schedule(const TrainConfig& c, std::uint64_t iteration) {
  return c.lr * std::pow(0.5, static_cast<double>(iteration / c.lr_halving_period));
}

// ---------------------------------------------------------------------------
// State

inline constexpr std::uint64_t kGenSeedStream = 1;
inline constexpr std::uint64_t kDiscSeedStream = 2;
inline constexpr std::uint64_t kDataSeedStream = 3;

template <class T>
struct TrainState {
  TrainConfig config;
  GeneratorParams<T> gen;
  DiscriminatorParams<T> disc;
  Adam<T> gen_opt;
  Adam<T> disc_opt;
  std::uint64_t iteration = 0;
  std::uint64_t rollbacks = 0;
  std::mt19937_64 rng;  // batch sampling

  void bind_optimizers() {
    for (auto p : gen.parameters()) p.set_requires_grad(true);
    for (auto p : disc.parameters()) p.set_requires_grad(true);
    gen_opt = Adam<T>(gen.parameters());
    disc_opt = Adam<T>(disc.parameters());
  }
};

inline GeneratorConfig generator_config(const TrainConfig& c) {
  return GeneratorConfig{c.blocks, c.latent, c.wavelet_levels, c.mix_init_noise, derive_seed(c.seed, kGenSeedStream)};
}

template <class T>
TrainState<T> make_train_state(const TrainConfig& cfg) {
  validate(cfg);
  TrainState<T> st;
  st.config = cfg;
  st.gen = make_generator<T>(generator_config(cfg));
  DiscriminatorConfig dc;
  dc.widths = cfg.disc_widths;
  dc.seed = derive_seed(cfg.seed, kDiscSeedStream);
  st.disc = make_discriminator<T>(dc);
  st.rng.seed(derive_seed(cfg.seed, kDataSeedStream));
  st.bind_optimizers();
  return st;
}

// ---------------------------------------------------------------------------
// Losses and inference

// mean |r - G(r)|
template <class T>
Tensor<T> identity_loss(const Tensor<T>& r, const Tensor<T>& g_of_r) {
  return mean(abs(sub(r, g_of_r)));
}

// Denoised image: y minus the noise pattern r - G(r). Only the detail-band
// part of the correction is applied, so the wavelet lowband of y survives
// exactly even though G(r) itself leaks a little into LL.
template <class T>
Tensor<T> denoise(const Tensor<T>& y, GeneratorParams<T>& g) {
  NoGradGuard<T> off;
  const std::size_t J = g.config.wavelet_levels;
  const auto r = wavelet::wavelet_residual(y, J).residual;
  const auto correction = sub(generator_forward(r, g, NormMode::eval), r);
  return add(y, wavelet::wavelet_residual(correction, J).residual);
}

// Synthetic low-dose image from a clean/standard-dose one. The analytic
// inverse gives x - (r - G^-1(r)); restricted to the detail band that is only
// approximately undone by denoise, because G^-1(r) leaks into LL. The detail
// offset d is therefore refined to the fixed point
//   d = -P(G(r + d) - (r + d)),  P = detail-band projection,
// starting from d0 = P(G^-1(r) - r). At the fixed point denoise(x + d) = x.
inline constexpr std::size_t kSynthesisMaxRefinements = 100;

template <class T>
double synthesis_tolerance() {
  return std::is_same_v<T, float> ? 1e-6 : 1e-12;
}

template <class T>
Tensor<T> synthesize_noise(const Tensor<T>& x, GeneratorParams<T>& g) {
  NoGradGuard<T> off;
  const std::size_t J = g.config.wavelet_levels;
  const auto r = wavelet::wavelet_residual(x, J).residual;
  auto detail = [J](const Tensor<T>& t) { return wavelet::wavelet_residual(t, J).residual; };
  auto d = detail(sub(generator_inverse(r, g), r));
  auto best = d;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it <= kSynthesisMaxRefinements; ++it) {
    const auto shifted = add(r, d);
    // e = (target) - (what denoise would subtract back); zero at the fixed point.
    const auto next = scale(detail(sub(generator_forward(shifted, g, NormMode::eval), shifted)), T(-1));
    double err = 0.0;
    auto a = next.data(), b = d.data();
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(static_cast<double>(a[i] - b[i])));
    if (err < best_err) {
      best_err = err;
      best = d;
    }
    if (err <= synthesis_tolerance<T>()) break;
    d = next;
  }
  return add(x, best);
}

// Cycle-consistency term of a two-generator CycleGAN evaluated with the
// inverse pair (G, G^-1): mean|x - G(G^-1 x)| + mean|y - G^-1(G y)|. It is
// not optimized; it stays at round-off level because G^-1 is exact.
template <class T>
double cycle_loss_probe(const Tensor<T>& x, const Tensor<T>& y, GeneratorParams<T>& g) {
  NoGradGuard<T> off;
  const auto a = mean(abs(sub(x, generator_forward(generator_inverse(x, g), g)))).item();
  const auto b = mean(abs(sub(y, generator_inverse(generator_forward(y, g), g)))).item();
  return static_cast<double>(a) + static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// One training iteration

struct StepRecord {
  std::uint64_t iteration = 0;  // 1-based index of the completed update
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_id = 0.0;
  double g_total = 0.0;
  double lr = 0.0;
  bool rolled_back = false;  // a W update was undone (near-singular)
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::uint64_t iteration, const std::string& which, Tensor<double> ld, Tensor<double> sd)
      : std::runtime_error("non-finite " + which + " at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        ld_(std::move(ld)),
        sd_(std::move(sd)) {}
  std::uint64_t iteration() const { return iteration_; }
  const Tensor<double>& low_dose_batch() const { return ld_; }
  const Tensor<double>& standard_dose_batch() const { return sd_; }

 private:
  std::uint64_t iteration_;
  Tensor<double> ld_, sd_;
};

// Random `side` x `side` crops of randomly chosen images, stacked into (B,1,side,side).
template <class T>
Tensor<T> sample_batch(const std::vector<Tensor<T>>& pool, std::size_t batch, std::size_t side, std::mt19937_64& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_batch: empty image pool");
  std::vector<T> out;
  out.reserve(batch * side * side);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& img = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const Shape s = img.shape();
    if (s.h < side || s.w < side) {
      throw ShapeError("training image " + s.str() + " is smaller than image_size " + std::to_string(side));
    }
    const std::size_t y0 = s.h == side ? 0 : std::uniform_int_distribution<std::size_t>(0, s.h - side)(rng);
    const std::size_t x0 = s.w == side ? 0 : std::uniform_int_distribution<std::size_t>(0, s.w - side)(rng);
    auto d = img.data();
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) out.push_back(d[(y0 + i) * s.w + x0 + j]);
  }
  return Tensor<T>(Shape{batch, 1, side, side}, std::move(out));
}

template <class T>
StepRecord train_step(TrainState<T>& st, const Tensor<T>& ld_batch, const Tensor<T>& sd_batch) {
  const auto& cfg = st.config;
  StepRecord rec;
  rec.iteration = st.iteration + 1;
  rec.lr = lr_schedule(cfg, st.iteration);
  auto check = [&](double v, const char* which) {
    if (!std::isfinite(v)) {
      throw NonFiniteLossError(rec.iteration, which, ld_batch.template cast<double>(),
                               sd_batch.template cast<double>());
    }
  };

  const auto r_ld = wavelet::wavelet_residual(ld_batch, cfg.wavelet_levels).residual;
  const auto r_sd = wavelet::wavelet_residual(sd_batch, cfg.wavelet_levels).residual;

  Tape<T> gen_tape;
  TapeGuard<T> gen_guard(gen_tape);
  const auto fake = generator_forward(r_ld, st.gen, NormMode::train);

  {
    Tape<T> disc_tape;
    TapeGuard<T> disc_guard(disc_tape);
    const auto real_scores = discriminate(r_sd, st.disc, NormMode::train);
    const auto fake_scores = discriminate(fake.detach(), st.disc, NormMode::train);
    const auto d_loss = lsgan_d_loss(real_scores, fake_scores);
    rec.d_loss = static_cast<double>(d_loss.item());
    check(rec.d_loss, "discriminator loss");
    st.disc_opt.zero_grad();
    disc_tape.backward(d_loss);
    st.disc_opt.step(rec.lr);
  }

  const auto g_adv = lsgan_g_loss(discriminate(fake, st.disc, NormMode::train));
  const auto g_id = identity_loss(r_ld, fake);
  const auto total = add(scale(g_adv, static_cast<T>(cfg.gan_weight)), scale(g_id, static_cast<T>(cfg.eta)));
  rec.g_adv = static_cast<double>(g_adv.item());
  rec.g_id = static_cast<double>(g_id.item());
  rec.g_total = static_cast<double>(total.item());
  check(rec.g_total, "generator loss");
  st.gen_opt.zero_grad();
  gen_tape.backward(total);

  std::vector<std::vector<T>> saved_w;
  for (const auto& b : st.gen.blocks) saved_w.emplace_back(b.mix.weight.data().begin(), b.mix.weight.data().end());
  st.gen_opt.step(rec.lr);
  for (std::size_t i = 0; i < st.gen.blocks.size(); ++i) {
    auto& b = st.gen.blocks[i];
    const double det = b.mix.determinant();
    if (!(std::abs(det) >= kMinAbsDeterminant)) {
      std::copy(saved_w[i].begin(), saved_w[i].end(), b.mix.weight.mutable_data().begin());
      rec.rolled_back = true;
    }
  }
  if (rec.rolled_back) ++st.rollbacks;
  // Discriminator parameters also received gradients through the generator loss.
  st.disc_opt.zero_grad();
  st.iteration += 1;
  return rec;
}

// Runs until st.iteration == st.config.iterations.
template <class T>
void train(TrainState<T>& st, const std::vector<Tensor<T>>& ld_pool, const std::vector<Tensor<T>>& sd_pool,
           const std::function<void(const StepRecord&)>& on_step = {},
           const std::function<void(const TrainState<T>&)>& on_checkpoint = {}) {
  const auto& cfg = st.config;
  while (st.iteration < cfg.iterations) {
    const auto ld = sample_batch(ld_pool, cfg.batch, cfg.image_size, st.rng);
    const auto sd = sample_batch(sd_pool, cfg.batch, cfg.image_size, st.rng);
    const auto rec = train_step(st, ld, sd);
    if (on_step) on_step(rec);
    if (on_checkpoint && cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) on_checkpoint(st);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CFCG" u32 version u32 dtype u64 iteration u64 rollbacks string(config JSON)
//   then sections GEN, DSC, OPT, RNG, each string(tag) u64 length payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_spectral(std::ostream& os, const SpectralNormState<T>& s) {
  io::write_vector(os, s.u);
  io::write_vector(os, s.v);
  io::write_scalar<T>(os, s.sigma);
}

template <class T>
SpectralNormState<T> read_spectral(std::istream& is, DType stored) {
  SpectralNormState<T> s;
  s.u = io::read_vector_as<T>(is, stored);
  s.v = io::read_vector_as<T>(is, stored);
  s.sigma = io::read_scalar_as<T>(is, stored);
  return s;
}

template <class T>
void write_generator(std::ostream& os, const GeneratorParams<T>& g) {
  io::write_le<std::uint64_t>(os, g.blocks.size());
  io::write_le<std::uint64_t>(os, g.config.wavelet_levels);
  io::write_le<std::uint64_t>(os, g.config.latent);
  for (const auto& b : g.blocks) {
    write_tensor(os, b.mix.weight);
    for (const auto& n : b.nets) {
      for (const auto& p : n.parameters()) write_tensor(os, p);
      write_spectral(os, n.sn1);
      write_spectral(os, n.sn2);
    }
  }
}

template <class T>
void expect_shape(const Tensor<T>& t, const Shape& s, const char* what) {
  if (!(t.shape() == s)) throw FormatError(std::string(what) + ": stored shape " + t.shape().str() + ", expected " + s.str());
}

template <class T>
GeneratorParams<T> read_generator(std::istream& is, GeneratorConfig cfg, DType stored) {
  const auto L = io::read_le<std::uint64_t>(is);
  const auto J = io::read_le<std::uint64_t>(is);
  const auto c = io::read_le<std::uint64_t>(is);
  if (L != cfg.blocks || J != cfg.wavelet_levels || c != cfg.latent) {
    throw FormatError("generator section disagrees with the stored config (L, J, c)");
  }
  GeneratorParams<T> g;
  g.config = cfg;
  for (std::size_t b = 0; b < L; ++b) {
    InvertibleBlock<T> block;
    block.mix.weight = read_tensor<T>(is);
    expect_shape(block.mix.weight, Shape{1, 1, 4, 4}, "W");
    for (auto& n : block.nets) {
      n.w1 = read_tensor<T>(is);
      n.b1 = read_tensor<T>(is);
      n.w2 = read_tensor<T>(is);
      n.b2 = read_tensor<T>(is);
      n.w3 = read_tensor<T>(is);
      n.b3 = read_tensor<T>(is);
      expect_shape(n.w1, Shape{c, 3, 3, 3}, "coupling w1");
      expect_shape(n.w2, Shape{c, c, 1, 1}, "coupling w2");
      expect_shape(n.w3, Shape{1, c, 3, 3}, "coupling w3");
      n.sn1 = read_spectral<T>(is, stored);
      n.sn2 = read_spectral<T>(is, stored);
    }
    g.blocks.push_back(std::move(block));
  }
  return g;
}

template <class T>
void write_discriminator(std::ostream& os, const DiscriminatorParams<T>& d) {
  for (auto w : d.config.widths) io::write_le<std::uint64_t>(os, w);
  io::write_le<std::uint64_t>(os, d.config.kernel);
  io::write_le<std::uint64_t>(os, d.config.pad);
  for (const auto& p : d.parameters()) write_tensor(os, p);
  for (const auto& s : d.bn_state) {
    io::write_vector(os, s.running_mean);
    io::write_vector(os, s.running_var);
  }
}

template <class T>
DiscriminatorParams<T> read_discriminator(std::istream& is, const std::array<std::size_t, 3>& widths, DType stored) {
  DiscriminatorConfig dc;
  for (auto& w : dc.widths) w = io::read_le<std::uint64_t>(is);
  dc.kernel = io::read_le<std::uint64_t>(is);
  dc.pad = io::read_le<std::uint64_t>(is);
  if (dc.widths != widths) throw FormatError("discriminator section disagrees with the stored config widths");
  dc.init_std = 0.0;
  auto d = make_discriminator<T>(dc);
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape ws = d.weight[i].shape(), bs = d.bias[i].shape();
    d.weight[i] = read_tensor<T>(is);
    d.bias[i] = read_tensor<T>(is);
    expect_shape(d.weight[i], ws, "discriminator weight");
    expect_shape(d.bias[i], bs, "discriminator bias");
    if (i == 1 || i == 2) {
      const Shape gs = d.bn_gamma[i - 1].shape();
      d.bn_gamma[i - 1] = read_tensor<T>(is);
      d.bn_beta[i - 1] = read_tensor<T>(is);
      expect_shape(d.bn_gamma[i - 1], gs, "batch-norm gamma");
      expect_shape(d.bn_beta[i - 1], gs, "batch-norm beta");
    }
  }
  for (auto& s : d.bn_state) {
    s.running_mean = io::read_vector_as<T>(is, stored);
    s.running_var = io::read_vector_as<T>(is, stored);
  }
  return d;
}

template <class T>
void write_adam(std::ostream& os, const Adam<T>& opt) {
  io::write_le<std::uint64_t>(os, opt.states().size());
  for (const auto& s : opt.states()) {
    io::write_le<std::uint64_t>(os, s.step);
    io::write_vector(os, s.m);
    io::write_vector(os, s.v);
  }
}

template <class T>
void read_adam(std::istream& is, Adam<T>& opt, DType stored) {
  const auto n = io::read_le<std::uint64_t>(is);
  if (n != opt.states().size()) throw FormatError("optimizer section has the wrong number of parameter slots");
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = opt.states()[i];
    s.step = io::read_le<std::uint64_t>(is);
    s.m = io::read_vector_as<T>(is, stored);
    s.v = io::read_vector_as<T>(is, stored);
    if (s.m.size() != opt.params()[i].numel() || s.v.size() != opt.params()[i].numel()) {
      throw FormatError("optimizer moment size mismatch");
    }
  }
}

inline void write_section(std::ostream& os, const std::string& tag, const std::string& payload) {
  io::write_string(os, tag);
  io::write_string(os, payload);
}

inline std::istringstream read_section(std::istream& is, const std::string& tag) {
  const auto got = io::read_string(is, 16);
  if (got != tag) throw FormatError("expected checkpoint section " + tag + ", found \"" + got + "\"");
  return std::istringstream(io::read_string(is));
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, const TrainState<T>& st) {
  os.write("CFCG", 4);
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dtype_of<T>()));
  io::write_le<std::uint64_t>(os, st.iteration);
  io::write_le<std::uint64_t>(os, st.rollbacks);
  io::write_string(os, to_json(st.config).dump());
  std::ostringstream gen, dsc, opt, rng;
  detail::write_generator(gen, st.gen);
  detail::write_discriminator(dsc, st.disc);
  detail::write_adam(opt, st.gen_opt);
  detail::write_adam(opt, st.disc_opt);
  rng << st.rng;
  detail::write_section(os, "GEN", gen.str());
  detail::write_section(os, "DSC", dsc.str());
  detail::write_section(os, "OPT", opt.str());
  detail::write_section(os, "RNG", rng.str());
}

// Reads a checkpoint written in either precision and converts it to T.
template <class T>
TrainState<T> read_checkpoint(std::istream& is) {
  io::expect_magic(is, "CFCG");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto dtype = static_cast<DType>(io::read_le<std::uint32_t>(is));
  if (dtype != DType::f32 && dtype != DType::f64) throw FormatError("unknown checkpoint dtype");
  TrainState<T> st;
  st.iteration = io::read_le<std::uint64_t>(is);
  st.rollbacks = io::read_le<std::uint64_t>(is);
  try {
    st.config = train_config_from_json(nlohmann::json::parse(io::read_string(is, 1 << 20)), TrainConfig{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  auto gen = detail::read_section(is, "GEN");
  st.gen = detail::read_generator<T>(gen, generator_config(st.config), dtype);
  auto dsc = detail::read_section(is, "DSC");
  st.disc = detail::read_discriminator<T>(dsc, st.config.disc_widths, dtype);
  st.bind_optimizers();
  auto opt = detail::read_section(is, "OPT");
  detail::read_adam(opt, st.gen_opt, dtype);
  detail::read_adam(opt, st.disc_opt, dtype);
  auto rng = detail::read_section(is, "RNG");
  rng >> st.rng;
  if (!rng) throw FormatError("corrupt RNG section");
  return st;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& st) {
  // Write-then-rename so an interrupted save never leaves a truncated file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp.string());
    write_checkpoint(os, st);
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_checkpoint<T>(is);
}

}  // namespace cfcg
