#include "lrlab/vib.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <optional>

#include "lrlab/data.hpp"
#include "lrlab/io.hpp"

namespace lrlab {

namespace {

MlpParams single_layer(std::size_t in, std::size_t out, double scale, Rng& rng) {
  MlpParams p;
  Matrix w(out, in);
  const double s = scale * std::sqrt(2.0 / static_cast<double>(in));
  for (double& x : w.data()) x = s * rng.normal();
  p.weights.push_back(std::move(w));
  p.biases.emplace_back(out, 0.0);
  p.activations.push_back(Activation::Identity);
  return p;
}

// Nearest matrix with orthonormal rows or columns (U V^T of the SVD).
Matrix semi_orthogonal(const Matrix& a) {
  const SvdResult d = svd(a);
  return multiply_transposed(d.left_vectors, d.right_vectors);
}

MlpParams concat(const MlpParams& a, const MlpParams& b) {
  MlpParams c = a;
  c.weights.insert(c.weights.end(), b.weights.begin(), b.weights.end());
  c.biases.insert(c.biases.end(), b.biases.begin(), b.biases.end());
  c.activations.insert(c.activations.end(), b.activations.begin(), b.activations.end());
  return c;
}

TrainConfig adam_config(const VibTrainConfig& c) {
  TrainConfig t;
  t.learning_rate = c.learning_rate;
  t.adam_beta1 = c.adam_beta1;
  t.adam_beta2 = c.adam_beta2;
  t.adam_eps = c.adam_eps;
  return t;
}

void scale_in_place(MlpParams& p, double s) {
  for (auto& w : p.weights)
    for (double& x : w.data()) x *= s;
  for (auto& b : p.biases)
    for (double& x : b) x *= s;
}

constexpr std::uint64_t kNoiseSalt = 0x4E015E;
constexpr std::uint64_t kShuffleSalt = 0x5AFF1E;
constexpr std::uint64_t kEvalSalt = 0xE7A1;

}  // namespace

std::string to_string(DecoderKind kind) { return kind == DecoderKind::Softmax ? "softmax" : "unit-gaussian"; }

void VibArchitecture::validate() const {
  if (trunk_sizes.size() < 2) throw std::invalid_argument("vib: trunk needs an input and at least one layer");
  for (std::size_t s : trunk_sizes)
    if (s == 0) throw std::invalid_argument("vib: trunk sizes must be positive");
  if (latent_dim == 0) throw std::invalid_argument("vib: latent dim must be >= 1");
  if (output_dim == 0) throw std::invalid_argument("vib: output dim must be >= 1");
  if (decoder == DecoderKind::Softmax && output_dim < 2) throw std::invalid_argument("vib: softmax needs >= 2 classes");
  if (!std::isfinite(initial_logvar)) throw std::invalid_argument("vib: initial logvar must be finite");
}

VibArchitecture VibArchitecture::gaussian_five_dim() {
  return {{5, 5, 5}, Activation::Identity, 5, 5, DecoderKind::UnitGaussian, -6.0};
}

VibArchitecture VibArchitecture::image(std::size_t input_dim, std::size_t classes) {
  return {{input_dim, 256, 256}, Activation::ReLU, 32, classes, DecoderKind::Softmax};
}

void VibModel::validate() const {
  trunk.validate();
  mean_head.validate();
  logvar_head.validate();
  decoder.validate();
  if (mean_head.layer_count() != 1 || logvar_head.layer_count() != 1)
    throw std::invalid_argument("vib: heads must be single affine layers");
  if (mean_head.input_dim() != trunk.output_dim() || logvar_head.input_dim() != trunk.output_dim())
    throw std::invalid_argument("vib: heads must read the trunk output");
  if (mean_head.output_dim() != logvar_head.output_dim())
    throw std::invalid_argument("vib: mean and logvar heads differ in latent dim");
  if (decoder.input_dim() != latent_dim()) throw std::invalid_argument("vib: decoder input != latent dim");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("vib: beta must be positive and finite");
}

MlpParams VibModel::mean_map() const { return concat(trunk, mean_head); }
MlpParams VibModel::logvar_map() const { return concat(trunk, logvar_head); }

VibModel init_vib(const VibArchitecture& arch, double beta, std::uint64_t seed) {
  arch.validate();
  VibModel m;
  m.trunk = init_mlp(arch.trunk_sizes, Rng::derive(seed, 1));
  std::fill(m.trunk.activations.begin(), m.trunk.activations.end(), arch.trunk_activation);
  const std::size_t h = arch.trunk_sizes.back();
  Rng heads(Rng::derive(seed, 2));
  m.mean_head = single_layer(h, arch.latent_dim, 1.0, heads);
  m.logvar_head = single_layer(h, arch.latent_dim, 0.1, heads);
  std::fill(m.logvar_head.biases[0].begin(), m.logvar_head.biases[0].end(), arch.initial_logvar);
  Rng dec(Rng::derive(seed, 3));
  m.decoder = single_layer(arch.latent_dim, arch.output_dim, 1.0, dec);
  if (arch.trunk_activation == Activation::Identity) {
    // Random square Gaussian factors are badly conditioned, and in a deep
    // linear encoder a near-zero singular direction is a saddle that the
    // weakest signal directions rarely escape. Start those layers orthogonal.
    for (auto& w : m.trunk.weights) w = semi_orthogonal(w);
    m.mean_head.weights[0] = semi_orthogonal(m.mean_head.weights[0]);
    m.decoder.weights[0] = semi_orthogonal(m.decoder.weights[0]);
  }
  m.beta = beta;
  m.decoder_kind = arch.decoder;
  m.validate();
  return m;
}

Vector reparameterize(std::span<const double> mean, std::span<const double> logvar, std::span<const double> noise) {
  if (mean.size() != logvar.size() || mean.size() != noise.size())
    throw std::invalid_argument("reparameterize: dimension mismatch");
  Vector z(mean.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = mean[j] + std::exp(0.5 * logvar[j]) * noise[j];
  return z;
}

double kl_to_standard_normal(std::span<const double> mean, std::span<const double> logvar) {
  if (mean.size() != logvar.size()) throw std::invalid_argument("kl_to_standard_normal: dimension mismatch");
  double kl = 0.0;
  // expm1(l) - l keeps precision when the variance is near one.
  for (std::size_t j = 0; j < mean.size(); ++j) kl += mean[j] * mean[j] + (std::expm1(logvar[j]) - logvar[j]);
  return std::max(0.0, 0.5 * kl);
}

VibLoss vib_loss(const VibModel& model, const Matrix& batch_x, const Targets& batch_y, const Matrix& noise) {
  const std::size_t batch = batch_x.rows();
  if (batch == 0) throw std::invalid_argument("vib_loss: empty batch");
  const std::size_t d = model.latent_dim();
  if (noise.rows() != batch || noise.cols() != d) throw std::invalid_argument("vib_loss: noise shape mismatch");

  BatchCache trunk_cache, mean_cache, logvar_cache, dec_cache;
  const Matrix h = forward_batch(model.trunk, batch_x, &trunk_cache);
  const Matrix mu = forward_batch(model.mean_head, h, &mean_cache);
  const Matrix lv = forward_batch(model.logvar_head, h, &logvar_cache);
  Matrix z(batch, d);
  Matrix sd(batch, d);
  for (std::size_t i = 0; i < z.size(); ++i) {
    sd.data()[i] = std::exp(0.5 * lv.data()[i]);
    z.data()[i] = mu.data()[i] + sd.data()[i] * noise.data()[i];
  }
  const Matrix out = forward_batch(model.decoder, z, &dec_cache);

  VibLoss r;
  const double inv_b = 1.0 / static_cast<double>(batch);
  Matrix d_out(batch, out.cols());
  if (model.decoder_kind == DecoderKind::UnitGaussian) {
    const auto* y = std::get_if<Matrix>(&batch_y);
    if (y == nullptr || y->rows() != batch || y->cols() != out.cols())
      throw std::invalid_argument("vib_loss: Gaussian decoder needs real targets matching the output");
    const double log_norm = 0.5 * static_cast<double>(out.cols()) * std::log(2.0 * std::numbers::pi);
    double sq = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double res = out.data()[i] - y->data()[i];
      sq += res * res;
      d_out.data()[i] = model.beta * res * inv_b;
    }
    r.prediction_term = 0.5 * sq * inv_b + log_norm;
  } else {
    r.prediction_term = output_loss(out, batch_y, LossKind::SoftmaxCrossEntropy, &d_out);
    for (double& v : d_out.data()) v *= model.beta;
  }

  double kl = 0.0;
  for (std::size_t b = 0; b < batch; ++b) kl += kl_to_standard_normal(mu.row(b), lv.row(b));
  r.kl_term = kl * inv_b;
  r.total = r.kl_term + model.beta * r.prediction_term;

  Matrix d_z;
  r.grads.decoder = backward_batch(model.decoder, dec_cache, d_out, &d_z);
  Matrix d_mu(batch, d);
  Matrix d_lv(batch, d);
  for (std::size_t i = 0; i < d_z.size(); ++i) {
    const double m = mu.data()[i];
    const double l = lv.data()[i];
    d_mu.data()[i] = d_z.data()[i] + m * inv_b;
    d_lv.data()[i] = 0.5 * d_z.data()[i] * noise.data()[i] * sd.data()[i] + 0.5 * std::expm1(l) * inv_b;
  }
  Matrix d_h_mean, d_h_logvar;
  r.grads.mean_head = backward_batch(model.mean_head, mean_cache, d_mu, &d_h_mean);
  r.grads.logvar_head = backward_batch(model.logvar_head, logvar_cache, d_lv, &d_h_logvar);
  r.grads.trunk = backward_batch(model.trunk, trunk_cache, d_h_mean + d_h_logvar);
  r.grads.beta = model.beta;
  r.grads.decoder_kind = model.decoder_kind;
  return r;
}

VibLoss vib_loss(const VibModel& model, const Matrix& batch_x, const Targets& batch_y, Rng& rng) {
  Matrix noise(batch_x.rows(), model.latent_dim());
  rng.fill_normal(noise.data());
  return vib_loss(model, batch_x, batch_y, noise);
}

void VibTrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("vib: batch size must be positive");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("vib: learning rate must be nonnegative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("vib: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("vib: Adam eps must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("vib: lr_decay must lie in (0, 1]");
  if (lr_decay_steps == 0) throw std::invalid_argument("vib: lr_decay_steps must be positive");
}

double VibTrainConfig::rate_at(std::uint64_t step) const {
  if (lr_decay == 1.0) return learning_rate;
  return learning_rate * std::pow(lr_decay, static_cast<double>(step) / static_cast<double>(lr_decay_steps));
}

void train_vib(VibModel& model, const Dataset& data, const VibTrainConfig& config, std::uint64_t seed,
               const VibStepObserver& observer) {
  config.validate();
  model.validate();
  if (data.size() == 0) throw std::invalid_argument("train_vib: empty dataset");
  if (data.input_dim() != model.input_dim()) throw std::invalid_argument("train_vib: dataset/encoder input mismatch");
  const bool wants_labels = model.decoder_kind == DecoderKind::Softmax;
  if (wants_labels != (data.kind == TaskKind::Classification))
    throw std::invalid_argument("train_vib: decoder kind does not match dataset kind");

  TrainConfig adam = adam_config(config);
  AdamState s_trunk = AdamState::fresh(model.trunk);
  AdamState s_mean = AdamState::fresh(model.mean_head);
  AdamState s_logvar = AdamState::fresh(model.logvar_head);
  AdamState s_dec = AdamState::fresh(model.decoder);
  Rng noise_rng(Rng::derive(seed, kNoiseSalt));
  const std::uint64_t shuffle_seed = Rng::derive(seed, kShuffleSalt);
  const double inv_beta = 1.0 / model.beta;

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; step < config.steps; ++epoch) {
    for (const auto& batch : batches(data.size(), config.batch_size, shuffle_seed, epoch)) {
      if (step >= config.steps) break;
      const Matrix x = gather_rows(data.inputs, batch);
      const Targets y = gather_targets(data, batch);
      VibLoss loss = vib_loss(model, x, y, noise_rng);
      adam.learning_rate = config.rate_at(step);
      scale_in_place(loss.grads.trunk, inv_beta);
      scale_in_place(loss.grads.mean_head, inv_beta);
      scale_in_place(loss.grads.logvar_head, inv_beta);
      scale_in_place(loss.grads.decoder, inv_beta);
      adam_step(model.trunk, loss.grads.trunk, s_trunk, adam);
      adam_step(model.mean_head, loss.grads.mean_head, s_mean, adam);
      adam_step(model.logvar_head, loss.grads.logvar_head, s_logvar, adam);
      adam_step(model.decoder, loss.grads.decoder, s_dec, adam);
      ++step;
      if (observer) observer(step, loss);
    }
  }
}

std::string to_string(EncoderRankMode mode) {
  switch (mode) {
    case EncoderRankMode::Absolute: return "absolute";
    case EncoderRankMode::Relative: return "relative";
    case EncoderRankMode::NoiseWhitened: return "noise-whitened";
  }
  return "?";
}

EncoderRankMode encoder_rank_mode_from_string(const std::string& text) {
  if (text == "absolute") return EncoderRankMode::Absolute;
  if (text == "relative") return EncoderRankMode::Relative;
  if (text == "noise-whitened") return EncoderRankMode::NoiseWhitened;
  throw std::invalid_argument("unknown encoder rank mode '" + text + "' (expected absolute|relative|noise-whitened)");
}

Matrix encoder_jacobian(const VibModel& model, std::span<const double> x) {
  return output_jacobian(model.mean_map(), x);
}

Matrix whitened_encoder_jacobian(const VibModel& model, std::span<const double> x) {
  Matrix j = encoder_jacobian(model, x);
  const Vector lv = forward(model.logvar_map(), x).output();
  for (std::size_t r = 0; r < j.rows(); ++r) {
    const double s = std::exp(-0.5 * lv[r]);
    for (double& v : j.row(r)) v *= s;
  }
  return j;
}

RankEstimate encoder_local_rank(const VibModel& model, const Matrix& sample, double eps, EncoderRankMode mode,
                                std::size_t threads) {
  if (sample.rows() == 0) throw std::invalid_argument("encoder_local_rank: empty sample");
  if (!(eps > 0.0)) throw std::invalid_argument("encoder_local_rank: eps must be positive");
  if (sample.cols() != model.input_dim()) throw std::invalid_argument("encoder_local_rank: sample width mismatch");
  const MlpParams mean_map = model.mean_map();
  const MlpParams logvar_map = model.logvar_map();
  std::vector<std::size_t> ranks(sample.rows());
  parallel_for(sample.rows(), threads, [&](std::size_t i) {
    Matrix j = output_jacobian(mean_map, sample.row(i));
    if (mode == EncoderRankMode::NoiseWhitened) {
      const Vector lv = forward(logvar_map, sample.row(i)).output();
      for (std::size_t r = 0; r < j.rows(); ++r) {
        const double s = std::exp(-0.5 * lv[r]);
        for (double& v : j.row(r)) v *= s;
      }
    }
    ranks[i] = epsilon_rank_fast(j, eps, mode == EncoderRankMode::Relative);
  });
  return summarize_ranks(mean_map.layer_count(), eps, std::move(ranks));
}

VibEvaluation evaluate_vib(const VibModel& model, const Dataset& data, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_vib: empty dataset");
  VibEvaluation e;
  const std::size_t chunk = 1000;
  Rng rng(Rng::derive(seed, kEvalSalt));
  double kl = 0.0, nll = 0.0, metric = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t count = std::min(chunk, data.size() - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    const Matrix x = gather_rows(data.inputs, idx);
    const Targets y = gather_targets(data, idx);
    const VibLoss l = vib_loss(model, x, y, rng);
    kl += l.kl_term * static_cast<double>(count);
    nll += l.prediction_term * static_cast<double>(count);

    const Matrix mu = forward_batch(model.mean_map(), x);
    const Matrix out = forward_batch(model.decoder, mu);
    if (model.decoder_kind == DecoderKind::Softmax) {
      const auto& labels = std::get<std::vector<std::uint32_t>>(y);
      for (std::size_t b = 0; b < count; ++b) {
        auto row = out.row(b);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == labels[b]) metric += 1.0;
      }
    } else {
      const auto& t = std::get<Matrix>(y);
      double sq = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) sq += (out.data()[i] - t.data()[i]) * (out.data()[i] - t.data()[i]);
      metric += sq / static_cast<double>(out.cols());
    }
  }
  const double n = static_cast<double>(data.size());
  e.kl_term = kl / n;
  e.prediction_term = nll / n;
  e.accuracy_or_mse = metric / n;
  return e;
}

std::vector<SweepRecord> beta_sweep(const Dataset& train, const Dataset& eval, const Matrix& rank_sample,
                                    const std::vector<double>& beta_grid, const SweepConfig& config,
                                    const SweepObserver& observer) {
  if (beta_grid.empty()) throw std::invalid_argument("beta_sweep: empty beta grid");
  for (std::size_t i = 0; i < beta_grid.size(); ++i) {
    if (!(beta_grid[i] > 0.0) || !std::isfinite(beta_grid[i]))
      throw std::invalid_argument("beta_sweep: betas must be positive and finite");
    if (i > 0 && !(beta_grid[i] > beta_grid[i - 1])) throw std::invalid_argument("beta_sweep: grid must ascend");
  }
  config.architecture.validate();
  config.train.validate();
  const VibModel initial = init_vib(config.architecture, beta_grid.front(), config.seed);

  std::vector<std::optional<SweepRecord>> slots(beta_grid.size());
  std::mutex emit_mutex;
  std::size_t next_emit = 0;

  const std::size_t workers = std::max<std::size_t>(1, config.threads);
  // Threads go to the beta points; a single point gets them for rank evaluation.
  const std::size_t rank_threads = beta_grid.size() == 1 ? workers : 1;
  parallel_for(beta_grid.size(), workers, [&](std::size_t i) {
    VibModel model = initial;
    model.beta = beta_grid[i];
    const std::uint64_t job_seed = config.seed ^ static_cast<std::uint64_t>(i);
    train_vib(model, train, config.train, job_seed);
    SweepRecord rec;
    rec.beta = beta_grid[i];
    const VibEvaluation ev = evaluate_vib(model, eval, job_seed);
    rec.kl_term = ev.kl_term;
    rec.prediction_term = ev.prediction_term;
    rec.accuracy_or_mse = ev.accuracy_or_mse;
    rec.encoder_local_rank = encoder_local_rank(model, rank_sample, config.rank_eps, config.rank_mode, rank_threads);
    rec.absolute_rank = encoder_local_rank(model, rank_sample, config.rank_eps, EncoderRankMode::Absolute, rank_threads);

    std::lock_guard lock(emit_mutex);
    slots[i] = std::move(rec);
    while (next_emit < slots.size() && slots[next_emit]) {
      if (observer) observer(next_emit, *slots[next_emit]);
      ++next_emit;
    }
  });

  std::vector<SweepRecord> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string sweep_csv_row(const SweepRecord& r) {
  return format_real(r.beta) + "," + format_real(r.kl_term) + "," + format_real(r.prediction_term) + "," +
         format_real(r.accuracy_or_mse) + "," + format_real(r.encoder_local_rank.mean_rank) + "," +
         format_real(r.encoder_local_rank.std_rank) + "\n";
}

std::string sweep_csv(const std::vector<SweepRecord>& records) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : records) out += sweep_csv_row(r);
  return out;
}

}  // namespace lrlab
