#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrlab/dataset.hpp"
#include "lrlab/linalg.hpp"
#include "lrlab/local_rank.hpp"
#include "lrlab/mlp.hpp"
#include "lrlab/rng.hpp"

namespace lrlab {

enum class DecoderKind {
  UnitGaussian,  // linear decoder, fixed unit output variance
  Softmax,       // logits, categorical likelihood
};

std::string to_string(DecoderKind kind);

struct VibArchitecture {
  std::vector<std::size_t> trunk_sizes;  // input dim first, trunk output last
  Activation trunk_activation = Activation::Identity;
  std::size_t latent_dim = 1;
  std::size_t output_dim = 1;
  DecoderKind decoder = DecoderKind::UnitGaussian;
  double initial_logvar = 0.0;  // starting bias of every logvar head unit

  void validate() const;

  /// Deep linear 5 -> 5 -> 5 trunk, latent 5, unit-variance linear decoder to 5 outputs.
  /// Posteriors start narrow (logvar -6): with unit initial noise the decoder
  /// learns the weakest signal directions too slowly to keep them alive.
  static VibArchitecture gaussian_five_dim();
  /// 784 -> 256 -> 256 ReLU trunk, latent 32, softmax decoder over `classes`.
  static VibArchitecture image(std::size_t input_dim = 784, std::size_t classes = 10);
};

/// Stochastic encoder z ~ N(mean_head(h), diag exp(logvar_head(h))), h = trunk(x),
/// followed by a decoder from z to the prediction.
struct VibModel {
  MlpParams trunk;
  MlpParams mean_head;    // single affine layer
  MlpParams logvar_head;  // single affine layer
  MlpParams decoder;
  double beta = 1.0;
  DecoderKind decoder_kind = DecoderKind::UnitGaussian;

  std::size_t input_dim() const { return trunk.input_dim(); }
  std::size_t latent_dim() const { return mean_head.output_dim(); }
  void validate() const;

  /// trunk followed by mean_head as one network (the encoder mean map).
  MlpParams mean_map() const;
  MlpParams logvar_map() const;

  friend bool operator==(const VibModel&, const VibModel&) = default;
};

/// He-normal trunk, mean head and decoder; the logvar head starts at one tenth
/// of that scale with biases at arch.initial_logvar.
VibModel init_vib(const VibArchitecture& arch, double beta, std::uint64_t seed);

/// mean + exp(logvar / 2) * noise, elementwise.
Vector reparameterize(std::span<const double> mean, std::span<const double> logvar, std::span<const double> noise);

/// KL(N(mean, diag exp(logvar)) || N(0, I)).
double kl_to_standard_normal(std::span<const double> mean, std::span<const double> logvar);

struct VibLoss {
  double total = 0.0;            // kl_term + beta * prediction_term
  double prediction_term = 0.0;  // batch-mean negative log-likelihood
  double kl_term = 0.0;          // batch-mean KL
  VibModel grads;                // d(total)/d(parameters); beta and kind copied from the model
};

/// Loss and exact gradients for a fixed noise draw (one row per sample, latent_dim columns).
VibLoss vib_loss(const VibModel& model, const Matrix& batch_x, const Targets& batch_y, const Matrix& noise);

/// Draws one standard normal noise vector per sample from `rng`.
VibLoss vib_loss(const VibModel& model, const Matrix& batch_x, const Targets& batch_y, Rng& rng);

struct VibTrainConfig {
  std::uint64_t steps = 20000;
  std::size_t batch_size = 100;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Exponential decay: the rate at step t is learning_rate * lr_decay^(t / lr_decay_steps).
  double lr_decay = 1.0;
  std::uint64_t lr_decay_steps = 1000;

  void validate() const;
  double rate_at(std::uint64_t step) const;
};

using VibStepObserver = std::function<void(std::uint64_t step, const VibLoss& loss)>;

/// Adam on total / beta for a fixed number of steps. Minibatches cycle through
/// shuffled epochs; noise and shuffles derive from `seed`.
void train_vib(VibModel& model, const Dataset& data, const VibTrainConfig& config, std::uint64_t seed,
               const VibStepObserver& observer = {});

enum class EncoderRankMode {
  Absolute,       // singular values of J_mean > eps
  Relative,       // singular values of J_mean > eps * sigma_max(J_mean)
  NoiseWhitened,  // singular values of diag(exp(-logvar / 2)) J_mean > eps
};

std::string to_string(EncoderRankMode mode);
EncoderRankMode encoder_rank_mode_from_string(const std::string& text);

/// Jacobian of the encoder mean map at x (latent_dim x input_dim).
Matrix encoder_jacobian(const VibModel& model, std::span<const double> x);
/// Same Jacobian with row j divided by the posterior standard deviation exp(logvar_j / 2).
Matrix whitened_encoder_jacobian(const VibModel& model, std::span<const double> x);

RankEstimate encoder_local_rank(const VibModel& model, const Matrix& sample, double eps,
                                EncoderRankMode mode = EncoderRankMode::NoiseWhitened, std::size_t threads = 1);

struct VibEvaluation {
  double kl_term = 0.0;
  double prediction_term = 0.0;
  double accuracy_or_mse = 0.0;  // accuracy for Softmax, per-entry MSE for UnitGaussian
};

/// KL and NLL with one noise draw from `seed`; accuracy/MSE from the decoder at the posterior mean.
VibEvaluation evaluate_vib(const VibModel& model, const Dataset& data, std::uint64_t seed);

struct SweepRecord {
  double beta = 0.0;
  double kl_term = 0.0;
  double prediction_term = 0.0;
  double accuracy_or_mse = 0.0;
  RankEstimate encoder_local_rank;  // measured in SweepConfig::rank_mode
  RankEstimate absolute_rank;       // raw mean-map Jacobian, absolute eps
};

struct SweepConfig {
  VibArchitecture architecture;
  VibTrainConfig train;
  std::uint64_t seed = 0;
  double rank_eps = 1e-2;
  EncoderRankMode rank_mode = EncoderRankMode::NoiseWhitened;
  std::size_t threads = 1;
};

using SweepObserver = std::function<void(std::size_t index, const SweepRecord& record)>;

/// One VIB per beta, all from the same initial parameters. Point i trains with
/// seed ^ i. The observer sees records in grid order regardless of which worker
/// finishes first.
std::vector<SweepRecord> beta_sweep(const Dataset& train, const Dataset& eval, const Matrix& rank_sample,
                                    const std::vector<double>& beta_grid, const SweepConfig& config,
                                    const SweepObserver& observer = {});

inline constexpr const char* kSweepHeader = "beta,kl_term,prediction_term,accuracy_or_mse,mean_rank,std_rank";
std::string sweep_csv_row(const SweepRecord& record);
std::string sweep_csv(const std::vector<SweepRecord>& records);

}  // namespace lrlab
