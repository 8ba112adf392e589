#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "lrlab/dataset.hpp"
#include "lrlab/linalg.hpp"

namespace lrlab {

enum class Activation : std::uint8_t { ReLU, Identity };

/// Weights W_l (n_l x n_{l-1}), biases b_l and one activation per layer.
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Activation> activations;

  std::size_t layer_count() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return weights.front().cols(); }
  std::size_t output_dim() const { return weights.back().rows(); }
  std::vector<std::size_t> layer_sizes() const;
  std::size_t parameter_count() const;

  /// Checks dimension chaining and bias lengths.
  void validate() const;

  /// Same shapes, every entry zero.
  MlpParams zeros_like() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct ForwardTrace {
  Vector input;
  std::vector<Vector> pre_activations;  // p_l
  std::vector<Vector> activations;      // h_l
  std::vector<std::vector<std::uint8_t>> relu_masks;  // 1 iff p_l > 0 (all ones for Identity layers)

  const Vector& output() const { return activations.back(); }
};

enum class LossKind { MeanSquaredError, SoftmaxCrossEntropy };

/// Regression targets (one row per sample) or class indices.
using Targets = std::variant<Matrix, std::vector<std::uint32_t>>;

struct TrainConfig {
  std::vector<std::size_t> layer_sizes;
  LossKind loss = LossKind::MeanSquaredError;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, weights only
  bool use_bias = true;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = std::numeric_limits<std::uint64_t>::max();

  void validate() const;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, ReLU hidden layers
/// and an Identity output layer.
MlpParams init_mlp(std::span<const std::size_t> layer_sizes, std::uint64_t seed);

ForwardTrace forward(const MlpParams& params, std::span<const double> x);

/// Per-layer values kept by forward_batch for the backward pass.
struct BatchCache {
  std::vector<Matrix> layer_inputs;  // h_{l-1}, one row per sample
  std::vector<Matrix> pre_activations;
};

/// Batched forward pass; inputs one sample per row. Returns the network output.
Matrix forward_batch(const MlpParams& params, const Matrix& inputs, BatchCache* cache = nullptr);

/// Backpropagates d(objective)/d(output) through the cached pass. Writes the
/// gradient with respect to the inputs when `d_inputs` is non-null.
MlpParams backward_batch(const MlpParams& params, const BatchCache& cache, const Matrix& d_output,
                         Matrix* d_inputs = nullptr);

struct LossAndGrad {
  double loss = 0.0;
  MlpParams grads;
};

/// Batch-mean loss and its exact gradient.
///
/// MSE averages the squared error over every output entry of the batch.
/// Cross-entropy averages -log softmax(output)[label] over the batch.
LossAndGrad loss_and_grad(const MlpParams& params, const Matrix& batch_x, const Targets& batch_y, LossKind kind);

/// Loss and d(loss)/d(output) given network outputs.
double output_loss(const Matrix& outputs, const Targets& targets, LossKind kind, Matrix* d_outputs);

struct AdamState {
  std::uint64_t step = 0;
  MlpParams first_moment;
  MlpParams second_moment;

  static AdamState fresh(const MlpParams& params);
};

/// One bias-corrected Adam update in place.
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, const TrainConfig& config);

struct Checkpoint {
  std::uint64_t step = 0;
  MlpParams params;
};

using CheckpointObserver = std::function<void(const Checkpoint&)>;

/// Runs epochs x batches Adam steps. The initial and final parameters are
/// always checkpointed, plus every `checkpoint_every` steps in between.
std::vector<Checkpoint> train(MlpParams params, const Dataset& data, const TrainConfig& config,
                              const CheckpointObserver& observer = {});

Targets gather_targets(const Dataset& data, std::span<const std::size_t> indices);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

/// Failure while decoding a checkpoint file; carries the byte offset reached.
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Binary layout (little-endian):
///   "MLPC" | u32 version (=1) | u32 L | u32 n_0 .. n_L
///   then per layer: W_l row-major f64[n_l * n_{l-1}], b_l f64[n_l]
/// Hidden layers load as ReLU, the last layer as Identity.
void save_checkpoint(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params);
MlpParams decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace lrlab
