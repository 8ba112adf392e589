#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrlab/dataset.hpp"
#include "lrlab/linalg.hpp"
#include "lrlab/local_rank.hpp"
#include "lrlab/mlp.hpp"

namespace lrlab {

/// A weight matrix with zero operator norm where a ratio was requested.
class ZeroLayerError : public std::invalid_argument {
 public:
  explicit ZeroLayerError(std::size_t layer)
      : std::invalid_argument("weight matrix of layer " + std::to_string(layer) + " is zero"), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

struct NormRatioReport {
  Vector frobenius;
  Vector operator_norms;
  Vector ratios;  // frobenius / operator, >= 1
  double harmonic_mean_of_ratios = 0.0;
  double arithmetic_mean_of_ratios = 0.0;
};

NormRatioReport norm_ratios(const MlpParams& params);

/// (2 / eps^2) (B / sqrt 2)^(2k / L) ((L + 1) / L) ||W_l||_sigma^2
double classification_rhs(double witness_bound, std::size_t witness_depth, std::size_t depth, double eps,
                          double w_operator_norm);

/// ||W_l||_sigma^2 B^(2k / L) / eps^2
double regression_rhs(double witness_bound, std::size_t witness_depth, std::size_t depth, double eps,
                      double w_operator_norm);

/// Upper bound on the harmonic mean of the F/sigma ratios at a min-norm optimum.
double classification_ratio_bound(double witness_bound, std::size_t witness_depth, std::size_t depth);
double regression_ratio_bound(double witness_bound, std::size_t witness_depth, std::size_t depth);

struct LemmaCheck {
  std::size_t sample_index = 0;
  std::size_t layer = 0;
  double eps = 0.0;
  std::size_t jacobian_rank = 0;
  std::size_t weight_rank = 0;
  bool holds() const noexcept { return jacobian_rank <= weight_rank; }
};

struct LemmaThreshold {
  std::size_t sample_index = 0;
  std::size_t layer = 0;
  /// Largest grid eps such that the inequality holds at it and every smaller
  /// grid eps; empty when it already fails at the smallest.
  std::optional<double> largest_valid_eps;
};

struct LemmaReport {
  std::vector<LemmaCheck> checks;
  std::vector<LemmaCheck> violations;
  std::vector<LemmaThreshold> thresholds;
};

/// rank_eps(J_x p_l(x)) <= rank_eps(W_l) for every sample row, layer and grid eps.
LemmaReport verify_rank_lemma(const MlpParams& params, const Matrix& sample, std::vector<double> eps_grid);

/// Same inequality at the exact-rank proxy eps = rel * max(sigma_max(J), sigma_max(W_l)),
/// chosen separately for each (x, l).
LemmaReport verify_rank_lemma_exact(const MlpParams& params, const Matrix& sample, double rel = 1e-10);

enum class BoundTask { Classification, Regression };
std::string to_string(BoundTask task);
BoundTask bound_task_from_string(const std::string& text);

struct BoundReport {
  BoundTask task = BoundTask::Classification;
  double witness_bound = 0.0;
  std::size_t witness_depth = 0;
  std::size_t depth = 0;
  double eps = 0.0;
  NormRatioReport norms;
  Vector rhs;                         // per layer
  Vector trivial_rhs;                 // ||W_l||_F^2 / eps^2
  double ratio_bound = 0.0;           // harmonic-mean bound implied by (B, k, L)
  std::size_t argmin_layer = 0;       // 1-based, minimises rhs
  RankEstimate measured;              // LR^eps at argmin_layer
  double slack = 0.0;                 // rhs[argmin] - measured.mean_rank
};

BoundReport bound_report(const MlpParams& params, BoundTask task, double witness_bound, std::size_t witness_depth,
                         const Matrix& sample, double eps, std::size_t threads = 1);

/// Witness constants taken from the network itself.
struct Witness {
  double bound = 0.0;        // B = max_l ||W_l||_F after rescaling
  std::size_t depth = 0;     // k = L
  double scale = 1.0;        // output scale applied (classification margin rescaling)
  double fit_quality = 0.0;  // min margin (classification) or max residual (regression)
  bool valid = false;        // margin > 0, or residual < 1e-3
  std::string note;
};

/// Classification: rescales layer l by c^(1/L) (bias by c^(l/L)), c = 1 / min
/// margin, so the output scales by c. Regression: reports the max abs residual.
Witness derive_witness(const MlpParams& params, const Dataset& data, BoundTask task);

/// Scales the network so its output is multiplied by `factor`, keeping layers balanced.
MlpParams rescale_output(const MlpParams& params, double factor);

/// Minimum over samples of z_y - max_{j != y} z_j.
double min_margin(const MlpParams& params, const Dataset& data);

}  // namespace lrlab
