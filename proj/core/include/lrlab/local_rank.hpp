#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrlab/linalg.hpp"
#include "lrlab/mlp.hpp"

namespace lrlab {

/// How the rank threshold is applied to each Jacobian.
enum class EpsMode {
  Absolute,  // singular values > eps
  Relative,  // singular values > eps * sigma_max of that Jacobian
};

std::string to_string(EpsMode mode);
EpsMode eps_mode_from_string(const std::string& text);

/// Jacobian of the pre-activation p_l with respect to the input, 1 <= layer <= L:
/// W_l D_{l-1} W_{l-1} ... D_1 W_1, with D_j the ReLU mask of layer j at x.
Matrix layer_jacobian(const MlpParams& params, std::span<const double> x, std::size_t layer);

/// All L input-Jacobians for one input, built by a single left-accumulation.
std::vector<Matrix> layer_jacobians(const MlpParams& params, std::span<const double> x);

/// Jacobian of the network output with respect to the input, accumulated from
/// the output side. Same value as layer_jacobian(params, x, L) but cheaper when
/// the output is narrow.
Matrix output_jacobian(const MlpParams& params, std::span<const double> x);

struct RankEstimate {
  std::size_t layer = 0;
  double eps = 0.0;
  double mean_rank = 0.0;
  double std_rank = 0.0;  // population standard deviation
  std::size_t sample_size = 0;
  std::vector<std::size_t> per_sample_ranks;
};

/// Aggregates integer ranks exactly, so the result is independent of order.
RankEstimate summarize_ranks(std::size_t layer, double eps, std::vector<std::size_t> ranks);

/// Robust local rank of layer `layer` over the rows of `sample`.
RankEstimate local_rank(const MlpParams& params, const Matrix& sample, std::size_t layer, double eps,
                        EpsMode mode = EpsMode::Absolute, std::size_t threads = 1);

/// Same as local_rank for every layer, sharing one Jacobian accumulation per input.
std::vector<RankEstimate> local_rank_all_layers(const MlpParams& params, const Matrix& sample, double eps,
                                                EpsMode mode = EpsMode::Absolute, std::size_t threads = 1);

struct RankSeriesPoint {
  std::uint64_t step = 0;
  RankEstimate estimate;
};

struct RankSeries {
  std::string run_id;
  double eps = 0.0;
  EpsMode mode = EpsMode::Absolute;
  std::vector<std::vector<RankSeriesPoint>> layers;  // layers[l - 1] ordered by step
};

/// Evaluates every layer of every checkpoint on the same fixed sample.
RankSeries rank_trajectory(std::span<const Checkpoint> checkpoints, const Matrix& sample, double eps,
                           EpsMode mode = EpsMode::Absolute, std::size_t threads = 1, std::string run_id = {});

/// Incremental builder used by training observers.
void append_to_series(RankSeries& series, std::uint64_t step, std::vector<RankEstimate> per_layer);

/// CSV with header `step,layer,eps,mean_rank,std_rank,sample_size`, rows ordered
/// by step then layer.
std::string rank_series_csv(const RankSeries& series);
inline constexpr const char* kRankSeriesHeader = "step,layer,eps,mean_rank,std_rank,sample_size";

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace lrlab
