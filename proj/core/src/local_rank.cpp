#include "lrlab/local_rank.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "lrlab/io.hpp"

namespace lrlab {

namespace {

std::size_t rank_of(const Matrix& j, double eps, EpsMode mode) {
  return epsilon_rank_fast(j, eps, mode == EpsMode::Relative);
}

}  // namespace

std::string to_string(EpsMode mode) { return mode == EpsMode::Absolute ? "absolute" : "relative"; }

EpsMode eps_mode_from_string(const std::string& text) {
  if (text == "absolute") return EpsMode::Absolute;
  if (text == "relative") return EpsMode::Relative;
  throw std::invalid_argument("unknown eps mode '" + text + "' (expected absolute|relative)");
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<Matrix> layer_jacobians(const MlpParams& params, std::span<const double> x) {
  const ForwardTrace trace = forward(params, x);
  std::vector<Matrix> out;
  out.reserve(params.layer_count());
  out.push_back(params.weights.front());
  for (std::size_t l = 1; l < params.layer_count(); ++l) {
    const Matrix& w = params.weights[l];
    const Matrix& prev = out.back();
    const auto& mask = trace.relu_masks[l - 1];
    Matrix j(w.rows(), prev.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
      auto ji = j.row(i);
      auto wi = w.row(i);
      for (std::size_t k = 0; k < w.cols(); ++k) {
        if (!mask[k] || wi[k] == 0.0) continue;
        const double a = wi[k];
        auto pk = prev.row(k);
        for (std::size_t c = 0; c < ji.size(); ++c) ji[c] += a * pk[c];
      }
    }
    out.push_back(std::move(j));
  }
  return out;
}

Matrix output_jacobian(const MlpParams& params, std::span<const double> x) {
  const ForwardTrace trace = forward(params, x);
  const std::size_t last = params.layer_count() - 1;
  Matrix acc = params.weights[last];
  for (std::size_t l = last; l-- > 0;) {
    // acc <- acc * D_l * W_l
    const Matrix& w = params.weights[l];
    const auto& mask = trace.relu_masks[l];
    Matrix next(acc.rows(), w.cols());
    for (std::size_t i = 0; i < acc.rows(); ++i) {
      auto ai = acc.row(i);
      auto ni = next.row(i);
      for (std::size_t k = 0; k < w.rows(); ++k) {
        if (!mask[k] || ai[k] == 0.0) continue;
        const double a = ai[k];
        auto wk = w.row(k);
        for (std::size_t c = 0; c < ni.size(); ++c) ni[c] += a * wk[c];
      }
    }
    acc = std::move(next);
  }
  return acc;
}

Matrix layer_jacobian(const MlpParams& params, std::span<const double> x, std::size_t layer) {
  if (layer < 1 || layer > params.layer_count()) {
    throw std::invalid_argument("layer_jacobian: layer index " + std::to_string(layer) + " out of range");
  }
  if (layer == params.layer_count()) return layer_jacobians(params, x).back();
  MlpParams head = params;
  head.weights.resize(layer);
  head.biases.resize(layer);
  head.activations.resize(layer);
  return layer_jacobians(head, x).back();
}

RankEstimate summarize_ranks(std::size_t layer, double eps, std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("summarize_ranks: empty sample");
  std::uint64_t s1 = 0;
  std::uint64_t s2 = 0;
  for (std::size_t r : ranks) {
    s1 += r;
    s2 += static_cast<std::uint64_t>(r) * r;
  }
  const auto n = static_cast<std::uint64_t>(ranks.size());
  RankEstimate e;
  e.layer = layer;
  e.eps = eps;
  e.sample_size = ranks.size();
  e.mean_rank = static_cast<double>(s1) / static_cast<double>(n);
  // n^2 var = n * s2 - s1^2, exact in integers.
  const std::uint64_t num = n * s2 - s1 * s1;
  e.std_rank = std::sqrt(static_cast<double>(num)) / static_cast<double>(n);
  e.per_sample_ranks = std::move(ranks);
  return e;
}

RankEstimate local_rank(const MlpParams& params, const Matrix& sample, std::size_t layer, double eps, EpsMode mode,
                        std::size_t threads) {
  if (sample.rows() == 0) throw std::invalid_argument("local_rank: empty sample");
  if (!(eps > 0.0)) throw std::invalid_argument("local_rank: eps must be positive");
  if (layer < 1 || layer > params.layer_count()) {
    throw std::invalid_argument("local_rank: layer index " + std::to_string(layer) + " out of range");
  }
  std::vector<std::size_t> ranks(sample.rows());
  parallel_for(sample.rows(), threads, [&](std::size_t i) {
    ranks[i] = rank_of(layer_jacobian(params, sample.row(i), layer), eps, mode);
  });
  return summarize_ranks(layer, eps, std::move(ranks));
}

std::vector<RankEstimate> local_rank_all_layers(const MlpParams& params, const Matrix& sample, double eps,
                                                EpsMode mode, std::size_t threads) {
  if (sample.rows() == 0) throw std::invalid_argument("local_rank: empty sample");
  if (!(eps > 0.0)) throw std::invalid_argument("local_rank: eps must be positive");
  const std::size_t layers = params.layer_count();
  std::vector<std::vector<std::size_t>> ranks(layers, std::vector<std::size_t>(sample.rows()));
  parallel_for(sample.rows(), threads, [&](std::size_t i) {
    const auto jac = layer_jacobians(params, sample.row(i));
    for (std::size_t l = 0; l < layers; ++l) ranks[l][i] = rank_of(jac[l], eps, mode);
  });
  std::vector<RankEstimate> out;
  for (std::size_t l = 0; l < layers; ++l) out.push_back(summarize_ranks(l + 1, eps, std::move(ranks[l])));
  return out;
}

void append_to_series(RankSeries& series, std::uint64_t step, std::vector<RankEstimate> per_layer) {
  if (series.layers.empty()) series.layers.resize(per_layer.size());
  if (series.layers.size() != per_layer.size()) {
    throw std::invalid_argument("rank series: architecture changed between checkpoints");
  }
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    auto& seq = series.layers[l];
    if (!seq.empty() && seq.back().step >= step) throw std::invalid_argument("rank series: steps must increase");
    seq.push_back(RankSeriesPoint{step, std::move(per_layer[l])});
  }
}

RankSeries rank_trajectory(std::span<const Checkpoint> checkpoints, const Matrix& sample, double eps, EpsMode mode,
                           std::size_t threads, std::string run_id) {
  RankSeries series;
  series.run_id = std::move(run_id);
  series.eps = eps;
  series.mode = mode;
  if (checkpoints.empty()) return series;
  const auto shape = checkpoints.front().params.layer_sizes();
  for (const auto& c : checkpoints) {
    if (c.params.layer_sizes() != shape) {
      throw std::invalid_argument("rank_trajectory: checkpoint at step " + std::to_string(c.step) +
                                  " has a different architecture");
    }
  }
  for (const auto& c : checkpoints) {
    append_to_series(series, c.step, local_rank_all_layers(c.params, sample, eps, mode, threads));
  }
  return series;
}

std::string rank_series_csv(const RankSeries& series) {
  std::ostringstream os;
  os << kRankSeriesHeader << '\n';
  if (series.layers.empty()) return os.str();
  const std::size_t points = series.layers.front().size();
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t l = 0; l < series.layers.size(); ++l) {
      const auto& pt = series.layers[l][p];
      os << pt.step << ',' << (l + 1) << ',' << format_real(pt.estimate.eps) << ','
         << format_real(pt.estimate.mean_rank) << ',' << format_real(pt.estimate.std_rank) << ','
         << pt.estimate.sample_size << '\n';
    }
  }
  return os.str();
}

}  // namespace lrlab
