#include "lrlab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lrlab {

namespace {

void check_rhs_args(double b, std::size_t k, std::size_t depth, double eps, double w_op) {
  if (!(b > 0.0) || !std::isfinite(b)) throw std::invalid_argument("bound: witness bound B must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("bound: eps must be positive");
  if (k < 2) throw std::invalid_argument("bound: witness depth k must be >= 2");
  if (depth < k) throw std::invalid_argument("bound: depth L must be >= witness depth k");
  if (!(w_op > 0.0)) throw std::invalid_argument("bound: operator norm must be positive");
}

}  // namespace

NormRatioReport norm_ratios(const MlpParams& params) {
  params.validate();
  NormRatioReport r;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const double f = frobenius_norm(params.weights[l]);
    if (f == 0.0) throw ZeroLayerError(l + 1);
    const double s = operator_norm(params.weights[l]);
    r.frobenius.push_back(f);
    r.operator_norms.push_back(s);
    // F >= sigma holds exactly; clamp rounding from the two separate routes.
    r.ratios.push_back(std::max(1.0, f / s));
  }
  r.harmonic_mean_of_ratios = harmonic_mean(r.ratios);
  r.arithmetic_mean_of_ratios = arithmetic_mean(r.ratios);
  return r;
}

double classification_ratio_bound(double b, std::size_t k, std::size_t depth) {
  const double l = static_cast<double>(depth);
  return std::sqrt(2.0) * std::pow(b / std::sqrt(2.0), static_cast<double>(k) / l) * std::sqrt((l + 1.0) / l);
}

double regression_ratio_bound(double b, std::size_t k, std::size_t depth) {
  return std::pow(b, static_cast<double>(k) / static_cast<double>(depth));
}

double classification_rhs(double b, std::size_t k, std::size_t depth, double eps, double w_op) {
  check_rhs_args(b, k, depth, eps, w_op);
  const double l = static_cast<double>(depth);
  const double exponent = 2.0 * static_cast<double>(k) / l;
  // Dividing by eps twice keeps decimal eps like 0.1 from being squared before rounding.
  return 2.0 * std::pow(b / std::sqrt(2.0), exponent) * ((l + 1.0) / l) * w_op * w_op / eps / eps;
}

double regression_rhs(double b, std::size_t k, std::size_t depth, double eps, double w_op) {
  check_rhs_args(b, k, depth, eps, w_op);
  const double exponent = 2.0 * static_cast<double>(k) / static_cast<double>(depth);
  return w_op * w_op * std::pow(b, exponent) / eps / eps;
}

LemmaReport verify_rank_lemma(const MlpParams& params, const Matrix& sample, std::vector<double> eps_grid) {
  if (eps_grid.empty()) throw std::invalid_argument("verify_rank_lemma: empty eps grid");
  if (sample.rows() == 0) throw std::invalid_argument("verify_rank_lemma: empty sample");
  for (double e : eps_grid)
    if (!(e > 0.0)) throw std::invalid_argument("verify_rank_lemma: eps must be positive");
  std::sort(eps_grid.begin(), eps_grid.end());

  std::vector<Vector> weight_sv;
  for (const auto& w : params.weights) weight_sv.push_back(singular_values(w));

  LemmaReport report;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    const auto jac = layer_jacobians(params, sample.row(i));
    for (std::size_t l = 0; l < jac.size(); ++l) {
      const Vector jsv = singular_values(jac[l]);
      LemmaThreshold thr{i, l + 1, std::nullopt};
      bool prefix_ok = true;
      for (double e : eps_grid) {
        LemmaCheck c{i, l + 1, e, epsilon_rank(jsv, e), epsilon_rank(weight_sv[l], e)};
        if (!c.holds()) {
          report.violations.push_back(c);
          prefix_ok = false;
        } else if (prefix_ok) {
          thr.largest_valid_eps = e;
        }
        report.checks.push_back(c);
      }
      report.thresholds.push_back(thr);
    }
  }
  return report;
}

LemmaReport verify_rank_lemma_exact(const MlpParams& params, const Matrix& sample, double rel) {
  if (!(rel > 0.0)) throw std::invalid_argument("verify_rank_lemma_exact: rel must be positive");
  std::vector<Vector> weight_sv;
  for (const auto& w : params.weights) weight_sv.push_back(singular_values(w));
  LemmaReport report;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    const auto jac = layer_jacobians(params, sample.row(i));
    for (std::size_t l = 0; l < jac.size(); ++l) {
      const Vector jsv = singular_values(jac[l]);
      const double top = std::max(jsv.front(), weight_sv[l].front());
      LemmaThreshold thr{i, l + 1, std::nullopt};
      if (top == 0.0) {
        // Both matrices vanish; ranks are 0 at every eps.
        report.checks.push_back(LemmaCheck{i, l + 1, rel, 0, 0});
        thr.largest_valid_eps = rel;
        report.thresholds.push_back(thr);
        continue;
      }
      const double e = rel * top;
      LemmaCheck c{i, l + 1, e, epsilon_rank(jsv, e), epsilon_rank(weight_sv[l], e)};
      if (c.holds()) {
        thr.largest_valid_eps = e;
      } else {
        report.violations.push_back(c);
      }
      report.checks.push_back(c);
      report.thresholds.push_back(thr);
    }
  }
  return report;
}

std::string to_string(BoundTask task) { return task == BoundTask::Classification ? "classification" : "regression"; }

BoundTask bound_task_from_string(const std::string& text) {
  if (text == "classification") return BoundTask::Classification;
  if (text == "regression") return BoundTask::Regression;
  throw std::invalid_argument("unknown task '" + text + "' (expected classification|regression)");
}

BoundReport bound_report(const MlpParams& params, BoundTask task, double witness_bound, std::size_t witness_depth,
                         const Matrix& sample, double eps, std::size_t threads) {
  params.validate();
  BoundReport r;
  r.task = task;
  r.witness_bound = witness_bound;
  r.witness_depth = witness_depth;
  r.depth = params.layer_count();
  r.eps = eps;
  r.norms = norm_ratios(params);
  r.ratio_bound = task == BoundTask::Classification ? classification_ratio_bound(witness_bound, witness_depth, r.depth)
                                                    : regression_ratio_bound(witness_bound, witness_depth, r.depth);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < r.depth; ++l) {
    const double sigma = r.norms.operator_norms[l];
    const double v = task == BoundTask::Classification
                         ? classification_rhs(witness_bound, witness_depth, r.depth, eps, sigma)
                         : regression_rhs(witness_bound, witness_depth, r.depth, eps, sigma);
    r.rhs.push_back(v);
    r.trivial_rhs.push_back(r.norms.frobenius[l] * r.norms.frobenius[l] / (eps * eps));
    if (v < best) {
      best = v;
      r.argmin_layer = l + 1;
    }
  }
  r.measured = local_rank(params, sample, r.argmin_layer, eps, EpsMode::Absolute, threads);
  r.slack = r.rhs[r.argmin_layer - 1] - r.measured.mean_rank;
  return r;
}

double min_margin(const MlpParams& params, const Dataset& data) {
  if (data.kind != TaskKind::Classification) throw std::invalid_argument("min_margin: dataset is not classification");
  const Matrix out = forward_batch(params, data.inputs);
  if (out.cols() < 2) throw std::invalid_argument("min_margin: need at least two output classes");
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const std::uint32_t y = data.labels[i];
    if (y >= out.cols()) throw std::invalid_argument("min_margin: label outside output range");
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < out.cols(); ++j)
      if (j != y) other = std::max(other, out(i, j));
    margin = std::min(margin, out(i, y) - other);
  }
  return margin;
}

MlpParams rescale_output(const MlpParams& params, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("rescale_output: factor must be positive");
  MlpParams p = params;
  const double depth = static_cast<double>(p.layer_count());
  const double per_layer = std::pow(factor, 1.0 / depth);
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    for (double& w : p.weights[l].data()) w *= per_layer;
    const double bias_scale = std::pow(per_layer, static_cast<double>(l + 1));
    for (double& b : p.biases[l]) b *= bias_scale;
  }
  return p;
}

Witness derive_witness(const MlpParams& params, const Dataset& data, BoundTask task) {
  Witness w;
  w.depth = params.layer_count();
  if (task == BoundTask::Classification) {
    const double margin = min_margin(params, data);
    w.fit_quality = margin;
    if (margin > 0.0) {
      w.scale = 1.0 / margin;
      w.valid = true;
      w.note = "output rescaled to unit minimum margin";
    } else {
      w.note = "network misclassifies training points; margin rescaling impossible, B from unscaled weights";
    }
    const MlpParams scaled = w.valid ? rescale_output(params, w.scale) : params;
    for (const auto& m : scaled.weights) w.bound = std::max(w.bound, frobenius_norm(m));
  } else {
    if (data.kind != TaskKind::Regression) throw std::invalid_argument("derive_witness: regression needs real targets");
    const Matrix out = forward_batch(params, data.inputs);
    double residual = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
      residual = std::max(residual, std::abs(out.data()[i] - data.targets.data()[i]));
    w.fit_quality = residual;
    w.valid = residual < 1e-3;
    w.note = w.valid ? "interpolates training targets to residual < 1e-3" : "does not interpolate (residual >= 1e-3)";
    for (const auto& m : params.weights) w.bound = std::max(w.bound, frobenius_norm(m));
  }
  return w;
}

}  // namespace lrlab
