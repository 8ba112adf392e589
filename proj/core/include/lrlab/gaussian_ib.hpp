#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "lrlab/linalg.hpp"

namespace lrlab {

/// Second moments of a jointly Gaussian pair (X, Y).
struct GaussianIBProblem {
  Matrix sigma_x;   // n x n, SPD
  Matrix sigma_y;   // m x m, SPD
  Matrix sigma_xy;  // n x m

  /// Throws std::invalid_argument (or NotPositiveDefiniteError) on violation.
  void validate() const;

  /// Sx = Sy = I_5, Sxy = diag(0.1, 0.1, 0.5, 0.5, 0.5).
  static GaussianIBProblem reference_five_dim();
};

struct GaussianIBSpectrum {
  Vector eigenvalues;       // lambda_i of Sigma_{x|y} Sigma_x^{-1}, ascending, clamped to [0, 1]
  Matrix left_eigenvectors; // column i is v_i, normalised so v_i^T Sigma_x v_i = 1
  Vector critical_betas;    // 1 / (1 - lambda_i), +inf when lambda_i is within 1e-9 of 1
};

struct GaussianIBSolution {
  Vector eigenvalues;
  Matrix left_eigenvectors;
  Vector critical_betas;
  double beta = 0.0;
  Matrix projection;  // A_beta, n x n; row i is alpha_i v_i^T or zero
  Vector alphas;      // 0 for inactive components
  std::size_t rank = 0;
};

inline constexpr double kUnitEigenvalueTolerance = 1e-9;

/// Sigma_{x|y} = Sx - Sxy Sy^{-1} Sxy^T.
Matrix conditional_covariance(const GaussianIBProblem& p);

GaussianIBSpectrum ib_spectrum(const GaussianIBProblem& p);

/// Ascending critical betas (+inf for components that never activate).
Vector critical_betas(const GaussianIBProblem& p);

/// Optimal projection at trade-off beta (> 0). Components with beta exactly at
/// their critical value stay inactive.
GaussianIBSolution optimal_projection(const GaussianIBProblem& p, double beta);

struct StaircasePoint {
  double beta = 0.0;
  std::size_t predicted_rank = 0;
};

/// Number of critical betas strictly below each grid value.
std::vector<StaircasePoint> rank_staircase(const GaussianIBProblem& p, const std::vector<double>& beta_grid);
std::vector<StaircasePoint> rank_staircase(const Vector& critical, const std::vector<double>& beta_grid);

/// CSV `beta,predicted_rank`.
std::string staircase_csv(const std::vector<StaircasePoint>& points);
inline constexpr const char* kStaircaseHeader = "beta,predicted_rank";

/// `count` log-spaced values from lo to hi inclusive.
std::vector<double> log_spaced(double lo, double hi, std::size_t count);

/// Problem file grammar, one block per matrix, any order, '#' starts a comment:
///
///   sigma_x <rows> <cols>
///   <rows lines of cols whitespace-separated reals>
///   sigma_y <rows> <cols>
///   ...
///   sigma_xy <rows> <cols>
///   ...
GaussianIBProblem parse_ib_problem(const std::string& text, const std::string& source_name = "<input>");
GaussianIBProblem load_ib_problem(const std::filesystem::path& path);
std::string format_ib_problem(const GaussianIBProblem& p);

}  // namespace lrlab
