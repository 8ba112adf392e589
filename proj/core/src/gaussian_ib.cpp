#include "lrlab/gaussian_ib.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "lrlab/io.hpp"

namespace lrlab {

namespace {

Matrix inverse_sqrt_spd(const Matrix& a) {
  const SymmetricEigen e = symmetric_eig(a);
  const std::size_t n = a.rows();
  Matrix r(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!(e.eigenvalues[k] > 0.0)) throw NotPositiveDefiniteError(k);
    const double s = 1.0 / std::sqrt(e.eigenvalues[k]);
    for (std::size_t i = 0; i < n; ++i) {
      const double qi = e.eigenvectors(i, k) * s;
      for (std::size_t j = 0; j < n; ++j) r(i, j) += qi * e.eigenvectors(j, k);
    }
  }
  return r;
}

Matrix symmetrized(const Matrix& a) {
  Matrix s = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) s(i, j) = s(j, i) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

double critical_beta(double lambda) {
  if (lambda >= 1.0 - kUnitEigenvalueTolerance) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - lambda);
}

}  // namespace

void GaussianIBProblem::validate() const {
  const std::size_t n = sigma_x.rows();
  const std::size_t m = sigma_y.rows();
  if (n == 0 || sigma_x.cols() != n) throw std::invalid_argument("sigma_x must be square and nonempty");
  if (m == 0 || sigma_y.cols() != m) throw std::invalid_argument("sigma_y must be square and nonempty");
  if (sigma_xy.rows() != n || sigma_xy.cols() != m)
    throw std::invalid_argument("sigma_xy must be " + std::to_string(n) + "x" + std::to_string(m));
  (void)cholesky(sigma_x);
  (void)cholesky(sigma_y);
  // Joint PSD <=> Schur complement PSD given sigma_y PD.
  const Matrix cond = conditional_covariance(*this);
  const Vector ev = symmetric_eigenvalues(cond);
  const double scale = std::max(1.0, frobenius_norm(sigma_x));
  if (ev.back() < -1e-10 * scale) throw std::invalid_argument("joint covariance is not positive semidefinite");
}

GaussianIBProblem GaussianIBProblem::reference_five_dim() {
  return {Matrix::identity(5), Matrix::identity(5), Matrix::diagonal({0.1, 0.1, 0.5, 0.5, 0.5})};
}

Matrix conditional_covariance(const GaussianIBProblem& p) {
  if (p.sigma_xy.rows() != p.sigma_x.rows() || p.sigma_xy.cols() != p.sigma_y.rows())
    throw std::invalid_argument("conditional_covariance: dimension mismatch");
  const Matrix sy_inv = spd_inverse(p.sigma_y);
  const Matrix cross = p.sigma_xy * sy_inv;
  return symmetrized(p.sigma_x - multiply_transposed(cross, p.sigma_xy));
}

GaussianIBSpectrum ib_spectrum(const GaussianIBProblem& p) {
  const Matrix cond = conditional_covariance(p);
  const Matrix root = inverse_sqrt_spd(p.sigma_x);
  const Matrix s = symmetrized(root * cond * root);
  const SymmetricEigen e = symmetric_eig(s);
  const std::size_t n = s.rows();

  GaussianIBSpectrum out;
  out.left_eigenvectors = Matrix(n, n);
  const Matrix v = root * e.eigenvectors;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = n - 1 - k;  // ascending
    out.eigenvalues.push_back(std::clamp(e.eigenvalues[src], 0.0, 1.0));
    for (std::size_t i = 0; i < n; ++i) out.left_eigenvectors(i, k) = v(i, src);
  }
  for (double l : out.eigenvalues) out.critical_betas.push_back(critical_beta(l));
  return out;
}

Vector critical_betas(const GaussianIBProblem& p) { return ib_spectrum(p).critical_betas; }

GaussianIBSolution optimal_projection(const GaussianIBProblem& p, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("optimal_projection: beta must be positive");
  GaussianIBSpectrum spec = ib_spectrum(p);
  const std::size_t n = spec.eigenvalues.size();
  GaussianIBSolution s;
  s.beta = beta;
  s.projection = Matrix(n, n);
  s.alphas.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(beta > spec.critical_betas[i])) continue;
    Vector vi(n);
    for (std::size_t r = 0; r < n; ++r) vi[r] = spec.left_eigenvectors(r, i);
    const double r_i = dot(vi, p.sigma_x * std::span<const double>(vi));
    const double lambda = std::max(spec.eigenvalues[i], 1e-12);
    const double alpha = std::sqrt((beta * (1.0 - spec.eigenvalues[i]) - 1.0) / (lambda * r_i));
    s.alphas[i] = alpha;
    for (std::size_t c = 0; c < n; ++c) s.projection(i, c) = alpha * vi[c];
    ++s.rank;
  }
  s.eigenvalues = std::move(spec.eigenvalues);
  s.left_eigenvectors = std::move(spec.left_eigenvectors);
  s.critical_betas = std::move(spec.critical_betas);
  return s;
}

std::vector<StaircasePoint> rank_staircase(const Vector& critical, const std::vector<double>& beta_grid) {
  std::vector<StaircasePoint> out;
  out.reserve(beta_grid.size());
  for (double b : beta_grid) {
    if (!(b > 0.0)) throw std::invalid_argument("rank_staircase: betas must be positive");
    const auto count = std::count_if(critical.begin(), critical.end(), [b](double c) { return c < b; });
    out.push_back({b, static_cast<std::size_t>(count)});
  }
  return out;
}

std::vector<StaircasePoint> rank_staircase(const GaussianIBProblem& p, const std::vector<double>& beta_grid) {
  return rank_staircase(critical_betas(p), beta_grid);
}

std::string staircase_csv(const std::vector<StaircasePoint>& points) {
  std::string out = std::string(kStaircaseHeader) + "\n";
  for (const auto& pt : points) out += format_real(pt.beta) + "," + std::to_string(pt.predicted_rank) + "\n";
  return out;
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_spaced: need 0 < lo <= hi");
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> out(count);
  // Base 10 so decade grids come out as exact powers of ten.
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

namespace {

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& msg) {
  throw std::invalid_argument(source + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_size(const std::string& s, std::size_t& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc{} && p == s.data() + s.size();
}

bool parse_double(const std::string& s, double& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc{} && p == s.data() + s.size() && std::isfinite(v);
}

}  // namespace

GaussianIBProblem parse_ib_problem(const std::string& text, const std::string& source) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> lines;
  {
    std::istringstream in(text);
    std::string raw;
    std::size_t no = 0;
    while (std::getline(in, raw)) {
      ++no;
      if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
      auto toks = split_ws(raw);
      if (!toks.empty()) lines.emplace_back(no, std::move(toks));
    }
  }

  std::map<std::string, Matrix> blocks;
  std::size_t i = 0;
  while (i < lines.size()) {
    const auto& [no, head] = lines[i];
    const std::string& name = head[0];
    if (name != "sigma_x" && name != "sigma_y" && name != "sigma_xy")
      parse_fail(source, no, "expected block name sigma_x, sigma_y or sigma_xy, got '" + name + "'");
    if (blocks.contains(name)) parse_fail(source, no, "duplicate block " + name);
    std::size_t rows = 0, cols = 0;
    if (head.size() != 3 || !parse_size(head[1], rows) || !parse_size(head[2], cols) || rows == 0 || cols == 0)
      parse_fail(source, no, "expected '" + name + " <rows> <cols>' with positive dimensions");
    std::vector<double> entries;
    entries.reserve(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      ++i;
      if (i >= lines.size()) parse_fail(source, no, name + ": expected " + std::to_string(rows) + " rows");
      const auto& [rno, toks] = lines[i];
      if (toks.size() != cols)
        parse_fail(source, rno, name + ": expected " + std::to_string(cols) + " values, got " + std::to_string(toks.size()));
      for (const auto& t : toks) {
        double v = 0.0;
        if (!parse_double(t, v)) parse_fail(source, rno, "not a finite real: '" + t + "'");
        entries.push_back(v);
      }
    }
    blocks.emplace(name, Matrix(rows, cols, std::move(entries)));
    ++i;
  }
  for (const char* need : {"sigma_x", "sigma_y", "sigma_xy"})
    if (!blocks.contains(need)) throw std::invalid_argument(source + ": missing block " + need);

  GaussianIBProblem p{blocks["sigma_x"], blocks["sigma_y"], blocks["sigma_xy"]};
  const double tol = 1e-10;
  if (!is_symmetric(p.sigma_x, tol)) throw std::invalid_argument(source + ": sigma_x is not symmetric");
  if (!is_symmetric(p.sigma_y, tol)) throw std::invalid_argument(source + ": sigma_y is not symmetric");
  p.validate();
  return p;
}

GaussianIBProblem load_ib_problem(const std::filesystem::path& path) {
  return parse_ib_problem(read_file(path), path.string());
}

std::string format_ib_problem(const GaussianIBProblem& p) {
  std::string out;
  auto block = [&out](const char* name, const Matrix& m) {
    out += std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) out += (c ? " " : "") + format_real(m(r, c));
      out += "\n";
    }
  };
  block("sigma_x", p.sigma_x);
  block("sigma_y", p.sigma_y);
  block("sigma_xy", p.sigma_xy);
  return out;
}

}  // namespace lrlab
