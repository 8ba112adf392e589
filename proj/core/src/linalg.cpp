#include "lrlab/linalg.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

namespace lrlab {

namespace {

constexpr int kMaxJacobiSweeps = 80;
constexpr int kMaxQlIterations = 60;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

// Sort order for nonincreasing values; ties keep their original position.
std::vector<std::size_t> descending_order(const Vector& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void rotate_rows(std::span<double> p, std::span<double> q, double c, double s) {
  const std::size_t n = p.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double a = p[k];
    const double b = q[k];
    p[k] = c * a - s * b;
    q[k] = s * a + c * b;
  }
}

// One-sided Jacobi on the rows of `w` (each row is one column of the
// original tall matrix). Rotations are mirrored onto `v` when given.
void hestenes(Matrix& w, Matrix* v) {
  const std::size_t n = w.rows();
  const double tol = static_cast<double>(w.cols()) * DBL_EPSILON;
  for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = w.row(p);
        auto wq = w.row(q);
        const double alpha = dot(wp, wp);
        const double beta = dot(wq, wq);
        const double gamma = dot(wp, wq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        double t;
        if (std::abs(zeta) > 1e150) {
          t = 0.5 / zeta;
        } else {
          t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_rows(wp, wq, c, s);
        if (v != nullptr) rotate_rows(v->row(p), v->row(q), c, s);
      }
    }
    if (!rotated) return;
  }
  throw ConvergenceError("one-sided Jacobi SVD", kMaxJacobiSweeps);
}

// Extends the orthonormal rows listed in `filled` with unit vectors built from
// the standard basis, writing them into the rows listed in `missing`.
void complete_orthonormal(Matrix& rows, const std::vector<std::size_t>& filled,
                          const std::vector<std::size_t>& missing) {
  const std::size_t m = rows.cols();
  std::vector<std::size_t> basis = filled;
  std::size_t next_e = 0;
  for (std::size_t target : missing) {
    auto out = rows.row(target);
    for (; next_e < m; ++next_e) {
      std::fill(out.begin(), out.end(), 0.0);
      out[next_e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t b : basis) {
          const double proj = dot(rows.row(b), out);
          axpy(-proj, rows.row(b), out);
        }
      }
      const double nrm = norm2(out);
      if (nrm > 0.5) {
        for (double& x : out) x /= nrm;
        ++next_e;
        break;
      }
    }
    basis.push_back(target);
  }
}

SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a.transpose();
  Matrix v = Matrix::identity(n);
  hestenes(w, &v);

  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(w.row(j));
  const auto order = descending_order(sigma);
  const double smax = sigma[order.front()];
  const double null_floor = smax * static_cast<double>(m) * DBL_EPSILON;

  Matrix ut(n, m);
  Matrix vt(n, n);
  Vector sorted(n);
  std::vector<std::size_t> filled;
  std::vector<std::size_t> missing;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    sorted[k] = sigma[j];
    std::copy(v.row(j).begin(), v.row(j).end(), vt.row(k).begin());
    if (sigma[j] > null_floor && sigma[j] > 0.0) {
      auto dst = ut.row(k);
      auto src = w.row(j);
      for (std::size_t i = 0; i < m; ++i) dst[i] = src[i] / sigma[j];
      filled.push_back(k);
    } else {
      missing.push_back(k);
    }
  }
  complete_orthonormal(ut, filled, missing);
  return SvdResult{ut.transpose(), std::move(sorted), vt.transpose()};
}

// Householder reduction to tridiagonal form; returns diagonal and subdiagonal.
void tridiagonalize(Matrix a, Vector& d, Vector& e) {
  const std::size_t n = a.rows();
  Vector v(n), p(n);
  for (std::size_t k = 0; k + 2 < n; ++k) {
    const std::size_t len = n - k - 1;
    double xnorm = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) xnorm += a(i, k) * a(i, k);
    xnorm = std::sqrt(xnorm);
    if (xnorm == 0.0) continue;
    const double alpha = -std::copysign(xnorm, a(k + 1, k));
    for (std::size_t i = 0; i < len; ++i) v[i] = a(k + 1 + i, k);
    v[0] -= alpha;
    const double vnorm = norm2(std::span<const double>(v.data(), len));
    if (vnorm == 0.0) continue;
    for (std::size_t i = 0; i < len; ++i) v[i] /= vnorm;

    // p = A_sub v, kk = v^T p, q = p - kk v, A_sub -= 2 (v q^T + q v^T)
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = dot(a.row(k + 1 + i).subspan(k + 1, len), std::span<const double>(v.data(), len));
    }
    const double kk = dot(std::span<const double>(v.data(), len), std::span<const double>(p.data(), len));
    for (std::size_t i = 0; i < len; ++i) p[i] -= kk * v[i];
    for (std::size_t i = 0; i < len; ++i) {
      auto row = a.row(k + 1 + i).subspan(k + 1, len);
      const double vi = v[i];
      const double pi = p[i];
      for (std::size_t j = 0; j < len; ++j) row[j] -= 2.0 * (vi * p[j] + pi * v[j]);
    }
    a(k + 1, k) = alpha;
    a(k, k + 1) = alpha;
    for (std::size_t i = k + 2; i < n; ++i) {
      a(i, k) = 0.0;
      a(k, i) = 0.0;
    }
  }
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i] = a(i, i);
  for (std::size_t i = 0; i + 1 < n; ++i) e[i] = a(i + 1, i);
}

// Implicit QL with Wilkinson-style shifts on a symmetric tridiagonal matrix.
void tridiagonal_ql(Vector& d, Vector& e) {
  const int n = static_cast<int>(d.size());
  if (n == 0) return;
  e[n - 1] = 0.0;
  // Absolute floor for the deflation test: a cluster of near-zero diagonal
  // entries never meets the purely relative one.
  double anorm = 0.0;
  for (int i = 0; i < n; ++i) anorm = std::max(anorm, std::abs(d[i]) + std::abs(e[i]) + (i > 0 ? std::abs(e[i - 1]) : 0.0));
  const double floor = DBL_EPSILON * anorm;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
        if (std::abs(e[m]) <= DBL_EPSILON * dd || std::abs(e[m]) <= floor) break;
      }
      if (m != l) {
        if (iter++ == kMaxQlIterations) throw ConvergenceError("tridiagonal QL", iter);
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        int i;
        for (i = m - 1; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
  if (data_.size() != rows * cols) throw std::invalid_argument("Matrix: entry count != rows * cols");
  if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  if (rows_ == 0 || cols_ == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("Matrix: non-finite entry");
    m(i, i) = values[i];
  }
  return m;
}

Matrix Matrix::diagonal(std::initializer_list<double> values) {
  return diagonal(std::span<const double>(values.begin(), values.size()));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik != 0.0) axpy(aik, b.row(k), ci);
    }
  }
  return c;
}

Matrix multiply_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("multiply_transposed: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& x : c.data()) x *= s;
  return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  // Scaled accumulation keeps tiny and huge columns out of under/overflow.
  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double x : a) {
    const double y = x / scale;
    s += y * y;
  }
  return scale * std::sqrt(s);
}

SvdResult svd(const Matrix& a) {
  if (!a.all_finite()) throw std::invalid_argument("svd: non-finite entry");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transpose());
  std::swap(t.left_vectors, t.right_vectors);
  return t;
}

Vector singular_values(const Matrix& a) {
  if (!a.all_finite()) throw std::invalid_argument("singular_values: non-finite entry");
  Matrix w = a.rows() >= a.cols() ? a.transpose() : a;
  hestenes(w, nullptr);
  Vector sigma(w.rows());
  for (std::size_t j = 0; j < w.rows(); ++j) sigma[j] = norm2(w.row(j));
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

std::size_t epsilon_rank(std::span<const double> sv, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon_rank: eps must be positive");
  return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [eps](double s) { return s > eps; }));
}

std::size_t epsilon_rank(const Matrix& a, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon_rank: eps must be positive");
  const Vector sv = singular_values(a);
  return epsilon_rank(sv, eps);
}

namespace {

std::size_t epsilon_rank_exact(const Matrix& a, double eps, bool relative_to_top) {
  const Vector sv = singular_values(a);
  if (sv.front() == 0.0) return 0;
  return epsilon_rank(sv, relative_to_top ? eps * sv.front() : eps);
}

}  // namespace

std::size_t epsilon_rank_fast(const Matrix& a, double eps, bool relative_to_top) {
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon_rank: eps must be positive");
  // Gram of the short side, accumulated as a sum of outer products of the
  // rows of the tall orientation.
  const Matrix tall = a.rows() >= a.cols() ? a : a.transpose();
  const std::size_t k = tall.cols();
  Matrix gram(k, k);
  for (std::size_t r = 0; r < tall.rows(); ++r) {
    auto row = tall.row(r);
    for (std::size_t i = 0; i < k; ++i) {
      const double ri = row[i];
      if (ri != 0.0) axpy(ri, row, gram.row(i));
    }
  }
  const double gram_norm = frobenius_norm(gram);
  if (gram_norm == 0.0) return 0;
  Vector lambda;
  try {
    lambda = symmetric_eigenvalues(gram);
  } catch (const ConvergenceError&) {
    return epsilon_rank_exact(a, eps, relative_to_top);
  }
  const double lmax = std::max(lambda.front(), 0.0);
  const double thr2 = relative_to_top ? eps * eps * lmax : eps * eps;
  const double band = 8.0 * static_cast<double>(a.rows() + a.cols()) * DBL_EPSILON * gram_norm;
  const bool ambiguous = std::any_of(lambda.begin(), lambda.end(),
                                     [&](double l) { return std::abs(l - thr2) <= band; });
  if (ambiguous) return epsilon_rank_exact(a, eps, relative_to_top);
  return static_cast<std::size_t>(std::count_if(lambda.begin(), lambda.end(), [&](double l) { return l > thr2; }));
}

double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

double operator_norm(const Matrix& a) { return singular_values(a).front(); }

SymmetricEigen symmetric_eig(const Matrix& input) {
  if (input.rows() != input.cols()) throw std::invalid_argument("symmetric_eig: matrix is not square");
  const double scale = std::max(frobenius_norm(input), 1.0);
  if (!is_symmetric(input, 1e-10 * scale)) throw std::invalid_argument("symmetric_eig: matrix is not symmetric");
  const std::size_t n = input.rows();
  Matrix a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(n);
  const double norm_a = frobenius_norm(a);

  bool converged = n < 2;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        if (std::abs(apq) <= 0.5 * DBL_EPSILON * std::sqrt(std::abs(a(p, p) * a(q, q))) ||
            std::abs(apq) <= 1e-300 + DBL_EPSILON * DBL_EPSILON * norm_a) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        rotate_rows(a.row(p), a.row(q), c, s);
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) throw ConvergenceError("Jacobi eigensolver", kMaxJacobiSweeps);

  Vector diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = descending_order(diag);
  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = diag[order[k]];
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = v(i, order[k]);
  }
  return out;
}

Vector symmetric_eigenvalues(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("symmetric_eigenvalues: matrix is not square");
  Vector d, e;
  tridiagonalize(a, d, e);
  tridiagonal_ql(d, e);
  std::sort(d.begin(), d.end(), std::greater<>());
  return d;
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: matrix is not square");
  const std::size_t n = a.rows();
  if (!is_symmetric(a, 1e-10 * std::max(1.0, frobenius_norm(a)))) {
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  }
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw NotPositiveDefiniteError(j);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix spd_inverse(const Matrix& a) {
  const Matrix l = cholesky(a);
  const std::size_t n = a.rows();
  // Columns of L^{-1}, then inv = L^{-T} L^{-1}.
  Matrix linv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = c; i < n; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (std::size_t k = c; k < i; ++k) s -= l(i, k) * linv(k, c);
      linv(i, c) = s / l(i, i);
    }
  }
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
      inv(i, j) = inv(j, i) = s;
    }
  return inv;
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("harmonic_mean: empty input");
  double inv_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0)) throw std::invalid_argument("harmonic_mean: values must be positive");
    inv_sum += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv_sum;
}

double arithmetic_mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("arithmetic_mean: empty input");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace lrlab
