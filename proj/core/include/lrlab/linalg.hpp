#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrlab {

using Vector = std::vector<double>;

/// Raised when an iterative kernel fails to converge within its sweep budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations)
      : std::runtime_error(what + " did not converge after " +
                           std::to_string(iterations) + " sweeps"),
        iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

/// Raised by cholesky() when a pivot is not strictly positive.
class NotPositiveDefiniteError : public std::runtime_error {
 public:
  explicit NotPositiveDefiniteError(std::size_t pivot)
      : std::runtime_error("matrix is not positive definite (pivot " +
                           std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Dense row-major matrix of doubles.
///
/// Public constructors reject non-finite entries. Kernels that build results
/// internally go through the unchecked zero-initialising constructor.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix diagonal(std::initializer_list<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transpose() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Vector operator*(const Matrix& a, std::span<const double> x);

/// a * b^T without materialising the transpose.
Matrix multiply_transposed(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

struct SvdResult {
  Matrix left_vectors;    // m x k, orthonormal columns, k = min(m, n)
  Vector singular_values; // nonincreasing, >= 0
  Matrix right_vectors;   // n x k, orthonormal columns
};

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
SvdResult svd(const Matrix& a);

/// Singular values only, same one-sided Jacobi kernel without vector accumulation.
Vector singular_values(const Matrix& a);

/// Count of singular values strictly greater than eps.
std::size_t epsilon_rank(const Matrix& a, double eps);
std::size_t epsilon_rank(std::span<const double> singular_values, double eps);

/// epsilon_rank computed from the eigenvalues of the smaller Gram matrix.
/// With `relative_to_top` the threshold is eps * sigma_max(a).
///
/// Falls back to the Jacobi SVD whenever any eigenvalue lies inside the
/// rounding band of the squared threshold, so the count always equals the
/// one obtained from singular_values().
std::size_t epsilon_rank_fast(const Matrix& a, double eps, bool relative_to_top = false);

double frobenius_norm(const Matrix& a);
double operator_norm(const Matrix& a);

struct SymmetricEigen {
  Vector eigenvalues;  // nonincreasing
  Matrix eigenvectors; // column i pairs with eigenvalues[i]
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
SymmetricEigen symmetric_eig(const Matrix& a);

/// Eigenvalues only (Householder tridiagonalisation + implicit QL), nonincreasing.
Vector symmetric_eigenvalues(const Matrix& a);

/// Lower-triangular L with L * L^T = a.
Matrix cholesky(const Matrix& a);

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
Matrix spd_inverse(const Matrix& a);

double harmonic_mean(std::span<const double> values);
double arithmetic_mean(std::span<const double> values);

bool is_symmetric(const Matrix& a, double tol);

}  // namespace lrlab
