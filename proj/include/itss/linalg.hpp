#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace itss::linalg {

// Dense row-major matrix of 64-bit reals.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
};

// Compact SVD of a short-and-wide matrix w (t x D, t <= D):
//   w = left * diag(singular_values) * right^T
// left is t x r, right is D x r, r = numerical rank. Columns with
// sigma_j <= 1e-10 * sigma_1 are truncated.
struct SvdResult {
  Matrix left;
  std::vector<double> singular_values;  // non-increasing, length r
  Matrix right;

  std::size_t rank() const { return singular_values.size(); }
};

// Gram-matrix route: eigendecompose w * w^T (t x t) with cyclic Jacobi
// rotations, then recover right singular vectors as w^T u_j / sigma_j.
// Intended for t << D; throws ShapeError when t > D and InvalidInputError
// on non-finite entries.
SvdResult compact_svd(const Matrix& w);

// rows x cols matrix with orthonormal columns (cols <= rows), deterministic
// per seed: i.i.d. standard Gaussian fill, then modified Gram-Schmidt with
// one re-orthogonalization pass.
Matrix orthonormal_random(std::size_t rows, std::size_t cols, std::uint64_t seed);

// a . b / (|a| |b|). Throws InvalidInputError when either norm is zero.
double cosine(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// y = m * x  (m: r x c, x: length c, y: length r)
void matvec(const Matrix& m, std::span<const double> x, std::span<double> y);
// y = m^T * x  (x: length r, y: length c)
void matvec_transposed(const Matrix& m, std::span<const double> x, std::span<double> y);

}  // namespace itss::linalg
