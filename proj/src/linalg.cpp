#include "itss/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "itss/errors.hpp"
#include "itss/rng.hpp"

namespace itss::linalg {

namespace {

constexpr double kRankTruncation = 1e-10;   // relative to sigma_1
constexpr double kJacobiTolerance = 1e-14;  // off-diag Frobenius vs trace

// Cyclic Jacobi eigendecomposition of a symmetric PSD matrix held in g
// (n x n, row-major). On return g's diagonal holds eigenvalues and the
// columns of vecs the corresponding eigenvectors. Converged when the
// off-diagonal Frobenius norm drops below kJacobiTolerance * trace.
void jacobi_eigh(std::vector<double>& g, std::size_t n, std::vector<double>& vecs) {
  vecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;

  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += g[i * n + i];
  if (trace <= 0.0) return;  // PSD with zero trace means the zero matrix

  const double threshold = kJacobiTolerance * trace;
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * g[p * n + q] * g[p * n + q];
    if (std::sqrt(off) < threshold) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = g[p * n + q];
        if (apq == 0.0) continue;
        const double app = g[p * n + p];
        const double aqq = g[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double gkp = g[k * n + p];
          const double gkq = g[k * n + q];
          g[k * n + p] = c * gkp - s * gkq;
          g[k * n + q] = s * gkp + c * gkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double gpk = g[p * n + k];
          const double gqk = g[q * n + k];
          g[p * n + k] = c * gpk - s * gqk;
          g[q * n + k] = s * gpk + c * gqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k * n + p];
          const double vkq = vecs[k * n + q];
          vecs[k * n + p] = c * vkp - s * vkq;
          vecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (x.size() != m.cols || y.size() != m.rows)
    throw ShapeError("matvec: dimension mismatch");
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

void matvec_transposed(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (x.size() != m.rows || y.size() != m.cols)
    throw ShapeError("matvec_transposed: dimension mismatch");
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * xi;
  }
}

SvdResult compact_svd(const Matrix& w) {
  const std::size_t t = w.rows;
  const std::size_t d = w.cols;
  if (t == 0 || d == 0) throw ShapeError("compact_svd: empty matrix");
  if (t > d)
    throw ShapeError("compact_svd: expected a short-and-wide matrix, got " +
                     std::to_string(t) + " x " + std::to_string(d));
  for (double v : w.data)
    if (!std::isfinite(v)) throw InvalidInputError("compact_svd: non-finite entry");

  // Gram matrix G = W W^T, t x t.
  std::vector<double> gram(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i; j < t; ++j) {
      const double s = dot(w.row(i), w.row(j));
      gram[i * t + j] = s;
      gram[j * t + i] = s;
    }
  }

  std::vector<double> vecs;
  jacobi_eigh(gram, t, vecs);

  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return gram[a * t + a] > gram[b * t + b];
  });

  // Eigenvalues of the Gram matrix lose half the digits; recover each
  // singular value directly as |W^T u_j| so that rank-deficient inputs
  // (duplicate checkpoints) truncate cleanly instead of emitting noise
  // directions at the sqrt(eps) level.
  std::vector<std::vector<double>> us(t, std::vector<double>(t));
  std::vector<std::vector<double>> ys(t, std::vector<double>(d));
  std::vector<double> sigma(t);
  for (std::size_t j = 0; j < t; ++j) {
    for (std::size_t i = 0; i < t; ++i) us[j][i] = vecs[i * t + order[j]];
    matvec_transposed(w, us[j], ys[j]);
    sigma[j] = norm(ys[j]);
  }
  std::vector<std::size_t> by_sigma(t);
  std::iota(by_sigma.begin(), by_sigma.end(), 0);
  std::stable_sort(by_sigma.begin(), by_sigma.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double sigma1 = sigma[by_sigma[0]];
  std::size_t rank = 0;
  while (rank < t && sigma[by_sigma[rank]] > kRankTruncation * sigma1) ++rank;
  if (sigma1 == 0.0) rank = 0;

  SvdResult out;
  out.left = Matrix(t, rank);
  out.right = Matrix(d, rank);
  out.singular_values.resize(rank);

  std::vector<double> v(d);
  for (std::size_t j = 0; j < rank; ++j) {
    const std::size_t src = by_sigma[j];
    out.singular_values[j] = sigma[src];
    for (std::size_t i = 0; i < t; ++i) out.left.at(i, j) = us[src][i];
    for (std::size_t i = 0; i < d; ++i) v[i] = ys[src][i] / sigma[src];

    // Re-orthogonalize against already accepted columns (two passes) and
    // renormalize; keeps right^T right at machine-precision identity even
    // when trailing singular values are close.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += out.right.at(i, k) * v[i];
        for (std::size_t i = 0; i < d; ++i) v[i] -= proj * out.right.at(i, k);
      }
    }
    const double vn = norm(v);
    if (vn > 0.0)
      for (double& x : v) x /= vn;
    for (std::size_t i = 0; i < d; ++i) out.right.at(i, j) = v[i];
  }
  return out;
}

Matrix orthonormal_random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (cols > rows)
    throw ShapeError("orthonormal_random: cols " + std::to_string(cols) +
                     " exceeds rows " + std::to_string(rows));
  Matrix q(rows, cols);
  rng::Engine eng(seed);
  // Column-major fill so that the first columns are stable when cols varies.
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) q.at(i, j) = eng.next_gaussian();

  // Modified Gram-Schmidt, one extra re-orthogonalization pass.
  for (std::size_t j = 0; j < cols; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < rows; ++i) proj += q.at(i, k) * q.at(i, j);
        for (std::size_t i = 0; i < rows; ++i) q.at(i, j) -= proj * q.at(i, k);
      }
    }
    double n = 0.0;
    for (std::size_t i = 0; i < rows; ++i) n += q.at(i, j) * q.at(i, j);
    n = std::sqrt(n);
    if (n == 0.0) throw InvalidInputError("orthonormal_random: degenerate draw");
    for (std::size_t i = 0; i < rows; ++i) q.at(i, j) /= n;
  }
  return q;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    throw InvalidInputError("cosine: undefined for zero vectors");
  return dot(a, b) / (na * nb);
}

}  // namespace itss::linalg
