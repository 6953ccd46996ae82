#include "bodycomp/chinfit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bodycomp {
namespace {

// Gaussian elimination with partial pivoting on a dense n x n system.
// Throws if a pivot collapses (rank-deficient system).
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b,
                                 int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::fabs(a[col * n + col]);
    for (int row = col + 1; row < n; ++row) {
      const double mag = std::fabs(a[row * n + col]);
      if (mag > best) {
        best = mag;
        pivot = row;
      }
    }
    if (!(best > 1e-12)) {
      throw std::runtime_error("fit_polynomial: rank-deficient design matrix");
    }
    if (pivot != col) {
      for (int k = col; k < n; ++k) std::swap(a[pivot * n + k], a[col * n + k]);
      std::swap(b[pivot], b[col]);
    }
    for (int row = col + 1; row < n; ++row) {
      const double f = a[row * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (int k = col; k < n; ++k) a[row * n + k] -= f * a[col * n + k];
      b[row] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (int row = n - 1; row >= 0; --row) {
    double acc = b[row];
    for (int k = row + 1; k < n; ++k) acc -= a[row * n + k] * x[k];
    x[row] = acc / a[row * n + row];
  }
  return x;
}

}  // namespace

std::vector<Point> normalize_points(const std::vector<Point>& points,
                                    const BBox& bbox) {
  if (points.size() < 3) {
    throw std::runtime_error("normalize_points: need at least 3 points, got " +
                             std::to_string(points.size()));
  }
  if (bbox.w < 1 || bbox.h < 1) {
    throw std::runtime_error("normalize_points: degenerate bbox");
  }
  std::vector<Point> out;
  out.reserve(points.size());
  for (const Point& p : points) {
    out.push_back({2.0 * (p.x - bbox.x) / bbox.w - 1.0,
                   (p.y - bbox.y) / bbox.h});
  }
  return out;
}

ChinFit fit_polynomial(const std::vector<Point>& points, int degree) {
  if (degree < 1) {
    throw std::runtime_error("fit_polynomial: degree must be >= 1");
  }
  const int n_coef = degree + 1;
  if (points.size() < static_cast<std::size_t>(n_coef)) {
    throw std::runtime_error(
        "fit_polynomial: need at least " + std::to_string(n_coef) +
        " points for degree " + std::to_string(degree));
  }

  // Normal equations: (X^T X) c = X^T v with X the Vandermonde matrix.
  std::vector<double> xtx(static_cast<std::size_t>(n_coef) * n_coef, 0.0);
  std::vector<double> xtv(n_coef, 0.0);
  std::vector<double> powers(n_coef);
  for (const Point& p : points) {
    powers[0] = 1.0;
    for (int k = 1; k < n_coef; ++k) powers[k] = powers[k - 1] * p.x;
    for (int i = 0; i < n_coef; ++i) {
      for (int j = 0; j < n_coef; ++j) xtx[i * n_coef + j] += powers[i] * powers[j];
      xtv[i] += powers[i] * p.y;
    }
  }

  ChinFit fit;
  fit.degree = degree;
  fit.coefficients = solve_linear(std::move(xtx), std::move(xtv), n_coef);

  double sse = 0.0;
  for (const Point& p : points) {
    double pred = 0.0;
    double upow = 1.0;
    for (int k = 0; k < n_coef; ++k) {
      pred += fit.coefficients[k] * upow;
      upow *= p.x;
    }
    const double r = p.y - pred;
    sse += r * r;
  }
  fit.rmse = std::sqrt(sse / static_cast<double>(points.size()));
  return fit;
}

}  // namespace bodycomp
