#pragma once

#include <array>
#include <vector>

#include "bodycomp/bbox.hpp"

namespace bodycomp {

struct Point {
  double x = 0;
  double y = 0;

  bool operator==(const Point&) const = default;
};

// Least-squares polynomial through chin contour points, fitted in
// bbox-normalized coordinates so the coefficients are scale-invariant.
struct ChinFit {
  int degree = 2;
  std::vector<double> coefficients;  // c0..c_degree
  double rmse = 0.0;
};

// Maps image-pixel points into the face box frame:
//   u = 2*(x - bbox.x)/bbox.w - 1   (so u spans [-1, 1] across the box)
//   v = (y - bbox.y)/bbox.h          (so v spans [0, 1] top to bottom)
// Throws on a degenerate box or fewer than 3 points.
std::vector<Point> normalize_points(const std::vector<Point>& points,
                                    const BBox& bbox);

// Fits v = sum_k c_k u^k by least squares (normal equations with partial
// pivoting). Throws if there are fewer than degree+1 points or the design
// matrix is rank-deficient (for example all u equal).
ChinFit fit_polynomial(const std::vector<Point>& points, int degree);

}  // namespace bodycomp
