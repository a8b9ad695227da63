#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "rallyproc/types.hpp"

namespace rallyproc {

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Cov2 {
  double xx = 1.0, xy = 0.0, yy = 1.0;

  double det() const { return xx * yy - xy * xy; }
  bool positive_definite() const { return xx > 0.0 && det() > 0.0; }
  Cov2 scaled(double c) const { return {c * xx, c * xy, c * yy}; }
  /// Eigenvalues in ascending order.
  std::pair<double, double> eigenvalues() const;
};

/// Lower-triangular Cholesky factor of a Cov2.
struct Chol2 {
  double l11 = 1.0, l21 = 0.0, l22 = 1.0;

  static Chol2 of(const Cov2& c);
  Point apply(Point z) const { return {l11 * z.x, l21 * z.x + l22 * z.y}; }
};

using Rng = std::mt19937_64;

inline Point standard_normal2(Rng& rng) {
  std::normal_distribution<double> n;
  const double a = n(rng);
  const double b = n(rng);
  return {a, b};
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline Point sample_gaussian(Point mean, const Chol2& l, Rng& rng) { return mean + l.apply(standard_normal2(rng)); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Sample mean and (unbiased) covariance of a point set.
struct Moments {
  Point mean;
  Cov2 cov;
};
Moments sample_moments(std::span<const Point> pts);

/// Fixed low-discrepancy set of standard bivariate normal points: a Halton
/// (2, 3) sequence pushed through the Box-Muller map.
class QmcNormals {
 public:
  explicit QmcNormals(std::size_t n);
  static const QmcNormals& standard();  // 2e5 points
  std::span<const Point> points() const { return points_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Point> points_;
};

}  // namespace rallyproc
