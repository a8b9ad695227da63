#include "rallyproc/gauss2.hpp"

#include <numbers>

namespace rallyproc {

std::pair<double, double> Cov2::eigenvalues() const {
  const double tr = xx + yy;
  const double disc = std::sqrt(std::max(0.0, 0.25 * (xx - yy) * (xx - yy) + xy * xy));
  return {0.5 * tr - disc, 0.5 * tr + disc};
}

Chol2 Chol2::of(const Cov2& c) {
  if (!c.positive_definite()) throw Error("covariance is not positive definite");
  Chol2 l;
  l.l11 = std::sqrt(c.xx);
  l.l21 = c.xy / l.l11;
  l.l22 = std::sqrt(c.yy - l.l21 * l.l21);
  return l;
}

Moments sample_moments(std::span<const Point> pts) {
  Moments m;
  const double n = static_cast<double>(pts.size());
  for (const auto& p : pts) {
    m.mean.x += p.x;
    m.mean.y += p.y;
  }
  m.mean.x /= n;
  m.mean.y /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : pts) {
    const double dx = p.x - m.mean.x, dy = p.y - m.mean.y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double d = n > 1 ? n - 1 : 1;
  m.cov = {sxx / d, sxy / d, syy / d};
  return m;
}

namespace {

double radical_inverse(std::size_t i, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

}  // namespace

QmcNormals::QmcNormals(std::size_t n) {
  points_.reserve(n);
  for (std::size_t i = 1; i <= n; ++i) {
    const double u1 = radical_inverse(i, 2);
    const double u2 = radical_inverse(i, 3);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    points_.push_back({r * std::cos(t), r * std::sin(t)});
  }
}

const QmcNormals& QmcNormals::standard() {
  static const QmcNormals q(200000);
  return q;
}

}  // namespace rallyproc
