#include "rallyproc/distfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

Epsilon::Epsilon(int v, int m) : value(v), max(m) {
  if (m < 1) throw Error("epsilon max must be at least 1");
  if (v < 1 || v > m) throw Error("epsilon " + std::to_string(v) + " outside [1, " + std::to_string(m) + "]");
}

double IntentionDistribution::prob(ActionId a) const {
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (actions[i] == a) return probs[i];
  return 0.0;
}

void IntentionDistribution::validate() const {
  if (actions.size() != probs.size()) throw Error("intention distribution: size mismatch");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw Error("intention distribution: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error("intention distribution does not sum to 1");
}

const ExecutionDistribution& StateDistributions::exec(ActionId a) const {
  for (std::size_t i = 0; i < intention.actions.size(); ++i)
    if (intention.actions[i] == a) return execs[i];
  throw Error("no execution distribution for action " + std::to_string(a.value));
}

namespace {

double phi_upper(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

}  // namespace

// Genz's BVNU: Drezner-Wesolowsky with Gauss-Legendre quadrature, ~1e-15 accuracy.
double bivariate_normal_upper(double h, double k, double r) {
  if (r == 0.0) return phi_upper(h) * phi_upper(k);
  static constexpr double w6[3] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr double x6[3] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
  static constexpr double w12[6] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                    0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr double x12[6] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                    0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
  static constexpr double w20[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                     0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                     0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                     0.1527533871307259};
  static constexpr double x20[10] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                                     0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                                     0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                                     0.07652652113349733};
  const double* w;
  const double* x;
  int lg;
  if (std::abs(r) < 0.3) {
    w = w6, x = x6, lg = 3;
  } else if (std::abs(r) < 0.75) {
    w = w12, x = x12, lg = 6;
  } else {
    w = w20, x = x20, lg = 10;
  }
  constexpr double tp = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = 0.5 * std::asin(r);
    for (int i = 0; i < lg; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sgn * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / tp + phi_upper(h) * phi_upper(k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::abs(r) < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      double asr = -0.5 * (bs / as + hk);
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * phi_upper(b / a);
        bvn -= std::exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a *= 0.5;
      double sum = 0.0;
      for (int i = 0; i < lg; ++i) {
        for (double sgn : {-1.0, 1.0}) {
          const double xs = std::pow(a * (1.0 + sgn * x[i]), 2);
          asr = -0.5 * (bs / xs + hk);
          if (asr <= -100.0) continue;
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep = std::exp(-(0.5 * hk) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          sum += w[i] * std::exp(asr) * (sp - ep);
        }
      }
      bvn = (a * sum - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += phi_upper(std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double l = h < 0.0 ? phi_upper(-k) - phi_upper(-h) : phi_upper(h) - phi_upper(k);
      bvn = l - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

double gaussian_rect_mass(Point mean, const Cov2& cov, const Rect& r) {
  const double sx = std::sqrt(cov.xx);
  const double sy = std::sqrt(cov.yy);
  const double rho = std::clamp(cov.xy / (sx * sy), -1.0, 1.0);
  const double a0 = (r.x0 - mean.x) / sx, a1 = (r.x1 - mean.x) / sx;
  const double b0 = (r.y0 - mean.y) / sy, b1 = (r.y1 - mean.y) / sy;
  const double m = bivariate_normal_upper(a0, b0, rho) - bivariate_normal_upper(a1, b0, rho) -
                   bivariate_normal_upper(a0, b1, rho) + bivariate_normal_upper(a1, b1, rho);
  return std::clamp(m, 0.0, 1.0);
}

double mass_in_region(Point mean, const Cov2& cov, const ActionRegion& region, const QmcNormals& qmc) {
  const Chol2 l = Chol2::of(cov);
  std::size_t inside = 0;
  for (const Point& z : qmc.points())
    if (region.contains(mean + l.apply(z))) ++inside;
  return static_cast<double>(inside) / static_cast<double>(qmc.size());
}

double find_mass_scale(Point mean, const Cov2& cov, const ActionRegion& region, double target) {
  if (!cov.positive_definite()) throw Error("find_mass_scale: covariance is not positive definite");
  if (!(target > 0.0 && target < 1.0)) throw Error("find_mass_scale: target mass outside (0, 1)");
  auto mass = [&](double c) {
    const Cov2 s = cov.scaled(c);
    if (region.is_rectangle()) return gaussian_rect_mass(mean, s, region.parts.front());
    double m = 0.0;
    for (const auto& r : region.parts) m += gaussian_rect_mass(mean, s, r);
    return m;
  };
  // Mass is decreasing in c for a mean inside the region.
  double lo = -40.0, hi = 40.0;  // log c
  if (mass(std::exp(lo)) < target) throw Error("find_mass_scale: target mass unreachable for action " + region.name);
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(std::exp(mid)) >= target)
      lo = mid;
    else
      hi = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

namespace {

Point clamp_into(Point p, const ActionRegion& region) {
  if (region.contains(p)) return p;
  // Nearest point of the nearest part, pulled slightly inside.
  double best = std::numeric_limits<double>::infinity();
  Point out = region.centroid();
  for (const auto& r : region.parts) {
    const double ex = 1e-6 * r.depth(), ey = 1e-6 * r.width();
    const Point q{std::clamp(p.x, r.x0 + ex, r.x1 - ex), std::clamp(p.y, r.y0 + ey, r.y1 - ey)};
    const double d = std::hypot(q.x - p.x, q.y - p.y);
    if (d < best) best = d, out = q;
  }
  return out;
}

}  // namespace

IntentionDistribution fit_intention(const State& s, std::span<const Point> landings, const CourtLayout& layout) {
  if (landings.empty()) throw Error("fit_intention: no samples");
  if (s.is_absorbing()) throw Error("fit_intention: absorbing state");
  IntentionDistribution f;
  f.state = s;
  f.actions = permissible_actions(s, layout);
  const ActionKind kind = action_kind_for(s, layout.spec);
  std::vector<std::size_t> counts(layout.actions.size(), 0);
  std::size_t in_bounds = 0;
  for (const Point& p : landings) {
    if (auto a = locate_action(p, kind, layout)) {
      ++counts[a->value];
      ++in_bounds;
    }
  }
  f.probs.resize(f.actions.size());
  for (std::size_t i = 0; i < f.actions.size(); ++i)
    f.probs[i] = in_bounds == 0 ? 1.0 / static_cast<double>(f.actions.size())
                                : static_cast<double>(counts[f.actions[i].value]) / static_cast<double>(in_bounds);
  return f;
}

ExecutionDistribution fit_execution(const ActionRegion& region, std::span<const Point> samples) {
  if (samples.size() < static_cast<std::size_t>(kMinExecutionSamples))
    throw Error("fit_execution: fewer than 10 samples for action " + region.name);
  const Moments m = sample_moments(samples);
  const double scale_ref = std::max(m.cov.xx, m.cov.yy);
  if (!m.cov.positive_definite() || m.cov.det() <= 1e-10 * scale_ref * scale_ref)
    throw Error("fit_execution: rank-deficient samples for action " + region.name);
  ExecutionDistribution e;
  e.region = region.id;
  e.mean = clamp_into(m.mean, region);
  e.scale_c = find_mass_scale(e.mean, m.cov, region);
  e.cov = m.cov.scaled(e.scale_c);
  return e;
}

ExecutionDistribution fallback_execution(const ActionRegion& region) {
  const double sigma = region.width() / 6.0;
  const Cov2 iso{sigma * sigma, 0.0, sigma * sigma};
  ExecutionDistribution e;
  e.region = region.id;
  e.mean = clamp_into(region.centroid(), region);
  e.scale_c = find_mass_scale(e.mean, iso, region);
  e.cov = iso.scaled(e.scale_c);
  e.fallback = true;
  return e;
}

ExecutionDistribution scale(const ExecutionDistribution& e, Epsilon eps) {
  ExecutionDistribution out = e;
  out.cov = e.cov.scaled(static_cast<double>(eps.value));
  return out;
}

namespace {

constexpr std::uint64_t kFitStream = 0x66697400;
constexpr std::uint64_t kRefitStream = 0x72656669;

// Fallbacks depend only on the region, so they are computed once per layout.
std::vector<ExecutionDistribution> fallback_table(const CourtLayout& layout) {
  std::vector<ExecutionDistribution> out;
  out.reserve(layout.actions.size());
  for (const auto& a : layout.actions) out.push_back(fallback_execution(a));
  return out;
}

StateDistributions fit_state_with(const State& s, StateId id, const CourtLayout& layout, const GeneratorParams& params,
                                  int fit_samples, std::uint64_t seed,
                                  const std::vector<ExecutionDistribution>& fallbacks) {
  Rng rng(derive_seed(seed, kFitStream, id));
  std::vector<Point> landings;
  landings.reserve(static_cast<std::size_t>(fit_samples));
  for (int i = 0; i < fit_samples; ++i) landings.push_back(generate_shot(s, std::nullopt, params, layout, rng).landing);

  StateDistributions out;
  out.intention = fit_intention(s, landings, layout);
  const ActionKind kind = action_kind_for(s, layout.spec);
  std::vector<std::vector<Point>> per_action(layout.actions.size());
  for (const Point& p : landings)
    if (auto a = locate_action(p, kind, layout)) per_action[a->value].push_back(p);
  for (ActionId a : out.intention.actions) {
    const auto& pts = per_action[a.value];
    if (pts.size() >= static_cast<std::size_t>(kMinExecutionSamples)) {
      try {
        out.execs.push_back(fit_execution(layout.action(a), pts));
        continue;
      } catch (const Error&) {
      }
    }
    out.execs.push_back(fallbacks[a.value]);
  }
  return out;
}

void check_fit_args(const StateCensus& census, int fit_samples) {
  if (fit_samples < 100) throw Error("fit: at least 100 samples per state are required");
  if (census.num_transient() == 0) throw Error("fit: empty state census");
}

}  // namespace

StateDistributions fit_state(const State& s, StateId id, const CourtLayout& layout, const GeneratorParams& params,
                             int fit_samples, std::uint64_t seed) {
  if (fit_samples < 100) throw Error("fit: at least 100 samples per state are required");
  return fit_state_with(s, id, layout, params, fit_samples, seed, fallback_table(layout));
}

DistributionSet fit_all(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                        int fit_samples, std::uint64_t seed) {
  check_fit_args(census, fit_samples);
  const auto fallbacks = fallback_table(layout);
  DistributionSet out{census.hash(), seed, fit_samples, {}};
  const auto states = census.transient();
  out.states.resize(states.size());
  const auto n = static_cast<std::int64_t>(states.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out.states[i] = fit_state_with(states[i], static_cast<StateId>(i), layout, params, fit_samples, seed, fallbacks);
    } catch (const std::exception& e) {
#pragma omp critical(rallyproc_fit_error)
      if (failure.empty()) failure = "state " + std::to_string(i) + ": " + e.what();
    }
  }
  if (!failure.empty()) throw Error("fit: " + failure);
  return out;
}

DistributionSet fit_all_serial(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                               int fit_samples, std::uint64_t seed) {
  check_fit_args(census, fit_samples);
  const auto fallbacks = fallback_table(layout);
  DistributionSet out{census.hash(), seed, fit_samples, {}};
  const auto states = census.transient();
  for (std::size_t i = 0; i < states.size(); ++i)
    out.states.push_back(fit_state_with(states[i], static_cast<StateId>(i), layout, params, fit_samples, seed, fallbacks));
  return out;
}

DistributionSet refit_intentions(const DistributionSet& dists, const CourtLayout& layout, Epsilon eps, int n,
                                 std::uint64_t seed) {
  if (n < 1) throw Error("refit_intentions: n must be positive");
  DistributionSet out = dists;
  const auto count = static_cast<std::int64_t>(dists.states.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto& sd = dists.states[i];
    Rng rng(derive_seed(seed, kRefitStream, static_cast<std::uint64_t>(i) * 64 + eps.value));
    std::vector<Point> landings;
    for (std::size_t k = 0; k < sd.intention.actions.size(); ++k) {
      const int draws = static_cast<int>(std::floor(n * sd.intention.probs[k]));
      if (draws == 0) continue;
      const ExecutionDistribution e = scale(sd.execs[k], eps);
      const Chol2 l = Chol2::of(e.cov);
      for (int d = 0; d < draws; ++d) landings.push_back(sample_gaussian(e.mean, l, rng));
    }
    if (landings.empty()) continue;
    out.states[i].intention = fit_intention(sd.intention.state, landings, layout);
  }
  return out;
}

}  // namespace rallyproc
