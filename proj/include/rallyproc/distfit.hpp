#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rallyproc/gauss2.hpp"
#include "rallyproc/geometry.hpp"
#include "rallyproc/shotgen.hpp"

namespace rallyproc {

inline constexpr double kTargetRegionMass = 0.90;

/// Execution error level: covariance multiplier in [1, max].
struct Epsilon {
  int value = 1;
  int max = 20;

  Epsilon() = default;
  explicit Epsilon(int v, int m = 20);
};

/// f_s over the permissible actions of one state. `probs` is aligned with
/// `actions` (ascending ids) and may contain exact zeros.
struct IntentionDistribution {
  State state;
  std::vector<ActionId> actions;
  std::vector<double> probs;

  double prob(ActionId a) const;
  void validate() const;
};

struct ExecutionDistribution {
  Point mean;
  Cov2 cov;  // normalised so the region holds kTargetRegionMass at epsilon = 1
  ActionId region;
  double scale_c = 1.0;   // multiplier applied to the sample covariance
  bool fallback = false;  // isotropic substitute, not fitted from samples
};

/// Probability that N(mean, cov) lands in [x0, x1] x [y0, y1], via the
/// bivariate normal upper-orthant integral.
double gaussian_rect_mass(Point mean, const Cov2& cov, const Rect& r);
/// P(X > h, Y > k) for standard bivariate normals with correlation rho.
double bivariate_normal_upper(double h, double k, double rho);

/// Quasi-Monte-Carlo estimate of the Gaussian mass inside a region.
double mass_in_region(Point mean, const Cov2& cov, const ActionRegion& region,
                      const QmcNormals& qmc = QmcNormals::standard());

/// Multiplier c such that N(mean, c * cov) puts `target` mass in the region.
double find_mass_scale(Point mean, const Cov2& cov, const ActionRegion& region, double target = kTargetRegionMass);

IntentionDistribution fit_intention(const State& s, std::span<const Point> landings, const CourtLayout& layout);

/// Sample moments rescaled to the target mass. Throws on fewer than 10 samples
/// or a rank-deficient covariance.
ExecutionDistribution fit_execution(const ActionRegion& region, std::span<const Point> samples);
/// Centroid with isotropic sigma = width / 6, rescaled to the target mass.
ExecutionDistribution fallback_execution(const ActionRegion& region);

ExecutionDistribution scale(const ExecutionDistribution& e, Epsilon eps);

struct StateDistributions {
  IntentionDistribution intention;
  std::vector<ExecutionDistribution> execs;  // aligned with intention.actions

  const ExecutionDistribution& exec(ActionId a) const;
};

struct DistributionSet {
  std::string census_hash;
  std::uint64_t seed = 0;
  int fit_samples = 0;
  std::vector<StateDistributions> states;  // indexed by StateId
};

inline constexpr int kMinExecutionSamples = 10;

/// Fits f_s and every execution distribution for each transient state from
/// `fit_samples` unconditioned generator shots per state.
DistributionSet fit_all(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                        int fit_samples, std::uint64_t seed);
DistributionSet fit_all_serial(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                               int fit_samples, std::uint64_t seed);
StateDistributions fit_state(const State& s, StateId id, const CourtLayout& layout, const GeneratorParams& params,
                             int fit_samples, std::uint64_t seed);

/// Re-estimates every f_s at the given error level: floor(n * f_s(a)) draws
/// from each scaled execution distribution, then in-bounds proportions.
DistributionSet refit_intentions(const DistributionSet& dists, const CourtLayout& layout, Epsilon eps, int n,
                                 std::uint64_t seed);

}  // namespace rallyproc
