#include "rallyproc/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

void OutcomeFrequencies::validate() const {
  for (double p : {win, error, in_play})
    if (!(p >= 0.0 && p <= 1.0)) throw Error("outcome frequencies must lie in [0, 1]");
  if (std::abs(win + error + in_play - 1.0) > 1e-9) throw Error("outcome frequencies must sum to 1");
}

State calibration_state(const CourtSpec& spec) {
  const int last_row = spec.rows - 1;
  const int a = last_row * spec.cols + 1;                         // A: most negative y, deepest row
  const int b = kCellsPerHalf + last_row * spec.cols + spec.cols;  // B: most positive y, deepest row
  return State::transient(a, b, ShotType::Rally);
}

namespace {

constexpr std::uint64_t kOutcomeStream = 0x6f7574;

}  // namespace

OutcomeFrequencies pipeline_outcomes(const State& s, const StateDistributions& dist, Epsilon eps, int shots,
                                     const GeneratorParams& params, const CourtLayout& layout, std::uint64_t seed) {
  if (shots < 1) throw Error("pipeline_outcomes: shots must be positive");
  const auto& f = dist.intention;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double p : f.probs) cumulative.push_back(acc += p);
  std::vector<Chol2> factors;
  for (const auto& e : dist.execs) factors.push_back(Chol2::of(scale(e, eps).cov));
  Rng rng(derive_seed(seed, kOutcomeStream, static_cast<std::uint64_t>(eps.value)));
  std::uint64_t counts[3] = {0, 0, 0};
  for (int i = 0; i < shots; ++i) {
    const double u = uniform01(rng) * acc;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    k = std::min(k, cumulative.size() - 1);
    while (f.probs[k] == 0.0 && k > 0) --k;
    const Point landing = sample_gaussian(dist.execs[k].mean, factors[k], rng);
    ++counts[static_cast<int>(generate_shot(s, landing, params, layout, rng).outcome)];
  }
  const double n = static_cast<double>(shots);
  OutcomeFrequencies out;
  out.win = static_cast<double>(counts[0]) / n;
  out.error = static_cast<double>(counts[1]) / n;
  out.in_play = static_cast<double>(counts[2]) / n;
  return out;
}

std::map<int, OutcomeFrequencies> epsilon_table(const State& s, const StateDistributions& dist, int max_eps, int shots,
                                                const GeneratorParams& params, const CourtLayout& layout,
                                                std::uint64_t seed) {
  std::map<int, OutcomeFrequencies> out;
  for (int e = 1; e <= max_eps; ++e) out[e] = pipeline_outcomes(s, dist, Epsilon(e, max_eps), shots, params, layout, seed);
  return out;
}

namespace {

double l1(const OutcomeFrequencies& a, const OutcomeFrequencies& b) {
  return std::abs(a.win - b.win) + std::abs(a.error - b.error) + std::abs(a.in_play - b.in_play);
}

}  // namespace

CalibrationResult calibrate(const GeneratorParams& params, const OutcomeFrequencies& targets,
                            const CourtLayout& layout, const CalibrationOptions& opts) {
  targets.validate();
  if (opts.budget < 1) throw Error("calibrate: budget must be positive");
  const State s = calibration_state(layout.spec);
  const int rally = static_cast<int>(ShotType::Rally);
  // Landing mixtures are not searched, so the fitted distributions stay fixed.
  const StateDistributions dist = fit_state(s, 0, layout, params, opts.fit_samples, opts.seed);
  const Epsilon eps(opts.eps, std::max(opts.eps, 20));

  CalibrationResult best;
  best.params = params;
  auto evaluate = [&](const GeneratorParams& p) {
    ++best.evaluations;
    return pipeline_outcomes(s, dist, eps, opts.shots, p, layout, opts.seed);
  };
  best.achieved = evaluate(params);
  best.distance = l1(best.achieved, targets);

  double step[2] = {0.5, 0.02};
  while (best.evaluations < opts.budget && best.distance > 1e-3) {
    bool improved = false;
    for (int coord = 0; coord < 2 && best.evaluations < opts.budget; ++coord) {
      for (double dir : {1.0, -1.0}) {
        if (best.evaluations >= opts.budget) break;
        GeneratorParams trial = best.params;
        if (coord == 0) {
          trial.winner[rally].intercept += dir * step[0];
        } else {
          double& u = trial.unforced_error_rate[rally];
          u = std::clamp(u + dir * step[1], 0.0, 0.5);
          if (u == best.params.unforced_error_rate[rally]) continue;
        }
        const OutcomeFrequencies got = evaluate(trial);
        const double d = l1(got, targets);
        if (d < best.distance) {
          best.params = std::move(trial);
          best.achieved = got;
          best.distance = d;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      step[0] *= 0.5;
      step[1] *= 0.5;
      if (step[0] < 1e-4) break;
    }
  }
  if (best.distance > 0.10)
    throw Error("calibrate: budget exhausted at L1 distance " + std::to_string(best.distance));
  return best;
}

}  // namespace rallyproc
