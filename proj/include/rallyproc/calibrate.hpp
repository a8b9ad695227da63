#pragma once

#include <cstdint>
#include <map>

#include "rallyproc/distfit.hpp"
#include "rallyproc/shotgen.hpp"

namespace rallyproc {

/// Outcome frequencies of Player A's shot.
struct OutcomeFrequencies {
  double win = 0.0;
  double error = 0.0;
  double in_play = 0.0;

  void validate() const;
};

/// Both players in their deuce-side baseline corners, Player A to hit a rally shot.
State calibration_state(const CourtSpec& spec);

/// Player A's outcomes when aiming by f_s and executing at the given error level.
OutcomeFrequencies pipeline_outcomes(const State& s, const StateDistributions& dist, Epsilon eps, int shots,
                                     const GeneratorParams& params, const CourtLayout& layout, std::uint64_t seed);

/// Outcome table for eps = 1..max_eps at one state.
std::map<int, OutcomeFrequencies> epsilon_table(const State& s, const StateDistributions& dist, int max_eps, int shots,
                                                const GeneratorParams& params, const CourtLayout& layout,
                                                std::uint64_t seed);

struct CalibrationOptions {
  int budget = 60;           // outcome evaluations
  int shots = 20000;         // shots per evaluation
  int fit_samples = 4000;
  int eps = 13;
  std::uint64_t seed = 1;
};

struct CalibrationResult {
  GeneratorParams params;
  OutcomeFrequencies achieved;
  double distance = 0.0;  // L1
  int evaluations = 0;
};

/// Coordinate search over the rally winner intercept and unforced error rate
/// minimising the L1 distance to the targets. Throws if the budget runs out
/// above distance 0.10.
CalibrationResult calibrate(const GeneratorParams& params, const OutcomeFrequencies& targets,
                            const CourtLayout& layout, const CalibrationOptions& opts);

}  // namespace rallyproc
