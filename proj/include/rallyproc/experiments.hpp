#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rallyproc/calibrate.hpp"
#include "rallyproc/solver.hpp"

namespace rallyproc {

/// Empirical point-start frequencies, normalised within each family.
struct StartWeights {
  std::vector<std::pair<StateId, double>> serve;
  std::vector<std::pair<StateId, double>> ret;
  std::uint64_t samples = 0;

  void validate() const;
};

StartWeights estimate_start_weights(const StateCensus& census, const GeneratorParams& params,
                                    const CourtLayout& layout, int samples, std::uint64_t seed);
void write_start_weights(const StartWeights& w, const StateCensus& census, const std::filesystem::path& path);
StartWeights read_start_weights(const std::filesystem::path& path, const StateCensus& census);

struct StartingStateValue {
  double serve_value = 0.0;
  double return_value = 0.0;
  double combined = 0.0;
};

StartingStateValue starting_state_value(const ValueFunction& vf, const StartWeights& weights);

enum class PlaystyleMode : std::uint8_t { Average, Conservative, Aggressive };
std::string_view to_string(PlaystyleMode m);

struct PlaystyleTransform {
  PlaystyleMode mode = PlaystyleMode::Average;
  double shift = 0.5;
};

IntentionDistribution playstyle_transform(const IntentionDistribution& f, const PlaystyleTransform& t,
                                          const CourtLayout& layout);
IntentionSet playstyle_transform(const IntentionSet& f, const PlaystyleTransform& t, const CourtLayout& layout);

/// Largest epsilon whose error frequency does not exceed the empirical one;
/// epsilon 1 if none qualifies. Non-monotone error columns add warnings.
int select_average_epsilon(const std::map<int, OutcomeFrequencies>& table, double empirical_error,
                           std::vector<std::string>* warnings = nullptr);

enum class HistogramFilter : std::uint8_t { AllStates, BehindBaseline };

std::map<ActionId, double> optimal_action_histogram(const std::vector<ActionId>& policy, const StateCensus& census,
                                                    HistogramFilter filter);
double conservative_share(const std::map<ActionId, double>& histogram, const CourtLayout& layout);

/// One row per series, one column per epsilon.
struct ExperimentTable {
  std::string figure;
  std::vector<int> eps;
  std::vector<std::pair<std::string, std::vector<double>>> rows;

  const std::vector<double>& series(const std::string& name) const;
  double at(const std::string& name, int e) const;
  void write_csv(const std::filesystem::path& path) const;
  static ExperimentTable read_csv(const std::filesystem::path& path);
};

struct NStepScenario {
  std::string name;
  std::vector<std::set<ShotType>> stages;  // stage k applies at decision epoch k + 1
};
std::vector<NStepScenario> default_nstep_scenarios(int max_optimal = 5);

using ModelSource = std::function<std::shared_ptr<const TransitionModel>(int eps)>;

/// Shared inputs of every experiment.
struct ExperimentContext {
  const StateCensus* census = nullptr;
  const CourtLayout* layout = nullptr;
  const GeneratorParams* params = nullptr;
  const DistributionSet* dists = nullptr;
  StartWeights weights;
  ModelSource models;
  /// Intentions used at a given epsilon; defaults to the fitted ones.
  std::function<const IntentionSet&(int eps)> intentions;
  std::vector<int> eps;
  std::uint64_t seed = 0;
};

std::vector<std::pair<std::string, ScenarioMap>> default_error_scenarios(int eps);

ExperimentTable error_scenario_sweep(const ExperimentContext& ctx);
ExperimentTable playstyle_sweep(const ExperimentContext& ctx, double shift = 0.5);
ExperimentTable action_distribution(const ExperimentContext& ctx, HistogramFilter filter);
ExperimentTable nstep_scenario_suite(const ExperimentContext& ctx, const std::vector<NStepScenario>& scenarios);
ExperimentTable absorbing_decomposition(const ExperimentContext& ctx);
/// Outcome table at the calibration state for eps = 1..max_eps, plus the
/// selected average epsilon.
ExperimentTable average_epsilon_table(const ExperimentContext& ctx, int max_eps, int shots,
                                      const OutcomeFrequencies& empirical, int* selected);

inline const OutcomeFrequencies kEmpiricalAverage{0.130, 0.134, 0.736};

}  // namespace rallyproc
