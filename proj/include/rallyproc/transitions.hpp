#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rallyproc/distfit.hpp"
#include "rallyproc/geometry.hpp"
#include "rallyproc/shotgen.hpp"

namespace rallyproc {

struct Transition {
  StateId next = 0;
  OutcomeTag tag = OutcomeTag::Continue;
  double prob = 0.0;
};

/// Empirical P(. | s, a): entries sorted by (next, tag), no duplicates.
struct ActionRow {
  ActionId action;
  std::uint32_t samples = 0;
  std::vector<Transition> entries;
};

/// All permissible actions of one transient state, ascending by id.
struct StateRows {
  std::vector<ActionRow> actions;

  const ActionRow* find(ActionId a) const;
};

class TransitionModel {
 public:
  Epsilon eps;
  std::string census_hash;
  std::size_t num_transient = 0;
  /// Rows are shared between models so that patched composites are cheap.
  std::vector<std::shared_ptr<const StateRows>> states;

  StateId win_id() const { return static_cast<StateId>(num_transient); }
  StateId lose_id() const { return static_cast<StateId>(num_transient + 1); }
  std::size_t num_states() const { return num_transient + 2; }
  const StateRows& rows(StateId s) const { return *states.at(s); }
  const ActionRow* find(StateId s, ActionId a) const { return rows(s).find(a); }

  /// Row sums, probability ranges, next-state ids and tag/target consistency.
  void validate() const;
};

// Serve-fault disposition: P(first serve | fault) by Bayes' rule from the
// tour-level rates, rounded to two places for the model.
inline constexpr double kFaultGivenFirstServe = 0.379;
inline constexpr double kFirstServeShare = 0.725;
inline constexpr double kFaultRate = 0.302;
inline constexpr double kFaultSelfTransition = 0.91;

double first_serve_given_fault(double fault_given_first = kFaultGivenFirstServe, double first_share = kFirstServeShare,
                               double fault_rate = kFaultRate);
/// Probability that a point needs three or more modelled serves.
double multi_serve_diagnostic(double self_transition = kFaultSelfTransition);

struct FaultDisposition {
  double self_mass = 0.0;  // repeat serve from the same state
  double lose_mass = 0.0;
};
/// Splits a serve fault's probability mass; rejects non-serve states.
FaultDisposition apply_fault_rule(const State& s, double fault_mass, double self_transition = kFaultSelfTransition);

struct BuildOptions {
  int n = 1000;              // Algorithm 1 samples per state
  int forced_samples = 200;  // every (s, a) is topped up to this many samples
  std::uint64_t seed = 0;
};

/// Monte-Carlo transition model at one error level: N intention-conditioned
/// shots per state stitched with Player B's reply, then a forced-action pass.
TransitionModel build_transitions(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                                  const DistributionSet& dists, Epsilon eps, const BuildOptions& opts);
TransitionModel build_transitions_serial(const StateCensus& census, const CourtLayout& layout,
                                         const GeneratorParams& params, const DistributionSet& dists, Epsilon eps,
                                         const BuildOptions& opts);
StateRows build_state_rows(StateId id, const StateCensus& census, const CourtLayout& layout,
                           const GeneratorParams& params, const StateDistributions& dist, Epsilon eps,
                           const BuildOptions& opts);

enum class ScenarioClass : std::uint8_t { AdServe, DeuceServe, AdReturn, DeuceReturn, AdRally, DeuceRally, Total };
std::string_view to_string(ScenarioClass c);
ScenarioClass scenario_class_from_string(std::string_view s);
/// Class of a transient state, by shot type and the side Player A hits from.
ScenarioClass classify_state(const State& s, const CourtSpec& spec);
bool in_class(const State& s, ScenarioClass c, const CourtSpec& spec);

using ScenarioMap = std::map<ScenarioClass, int>;

/// Composite model: rows of states in a class come from models[base[class]],
/// all others from models[1].
TransitionModel patch_epsilon(const ScenarioMap& base, const std::map<int, const TransitionModel*>& models,
                              const StateCensus& census);

/// Transient states that cannot reach {W, L} under the given action support
/// (every action with positive weight).
std::vector<StateId> unreachable_absorption(const TransitionModel& model,
                                            const std::vector<std::vector<ActionId>>& support);

void write_transitions(const TransitionModel& model, const std::filesystem::path& path);
TransitionModel read_transitions(const std::filesystem::path& path);
std::string transitions_file_name(int eps);

void write_distributions(const DistributionSet& dists, const std::filesystem::path& path);
DistributionSet read_distributions(const std::filesystem::path& path);

}  // namespace rallyproc
