#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rallyproc/distfit.hpp"
#include "rallyproc/transitions.hpp"

namespace rallyproc {

using IntentionSet = std::vector<IntentionDistribution>;  // indexed by StateId
IntentionSet intentions_of(const DistributionSet& dists);

/// Values over all states of a model; W and L are fixed at 0.
struct ValueFunction {
  std::vector<double> values;
  int eps = 1;
  std::string policy_id;
  double bellman_residual = 0.0;

  double operator[](StateId s) const { return values[s]; }
};

/// Per-state choice: an action, or nullopt to follow the intention rule.
using DecisionRule = std::vector<std::optional<ActionId>>;

struct Policy {
  enum class Kind : std::uint8_t { Intention, Deterministic, Composite };
  Kind kind = Kind::Intention;
  std::vector<ActionId> rule;         // Deterministic
  std::vector<DecisionRule> stages;   // Composite: d1..dn, then intentions

  static Policy intention() { return {}; }
  static Policy deterministic(std::vector<ActionId> r) { return {Kind::Deterministic, std::move(r), {}}; }
  static Policy composite(std::vector<DecisionRule> s) { return {Kind::Composite, {}, std::move(s)}; }
};

/// Absorbing Markov chain over the transient states of a model under a fixed
/// stationary policy, in CSR form. Self-loops are split out.
struct MarkovChain {
  std::size_t n = 0;
  std::vector<std::uint32_t> offsets;
  std::vector<StateId> cols;
  std::vector<double> probs;
  std::vector<double> reward;  // one-step probability of entering W
  std::vector<double> self;
};

/// Chain under a decision rule; states without an action follow f_s.
MarkovChain induced_chain(const TransitionModel& model, const IntentionSet& intentions, const DecisionRule& rule);
MarkovChain intention_chain(const TransitionModel& model, const IntentionSet& intentions);

struct SolveOptions {
  double tolerance = 1e-12;  // infinity-norm Bellman residual
  int max_sweeps = 100000;
};

/// Solves V = r + P V by Gauss-Seidel with a sparse LU fallback. `used_direct`
/// reports whether the fallback ran.
std::vector<double> solve_chain(const MarkovChain& chain, const SolveOptions& opts = {}, bool* used_direct = nullptr);
double chain_residual(const MarkovChain& chain, const std::vector<double>& v);

/// Value of the intention policy. Throws if some state cannot reach {W, L}
/// or an action with positive intention mass has no transition row.
ValueFunction evaluate_mrp(const TransitionModel& model, const IntentionSet& intentions, const SolveOptions& opts = {});
ValueFunction evaluate_rule(const TransitionModel& model, const IntentionSet& intentions, const DecisionRule& rule,
                            const SolveOptions& opts = {});

/// States whose rows let some deterministic policy avoid absorption forever,
/// with the offending actions. Empty when every policy is proper.
std::vector<std::pair<StateId, ActionId>> improper_pairs(const TransitionModel& model);

struct MdpSolution {
  ValueFunction value;
  std::vector<ActionId> policy;
  int value_iterations = 0;
  int policy_iterations = 0;
};

/// Optimal values and deterministic policy: value iteration, then policy
/// iteration to an exact fixed point. Ties go to the lowest ActionId.
MdpSolution solve_mdp(const TransitionModel& model, const SolveOptions& opts = {});

/// Q-value of one action against values over all states.
double q_value(const ActionRow& row, const std::vector<double>& v, StateId win);

/// One synchronous Bellman optimality backup. Writes values and argmax
/// actions for every transient state; returns the max change.
double bellman_backup(const TransitionModel& model, const std::vector<double>& v, std::vector<double>& out,
                      std::vector<ActionId>& argmax);
double bellman_backup_serial(const TransitionModel& model, const std::vector<double>& v, std::vector<double>& out,
                             std::vector<ActionId>& argmax);

/// Greedy decision rule against cost_to_go on states whose shot type is in
/// `restrict`; other states follow f_s. Returns the rule and the backed-up values.
std::pair<DecisionRule, ValueFunction> greedy_step(const TransitionModel& model, const IntentionSet& intentions,
                                                   const ValueFunction& cost_to_go, const std::set<ShotType>& restrict,
                                                   const StateCensus& census);
std::set<ShotType> all_shot_types();

struct NStepResult {
  Policy policy;                     // composite: stage 1 first
  std::vector<ValueFunction> values; // values[k] = value of the k-stage policy, k = 0..n
};
/// Backward recursion of greedy steps from V under f_s; restrict[k] applies
/// to decision epoch k + 1.
NStepResult nstep_policy(const TransitionModel& model, const IntentionSet& intentions, const ValueFunction& v_hat,
                         const std::vector<std::set<ShotType>>& restrict, const StateCensus& census);

struct PolicyIterationResult {
  std::vector<ActionId> policy;
  ValueFunction value;
  int iterations = 0;
};
/// Policy iteration started from the greedy rule against the intention values.
PolicyIterationResult policy_iteration(const TransitionModel& model, const IntentionSet& intentions,
                                       const SolveOptions& opts = {}, int max_iterations = 100);

struct RolloutResult {
  std::uint64_t wins = 0;
  std::uint64_t trials = 0;
  double frequency() const { return trials ? static_cast<double>(wins) / static_cast<double>(trials) : 0.0; }
};
/// Simulates absorbing trajectories through the tabulated model.
RolloutResult rollout_check(const TransitionModel& model, const IntentionSet& intentions, const Policy& policy,
                            StateId start, std::uint64_t trials, Rng& rng);

}  // namespace rallyproc
