#include "rallyproc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace rallyproc {

IntentionSet intentions_of(const DistributionSet& dists) {
  IntentionSet out;
  out.reserve(dists.states.size());
  for (const auto& s : dists.states) out.push_back(s.intention);
  return out;
}

namespace {

const ActionRow& require_row(const TransitionModel& model, StateId s, ActionId a) {
  const ActionRow* row = model.find(s, a);
  if (!row || row->samples == 0)
    throw Error("no transition row for state " + std::to_string(s) + ", action " + std::to_string(a.value));
  return *row;
}

void check_sizes(const TransitionModel& model, const IntentionSet& intentions) {
  if (intentions.size() != model.num_transient) throw Error("intention set does not match the transition model");
}

}  // namespace

MarkovChain induced_chain(const TransitionModel& model, const IntentionSet& intentions, const DecisionRule& rule) {
  check_sizes(model, intentions);
  if (!rule.empty() && rule.size() != model.num_transient) throw Error("decision rule does not match the model");
  MarkovChain c;
  c.n = model.num_transient;
  c.offsets.reserve(c.n + 1);
  c.offsets.push_back(0);
  c.reward.assign(c.n, 0.0);
  c.self.assign(c.n, 0.0);
  std::vector<double> acc(model.num_states(), 0.0);
  std::vector<StateId> touched;
  for (StateId s = 0; s < c.n; ++s) {
    auto add_row = [&](const ActionRow& row, double w) {
      for (const auto& t : row.entries) {
        if (acc[t.next] == 0.0) touched.push_back(t.next);
        acc[t.next] += w * t.prob;
      }
    };
    if (!rule.empty() && rule[s]) {
      add_row(require_row(model, s, *rule[s]), 1.0);
    } else {
      const auto& f = intentions[s];
      for (std::size_t k = 0; k < f.actions.size(); ++k)
        if (f.probs[k] > 0.0) add_row(require_row(model, s, f.actions[k]), f.probs[k]);
    }
    std::sort(touched.begin(), touched.end());
    for (StateId t : touched) {
      const double p = acc[t];
      acc[t] = 0.0;
      if (t == model.win_id())
        c.reward[s] = p;
      else if (t == model.lose_id())
        continue;
      else if (t == s)
        c.self[s] = p;
      else
        c.cols.push_back(t), c.probs.push_back(p);
    }
    touched.clear();
    c.offsets.push_back(static_cast<std::uint32_t>(c.cols.size()));
  }
  return c;
}

MarkovChain intention_chain(const TransitionModel& model, const IntentionSet& intentions) {
  return induced_chain(model, intentions, {});
}

double chain_residual(const MarkovChain& c, const std::vector<double>& v) {
  double r = 0.0;
  for (std::size_t s = 0; s < c.n; ++s) {
    double x = c.reward[s] + c.self[s] * v[s];
    for (std::uint32_t k = c.offsets[s]; k < c.offsets[s + 1]; ++k) x += c.probs[k] * v[c.cols[k]];
    r = std::max(r, std::abs(x - v[s]));
  }
  return r;
}

namespace {

std::vector<double> solve_direct(const MarkovChain& c) {
  const auto n = static_cast<Eigen::Index>(c.n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(c.cols.size() + c.n);
  for (std::size_t s = 0; s < c.n; ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    trips.emplace_back(i, i, 1.0 - c.self[s]);
    for (std::uint32_t k = c.offsets[s]; k < c.offsets[s + 1]; ++k)
      trips.emplace_back(i, static_cast<Eigen::Index>(c.cols[k]), -c.probs[k]);
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw Error("policy evaluation: singular system (improper policy)");
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b[i] = c.reward[static_cast<std::size_t>(i)];
  const Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success) throw Error("policy evaluation: direct solve failed");
  return {x.data(), x.data() + n};
}

}  // namespace

std::vector<double> solve_chain(const MarkovChain& c, const SolveOptions& opts, bool* used_direct) {
  if (used_direct) *used_direct = false;
  for (std::size_t s = 0; s < c.n; ++s)
    if (!(c.self[s] < 1.0 - 1e-15)) throw Error("policy evaluation: state " + std::to_string(s) + " never leaves itself");
  std::vector<double> v(c.n, 0.0);
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (std::size_t s = 0; s < c.n; ++s) {
      double x = c.reward[s];
      for (std::uint32_t k = c.offsets[s]; k < c.offsets[s + 1]; ++k) x += c.probs[k] * v[c.cols[k]];
      v[s] = x / (1.0 - c.self[s]);
    }
    if (sweep % 8 != 7) continue;
    const double r = chain_residual(c, v);
    if (r < opts.tolerance) return v;
    // Rounding noise can stop progress just above the tolerance.
    if (r < 0.999 * best) {
      best = r;
      stalled = 0;
    } else if (++stalled > 32) {
      break;
    }
  }
  if (used_direct) *used_direct = true;
  return solve_direct(c);
}

namespace {

std::vector<std::vector<ActionId>> support_of(const TransitionModel& model, const IntentionSet& intentions,
                                              const DecisionRule& rule) {
  std::vector<std::vector<ActionId>> support(model.num_transient);
  for (StateId s = 0; s < model.num_transient; ++s) {
    if (!rule.empty() && rule[s]) {
      support[s].push_back(*rule[s]);
      continue;
    }
    const auto& f = intentions[s];
    for (std::size_t k = 0; k < f.actions.size(); ++k)
      if (f.probs[k] > 0.0) support[s].push_back(f.actions[k]);
  }
  return support;
}

std::string list_states(const std::vector<StateId>& ids) {
  std::ostringstream out;
  for (std::size_t i = 0; i < ids.size() && i < 20; ++i) out << (i ? ", " : "") << ids[i];
  if (ids.size() > 20) out << ", ...";
  return out.str();
}

ValueFunction evaluate_with(const TransitionModel& model, const IntentionSet& intentions, const DecisionRule& rule,
                            const SolveOptions& opts, std::string id) {
  check_sizes(model, intentions);
  const auto bad = unreachable_absorption(model, support_of(model, intentions, rule));
  if (!bad.empty()) throw Error("policy evaluation: absorption unreachable from states " + list_states(bad));
  const MarkovChain chain = induced_chain(model, intentions, rule);
  std::vector<double> v = solve_chain(chain, opts);
  ValueFunction out;
  out.bellman_residual = chain_residual(chain, v);
  v.resize(model.num_states(), 0.0);
  out.values = std::move(v);
  out.eps = model.eps.value;
  out.policy_id = std::move(id);
  return out;
}

}  // namespace

ValueFunction evaluate_mrp(const TransitionModel& model, const IntentionSet& intentions, const SolveOptions& opts) {
  return evaluate_with(model, intentions, {}, opts, "intention");
}

ValueFunction evaluate_rule(const TransitionModel& model, const IntentionSet& intentions, const DecisionRule& rule,
                            const SolveOptions& opts) {
  return evaluate_with(model, intentions, rule, opts, "rule");
}

double q_value(const ActionRow& row, const std::vector<double>& v, StateId win) {
  double q = 0.0;
  for (const auto& t : row.entries) q += t.prob * ((t.next == win ? 1.0 : 0.0) + v[t.next]);
  return q;
}

std::vector<std::pair<StateId, ActionId>> improper_pairs(const TransitionModel& model) {
  // Grow the set of states from which every action reaches the set with
  // positive probability; its closure must cover every transient state.
  std::vector<char> settled(model.num_states(), 0);
  settled[model.win_id()] = settled[model.lose_id()] = 1;
  bool changed = true;
  while (changed) {
    changed = false;
    for (StateId s = 0; s < model.num_transient; ++s) {
      if (settled[s]) continue;
      bool all = true;
      for (const auto& row : model.rows(s).actions) {
        const bool hits = std::any_of(row.entries.begin(), row.entries.end(),
                                      [&](const Transition& t) { return t.prob > 0.0 && t.next != s && settled[t.next]; });
        if (!hits) {
          all = false;
          break;
        }
      }
      if (all) settled[s] = 1, changed = true;
    }
  }
  std::vector<std::pair<StateId, ActionId>> out;
  for (StateId s = 0; s < model.num_transient; ++s) {
    if (settled[s]) continue;
    for (const auto& row : model.rows(s).actions) {
      const bool hits = std::any_of(row.entries.begin(), row.entries.end(),
                                    [&](const Transition& t) { return t.prob > 0.0 && t.next != s && settled[t.next]; });
      if (!hits) out.emplace_back(s, row.action);
    }
  }
  return out;
}

namespace {

void backup_state(const TransitionModel& model, StateId s, const std::vector<double>& v, double& value, ActionId& arg) {
  double best = -1.0;
  ActionId best_a{};
  for (const auto& row : model.rows(s).actions) {
    const double q = q_value(row, v, model.win_id());
    if (q > best) best = q, best_a = row.action;
  }
  value = best;
  arg = best_a;
}

}  // namespace

double bellman_backup(const TransitionModel& model, const std::vector<double>& v, std::vector<double>& out,
                      std::vector<ActionId>& argmax) {
  out.assign(model.num_states(), 0.0);
  argmax.resize(model.num_transient);
  const auto n = static_cast<std::int64_t>(model.num_transient);
  double delta = 0.0;
#pragma omp parallel for schedule(dynamic, 64) reduction(max : delta)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto s = static_cast<StateId>(i);
    backup_state(model, s, v, out[s], argmax[s]);
    delta = std::max(delta, std::abs(out[s] - v[s]));
  }
  return delta;
}

double bellman_backup_serial(const TransitionModel& model, const std::vector<double>& v, std::vector<double>& out,
                             std::vector<ActionId>& argmax) {
  out.assign(model.num_states(), 0.0);
  argmax.resize(model.num_transient);
  double delta = 0.0;
  for (StateId s = 0; s < model.num_transient; ++s) {
    backup_state(model, s, v, out[s], argmax[s]);
    delta = std::max(delta, std::abs(out[s] - v[s]));
  }
  return delta;
}

namespace {

constexpr double kImproveMargin = 1e-12;

void require_full_rows(const TransitionModel& model) {
  std::vector<StateId> missing;
  for (StateId s = 0; s < model.num_transient; ++s) {
    if (model.rows(s).actions.empty()) missing.push_back(s);
    for (const auto& row : model.rows(s).actions)
      if (row.samples == 0) {
        missing.push_back(s);
        break;
      }
  }
  if (!missing.empty()) throw Error("solve_mdp: unsampled actions in states " + list_states(missing));
}

// Lowest-id action within the improvement margin of the best Q.
ActionId tie_broken_argmax(const TransitionModel& model, StateId s, const std::vector<double>& v) {
  double best = -1.0;
  for (const auto& row : model.rows(s).actions) best = std::max(best, q_value(row, v, model.win_id()));
  for (const auto& row : model.rows(s).actions)
    if (q_value(row, v, model.win_id()) >= best - kImproveMargin) return row.action;
  return model.rows(s).actions.front().action;
}

DecisionRule as_rule(const std::vector<ActionId>& p) {
  DecisionRule r(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) r[i] = p[i];
  return r;
}

// Improves a deterministic policy in place; returns true if any action changed.
bool improve(const TransitionModel& model, const std::vector<double>& v, std::vector<ActionId>& policy) {
  bool changed = false;
  for (StateId s = 0; s < model.num_transient; ++s) {
    const double current = q_value(require_row(model, s, policy[s]), v, model.win_id());
    double best = current;
    for (const auto& row : model.rows(s).actions) best = std::max(best, q_value(row, v, model.win_id()));
    if (best > current + kImproveMargin) {
      policy[s] = tie_broken_argmax(model, s, v);
      changed = true;
    }
  }
  return changed;
}

double optimality_residual(const TransitionModel& model, const std::vector<double>& v) {
  std::vector<double> out;
  std::vector<ActionId> arg;
  return bellman_backup(model, v, out, arg);
}

}  // namespace

MdpSolution solve_mdp(const TransitionModel& model, const SolveOptions& opts) {
  require_full_rows(model);
  if (const auto bad = improper_pairs(model); !bad.empty()) {
    std::ostringstream msg;
    msg << "solve_mdp: improper policies possible; offending (state, action) pairs:";
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg << " (" << bad[i].first << ", " << bad[i].second.value << ")";
    if (bad.size() > 20) msg << " ... " << bad.size() << " total";
    throw Error(msg.str());
  }
  MdpSolution sol;
  std::vector<double> v(model.num_states(), 0.0), next;
  std::vector<ActionId> policy;
  for (int it = 0; it < 10000; ++it) {
    const double delta = bellman_backup(model, v, next, policy);
    v.swap(next);
    ++sol.value_iterations;
    if (delta < 1e-10) break;
  }
  const IntentionSet dummy(model.num_transient);
  for (int it = 0; it < 1000; ++it) {
    const std::vector<double> values = evaluate_rule(model, dummy, as_rule(policy), opts).values;
    ++sol.policy_iterations;
    if (!improve(model, values, policy)) {
      v = values;
      break;
    }
  }
  for (StateId s = 0; s < model.num_transient; ++s) policy[s] = tie_broken_argmax(model, s, v);
  sol.value = evaluate_rule(model, dummy, as_rule(policy), opts);
  sol.value.policy_id = "optimal";
  sol.value.bellman_residual = optimality_residual(model, sol.value.values);
  sol.policy = std::move(policy);
  return sol;
}

std::set<ShotType> all_shot_types() { return {ShotType::Serve, ShotType::Return, ShotType::Rally}; }

std::pair<DecisionRule, ValueFunction> greedy_step(const TransitionModel& model, const IntentionSet& intentions,
                                                   const ValueFunction& cost_to_go, const std::set<ShotType>& restrict,
                                                   const StateCensus& census) {
  check_sizes(model, intentions);
  if (cost_to_go.values.size() != model.num_states()) throw Error("greedy_step: cost-to-go size mismatch");
  const auto& v = cost_to_go.values;
  DecisionRule rule(model.num_transient);
  ValueFunction out;
  out.values.assign(model.num_states(), 0.0);
  out.eps = model.eps.value;
  out.policy_id = "greedy";
  out.bellman_residual = cost_to_go.bellman_residual;
  for (StateId s = 0; s < model.num_transient; ++s) {
    if (restrict.count(census.state(s).omega)) {
      double best = -1.0;
      ActionId arg{};
      for (const auto& row : model.rows(s).actions) {
        if (row.samples == 0) continue;
        const double q = q_value(row, v, model.win_id());
        if (q > best) best = q, arg = row.action;
      }
      rule[s] = arg;
      out.values[s] = best;
    } else {
      const auto& f = intentions[s];
      double x = 0.0;
      for (std::size_t k = 0; k < f.actions.size(); ++k)
        if (f.probs[k] > 0.0) x += f.probs[k] * q_value(require_row(model, s, f.actions[k]), v, model.win_id());
      out.values[s] = x;
    }
  }
  return {std::move(rule), std::move(out)};
}

NStepResult nstep_policy(const TransitionModel& model, const IntentionSet& intentions, const ValueFunction& v_hat,
                         const std::vector<std::set<ShotType>>& restrict, const StateCensus& census) {
  NStepResult out;
  out.values.push_back(v_hat);
  std::vector<DecisionRule> reversed;
  ValueFunction v = v_hat;
  // The last stage is greedy against V under f_s; earlier stages back up from it.
  for (std::size_t k = restrict.size(); k-- > 0;) {
    auto [rule, next] = greedy_step(model, intentions, v, restrict[k], census);
    reversed.push_back(std::move(rule));
    v = std::move(next);
    out.values.push_back(v);
  }
  out.policy = Policy::composite({reversed.rbegin(), reversed.rend()});
  return out;
}

PolicyIterationResult policy_iteration(const TransitionModel& model, const IntentionSet& intentions,
                                       const SolveOptions& opts, int max_iterations) {
  require_full_rows(model);
  const ValueFunction v_hat = evaluate_mrp(model, intentions, opts);
  PolicyIterationResult out;
  out.policy.resize(model.num_transient);
  for (StateId s = 0; s < model.num_transient; ++s) out.policy[s] = tie_broken_argmax(model, s, v_hat.values);
  for (int it = 0; it < max_iterations; ++it) {
    out.value = evaluate_rule(model, intentions, as_rule(out.policy), opts);
    ++out.iterations;
    if (!improve(model, out.value.values, out.policy)) break;
  }
  out.value.policy_id = "policy-iteration";
  return out;
}

namespace {

StateId sample_next(const std::vector<Transition>& entries, double u) {
  double acc = 0.0;
  for (const auto& t : entries) {
    acc += t.prob;
    if (u < acc) return t.next;
  }
  return entries.back().next;
}

struct ChainSampler {
  std::vector<std::vector<Transition>> rows;

  ChainSampler(const MarkovChain& c, StateId win, StateId lose) : rows(c.n) {
    for (StateId s = 0; s < c.n; ++s) {
      auto& r = rows[s];
      double used = c.reward[s] + c.self[s];
      r.push_back({win, OutcomeTag::Continue, c.reward[s]});
      r.push_back({s, OutcomeTag::Continue, c.self[s]});
      for (std::uint32_t k = c.offsets[s]; k < c.offsets[s + 1]; ++k) {
        r.push_back({c.cols[k], OutcomeTag::Continue, c.probs[k]});
        used += c.probs[k];
      }
      r.push_back({lose, OutcomeTag::Continue, std::max(0.0, 1.0 - used)});
    }
  }
};

}  // namespace

RolloutResult rollout_check(const TransitionModel& model, const IntentionSet& intentions, const Policy& policy,
                            StateId start, std::uint64_t trials, Rng& rng) {
  if (start >= model.num_transient) throw Error("rollout_check: start state must be transient");
  std::optional<ChainSampler> chain;
  if (policy.kind != Policy::Kind::Deterministic)
    chain.emplace(intention_chain(model, intentions), model.win_id(), model.lose_id());
  constexpr std::uint64_t kMaxSteps = 1000000;
  RolloutResult out;
  out.trials = trials;
  for (std::uint64_t t = 0; t < trials; ++t) {
    StateId s = start;
    std::uint64_t step = 0;
    while (s < model.num_transient) {
      if (++step > kMaxSteps) throw Error("rollout_check: trajectory did not absorb (improper policy)");
      std::optional<ActionId> a;
      if (policy.kind == Policy::Kind::Deterministic)
        a = policy.rule.at(s);
      else if (policy.kind == Policy::Kind::Composite && step <= policy.stages.size())
        a = policy.stages[step - 1].at(s);
      const double u = uniform01(rng);
      s = a ? sample_next(require_row(model, s, *a).entries, u) : sample_next(chain->rows[s], u);
    }
    if (s == model.win_id()) ++out.wins;
  }
  return out;
}

}  // namespace rallyproc
