#include "rallyproc/transitions.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

const ActionRow* StateRows::find(ActionId a) const {
  auto it = std::lower_bound(actions.begin(), actions.end(), a,
                             [](const ActionRow& r, ActionId id) { return r.action < id; });
  return (it != actions.end() && it->action == a) ? &*it : nullptr;
}

void TransitionModel::validate() const {
  if (states.size() != num_transient) throw Error("transition model: row table size mismatch");
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (!states[s]) throw Error("transition model: missing rows for state " + std::to_string(s));
    for (const auto& row : states[s]->actions) {
      if (row.samples == 0) continue;
      double total = 0.0;
      for (const auto& t : row.entries) {
        if (!(t.prob >= 0.0 && t.prob <= 1.0)) throw Error("transition model: probability outside [0, 1]");
        if (t.next >= num_states()) throw Error("transition model: next state out of range");
        const bool into_w = t.next == win_id(), into_l = t.next == lose_id();
        if (into_w != tag_wins(t.tag) || into_l != tag_loses(t.tag))
          throw Error("transition model: outcome tag inconsistent with next state");
        total += t.prob;
      }
      if (std::abs(total - 1.0) > 1e-12)
        throw Error("transition model: row (" + std::to_string(s) + ", " + std::to_string(row.action.value) +
                    ") sums to " + std::to_string(total));
    }
  }
}

double first_serve_given_fault(double fault_given_first, double first_share, double fault_rate) {
  if (!(fault_rate > 0.0)) throw Error("fault rate must be positive");
  return fault_given_first * first_share / fault_rate;
}

double multi_serve_diagnostic(double self_transition) {
  const double lose = 1.0 - self_transition;
  return lose * lose;
}

FaultDisposition apply_fault_rule(const State& s, double fault_mass, double self_transition) {
  if (s.is_absorbing() || s.omega != ShotType::Serve) throw Error("fault rule applies to serve states only");
  if (!(self_transition >= 0.0 && self_transition <= 1.0)) throw Error("fault self-transition outside [0, 1]");
  return {self_transition * fault_mass, fault_mass - self_transition * fault_mass};
}

namespace {

constexpr std::uint64_t kBuildStream = 0x6275696c64;
constexpr std::uint64_t kForcedStream = 0x666f726365;

std::uint64_t key_of(StateId next, OutcomeTag tag) {
  return (static_cast<std::uint64_t>(next) << 3) | static_cast<std::uint64_t>(tag);
}

struct Tally {
  std::vector<std::uint64_t> keys;
  std::uint32_t faults = 0;
  std::uint32_t samples = 0;
};

class StateSimulator {
 public:
  StateSimulator(StateId id, const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                 const StateDistributions& dist, Epsilon eps)
      : id_(id), state_(census.state(id)), census_(census), layout_(layout), params_(params), dist_(dist) {
    for (const auto& e : dist.execs) {
      const ExecutionDistribution scaled = scale(e, eps);
      means_.push_back(scaled.mean);
      factors_.push_back(Chol2::of(scaled.cov));
    }
    tallies_.resize(dist.execs.size());
  }

  std::uint32_t samples(std::size_t k) const { return tallies_[k].samples; }

  void shoot(std::size_t k, Rng& rng) {
    Tally& t = tallies_[k];
    ++t.samples;
    const Point landing = sample_gaussian(means_[k], factors_[k], rng);
    const ShotRecord shot = generate_shot(state_, landing, params_, layout_, rng);
    switch (shot.outcome) {
      case ShotOutcome::Winner:
        t.keys.push_back(key_of(census_.win_id(), OutcomeTag::AWinner));
        return;
      case ShotOutcome::Error:
        if (state_.omega == ShotType::Serve)
          ++t.faults;
        else
          t.keys.push_back(key_of(census_.lose_id(), OutcomeTag::AError));
        return;
      case ShotOutcome::InPlay: break;
    }
    const ReturnResult reply = generate_return(*shot.terminal_state, params_, layout_, rng);
    switch (reply.outcome) {
      case ShotOutcome::Winner:
        t.keys.push_back(key_of(census_.lose_id(), OutcomeTag::BWinner));
        return;
      case ShotOutcome::Error:
        t.keys.push_back(key_of(census_.win_id(), OutcomeTag::BError));
        return;
      case ShotOutcome::InPlay: break;
    }
    const auto next = census_.find(*reply.next_state);
    if (!next)
      throw Error("state " + std::to_string(id_) + ": next state (" + std::to_string(reply.next_state->sigma_a) + ", " +
                  std::to_string(reply.next_state->sigma_b) + ") is not in the census");
    t.keys.push_back(key_of(*next, OutcomeTag::Continue));
  }

  StateRows finish() {
    StateRows out;
    for (std::size_t k = 0; k < tallies_.size(); ++k) {
      Tally& t = tallies_[k];
      ActionRow row;
      row.action = dist_.intention.actions[k];
      row.samples = t.samples;
      if (t.samples > 0) {
        const double n = static_cast<double>(t.samples);
        if (t.faults > 0) {
          // The fault split produces one self entry and one L entry; add them as
          // fractional counts so the merge below handles ordering.
          const FaultDisposition fd = apply_fault_rule(state_, static_cast<double>(t.faults) / n);
          fault_entries_.push_back({id_, OutcomeTag::Continue, fd.self_mass});
          fault_entries_.push_back({census_.lose_id(), OutcomeTag::AError, fd.lose_mass});
        }
        std::sort(t.keys.begin(), t.keys.end());
        std::vector<Transition> merged;
        for (std::size_t i = 0; i < t.keys.size();) {
          std::size_t j = i;
          while (j < t.keys.size() && t.keys[j] == t.keys[i]) ++j;
          merged.push_back({static_cast<StateId>(t.keys[i] >> 3), static_cast<OutcomeTag>(t.keys[i] & 7u),
                            static_cast<double>(j - i) / n});
          i = j;
        }
        for (const auto& f : fault_entries_) {
          auto it = std::find_if(merged.begin(), merged.end(),
                                 [&](const Transition& m) { return m.next == f.next && m.tag == f.tag; });
          if (it != merged.end())
            it->prob += f.prob;
          else
            merged.push_back(f);
        }
        fault_entries_.clear();
        std::sort(merged.begin(), merged.end(), [](const Transition& a, const Transition& b) {
          return key_of(a.next, a.tag) < key_of(b.next, b.tag);
        });
        row.entries = std::move(merged);
      }
      std::vector<std::uint64_t>().swap(t.keys);
      out.actions.push_back(std::move(row));
    }
    return out;
  }

 private:
  StateId id_;
  State state_;
  const StateCensus& census_;
  const CourtLayout& layout_;
  const GeneratorParams& params_;
  const StateDistributions& dist_;
  std::vector<Point> means_;
  std::vector<Chol2> factors_;
  std::vector<Tally> tallies_;
  std::vector<Transition> fault_entries_;
};

std::size_t draw_action(const std::vector<double>& cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  std::size_t k = static_cast<std::size_t>(it - cumulative.begin());
  if (k >= cumulative.size()) k = cumulative.size() - 1;
  return k;
}

void check_build_args(const StateCensus& census, const DistributionSet& dists, const BuildOptions& opts) {
  if (opts.n < 1) throw Error("build-transitions: N must be at least 1");
  if (opts.forced_samples < 0) throw Error("build-transitions: forced sample count must be nonnegative");
  if (dists.census_hash != census.hash()) throw Error("build-transitions: distributions were fitted on another census");
  if (dists.states.size() != census.num_transient())
    throw Error("build-transitions: some states lack an intention distribution");
}

}  // namespace

StateRows build_state_rows(StateId id, const StateCensus& census, const CourtLayout& layout,
                           const GeneratorParams& params, const StateDistributions& dist, Epsilon eps,
                           const BuildOptions& opts) {
  if (dist.intention.actions.empty()) throw Error("state " + std::to_string(id) + " has no intention distribution");
  StateSimulator sim(id, census, layout, params, dist, eps);
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double p : dist.intention.probs) cumulative.push_back(acc += p);
  // Zero-probability actions must never be drawn, including through rounding at the top.
  std::size_t last = cumulative.size() - 1;
  while (last > 0 && dist.intention.probs[last] == 0.0) --last;

  Rng rng(derive_seed(opts.seed, kBuildStream, static_cast<std::uint64_t>(id) * 64 + eps.value));
  for (int i = 0; i < opts.n; ++i) {
    const double u = uniform01(rng) * cumulative[last];
    sim.shoot(std::min(draw_action(cumulative, u), last), rng);
  }
  const auto target = static_cast<std::uint32_t>(opts.forced_samples);
  for (std::size_t k = 0; k < dist.intention.actions.size(); ++k) {
    Rng forced(derive_seed(opts.seed ^ kForcedStream, static_cast<std::uint64_t>(id) * 64 + eps.value, k + 1));
    while (sim.samples(k) < target) sim.shoot(k, forced);
  }
  return sim.finish();
}

TransitionModel build_transitions(const StateCensus& census, const CourtLayout& layout, const GeneratorParams& params,
                                  const DistributionSet& dists, Epsilon eps, const BuildOptions& opts) {
  check_build_args(census, dists, opts);
  TransitionModel model;
  model.eps = eps;
  model.census_hash = census.hash();
  model.num_transient = census.num_transient();
  model.states.resize(model.num_transient);
  const auto n = static_cast<std::int64_t>(model.num_transient);
  std::string failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      model.states[i] = std::make_shared<const StateRows>(
          build_state_rows(static_cast<StateId>(i), census, layout, params, dists.states[i], eps, opts));
    } catch (const std::exception& e) {
#pragma omp critical(rallyproc_build_error)
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw Error("build-transitions: " + failure);
  return model;
}

TransitionModel build_transitions_serial(const StateCensus& census, const CourtLayout& layout,
                                         const GeneratorParams& params, const DistributionSet& dists, Epsilon eps,
                                         const BuildOptions& opts) {
  check_build_args(census, dists, opts);
  TransitionModel model;
  model.eps = eps;
  model.census_hash = census.hash();
  model.num_transient = census.num_transient();
  for (std::size_t i = 0; i < model.num_transient; ++i)
    model.states.push_back(std::make_shared<const StateRows>(
        build_state_rows(static_cast<StateId>(i), census, layout, params, dists.states[i], eps, opts)));
  return model;
}

std::string_view to_string(ScenarioClass c) {
  switch (c) {
    case ScenarioClass::AdServe: return "ad-serve";
    case ScenarioClass::DeuceServe: return "deuce-serve";
    case ScenarioClass::AdReturn: return "ad-return";
    case ScenarioClass::DeuceReturn: return "deuce-return";
    case ScenarioClass::AdRally: return "ad-rally";
    case ScenarioClass::DeuceRally: return "deuce-rally";
    case ScenarioClass::Total: return "total";
  }
  return "?";
}

ScenarioClass scenario_class_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(ScenarioClass::Total); ++i)
    if (to_string(static_cast<ScenarioClass>(i)) == s) return static_cast<ScenarioClass>(i);
  throw Error("unknown scenario class '" + std::string(s) + "'");
}

ScenarioClass classify_state(const State& s, const CourtSpec& spec) {
  if (s.is_absorbing()) throw Error("absorbing states have no scenario class");
  const bool deuce = cell_on_deuce_side(s.sigma_a, spec);
  switch (s.omega) {
    case ShotType::Serve: return deuce ? ScenarioClass::DeuceServe : ScenarioClass::AdServe;
    case ShotType::Return: return deuce ? ScenarioClass::DeuceReturn : ScenarioClass::AdReturn;
    case ShotType::Rally: return deuce ? ScenarioClass::DeuceRally : ScenarioClass::AdRally;
  }
  return ScenarioClass::Total;
}

bool in_class(const State& s, ScenarioClass c, const CourtSpec& spec) {
  return !s.is_absorbing() && (c == ScenarioClass::Total || classify_state(s, spec) == c);
}

TransitionModel patch_epsilon(const ScenarioMap& base, const std::map<int, const TransitionModel*>& models,
                              const StateCensus& census) {
  auto model_at = [&](int eps) -> const TransitionModel& {
    auto it = models.find(eps);
    if (it == models.end() || it->second == nullptr)
      throw Error("patch_epsilon: no model for epsilon " + std::to_string(eps));
    if (it->second->census_hash != census.hash()) throw Error("patch_epsilon: model built on another census");
    return *it->second;
  };
  const int perfect_max = model_at(1).eps.max;
  TransitionModel out;
  out.census_hash = census.hash();
  out.num_transient = census.num_transient();
  int max_eps = 1;
  for (const auto& [c, e] : base) max_eps = std::max(max_eps, e);
  out.eps = Epsilon(max_eps, std::max(max_eps, perfect_max));
  const auto total = base.find(ScenarioClass::Total);
  for (StateId s = 0; s < out.num_transient; ++s) {
    const auto it = base.find(classify_state(census.state(s), census.spec()));
    const int e = it != base.end() ? it->second : total != base.end() ? total->second : 1;
    out.states.push_back(model_at(e).states.at(s));
  }
  return out;
}

std::vector<StateId> unreachable_absorption(const TransitionModel& model,
                                            const std::vector<std::vector<ActionId>>& support) {
  const std::size_t n = model.num_states();
  std::vector<std::vector<StateId>> reverse(n);
  for (StateId s = 0; s < model.num_transient; ++s) {
    for (ActionId a : support.at(s)) {
      const ActionRow* row = model.find(s, a);
      if (!row) continue;
      for (const auto& t : row->entries)
        if (t.prob > 0.0) reverse[t.next].push_back(s);
    }
  }
  std::vector<char> reached(n, 0);
  std::deque<StateId> queue{model.win_id(), model.lose_id()};
  reached[model.win_id()] = reached[model.lose_id()] = 1;
  while (!queue.empty()) {
    const StateId v = queue.front();
    queue.pop_front();
    for (StateId u : reverse[v])
      if (!reached[u]) reached[u] = 1, queue.push_back(u);
  }
  std::vector<StateId> out;
  for (StateId s = 0; s < model.num_transient; ++s)
    if (!reached[s]) out.push_back(s);
  return out;
}

}  // namespace rallyproc
