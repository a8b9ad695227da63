#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <vector>

#include "rallyproc/solver.hpp"

namespace oracle {

using namespace rallyproc;

/// Toy model builder: next ids n and n + 1 are W and L.
struct ToyModel {
  std::size_t n = 0;
  std::vector<std::map<int, std::vector<std::pair<StateId, double>>>> rows;

  explicit ToyModel(std::size_t states) : n(states), rows(states) {}
  StateId win() const { return static_cast<StateId>(n); }
  StateId lose() const { return static_cast<StateId>(n + 1); }
  void add(StateId s, int a, StateId next, double p) { rows[s][a].emplace_back(next, p); }

  TransitionModel build() const {
    TransitionModel m;
    m.num_transient = n;
    for (std::size_t s = 0; s < n; ++s) {
      auto sr = std::make_shared<StateRows>();
      for (const auto& [a, entries] : rows[s]) {
        ActionRow row;
        row.action = ActionId{static_cast<std::uint16_t>(a)};
        row.samples = 1000;
        std::map<StateId, double> merged;
        for (const auto& [next, p] : entries) merged[next] += p;
        for (const auto& [next, p] : merged) {
          const OutcomeTag tag = next == win() ? OutcomeTag::AWinner : next == lose() ? OutcomeTag::AError
                                                                                       : OutcomeTag::Continue;
          row.entries.push_back({next, tag, p});
        }
        sr->actions.push_back(std::move(row));
      }
      m.states.push_back(std::move(sr));
    }
    return m;
  }

  /// Intention distributions with the given per-state probabilities.
  IntentionSet intentions(const std::vector<std::vector<double>>& probs) const {
    IntentionSet out;
    for (std::size_t s = 0; s < n; ++s) {
      IntentionDistribution f;
      for (const auto& [a, e] : rows[s]) f.actions.push_back(ActionId{static_cast<std::uint16_t>(a)});
      f.probs = probs.at(s);
      out.push_back(std::move(f));
    }
    return out;
  }
  IntentionSet single_action() const {
    std::vector<std::vector<double>> p;
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<double> row(rows[s].size(), 0.0);
      row[0] = 1.0;
      p.push_back(row);
    }
    return intentions(p);
  }
};

/// Random chain whose every row puts at least 5% mass on absorption, so every
/// policy is proper.
struct RandomChain {
  ToyModel toy{1};
  std::vector<std::vector<double>> f;
  TransitionModel model;
  IntentionSet intentions;
};

inline RandomChain random_chain(std::mt19937_64& rng, std::size_t max_states = 10, int max_actions = 4) {
  std::uniform_int_distribution<std::size_t> states(1, max_states);
  std::uniform_int_distribution<int> actions(1, max_actions);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomChain c;
  const std::size_t n = states(rng);
  c.toy = ToyModel(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int k = actions(rng);
    std::vector<double> probs(k);
    double total_f = 0.0;
    for (int a = 0; a < k; ++a) {
      probs[a] = u(rng) < 0.25 ? 0.0 : u(rng);
      total_f += probs[a];
    }
    if (total_f == 0.0) {
      probs[0] = 1.0;
      total_f = 1.0;
    }
    for (double& p : probs) p /= total_f;
    c.f.push_back(probs);
    for (int a = 0; a < k; ++a) {
      std::vector<double> w(n + 2, 0.0);
      for (std::size_t t = 0; t < n; ++t) w[t] = u(rng) < 0.5 ? u(rng) : 0.0;
      w[n] = u(rng);
      w[n + 1] = u(rng);
      double transient = 0.0, absorbing = w[n] + w[n + 1];
      for (std::size_t t = 0; t < n; ++t) transient += w[t];
      if (absorbing < 0.05 * (transient + absorbing)) {
        w[n] += 0.05 * transient;
        absorbing += 0.05 * transient;
      }
      const double total = transient + absorbing;
      double placed = 0.0;
      std::size_t last = n + 1;
      for (std::size_t t = 0; t < n + 2; ++t)
        if (w[t] > 0.0) last = t;
      for (std::size_t t = 0; t < n + 2; ++t) {
        if (w[t] == 0.0) continue;
        const double p = t == last ? 1.0 - placed : w[t] / total;
        placed += p;
        c.toy.add(static_cast<StateId>(s), a, static_cast<StateId>(t), p);
      }
    }
  }
  c.model = c.toy.build();
  c.intentions = c.toy.intentions(c.f);
  return c;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= m * a[k][j];
      b[i] -= m * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * x[j];
    x[k] = s / a[k][k];
  }
  return x;
}

/// Absorption probability into W when each state mixes its actions by `mix`.
inline std::vector<double> dense_policy_value(const ToyModel& t, const std::vector<std::vector<double>>& mix) {
  const std::size_t n = t.n;
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<double> b(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    a[s][s] = 1.0;
    std::size_t k = 0;
    for (const auto& [act, entries] : t.rows[s]) {
      const double w = mix[s][k++];
      for (const auto& [next, p] : entries) {
        if (next == t.win())
          b[s] += w * p;
        else if (next < n)
          a[s][next] -= w * p;
      }
    }
  }
  return dense_solve(a, b);
}

/// Optimal values by exhaustive policy enumeration, or by dense policy
/// iteration when the policy space is large.
inline std::vector<double> dense_optimal_value(const ToyModel& t) {
  const std::size_t n = t.n;
  std::size_t count = 1;
  for (const auto& r : t.rows) count = std::min<std::size_t>(count * r.size(), 1u << 20);
  auto pure = [&](const std::vector<std::size_t>& choice) {
    std::vector<std::vector<double>> mix(n);
    for (std::size_t s = 0; s < n; ++s) {
      mix[s].assign(t.rows[s].size(), 0.0);
      mix[s][choice[s]] = 1.0;
    }
    return dense_policy_value(t, mix);
  };
  std::vector<std::size_t> choice(n, 0);
  if (count <= 4096) {
    std::vector<double> best(n, -1.0);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t x = i;
      for (std::size_t s = 0; s < n; ++s) {
        choice[s] = x % t.rows[s].size();
        x /= t.rows[s].size();
      }
      const auto v = pure(choice);
      for (std::size_t s = 0; s < n; ++s) best[s] = std::max(best[s], v[s]);
    }
    return best;
  }
  for (int it = 0; it < 1000; ++it) {
    const auto v = pure(choice);
    bool changed = false;
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t k = 0, arg = choice[s];
      double best = -1.0;
      for (const auto& [act, entries] : t.rows[s]) {
        double q = 0.0;
        for (const auto& [next, p] : entries) q += p * (next == t.win() ? 1.0 : next < n ? v[next] : 0.0);
        if (q > best + 1e-14) {
          best = q;
          arg = k;
        }
        ++k;
      }
      double current = 0.0;
      auto it_row = t.rows[s].begin();
      std::advance(it_row, static_cast<long>(choice[s]));
      for (const auto& [next, p] : it_row->second)
        current += p * (next == t.win() ? 1.0 : next < n ? v[next] : 0.0);
      if (best > current + 1e-13) {
        choice[s] = arg;
        changed = true;
      }
    }
    if (!changed) return v;
  }
  return pure(choice);
}

}  // namespace oracle
