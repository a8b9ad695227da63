#include <doctest.h>

#include "oracle.hpp"

using namespace rallyproc;
using oracle::ToyModel;

namespace {

const StateCensus& census() {
  static const CourtLayout layout = default_court();
  static const StateCensus c(layout.spec, layout.pruning);
  return c;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("single-state chains") {
    for (double p : {0.0, 0.5, 1.0}) {
      ToyModel t(1);
      if (p > 0.0) t.add(0, 0, t.win(), p);
      if (p < 1.0) t.add(0, 0, t.lose(), 1.0 - p);
      const ValueFunction v = evaluate_mrp(t.build(), t.single_action());
      CHECK(v[0] == doctest::Approx(p).epsilon(1e-12));
      CHECK(v.values.size() == 3);
      CHECK(v[1] == 0.0);
      CHECK(v[2] == 0.0);
    }
  }

  TEST_CASE("self loop") {
    ToyModel t(1);
    t.add(0, 0, t.win(), 0.3);
    t.add(0, 0, t.lose(), 0.2);
    t.add(0, 0, 0, 0.5);
    const ValueFunction v = evaluate_mrp(t.build(), t.single_action());
    CHECK(std::abs(v[0] - 0.6) < 1e-12);
  }

  TEST_CASE("two actions") {
    ToyModel t(1);
    t.add(0, 0, t.win(), 0.4);
    t.add(0, 0, t.lose(), 0.6);
    t.add(0, 1, t.win(), 0.6);
    t.add(0, 1, t.lose(), 0.4);
    const TransitionModel m = t.build();
    const ValueFunction mrp = evaluate_mrp(m, t.intentions({{0.5, 0.5}}));
    CHECK(mrp[0] == doctest::Approx(0.5).epsilon(1e-12));
    const MdpSolution sol = solve_mdp(m);
    CHECK(std::abs(sol.value[0] - 0.6) < 1e-12);
    CHECK(sol.policy[0].value == 1);
  }

  TEST_CASE("ties go to the lowest action") {
    ToyModel t(1);
    t.add(0, 2, t.win(), 0.5);
    t.add(0, 2, t.lose(), 0.5);
    t.add(0, 5, t.win(), 0.5);
    t.add(0, 5, t.lose(), 0.5);
    CHECK(solve_mdp(t.build()).policy[0].value == 2);
  }

  TEST_CASE("three-state chain") {
    ToyModel t(3);
    t.add(0, 0, 1, 0.5);
    t.add(0, 0, 2, 0.5);
    t.add(1, 0, t.win(), 1.0);
    t.add(2, 0, t.win(), 0.5);
    t.add(2, 0, t.lose(), 0.5);
    const ValueFunction v = evaluate_mrp(t.build(), t.single_action());
    CHECK(v[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v[2] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("random chains against dense oracles") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
      const auto c = oracle::random_chain(rng);
      const ValueFunction mrp = evaluate_mrp(c.model, c.intentions);
      const auto dense = oracle::dense_policy_value(c.toy, c.f);
      CHECK(max_diff(mrp.values, dense) < 1e-10);
      CHECK(mrp.bellman_residual <= 1e-12);

      const MdpSolution sol = solve_mdp(c.model);
      CHECK(max_diff(sol.value.values, oracle::dense_optimal_value(c.toy)) < 1e-10);
      for (std::size_t s = 0; s < c.model.num_transient; ++s) CHECK(mrp[static_cast<StateId>(s)] <= sol.value[static_cast<StateId>(s)] + 1e-12);

      const PolicyIterationResult pi = policy_iteration(c.model, c.intentions);
      CHECK(max_diff(pi.value.values, sol.value.values) < 1e-10);
      CHECK(pi.iterations <= 15);
      CHECK(improper_pairs(c.model).empty());
    }
  }

  TEST_CASE("sparse LU agrees with Gauss-Seidel") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      const auto c = oracle::random_chain(rng);
      const MarkovChain chain = intention_chain(c.model, c.intentions);
      SolveOptions gs;
      SolveOptions direct;
      direct.max_sweeps = 0;
      bool used = false;
      const auto a = solve_chain(chain, gs, &used);
      const auto b = solve_chain(chain, direct, &used);
      CHECK(used);
      CHECK(max_diff(a, b) < 1e-11);
      CHECK(chain_residual(chain, b) < 1e-12);
    }
  }

  TEST_CASE("serial and parallel Bellman backups agree") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      const auto c = oracle::random_chain(rng);
      std::vector<double> v(c.model.num_states(), 0.0), a, b;
      std::vector<ActionId> pa, pb;
      for (int sweep = 0; sweep < 5; ++sweep) {
        const double da = bellman_backup(c.model, v, a, pa);
        const double db = bellman_backup_serial(c.model, v, b, pb);
        REQUIRE(a == b);
        REQUIRE(pa == pb);
        CHECK(da == db);
        v = a;
      }
    }
  }

  TEST_CASE("improper policies are detected") {
    ToyModel t(2);
    t.add(0, 0, 1, 1.0);
    t.add(0, 1, t.win(), 1.0);
    t.add(1, 0, 0, 1.0);
    t.add(1, 1, t.lose(), 1.0);
    const TransitionModel m = t.build();
    const auto bad = improper_pairs(m);
    CHECK(bad.size() == 2);
    CHECK(std::find(bad.begin(), bad.end(), std::pair<StateId, ActionId>{0, ActionId{0}}) != bad.end());
    CHECK_THROWS_AS(evaluate_mrp(m, t.single_action()), Error);
    CHECK_THROWS_AS(solve_mdp(m), Error);
  }

  TEST_CASE("unsampled intention action is an error") {
    ToyModel t(1);
    t.add(0, 0, t.win(), 1.0);
    IntentionSet f = t.single_action();
    f[0].actions = {ActionId{0}, ActionId{3}};
    f[0].probs = {0.5, 0.5};
    CHECK_THROWS_AS(evaluate_mrp(t.build(), f), Error);
  }

  TEST_CASE("rollouts match absorption probabilities") {
    ToyModel t(1);
    t.add(0, 0, t.win(), 0.3);
    t.add(0, 0, t.lose(), 0.2);
    t.add(0, 0, 0, 0.5);
    Rng rng(1);
    const RolloutResult r = rollout_check(t.build(), t.single_action(), Policy::intention(), 0, 100000, rng);
    CHECK(std::abs(r.frequency() - 0.6) < 0.005);

    ToyModel d(3);
    d.add(0, 0, 1, 1.0);
    d.add(1, 0, 2, 1.0);
    d.add(2, 0, d.win(), 1.0);
    const RolloutResult one = rollout_check(d.build(), d.single_action(), Policy::intention(), 0, 1000, rng);
    CHECK(one.frequency() == 1.0);

    std::mt19937_64 gen(5);
    const auto c = oracle::random_chain(gen, 6, 3);
    const MdpSolution sol = solve_mdp(c.model);
    const RolloutResult opt = rollout_check(c.model, c.intentions, Policy::deterministic(sol.policy), 0, 100000, rng);
    const double p = sol.value[0];
    CHECK(std::abs(opt.frequency() - p) <= 4.0 * std::sqrt(p * (1.0 - p) / 1e5) + 1e-9);
  }

  TEST_CASE("greedy step with no decisions reproduces the intention values") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
      const auto c = oracle::random_chain(rng);
      const ValueFunction v = evaluate_mrp(c.model, c.intentions);
      const auto [rule, backed] = greedy_step(c.model, c.intentions, v, {}, census());
      for (const auto& a : rule) CHECK_FALSE(a);
      CHECK(max_diff(backed.values, v.values) < 1e-11);
    }
  }

  TEST_CASE("n-step values lie between the intention and optimal values") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
      const auto c = oracle::random_chain(rng);
      const ValueFunction mrp = evaluate_mrp(c.model, c.intentions);
      const MdpSolution mdp = solve_mdp(c.model);
      const std::vector<std::set<ShotType>> stages(3, all_shot_types());
      const NStepResult r = nstep_policy(c.model, c.intentions, mrp, stages, census());
      REQUIRE(r.values.size() == 4);
      CHECK(r.policy.kind == Policy::Kind::Composite);
      CHECK(r.policy.stages.size() == 3);
      for (std::size_t k = 1; k < r.values.size(); ++k)
        for (std::size_t s = 0; s < c.model.num_transient; ++s) {
          const auto id = static_cast<StateId>(s);
          CHECK(r.values[k][id] >= r.values[k - 1][id] - 1e-12);
          CHECK(r.values[k][id] <= mdp.value[id] + 1e-12);
        }

      const ValueFunction one = evaluate_rule(c.model, c.intentions, r.policy.stages.back());
      for (std::size_t s = 0; s < c.model.num_transient; ++s)
        CHECK(one[static_cast<StateId>(s)] >= mrp[static_cast<StateId>(s)] - 1e-12);
    }
  }

  TEST_CASE("zero greedy steps keep the intention values") {
    std::mt19937_64 rng(4);
    const auto c = oracle::random_chain(rng);
    const ValueFunction mrp = evaluate_mrp(c.model, c.intentions);
    const NStepResult r = nstep_policy(c.model, c.intentions, mrp, {}, census());
    REQUIRE(r.values.size() == 1);
    CHECK(r.values.back().values == mrp.values);
    CHECK(r.policy.stages.empty());
  }
}
