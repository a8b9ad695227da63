#include <doctest.h>

#include <filesystem>

#include "oracle.hpp"
#include "rallyproc/transitions.hpp"

using namespace rallyproc;

namespace {

struct Fixture {
  CourtLayout layout = default_court();
  GeneratorParams params = default_generator();
  StateCensus census{layout.spec, layout.pruning};
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

const DistributionSet& small_dists() {
  static const DistributionSet d = fit_all(fixture().census, fixture().layout, fixture().params, 300, 31);
  return d;
}

double row_sum(const ActionRow& row) {
  double t = 0.0;
  for (const auto& e : row.entries) t += e.prob;
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "rallyproc-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("transitions") {
  TEST_CASE("serve fault constants") {
    CHECK(std::abs(first_serve_given_fault() - 0.910) <= 0.0005);
    CHECK(std::abs(first_serve_given_fault(0.379, 0.725, 0.302) - 0.379 * 0.725 / 0.302) < 1e-15);
    CHECK(kFaultSelfTransition == 0.91);
    CHECK(std::abs(multi_serve_diagnostic() - 0.0081) <= 0.0001);
  }

  TEST_CASE("fault mass split") {
    const State serve = State::transient(37, 80, ShotType::Serve);
    for (double f : {0.0, 0.2, 0.5, 1.0}) {
      const FaultDisposition d = apply_fault_rule(serve, f);
      CHECK(d.self_mass == doctest::Approx(0.91 * f).epsilon(1e-15));
      CHECK(d.lose_mass == doctest::Approx(0.09 * f).epsilon(1e-15));
      CHECK(d.self_mass + d.lose_mass == doctest::Approx(f).epsilon(1e-15));
    }
    CHECK_THROWS_AS(apply_fault_rule(State::transient(37, 80, ShotType::Rally), 0.2), Error);
    CHECK_THROWS_AS(apply_fault_rule(State::transient(37, 80, ShotType::Return), 0.2), Error);
  }

  TEST_CASE("single out-of-bounds draw tabulates a certain loss") {
    const auto& fx = fixture();
    StateId id = 0;
    while (fx.census.state(id).omega != ShotType::Rally) ++id;
    const State s = fx.census.state(id);
    StateDistributions dist;
    dist.intention.state = s;
    dist.intention.actions = permissible_actions(s, fx.layout);
    dist.intention.probs.assign(dist.intention.actions.size(), 0.0);
    dist.intention.probs[5] = 1.0;
    for (ActionId a : dist.intention.actions) {
      ExecutionDistribution e;
      e.region = a;
      e.mean = {fx.layout.spec.baseline_m + 20.0, 0.0};
      e.cov = {0.01, 0.0, 0.01};
      dist.execs.push_back(e);
    }
    BuildOptions opts;
    opts.n = 1;
    opts.forced_samples = 0;
    const StateRows rows = build_state_rows(id, fx.census, fx.layout, fx.params, dist, Epsilon(1), opts);
    const ActionRow* row = rows.find(dist.intention.actions[5]);
    REQUIRE(row);
    CHECK(row->samples == 1);
    REQUIRE(row->entries.size() == 1);
    CHECK(row->entries[0].next == fx.census.lose_id());
    CHECK(row->entries[0].tag == OutcomeTag::AError);
    CHECK(row->entries[0].prob == 1.0);
    for (const auto& r : rows.actions)
      if (r.action != dist.intention.actions[5]) CHECK(r.samples == 0);
  }

  TEST_CASE("built rows are stochastic, tag-consistent and reproducible") {
    const auto& fx = fixture();
    const auto& dists = small_dists();
    BuildOptions opts;
    opts.n = 60;
    opts.forced_samples = 20;
    opts.seed = 5;
    for (StateId id : {StateId{0}, StateId{100}, StateId{600}, StateId{1500}, StateId{2000}, StateId{3000}}) {
      const StateRows a = build_state_rows(id, fx.census, fx.layout, fx.params, dists.states[id], Epsilon(13), opts);
      const StateRows b = build_state_rows(id, fx.census, fx.layout, fx.params, dists.states[id], Epsilon(13), opts);
      REQUIRE(a.actions.size() == permissible_actions(fx.census.state(id), fx.layout).size());
      for (std::size_t k = 0; k < a.actions.size(); ++k) {
        const ActionRow& r = a.actions[k];
        CHECK(r.samples >= 20);
        CHECK(std::abs(row_sum(r) - 1.0) <= 1e-12);
        double win = 0.0, tagged_win = 0.0;
        for (std::size_t e = 0; e < r.entries.size(); ++e) {
          const Transition& t = r.entries[e];
          CHECK(t.prob >= 0.0);
          CHECK(t.prob <= 1.0);
          if (t.next == fx.census.win_id()) win += t.prob;
          if (tag_wins(t.tag)) tagged_win += t.prob;
          REQUIRE(t.next == b.actions[k].entries[e].next);
          REQUIRE(t.prob == b.actions[k].entries[e].prob);
          if (e > 0) CHECK(r.entries[e - 1].next <= t.next);
        }
        CHECK(win == doctest::Approx(tagged_win).epsilon(1e-15));
      }
    }
  }

  TEST_CASE("serve faults self-transition") {
    const auto& fx = fixture();
    const auto& dists = small_dists();
    BuildOptions opts;
    opts.n = 200;
    opts.forced_samples = 0;
    const StateRows rows = build_state_rows(0, fx.census, fx.layout, fx.params, dists.states[0], Epsilon(20), opts);
    bool saw_self = false;
    for (const auto& r : rows.actions) {
      double self = 0.0, fault_loss = 0.0;
      for (const auto& t : r.entries) {
        if (t.next == 0) self += t.prob;
        if (t.tag == OutcomeTag::AError) fault_loss += t.prob;
      }
      if (self > 0.0) {
        saw_self = true;
        CHECK(fault_loss == doctest::Approx(self * 0.09 / 0.91).epsilon(1e-9));
      }
    }
    CHECK(saw_self);
  }

  TEST_CASE("parallel and serial builds agree") {
    const auto& fx = fixture();
    BuildOptions opts;
    opts.n = 5;
    opts.forced_samples = 5;
    opts.seed = 3;
    const TransitionModel a = build_transitions(fx.census, fx.layout, fx.params, small_dists(), Epsilon(4), opts);
    const TransitionModel b = build_transitions_serial(fx.census, fx.layout, fx.params, small_dists(), Epsilon(4), opts);
    a.validate();
    REQUIRE(a.num_transient == b.num_transient);
    for (StateId s = 0; s < a.num_transient; ++s) {
      const auto& ra = a.rows(s).actions;
      const auto& rb = b.rows(s).actions;
      REQUIRE(ra.size() == rb.size());
      for (std::size_t k = 0; k < ra.size(); ++k) {
        REQUIRE(ra[k].entries.size() == rb[k].entries.size());
        for (std::size_t e = 0; e < ra[k].entries.size(); ++e) {
          REQUIRE(ra[k].entries[e].next == rb[k].entries[e].next);
          REQUIRE(ra[k].entries[e].prob == rb[k].entries[e].prob);
        }
      }
    }

    SUBCASE("file round trip") {
      const auto path = temp_path("transitions.test.v1");
      write_transitions(a, path);
      const TransitionModel c = read_transitions(path);
      CHECK(c.eps.value == 4);
      CHECK(c.census_hash == a.census_hash);
      for (StateId s = 0; s < a.num_transient; ++s) {
        const auto& ra = a.rows(s).actions;
        const auto& rc = c.rows(s).actions;
        REQUIRE(ra.size() == rc.size());
        for (std::size_t k = 0; k < ra.size(); ++k) {
          REQUIRE(ra[k].samples == rc[k].samples);
          REQUIRE(ra[k].entries.size() == rc[k].entries.size());
          for (std::size_t e = 0; e < ra[k].entries.size(); ++e) {
            REQUIRE(ra[k].entries[e].next == rc[k].entries[e].next);
            REQUIRE(ra[k].entries[e].tag == rc[k].entries[e].tag);
            REQUIRE(ra[k].entries[e].prob == rc[k].entries[e].prob);
          }
        }
      }
      std::filesystem::remove(path);
    }

    SUBCASE("intention policy reaches absorption") {
      std::vector<std::vector<ActionId>> support;
      for (StateId s = 0; s < a.num_transient; ++s) {
        std::vector<ActionId> acts;
        const auto& f = small_dists().states[s].intention;
        for (std::size_t k = 0; k < f.actions.size(); ++k)
          if (f.probs[k] > 0.0) acts.push_back(f.actions[k]);
        support.push_back(acts);
      }
      CHECK(unreachable_absorption(a, support).empty());
    }
  }

  TEST_CASE("distributions file round trip") {
    const auto path = temp_path("distributions.test.v1");
    write_distributions(small_dists(), path);
    const DistributionSet d = read_distributions(path);
    CHECK(d.census_hash == small_dists().census_hash);
    CHECK(d.seed == small_dists().seed);
    REQUIRE(d.states.size() == small_dists().states.size());
    for (std::size_t s = 0; s < d.states.size(); ++s) {
      const auto& x = d.states[s];
      const auto& y = small_dists().states[s];
      REQUIRE(x.intention.actions == y.intention.actions);
      REQUIRE(x.intention.probs == y.intention.probs);
      for (std::size_t k = 0; k < x.execs.size(); ++k) {
        REQUIRE(x.execs[k].mean.x == y.execs[k].mean.x);
        REQUIRE(x.execs[k].cov.xy == y.execs[k].cov.xy);
        REQUIRE(x.execs[k].fallback == y.execs[k].fallback);
      }
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("scenario classes") {
    const CourtSpec spec;
    CHECK(classify_state(State::transient(37, 80, ShotType::Serve), spec) == ScenarioClass::DeuceServe);
    CHECK(classify_state(State::transient(42, 80, ShotType::Serve), spec) == ScenarioClass::AdServe);
    CHECK(classify_state(State::transient(38, 80, ShotType::Return), spec) == ScenarioClass::DeuceReturn);
    CHECK(classify_state(State::transient(41, 80, ShotType::Rally), spec) == ScenarioClass::AdRally);
    CHECK(in_class(State::transient(41, 80, ShotType::Rally), ScenarioClass::Total, spec));
    for (ScenarioClass c : {ScenarioClass::AdServe, ScenarioClass::DeuceServe, ScenarioClass::AdReturn,
                            ScenarioClass::DeuceReturn, ScenarioClass::AdRally, ScenarioClass::DeuceRally,
                            ScenarioClass::Total})
      CHECK(scenario_class_from_string(to_string(c)) == c);
    CHECK_THROWS_AS(scenario_class_from_string("left-rally"), Error);
  }

  TEST_CASE("patching selects rows by class") {
    const auto& fx = fixture();
    auto make = [&](int e) {
      TransitionModel m;
      m.eps = Epsilon(e);
      m.census_hash = fx.census.hash();
      m.num_transient = fx.census.num_transient();
      for (std::size_t s = 0; s < m.num_transient; ++s) m.states.push_back(std::make_shared<StateRows>());
      return m;
    };
    const TransitionModel m1 = make(1), m7 = make(7), m13 = make(13);
    const std::map<int, const TransitionModel*> models{{1, &m1}, {7, &m7}, {13, &m13}};

    const TransitionModel p1 = patch_epsilon({{ScenarioClass::Total, 1}}, models, fx.census);
    for (StateId s = 0; s < p1.num_transient; ++s) REQUIRE(p1.states[s] == m1.states[s]);

    const TransitionModel p13 = patch_epsilon({{ScenarioClass::Total, 13}}, models, fx.census);
    for (StateId s = 0; s < p13.num_transient; ++s) REQUIRE(p13.states[s] == m13.states[s]);

    const TransitionModel ad = patch_epsilon({{ScenarioClass::AdServe, 7}}, models, fx.census);
    std::size_t changed = 0;
    for (StateId s = 0; s < ad.num_transient; ++s) {
      const bool in = classify_state(fx.census.state(s), fx.layout.spec) == ScenarioClass::AdServe;
      REQUIRE(ad.states[s] == (in ? m7.states[s] : m1.states[s]));
      changed += in;
    }
    CHECK(changed > 0);

    CHECK_THROWS_AS(patch_epsilon({{ScenarioClass::AdRally, 4}}, models, fx.census), Error);
  }

  TEST_CASE("unreachable absorption on a toy chain") {
    oracle::ToyModel t(3);
    t.add(0, 0, 1, 1.0);
    t.add(1, 0, 0, 1.0);
    t.add(2, 0, t.win(), 0.5);
    t.add(2, 0, 0, 0.5);
    const TransitionModel m = t.build();
    const std::vector<std::vector<ActionId>> support(3, {ActionId{0}});
    const auto bad = unreachable_absorption(m, support);
    CHECK(bad == std::vector<StateId>{0, 1});
  }

  TEST_CASE("outcome tags map to the absorbing states") {
    const auto& fx = fixture();
    BuildOptions opts;
    opts.n = 200;
    opts.forced_samples = 0;
    std::size_t seen[5] = {};
    for (StateId id = 0; id < fx.census.num_transient(); id += 37) {
      const StateRows rows = build_state_rows(id, fx.census, fx.layout, fx.params, small_dists().states[id], Epsilon(13), opts);
      for (const auto& r : rows.actions)
        for (const auto& t : r.entries) {
          ++seen[static_cast<int>(t.tag)];
          switch (t.tag) {
            case OutcomeTag::AWinner:
            case OutcomeTag::BError: CHECK(t.next == fx.census.win_id()); break;
            case OutcomeTag::AError:
            case OutcomeTag::BWinner: CHECK(t.next == fx.census.lose_id()); break;
            case OutcomeTag::Continue: CHECK(t.next < fx.census.num_transient()); break;
          }
        }
    }
    for (std::size_t k : seen) CHECK(k > 0);
  }

  TEST_CASE("rally error mass grows with epsilon") {
    const auto& fx = fixture();
    BuildOptions opts;
    opts.n = 2000;
    opts.forced_samples = 0;
    double mass[2] = {0.0, 0.0};
    int states = 0;
    for (StateId id = 0; id < fx.census.num_transient() && states < 40; id += 7) {
      if (fx.census.state(id).omega != ShotType::Rally) continue;
      ++states;
      const auto& f = small_dists().states[id].intention;
      for (int k = 0; k < 2; ++k) {
        const StateRows rows =
            build_state_rows(id, fx.census, fx.layout, fx.params, small_dists().states[id], Epsilon(k ? 20 : 1), opts);
        for (std::size_t a = 0; a < f.actions.size(); ++a) {
          if (f.probs[a] == 0.0) continue;
          for (const auto& t : rows.find(f.actions[a])->entries)
            if (t.tag == OutcomeTag::AError) mass[k] += f.probs[a] * t.prob;
        }
      }
    }
    REQUIRE(states == 40);
    CHECK(mass[1] > mass[0]);
  }
}
