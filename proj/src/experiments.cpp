#include "rallyproc/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

namespace {

constexpr std::uint64_t kStartStream = 0x7374617274;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void normalise(std::vector<std::pair<StateId, double>>& w, const char* family) {
  double total = 0.0;
  for (const auto& [s, x] : w) total += x;
  if (!(total > 0.0)) throw Error(std::string("no ") + family + " starts landed in the state census");
  for (auto& [s, x] : w) x /= total;
}

}  // namespace

void StartWeights::validate() const {
  for (const auto* fam : {&serve, &ret}) {
    double total = 0.0;
    for (const auto& [s, x] : *fam) {
      if (!(x >= 0.0)) throw Error("start weights must be nonnegative");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("start weights must sum to 1 within each family");
  }
}

StartWeights estimate_start_weights(const StateCensus& census, const GeneratorParams& params,
                                    const CourtLayout& layout, int samples, std::uint64_t seed) {
  if (samples < 1) throw Error("start weights: sample count must be positive");
  std::map<StateId, std::uint64_t> serve, ret;
  Rng serve_rng(derive_seed(seed, kStartStream, 0));
  Rng return_rng(derive_seed(seed, kStartStream, 1));
  for (int i = 0; i < samples; ++i) {
    if (const auto s = sample_serve_start(params, layout, serve_rng))
      if (const auto id = census.find(*s)) ++serve[*id];
    if (const auto s = sample_return_start(params, layout, return_rng))
      if (const auto id = census.find(*s)) ++ret[*id];
  }
  StartWeights w;
  w.samples = static_cast<std::uint64_t>(samples);
  for (const auto& [s, c] : serve) w.serve.emplace_back(s, static_cast<double>(c));
  for (const auto& [s, c] : ret) w.ret.emplace_back(s, static_cast<double>(c));
  normalise(w.serve, "serve");
  normalise(w.ret, "return");
  return w;
}

void write_start_weights(const StartWeights& w, const StateCensus& census, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "family,state_id,sigma_A,sigma_B,omega,weight\n";
  auto emit = [&](const char* fam, const std::vector<std::pair<StateId, double>>& rows) {
    for (const auto& [id, x] : rows) {
      const State s = census.state(id);
      out << fam << ',' << id << ',' << s.sigma_a << ',' << s.sigma_b << ',' << to_string(s.omega) << ','
          << format_double(x) << '\n';
    }
  };
  emit("serve", w.serve);
  emit("return", w.ret);
  if (!out) throw Error("failed writing " + path.string());
}

StartWeights read_start_weights(const std::filesystem::path& path, const StateCensus& census) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  StartWeights w;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw Error(path.string() + ": malformed start weight row");
    const auto id = static_cast<StateId>(std::stoul(f[1]));
    const State s = census.state(id);
    if (s.sigma_a != std::stoi(f[2]) || s.sigma_b != std::stoi(f[3]) || to_string(s.omega) != f[4])
      throw Error(path.string() + ": start weights do not match the state census");
    (f[0] == "serve" ? w.serve : w.ret).emplace_back(id, parse_double(f[5]));
  }
  w.validate();
  return w;
}

StartingStateValue starting_state_value(const ValueFunction& vf, const StartWeights& weights) {
  if (weights.serve.empty() || weights.ret.empty()) throw Error("starting_state_value: missing start weights");
  StartingStateValue out;
  for (const auto& [s, w] : weights.serve) out.serve_value += w * vf.values.at(s);
  for (const auto& [s, w] : weights.ret) out.return_value += w * vf.values.at(s);
  out.combined = 0.5 * (out.serve_value + out.return_value);
  return out;
}

std::string_view to_string(PlaystyleMode m) {
  switch (m) {
    case PlaystyleMode::Average: return "average";
    case PlaystyleMode::Conservative: return "conservative";
    case PlaystyleMode::Aggressive: return "aggressive";
  }
  return "?";
}

IntentionDistribution playstyle_transform(const IntentionDistribution& f, const PlaystyleTransform& t,
                                          const CourtLayout& layout) {
  if (t.mode == PlaystyleMode::Average) return f;
  if (!(t.shift > -1.0)) throw Error("playstyle shift must exceed -1");
  IntentionDistribution out = f;
  const bool boost_conservative = t.mode == PlaystyleMode::Conservative;
  double total = 0.0;
  for (std::size_t k = 0; k < out.actions.size(); ++k) {
    if (layout.action(out.actions[k]).conservative == boost_conservative) out.probs[k] *= 1.0 + t.shift;
    total += out.probs[k];
  }
  for (double& p : out.probs) p /= total;
  return out;
}

IntentionSet playstyle_transform(const IntentionSet& f, const PlaystyleTransform& t, const CourtLayout& layout) {
  IntentionSet out;
  out.reserve(f.size());
  for (const auto& x : f) out.push_back(playstyle_transform(x, t, layout));
  return out;
}

int select_average_epsilon(const std::map<int, OutcomeFrequencies>& table, double empirical_error,
                           std::vector<std::string>* warnings) {
  int best = 1;
  double best_error = 0.0;
  bool found = false;
  double prev = -1.0;
  for (const auto& [e, o] : table) {
    if (o.error < prev && warnings)
      warnings->push_back("P(error) decreases from " + format_double(prev) + " to " + format_double(o.error) +
                          " at epsilon " + std::to_string(e));
    prev = o.error;
    if (o.error <= empirical_error) {
      best = e;
      best_error = o.error;
      found = true;
    }
  }
  if (!found) return 1;
  // Ties in the error column resolve to the smaller epsilon.
  for (const auto& [e, o] : table)
    if (e < best && o.error == best_error) return e;
  return best;
}

std::map<ActionId, double> optimal_action_histogram(const std::vector<ActionId>& policy, const StateCensus& census,
                                                    HistogramFilter filter) {
  std::map<ActionId, double> out;
  std::size_t n = 0;
  const CourtSpec& spec = census.spec();
  for (StateId s = 0; s < policy.size(); ++s) {
    if (filter == HistogramFilter::BehindBaseline) {
      const State st = census.state(s);
      auto behind = [&](int cell) {
        const Rect b = cell_at(cell, spec).bounds;
        return std::min(std::abs(b.x0), std::abs(b.x1)) >= spec.baseline_m;
      };
      if (!behind(st.sigma_a) || !behind(st.sigma_b)) continue;
    }
    out[policy[s]] += 1.0;
    ++n;
  }
  for (auto& [a, x] : out) x /= static_cast<double>(n);
  return out;
}

double conservative_share(const std::map<ActionId, double>& histogram, const CourtLayout& layout) {
  double m = 0.0;
  for (const auto& [a, x] : histogram)
    if (layout.action(a).conservative) m += x;
  return m;
}

const std::vector<double>& ExperimentTable::series(const std::string& name) const {
  for (const auto& [n, v] : rows)
    if (n == name) return v;
  throw Error(figure + ": no series '" + name + "'");
}

double ExperimentTable::at(const std::string& name, int e) const {
  const auto it = std::find(eps.begin(), eps.end(), e);
  if (it == eps.end()) throw Error(figure + ": no column for epsilon " + std::to_string(e));
  return series(name)[static_cast<std::size_t>(it - eps.begin())];
}

void ExperimentTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "figure,series";
  for (int e : eps) out << ",eps_" << e;
  out << '\n';
  for (const auto& [name, values] : rows) {
    out << figure << ',' << name;
    for (double v : values) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

ExperimentTable ExperimentTable::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty table");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "figure" || header[1] != "series") throw Error(path.string() + ": bad header");
  ExperimentTable t;
  for (std::size_t i = 2; i < header.size(); ++i) {
    if (header[i].rfind("eps_", 0) != 0) throw Error(path.string() + ": bad column '" + header[i] + "'");
    t.eps.push_back(std::stoi(header[i].substr(4)));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw Error(path.string() + ": ragged row");
    t.figure = f[0];
    std::vector<double> v;
    for (std::size_t i = 2; i < f.size(); ++i) v.push_back(parse_double(f[i]));
    t.rows.emplace_back(f[1], std::move(v));
  }
  return t;
}

std::vector<NStepScenario> default_nstep_scenarios(int max_optimal) {
  const std::set<ShotType> none;
  const std::set<ShotType> first{ShotType::Serve, ShotType::Return};
  std::vector<NStepScenario> out{
      {"serve-only", {{ShotType::Serve}}},
      {"return-only", {{ShotType::Return}}},
      {"serve+return", {first}},
      {"first-rally-only", {none, {ShotType::Rally}}},
      {"serve-or-return+first-rally", {first, {ShotType::Rally}}},
  };
  for (int k = 1; k <= max_optimal; ++k)
    out.push_back({"optimal-" + std::to_string(k), std::vector<std::set<ShotType>>(k, all_shot_types())});
  return out;
}

std::vector<std::pair<std::string, ScenarioMap>> default_error_scenarios(int eps) {
  std::vector<std::pair<std::string, ScenarioMap>> out;
  for (ScenarioClass c : {ScenarioClass::Total, ScenarioClass::AdServe, ScenarioClass::DeuceServe,
                          ScenarioClass::AdReturn, ScenarioClass::DeuceReturn, ScenarioClass::AdRally,
                          ScenarioClass::DeuceRally})
    out.emplace_back(std::string(to_string(c)), ScenarioMap{{c, eps}});
  return out;
}

namespace {

void check_context(const ExperimentContext& ctx) {
  if (!ctx.census || !ctx.layout || !ctx.models || !ctx.intentions) throw Error("experiment context is incomplete");
  if (ctx.eps.empty()) throw Error("experiment context has no epsilon values");
}

double combined(const ExperimentContext& ctx, const ValueFunction& v) {
  return starting_state_value(v, ctx.weights).combined;
}

}  // namespace

ExperimentTable error_scenario_sweep(const ExperimentContext& ctx) {
  check_context(ctx);
  ExperimentTable t{"fig5", ctx.eps, {}};
  const auto names = default_error_scenarios(1);
  for (const auto& [name, m] : names) t.rows.emplace_back(name, std::vector<double>(ctx.eps.size()));
  const auto perfect = ctx.models(1);
  for (std::size_t j = 0; j < ctx.eps.size(); ++j) {
    const int e = ctx.eps[j];
    const auto model = ctx.models(e);
    const std::map<int, const TransitionModel*> models{{1, perfect.get()}, {e, model.get()}};
    const auto scenarios = default_error_scenarios(e);
    const auto n = static_cast<std::int64_t>(scenarios.size());
    std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        const TransitionModel patched = patch_epsilon(scenarios[i].second, models, *ctx.census);
        t.rows[i].second[j] = combined(ctx, evaluate_mrp(patched, ctx.intentions(e)));
      } catch (const std::exception& ex) {
#pragma omp critical(rallyproc_fig5_error)
        if (failure.empty()) failure = ex.what();
      }
    }
    if (!failure.empty()) throw Error("fig5: " + failure);
  }
  return t;
}

ExperimentTable playstyle_sweep(const ExperimentContext& ctx, double shift) {
  check_context(ctx);
  ExperimentTable t{"fig6", ctx.eps, {}};
  const PlaystyleMode modes[] = {PlaystyleMode::Average, PlaystyleMode::Conservative, PlaystyleMode::Aggressive};
  for (PlaystyleMode m : modes) t.rows.emplace_back(std::string(to_string(m)), std::vector<double>(ctx.eps.size()));
  for (std::size_t j = 0; j < ctx.eps.size(); ++j) {
    const auto model = ctx.models(ctx.eps[j]);
    for (std::size_t i = 0; i < 3; ++i) {
      const IntentionSet f = playstyle_transform(ctx.intentions(ctx.eps[j]), {modes[i], shift}, *ctx.layout);
      t.rows[i].second[j] = combined(ctx, evaluate_mrp(*model, f));
    }
  }
  return t;
}

ExperimentTable action_distribution(const ExperimentContext& ctx, HistogramFilter filter) {
  check_context(ctx);
  ExperimentTable t{filter == HistogramFilter::AllStates ? "fig7" : "fig7-behind-baseline", ctx.eps, {}};
  for (const auto& a : ctx.layout->actions) t.rows.emplace_back(a.name, std::vector<double>(ctx.eps.size(), 0.0));
  t.rows.emplace_back("conservative-share", std::vector<double>(ctx.eps.size(), 0.0));
  for (std::size_t j = 0; j < ctx.eps.size(); ++j) {
    const auto model = ctx.models(ctx.eps[j]);
    const MdpSolution sol = solve_mdp(*model);
    const auto hist = optimal_action_histogram(sol.policy, *ctx.census, filter);
    for (const auto& [a, x] : hist) t.rows[a.value].second[j] = x;
    t.rows.back().second[j] = conservative_share(hist, *ctx.layout);
  }
  return t;
}

ExperimentTable nstep_scenario_suite(const ExperimentContext& ctx, const std::vector<NStepScenario>& scenarios) {
  check_context(ctx);
  ExperimentTable t{"fig8", ctx.eps, {}};
  t.rows.emplace_back("mrp", std::vector<double>(ctx.eps.size()));
  for (const auto& s : scenarios) t.rows.emplace_back(s.name, std::vector<double>(ctx.eps.size()));
  t.rows.emplace_back("mdp", std::vector<double>(ctx.eps.size()));
  for (std::size_t j = 0; j < ctx.eps.size(); ++j) {
    const auto model = ctx.models(ctx.eps[j]);
    const IntentionSet& f = ctx.intentions(ctx.eps[j]);
    const ValueFunction v_hat = evaluate_mrp(*model, f);
    t.rows.front().second[j] = combined(ctx, v_hat);
    const auto n = static_cast<std::int64_t>(scenarios.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
      const NStepResult r = nstep_policy(*model, f, v_hat, scenarios[i].stages, *ctx.census);
      t.rows[i + 1].second[j] = combined(ctx, r.values.back());
    }
    t.rows.back().second[j] = combined(ctx, solve_mdp(*model).value);
  }
  return t;
}

ExperimentTable absorbing_decomposition(const ExperimentContext& ctx) {
  check_context(ctx);
  ExperimentTable t{"appendixB", ctx.eps, {}};
  const ScenarioClass classes[] = {ScenarioClass::AdRally, ScenarioClass::DeuceRally};
  const OutcomeTag tags[] = {OutcomeTag::AWinner, OutcomeTag::AError, OutcomeTag::BWinner, OutcomeTag::BError,
                             OutcomeTag::Continue};
  for (ScenarioClass c : classes)
    for (OutcomeTag tag : tags)
      t.rows.emplace_back(std::string(to_string(c)) + "/" + std::string(to_string(tag)),
                          std::vector<double>(ctx.eps.size()));
  for (std::size_t j = 0; j < ctx.eps.size(); ++j) {
    const auto model = ctx.models(ctx.eps[j]);
    const IntentionSet& f = ctx.intentions(ctx.eps[j]);
    for (std::size_t ci = 0; ci < 2; ++ci) {
      double mass[kAbsorbingTags + 1] = {};
      std::size_t count = 0;
      for (StateId s = 0; s < model->num_transient; ++s) {
        if (!in_class(ctx.census->state(s), classes[ci], ctx.census->spec())) continue;
        ++count;
        const auto& fs = f[s];
        for (std::size_t k = 0; k < fs.actions.size(); ++k) {
          if (fs.probs[k] == 0.0) continue;
          const ActionRow* row = model->find(s, fs.actions[k]);
          if (!row) throw Error("appendixB: missing row");
          for (const auto& tr : row->entries) mass[static_cast<int>(tr.tag)] += fs.probs[k] * tr.prob;
        }
      }
      for (std::size_t k = 0; k < 5; ++k)
        t.rows[ci * 5 + k].second[j] = count ? mass[k] / static_cast<double>(count) : 0.0;
    }
  }
  return t;
}

ExperimentTable average_epsilon_table(const ExperimentContext& ctx, int max_eps, int shots,
                                      const OutcomeFrequencies& empirical, int* selected) {
  check_context(ctx);
  if (!ctx.dists || !ctx.params) throw Error("appendixA: distributions and generator params are required");
  const State s = calibration_state(ctx.layout->spec);
  const auto id = ctx.census->find(s);
  if (!id) throw Error("appendixA: calibration state is pruned from the census");
  const auto table = epsilon_table(s, ctx.dists->states.at(*id), max_eps, shots, *ctx.params, *ctx.layout, ctx.seed);
  ExperimentTable t{"appendixA", {}, {{"p_win", {}}, {"p_error", {}}, {"p_in_play", {}}}};
  for (const auto& [e, o] : table) {
    t.eps.push_back(e);
    t.rows[0].second.push_back(o.win);
    t.rows[1].second.push_back(o.error);
    t.rows[2].second.push_back(o.in_play);
  }
  if (selected) *selected = select_average_epsilon(table, empirical.error);
  return t;
}

}  // namespace rallyproc
