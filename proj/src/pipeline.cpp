#include "rallyproc/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kRefitStream = 0x7265666974;
constexpr std::size_t kModelCacheSize = 3;
constexpr const char* kManifestFormat = "rallyproc.manifest.v1";

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',')
      out.emplace_back();
    else if (c != '\r')
      out.back() += c;
  }
  return out;
}

std::string eps_tag(int e) { return "eps" + std::to_string(e); }

}  // namespace

std::vector<int> RunConfig::eps_values() const {
  std::vector<int> out = eps;
  if (out.empty())
    for (int e = 1; e <= eps_max; ++e) out.push_back(e);
  out.push_back(1);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void RunConfig::validate() const {
  if (n < 1) throw Error("config: N must be at least 1");
  if (eps_max < 1 || eps_max > 64) throw Error("config: E must lie in [1, 64]");
  for (int e : eps)
    if (e < 1 || e > eps_max) throw Error("config: epsilon " + std::to_string(e) + " outside [1, E]");
  if (fit_samples < 100) throw Error("config: fit samples must be at least 100");
  if (forced_samples < 0) throw Error("config: forced samples must be nonnegative");
  if (start_samples < 1) throw Error("config: start samples must be positive");
  if (calibration_shots < 1) throw Error("config: calibration shots must be positive");
  if (threads < 0) throw Error("config: thread count must be nonnegative");
  if (!court_path.empty() && !fs::exists(court_path)) throw Error("config: court file not found: " + court_path.string());
  if (!generator_path.empty() && !fs::exists(generator_path))
    throw Error("config: generator file not found: " + generator_path.string());
  for (const auto& s : suites)
    if (std::find(kAllSuites.begin(), kAllSuites.end(), s) == kAllSuites.end()) throw Error("config: unknown suite " + s);
}

void configure_threads(const RunConfig& cfg) {
  int threads = cfg.threads;
  if (const char* env = std::getenv("RALLYPROC_THREADS")) {
    try {
      threads = std::stoi(env);
    } catch (const std::exception&) {
      throw Error(std::string("RALLYPROC_THREADS is not an integer: ") + env);
    }
    if (threads < 1) throw Error("RALLYPROC_THREADS must be positive");
  }
  if (threads > 0) omp_set_num_threads(threads);
}

Pipeline::Pipeline(RunConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      layout_(cfg_.court_path.empty() ? default_court() : load_court(cfg_.court_path)),
      params_(cfg_.generator_path.empty() ? default_generator() : load_generator(cfg_.generator_path)),
      census_(layout_.spec, layout_.pruning) {
  court_hash_ = sha256_file(cfg_.court_path.empty() ? default_court_path() : cfg_.court_path);
  generator_hash_ = sha256_file(cfg_.generator_path.empty() ? default_generator_path() : cfg_.generator_path);
  fs::create_directories(cfg_.out_dir);
  manifest_ = {{"format", kManifestFormat}, {"stages", json::object()}};
  if (fs::exists(manifest_path())) {
    std::ifstream in(manifest_path());
    try {
      const json old = json::parse(in);
      if (old.value("format", "") == kManifestFormat && old.contains("stages")) manifest_["stages"] = old["stages"];
    } catch (const json::exception&) {
      // Unreadable manifests are rebuilt from scratch.
    }
  }
  manifest_["seed"] = cfg_.seed;
  manifest_["versions"] = {{"court", layout_.version}, {"generator", params_.version}, {"pruning", layout_.pruning.version}};
  manifest_["inputs"] = {{"court", court_hash_}, {"generator", generator_hash_}, {"census", census_.hash()}};
}

std::string Pipeline::artifact_hash(const std::string& rel) const { return sha256_file(cfg_.out_dir / rel); }

std::string Pipeline::recorded_hash(const std::string& rel) const {
  for (const auto& [name, stage] : manifest_["stages"].items())
    if (stage["artifacts"].contains(rel)) return stage["artifacts"][rel].get<std::string>();
  throw Error("artifact " + rel + " is not recorded in the manifest");
}

void Pipeline::write_manifest() const {
  const fs::path tmp = manifest_path().string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << manifest_.dump(2) << '\n';
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, manifest_path());
}

bool Pipeline::run_stage(const std::string& name, const json& inputs, const Outputs& outputs,
                         const std::function<void()>& body) {
  const std::string key = sha256_hex(inputs.dump());
  if (const auto it = checked_.find(name); it != checked_.end() && it->second == key) return false;
  auto& stages = manifest_["stages"];
  if (stages.contains(name) && stages[name].value("key", "") == key) {
    bool intact = true;
    for (const auto& rel : outputs) {
      const auto& rec = stages[name]["artifacts"];
      if (!rec.contains(rel) || !fs::exists(cfg_.out_dir / rel) || artifact_hash(rel) != rec[rel].get<std::string>()) {
        intact = false;
        break;
      }
    }
    if (intact) {
      checked_[name] = key;
      reports_.push_back({name, true});
      std::cerr << "[" << name << "] cached\n";
      return false;
    }
  }
  std::cerr << "[" << name << "] running\n";
  for (const auto& rel : outputs) fs::create_directories((cfg_.out_dir / rel).parent_path());
  try {
    body();
  } catch (const std::exception& ex) {
    throw Error("stage " + name + ": " + ex.what());
  }
  json artifacts = json::object();
  for (const auto& rel : outputs) artifacts[rel] = artifact_hash(rel);
  stages[name] = {{"key", key}, {"inputs", inputs}, {"artifacts", artifacts}};
  write_manifest();
  checked_[name] = key;
  reports_.push_back({name, false});
  return true;
}

std::string Pipeline::distributions_artifact() {
  const std::string rel = "distributions.v1.bin";
  const json inputs = {{"stage", "fit"},           {"court", court_hash_},
                       {"generator", generator_hash_}, {"census", census_.hash()},
                       {"seed", cfg_.seed},        {"fit_samples", cfg_.fit_samples}};
  run_stage("fit", inputs, {rel}, [&] {
    dists_ = fit_all(census_, layout_, params_, cfg_.fit_samples, cfg_.seed);
    write_distributions(*dists_, cfg_.out_dir / rel);
  });
  return recorded_hash(rel);
}

const DistributionSet& Pipeline::distributions() {
  distributions_artifact();
  if (!dists_) dists_ = read_distributions(cfg_.out_dir / "distributions.v1.bin");
  if (dists_->census_hash != census_.hash()) throw Error("distributions were fitted on a different state census");
  return *dists_;
}

std::string Pipeline::start_weights_artifact() {
  const std::string rel = "start_weights.csv";
  const json inputs = {{"stage", "start-weights"}, {"court", court_hash_},
                       {"generator", generator_hash_}, {"census", census_.hash()},
                       {"seed", cfg_.seed},            {"samples", cfg_.start_samples}};
  run_stage("start-weights", inputs, {rel}, [&] {
    weights_ = estimate_start_weights(census_, params_, layout_, cfg_.start_samples, cfg_.seed);
    write_start_weights(*weights_, census_, cfg_.out_dir / rel);
  });
  return recorded_hash(rel);
}

const StartWeights& Pipeline::start_weights() {
  start_weights_artifact();
  if (!weights_) weights_ = read_start_weights(cfg_.out_dir / "start_weights.csv", census_);
  return *weights_;
}

std::string Pipeline::transitions_artifact(int eps) {
  const std::string rel = transitions_file_name(eps);
  const std::string dist_hash = distributions_artifact();
  const json inputs = {{"stage", "build-transitions"},
                       {"distributions", dist_hash},
                       {"court", court_hash_},
                       {"generator", generator_hash_},
                       {"eps", eps},
                       {"eps_max", cfg_.eps_max},
                       {"n", cfg_.n},
                       {"forced_samples", cfg_.forced_samples},
                       {"seed", cfg_.seed}};
  run_stage("transitions." + eps_tag(eps), inputs, {rel}, [&] {
    BuildOptions opts;
    opts.n = cfg_.n;
    opts.forced_samples = cfg_.forced_samples;
    opts.seed = cfg_.seed;
    auto m = std::make_shared<const TransitionModel>(
        build_transitions(census_, layout_, params_, distributions(), Epsilon(eps, cfg_.eps_max), opts));
    write_transitions(*m, cfg_.out_dir / rel);
    models_[eps] = std::move(m);
    model_order_.push_back(eps);
  });
  return recorded_hash(rel);
}

std::shared_ptr<const TransitionModel> Pipeline::model(int eps) {
  transitions_artifact(eps);
  auto it = models_.find(eps);
  if (it == models_.end()) {
    auto m = std::make_shared<const TransitionModel>(read_transitions(cfg_.out_dir / transitions_file_name(eps)));
    if (m->census_hash != census_.hash()) throw Error("transition model was built on a different state census");
    it = models_.emplace(eps, std::move(m)).first;
  } else {
    model_order_.erase(std::find(model_order_.begin(), model_order_.end(), eps));
  }
  model_order_.push_back(eps);
  auto out = it->second;
  while (model_order_.size() > kModelCacheSize) {
    models_.erase(model_order_.front());
    model_order_.erase(model_order_.begin());
  }
  return out;
}

const IntentionSet& Pipeline::intentions(int eps) {
  if (!cfg_.refit_intentions || eps == 1) {
    if (!fitted_intentions_) fitted_intentions_ = intentions_of(distributions());
    return *fitted_intentions_;
  }
  auto it = refitted_.find(eps);
  if (it == refitted_.end()) {
    const DistributionSet refit = refit_intentions(distributions(), layout_, Epsilon(eps, cfg_.eps_max),
                                                   cfg_.fit_samples, derive_seed(cfg_.seed, kRefitStream, eps));
    it = refitted_.emplace(eps, intentions_of(refit)).first;
  }
  return it->second;
}

void Pipeline::solve(int eps) {
  const std::string mrp = "values/mrp." + eps_tag(eps) + ".csv";
  const std::string mdp = "values/mdp." + eps_tag(eps) + ".csv";
  const json inputs = {{"stage", "solve"},
                       {"transitions", transitions_artifact(eps)},
                       {"distributions", distributions_artifact()},
                       {"refit_intentions", cfg_.refit_intentions},
                       {"fit_samples", cfg_.fit_samples},
                       {"seed", cfg_.seed}};
  run_stage("solve." + eps_tag(eps), inputs, {mrp, mdp}, [&] {
    const auto m = model(eps);
    const ValueFunction v = evaluate_mrp(*m, intentions(eps));
    write_values_csv(v, std::vector<std::optional<ActionId>>(census_.num_transient()), census_, layout_,
                     cfg_.out_dir / mrp);
    const MdpSolution sol = solve_mdp(*m);
    write_values_csv(sol.value, {sol.policy.begin(), sol.policy.end()}, census_, layout_, cfg_.out_dir / mdp);
  });
}

ExperimentContext Pipeline::context() {
  ExperimentContext ctx;
  ctx.census = &census_;
  ctx.layout = &layout_;
  ctx.params = &params_;
  ctx.dists = &distributions();
  ctx.weights = start_weights();
  ctx.models = [this](int e) { return model(e); };
  ctx.intentions = [this](int e) -> const IntentionSet& { return intentions(e); };
  ctx.eps = cfg_.eps_values();
  ctx.seed = cfg_.seed;
  return ctx;
}

std::vector<ExperimentTable> Pipeline::experiment(const std::string& suite) {
  if (std::find(kAllSuites.begin(), kAllSuites.end(), suite) == kAllSuites.end())
    throw Error("unknown experiment suite " + suite);
  json inputs = {{"stage", "experiment"},
                 {"suite", suite},
                 {"distributions", distributions_artifact()},
                 {"start_weights", start_weights_artifact()},
                 {"refit_intentions", cfg_.refit_intentions},
                 {"seed", cfg_.seed}};
  if (suite == "appendixA") {
    inputs["eps_max"] = cfg_.eps_max;
    inputs["shots"] = cfg_.calibration_shots;
    inputs["generator"] = generator_hash_;
  } else {
    json models = json::object();
    for (int e : cfg_.eps_values()) models[std::to_string(e)] = transitions_artifact(e);
    inputs["transitions"] = models;
  }
  Outputs outputs{"experiments/" + suite + ".csv"};
  if (suite == "fig7") outputs.push_back("experiments/fig7-behind-baseline.csv");

  std::vector<ExperimentTable> tables;
  const bool ran = run_stage("experiment." + suite, inputs, outputs, [&] {
    const ExperimentContext ctx = context();
    if (suite == "fig5") {
      tables.push_back(error_scenario_sweep(ctx));
    } else if (suite == "fig6") {
      tables.push_back(playstyle_sweep(ctx));
    } else if (suite == "fig7") {
      tables.push_back(action_distribution(ctx, HistogramFilter::AllStates));
      tables.push_back(action_distribution(ctx, HistogramFilter::BehindBaseline));
    } else if (suite == "fig8") {
      tables.push_back(nstep_scenario_suite(ctx, default_nstep_scenarios()));
    } else if (suite == "appendixA") {
      int selected = 1;
      ExperimentTable t = average_epsilon_table(ctx, cfg_.eps_max, cfg_.calibration_shots, kEmpiricalAverage, &selected);
      t.rows.emplace_back("selected_eps", std::vector<double>(t.eps.size(), static_cast<double>(selected)));
      tables.push_back(std::move(t));
    } else {
      tables.push_back(absorbing_decomposition(ctx));
    }
    for (std::size_t i = 0; i < tables.size(); ++i) tables[i].write_csv(cfg_.out_dir / outputs[i]);
  });
  if (!ran)
    for (const auto& rel : outputs) tables.push_back(ExperimentTable::read_csv(cfg_.out_dir / rel));
  return tables;
}

void Pipeline::run_all() {
  distributions_artifact();
  start_weights_artifact();
  for (int e : cfg_.eps_values()) transitions_artifact(e);
  for (int e : cfg_.eps_values()) solve(e);
  for (const auto& s : cfg_.suites) experiment(s);
}

void write_values_csv(const ValueFunction& vf, const std::vector<std::optional<ActionId>>& actions,
                      const StateCensus& census, const CourtLayout& layout, const fs::path& path) {
  if (actions.size() != census.num_transient()) throw Error("write_values_csv: one action slot per transient state");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "state_id,sigma_A,sigma_B,omega,value,action\n";
  for (StateId s = 0; s < census.num_transient(); ++s) {
    const State st = census.state(s);
    out << s << ',' << st.sigma_a << ',' << st.sigma_b << ',' << to_string(st.omega) << ','
        << format_double(vf.values.at(s)) << ',' << (actions[s] ? layout.action(*actions[s]).name : "") << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

ValueTable read_values_csv(const fs::path& path, const StateCensus& census) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "state_id,sigma_A,sigma_B,omega,value,action") throw Error(path.string() + ": bad value table header");
  ValueTable t;
  t.values.values.assign(census.size(), 0.0);
  t.actions.assign(census.num_transient(), "");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw Error(path.string() + ": malformed value row");
    const auto id = static_cast<StateId>(std::stoul(f[0]));
    if (id >= census.num_transient()) throw Error(path.string() + ": state id out of range");
    const State st = census.state(id);
    if (st.sigma_a != std::stoi(f[1]) || st.sigma_b != std::stoi(f[2]) || to_string(st.omega) != f[3])
      throw Error(path.string() + ": row does not match the state census");
    t.values.values[id] = parse_double(f[4]);
    t.actions[id] = f[5];
    ++rows;
  }
  if (rows != census.num_transient()) throw Error(path.string() + ": expected one row per transient state");
  return t;
}

json values_to_json(const ValueTable& t, const StateCensus& census) {
  json states = json::array();
  for (StateId s = 0; s < census.num_transient(); ++s) {
    const State st = census.state(s);
    states.push_back({{"state_id", s},
                      {"sigma_A", st.sigma_a},
                      {"sigma_B", st.sigma_b},
                      {"omega", std::string(to_string(st.omega))},
                      {"value", t.values.values.at(s)},
                      {"action", t.actions.at(s)}});
  }
  return {{"kind", "value_function"}, {"census", census.hash()}, {"states", states}};
}

ValueTable values_from_json(const json& j, const StateCensus& census) {
  if (j.value("kind", "") != "value_function") throw Error("not a value function document");
  if (j.value("census", "") != census.hash()) throw Error("value function belongs to a different state census");
  ValueTable t;
  t.values.values.assign(census.size(), 0.0);
  t.actions.assign(census.num_transient(), "");
  const auto& states = j.at("states");
  if (states.size() != census.num_transient()) throw Error("expected one entry per transient state");
  for (const auto& e : states) {
    const auto id = e.at("state_id").get<StateId>();
    if (id >= census.num_transient()) throw Error("state id out of range");
    t.values.values[id] = e.at("value").get<double>();
    t.actions[id] = e.at("action").get<std::string>();
  }
  return t;
}

json table_to_json(const ExperimentTable& t) {
  json series = json::array();
  for (const auto& [name, values] : t.rows) series.push_back({{"name", name}, {"values", values}});
  return {{"kind", "experiment_table"}, {"figure", t.figure}, {"eps", t.eps}, {"series", series}};
}

ExperimentTable table_from_json(const json& j) {
  if (j.value("kind", "") != "experiment_table") throw Error("not an experiment table document");
  ExperimentTable t;
  t.figure = j.at("figure").get<std::string>();
  t.eps = j.at("eps").get<std::vector<int>>();
  for (const auto& s : j.at("series")) {
    auto values = s.at("values").get<std::vector<double>>();
    if (values.size() != t.eps.size()) throw Error("series length does not match the epsilon list");
    t.rows.emplace_back(s.at("name").get<std::string>(), std::move(values));
  }
  return t;
}

ExportFormat export_format_from_string(std::string_view s) {
  if (s == "csv") return ExportFormat::Csv;
  if (s == "json") return ExportFormat::Json;
  throw Error("unknown export format '" + std::string(s) + "'");
}

void export_artifact(const fs::path& run_dir, const std::string& id, ExportFormat format, const fs::path& out,
                     const StateCensus& census) {
  const fs::path src = run_dir / (id + ".csv");
  const bool is_values = id.rfind("values/", 0) == 0;
  const bool is_table = id.rfind("experiments/", 0) == 0;
  if ((!is_values && !is_table) || !fs::exists(src)) throw Error("unknown artifact id '" + id + "'");
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  if (format == ExportFormat::Csv) {
    // Parsing first rejects corrupted artifacts.
    if (is_values)
      read_values_csv(src, census);
    else
      ExperimentTable::read_csv(src);
    fs::copy_file(src, out, fs::copy_options::overwrite_existing);
    return;
  }
  const json doc = is_values ? values_to_json(read_values_csv(src, census), census)
                             : table_to_json(ExperimentTable::read_csv(src));
  std::ofstream o(out, std::ios::trunc);
  o << doc.dump(2) << '\n';
  if (!o) throw Error("failed writing " + out.string());
}

}  // namespace rallyproc
