#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "rallyproc/pipeline.hpp"

using namespace rallyproc;

namespace {

std::vector<int> parse_eps_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    const std::size_t dots = item.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoi(item));
      } else {
        const int lo = std::stoi(item.substr(0, dots));
        const int hi = std::stoi(item.substr(dots + 2));
        if (lo > hi) throw Error("empty epsilon range " + item);
        for (int e = lo; e <= hi; ++e) out.push_back(e);
      }
    } catch (const std::logic_error&) {
      throw Error("bad epsilon list '" + text + "'");
    }
    pos = comma + 1;
  }
  return out;
}

std::set<ShotType> parse_restrict(const std::string& text) {
  std::set<ShotType> out;
  if (text == "all") return all_shot_types();
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    out.insert(shot_type_from_string(text.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

void print_value(const char* label, int eps, const StartingStateValue& v) {
  std::printf("%s eps=%d serve=%.6f return=%.6f combined=%.6f\n", label, eps, v.serve_value, v.return_value,
              v.combined);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tennis point MRP/MDP pipeline"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string eps_text;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--court", cfg.court_path, "Court layout JSON")->check(CLI::ExistingFile);
    sub->add_option("--generator", cfg.generator_path, "Generator parameter JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", cfg.seed, "Master seed");
    sub->add_option("--out", cfg.out_dir, "Run directory");
    sub->add_option("--threads", cfg.threads, "Worker threads (RALLYPROC_THREADS overrides)");
    sub->add_option("--fit-samples", cfg.fit_samples, "Generator shots per state for fitting");
    sub->add_option("--forced-samples", cfg.forced_samples, "Minimum samples per state-action row");
    sub->add_option("--eps-max", cfg.eps_max, "Largest error level E");
    sub->add_option("--start-samples", cfg.start_samples, "Simulated point starts for start weights");
    sub->add_flag("--refit-intentions", cfg.refit_intentions, "Refit intention distributions at each error level");
  };

  auto* fit = app.add_subcommand("fit", "Fit intention and execution distributions");
  common(fit);

  auto* build = app.add_subcommand("build-transitions", "Build transition models");
  common(build);
  build->add_option("--eps", eps_text, "Error levels, e.g. 1..20 or 1,4,13");
  build->add_option("--n", cfg.n, "Samples per state");

  auto* solve = app.add_subcommand("solve", "Solve for values and policies");
  common(solve);
  std::string mode = "mdp";
  std::string restrict = "all";
  int steps = 1;
  solve->add_option("--mode", mode, "mrp, mdp or nstep")->check(CLI::IsMember({"mrp", "mdp", "nstep"}));
  solve->add_option("--restrict", restrict, "Shot types optimised by n-step policies (serve,return,rally or all)");
  solve->add_option("--n", steps, "Number of greedy steps");
  solve->add_option("--samples", cfg.n, "Samples per state of the transition models");
  solve->add_option("--eps", eps_text, "Error levels");

  auto* experiments = app.add_subcommand("run-experiments", "Run experiment suites");
  common(experiments);
  std::vector<std::string> suites;
  experiments->add_option("--suite", suites, "fig5, fig6, fig7, fig8, appendixA, appendixB")
      ->check(CLI::IsMember(kAllSuites));
  experiments->add_option("--n", cfg.n, "Samples per state");
  experiments->add_option("--eps", eps_text, "Error levels");
  experiments->add_option("--calibration-shots", cfg.calibration_shots, "Shots per error level for appendixA");

  auto* calib = app.add_subcommand("calibrate", "Fit generator parameters to the average-player outcome targets");
  common(calib);
  CalibrationOptions copts;
  std::string calib_out;
  std::vector<double> targets{kEmpiricalAverage.win, kEmpiricalAverage.error, kEmpiricalAverage.in_play};
  calib->add_option("--budget", copts.budget, "Outcome evaluations");
  calib->add_option("--shots", copts.shots, "Shots per evaluation");
  calib->add_option("--calib-eps", copts.eps, "Error level of the targets");
  calib->add_option("--targets", targets, "Win, error and in-play frequencies")->expected(3);
  calib->add_option("--write", calib_out, "Destination of the calibrated generator JSON")->required();

  auto* exp = app.add_subcommand("export", "Export a value table or experiment table");
  common(exp);
  std::string artifact, format = "csv", dest;
  exp->add_option("--artifact", artifact, "Artifact id, e.g. values/mdp.eps13 or experiments/fig5")->required();
  exp->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  exp->add_option("--dest", dest, "Output file")->required();

  auto* run = app.add_subcommand("run", "Run every stage");
  common(run);
  run->add_option("--n", cfg.n, "Samples per state");
  run->add_option("--eps", eps_text, "Error levels");
  run->add_option("--suite", suites, "Experiment suites")->check(CLI::IsMember(kAllSuites));
  run->add_option("--calibration-shots", cfg.calibration_shots, "Shots per error level for appendixA");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!eps_text.empty()) cfg.eps = parse_eps_list(eps_text);
    if (!suites.empty()) cfg.suites = suites;
    configure_threads(cfg);

    if (calib->parsed()) {
      cfg.validate();
      const CourtLayout layout = cfg.court_path.empty() ? default_court() : load_court(cfg.court_path);
      const GeneratorParams params = cfg.generator_path.empty() ? default_generator() : load_generator(cfg.generator_path);
      copts.seed = cfg.seed;
      copts.fit_samples = std::max(copts.fit_samples, cfg.fit_samples);
      const CalibrationResult r = calibrate(params, {targets[0], targets[1], targets[2]}, layout, copts);
      std::ofstream out(calib_out, std::ios::trunc);
      out << generator_to_json(r.params).dump(2) << '\n';
      if (!out) throw Error("failed writing " + calib_out);
      std::printf("win=%.4f error=%.4f in_play=%.4f distance=%.4f evaluations=%d\n", r.achieved.win,
                  r.achieved.error, r.achieved.in_play, r.distance, r.evaluations);
      return 0;
    }

    if (exp->parsed()) {
      cfg.validate();
      const CourtLayout layout = cfg.court_path.empty() ? default_court() : load_court(cfg.court_path);
      const StateCensus census(layout.spec, layout.pruning);
      export_artifact(cfg.out_dir, artifact, export_format_from_string(format), dest, census);
      return 0;
    }

    Pipeline p(cfg);
    if (fit->parsed()) {
      p.distributions();
      p.start_weights();
    } else if (build->parsed()) {
      for (int e : p.config().eps_values()) p.model(e);
    } else if (solve->parsed()) {
      const auto& weights = p.start_weights();
      for (int e : p.config().eps_values()) {
        if (mode == "mrp") {
          p.solve(e);
          const auto t = read_values_csv(p.config().out_dir / ("values/mrp.eps" + std::to_string(e) + ".csv"), p.census());
          print_value("mrp", e, starting_state_value(t.values, weights));
        } else if (mode == "mdp") {
          p.solve(e);
          const auto t = read_values_csv(p.config().out_dir / ("values/mdp.eps" + std::to_string(e) + ".csv"), p.census());
          print_value("mdp", e, starting_state_value(t.values, weights));
        } else {
          if (steps < 0) throw Error("--n must be nonnegative");
          const auto m = p.model(e);
          const IntentionSet& f = p.intentions(e);
          const ValueFunction v_hat = evaluate_mrp(*m, f);
          const auto stages = std::vector<std::set<ShotType>>(static_cast<std::size_t>(steps), parse_restrict(restrict));
          const NStepResult r = nstep_policy(*m, f, v_hat, stages, p.census());
          std::vector<std::optional<ActionId>> first(p.census().num_transient());
          if (!r.policy.stages.empty()) first = r.policy.stages.front();
          const std::string name = "nstep" + std::to_string(steps) + "." + (restrict == "all" ? "all" : restrict);
          std::filesystem::create_directories(p.config().out_dir / "values");
          write_values_csv(r.values.back(), first, p.census(), p.layout(),
                           p.config().out_dir / ("values/" + name + ".eps" + std::to_string(e) + ".csv"));
          print_value("nstep", e, starting_state_value(r.values.back(), weights));
        }
      }
    } else if (experiments->parsed()) {
      for (const auto& s : p.config().suites) p.experiment(s);
    } else if (run->parsed()) {
      p.run_all();
    }
    std::size_t cached = 0;
    for (const auto& r : p.reports()) cached += r.skipped;
    std::fprintf(stderr, "%zu stages, %zu cached; manifest %s\n", p.reports().size(), cached,
                 p.manifest_path().string().c_str());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
