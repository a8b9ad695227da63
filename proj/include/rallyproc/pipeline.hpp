#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rallyproc/experiments.hpp"

namespace rallyproc {

inline const std::vector<std::string> kAllSuites{"fig5", "fig6", "fig7", "fig8", "appendixA", "appendixB"};

struct RunConfig {
  std::uint64_t seed = 1;
  int n = 1000;
  int eps_max = 20;
  std::vector<int> eps;  // empty means 1..eps_max
  int fit_samples = 2000;
  int forced_samples = 200;
  int start_samples = 100000;
  int calibration_shots = 20000;
  bool refit_intentions = false;
  std::filesystem::path court_path;
  std::filesystem::path generator_path;
  std::filesystem::path out_dir = "rallyproc-out";
  std::vector<std::string> suites = kAllSuites;
  int threads = 0;  // 0 keeps the OpenMP default

  /// Sorted, deduplicated epsilon list; always contains 1.
  std::vector<int> eps_values() const;
  void validate() const;
};

/// Applies RALLYPROC_THREADS, then the configured worker count.
void configure_threads(const RunConfig& cfg);

struct StageReport {
  std::string name;
  bool skipped = false;
};

/// Stage runner over one output directory. Every stage is keyed by the hash
/// of its inputs and skipped when the manifest records the same key and the
/// recorded outputs are intact.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const StateCensus& census() const { return census_; }
  const CourtLayout& layout() const { return layout_; }
  const GeneratorParams& params() const { return params_; }

  const DistributionSet& distributions();
  const StartWeights& start_weights();
  std::shared_ptr<const TransitionModel> model(int eps);
  /// Intention policy in force at an error level.
  const IntentionSet& intentions(int eps);
  void solve(int eps);
  /// Tables of one suite; fig7 yields an all-states and a behind-baseline table.
  std::vector<ExperimentTable> experiment(const std::string& suite);
  /// Every stage for the configured epsilon list and suites.
  void run_all();

  const std::vector<StageReport>& reports() const { return reports_; }
  std::filesystem::path manifest_path() const { return cfg_.out_dir / "manifest.json"; }
  const nlohmann::json& manifest() const { return manifest_; }

 private:
  using Outputs = std::vector<std::string>;  // paths relative to out_dir
  bool run_stage(const std::string& name, const nlohmann::json& inputs, const Outputs& outputs,
                 const std::function<void()>& body);
  std::string artifact_hash(const std::string& rel) const;
  std::string recorded_hash(const std::string& rel) const;
  std::string distributions_artifact();
  std::string start_weights_artifact();
  std::string transitions_artifact(int eps);
  void write_manifest() const;
  ExperimentContext context();

  RunConfig cfg_;
  CourtLayout layout_;
  GeneratorParams params_;
  StateCensus census_;
  std::string court_hash_;
  std::string generator_hash_;
  nlohmann::json manifest_;
  std::vector<StageReport> reports_;
  std::map<std::string, std::string> checked_;  // stage name -> key verified in this process
  std::optional<DistributionSet> dists_;
  std::optional<IntentionSet> fitted_intentions_;
  std::map<int, IntentionSet> refitted_;
  std::optional<StartWeights> weights_;
  std::map<int, std::shared_ptr<const TransitionModel>> models_;
  std::vector<int> model_order_;
};

/// Value function and policy table: one row per transient state.
void write_values_csv(const ValueFunction& vf, const std::vector<std::optional<ActionId>>& actions,
                      const StateCensus& census, const CourtLayout& layout, const std::filesystem::path& path);
struct ValueTable {
  ValueFunction values;
  std::vector<std::string> actions;  // "" follows the intention rule
};
ValueTable read_values_csv(const std::filesystem::path& path, const StateCensus& census);
nlohmann::json values_to_json(const ValueTable& t, const StateCensus& census);
ValueTable values_from_json(const nlohmann::json& j, const StateCensus& census);

nlohmann::json table_to_json(const ExperimentTable& t);
ExperimentTable table_from_json(const nlohmann::json& j);

enum class ExportFormat : std::uint8_t { Csv, Json };
ExportFormat export_format_from_string(std::string_view s);

/// Writes artifact `id` of a run directory, e.g. "values/mdp.eps13" or
/// "experiments/fig5", in the requested format.
void export_artifact(const std::filesystem::path& run_dir, const std::string& id, ExportFormat format,
                     const std::filesystem::path& out, const StateCensus& census);

}  // namespace rallyproc
