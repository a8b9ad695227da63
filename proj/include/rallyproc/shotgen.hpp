#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rallyproc/gauss2.hpp"
#include "rallyproc/geometry.hpp"
#include "rallyproc/types.hpp"

// Synthetic shot generator. Every shot is simulated in the hitter's canonical
// frame: hitter on the x < 0 half facing +x, so the hitter's right-hand
// (deuce) side is y < 0 and the target half is x > 0. Player A's canonical
// frame is the global frame; Player B's is the global frame rotated by 180
// degrees, which makes the two players mirror images of each other.

namespace rallyproc {

enum class ShotOutcome : std::uint8_t { Winner = 0, Error = 1, InPlay = 2 };
std::string_view to_string(ShotOutcome o);

enum class Side : std::uint8_t { Deuce = 0, Ad = 1 };
enum class Zone : std::uint8_t { Net = 0, Mid = 1, Baseline = 2 };

struct MixtureComponent {
  double weight = 1.0;
  Point mean;  // (depth from the net, lateral y) on the target half
  Cov2 cov;
};

struct LandingMixture {
  std::vector<MixtureComponent> components;
  std::vector<Chol2> factors;  // derived by GeneratorParams::prepare()
};

struct WinnerLogit {
  double intercept = 0.0;
  double distance = 0.0;      // per metre between landing and receiver
  double depth = 0.0;         // landing depth / baseline distance
  double sideline = 0.0;      // |landing y| / singles half width
  double hitter_depth = 0.0;  // hitter distance from net / baseline distance
};

struct WinnerFeatures {
  double distance = 0.0;
  double depth = 0.0;
  double sideline = 0.0;
  double hitter_depth = 0.0;
};

double winner_probability(const WinnerLogit& w, const WinnerFeatures& f);

struct MovementParams {
  double speed_cap_m = 8.0;
  double recovery = 0.6;
  double noise_m = 0.4;
  std::array<double, kShotTypes> carry_m{4.0, 3.0, 3.0};
  double home_depth_m = 12.4;       // rally home: centre of the baseline
  double serve_depth_m = 12.1;      // server stance depth
  double serve_lateral_m = 0.9;     // server distance from the centre mark
  double return_depth_m = 12.2;     // receiver stance for serves
  double return_lateral_m = 2.7;
  double stance_noise_m = 0.4;
};

struct PressureParams {
  double free_run_m = 3.0;       // running below this distance adds no pressure
  double error_per_m = 0.02;     // extra error probability per metre beyond free_run_m
  double depth_loss_per_m = 0.3; // reply lands this much shorter per metre beyond free_run_m
  double max_error = 0.5;
};

struct GeneratorParams {
  std::string version = "generator.v1";
  std::array<LandingMixture, kShotTypes * 2 * 3> mixtures;
  double aim_away = 0.1;  // lateral aim shift away from the receiver, per metre of receiver offset
  std::array<WinnerLogit, kShotTypes> winner;
  std::array<double, kShotTypes> unforced_error_rate{0.0, 0.03, 0.03};
  double backhand_error_multiplier = 1.0;  // applied to shots struck from the ad side
  PressureParams pressure;
  MovementParams movement;
  double net_zone_m = 4.5;
  double baseline_zone_m = 9.5;
  std::uint64_t rng_seed = 1;

  LandingMixture& mixture(ShotType t, Side s, Zone z) {
    return mixtures[(static_cast<int>(t) * 2 + static_cast<int>(s)) * 3 + static_cast<int>(z)];
  }
  const LandingMixture& mixture(ShotType t, Side s, Zone z) const {
    return mixtures[(static_cast<int>(t) * 2 + static_cast<int>(s)) * 3 + static_cast<int>(z)];
  }
  void validate() const;
  /// Normalises mixture weights and caches Cholesky factors.
  void prepare();
};

GeneratorParams load_generator(const std::filesystem::path& path);
GeneratorParams generator_from_json(const nlohmann::json& j);
nlohmann::json generator_to_json(const GeneratorParams& p);
std::filesystem::path default_generator_path();
GeneratorParams default_generator();

/// Terminal conditions of Player A's shot: Player B is about to strike.
struct AuxState {
  Point striker_pos;       // Player B
  Point other_pos;         // Player A
  Point incoming_landing;  // where A's shot bounced
  ShotType incoming_type = ShotType::Rally;
  double run_m = 0.0;      // distance B covered to reach the ball
};

struct ShotRecord {
  Point hitter_pos;
  Point receiver_pos;
  ShotType shot_type = ShotType::Rally;
  Point landing;
  ShotOutcome outcome = ShotOutcome::InPlay;
  std::optional<AuxState> terminal_state;
};

/// Player A's shot from a transient state. Player positions are drawn
/// uniformly inside their cells. With a target the ball lands exactly there;
/// otherwise the landing comes from the hitter's empirical mixture.
ShotRecord generate_shot(const State& state, std::optional<Point> target, const GeneratorParams& params,
                         const CourtLayout& layout, Rng& rng);

struct ReturnResult {
  ShotOutcome outcome = ShotOutcome::InPlay;  // B's shot outcome
  std::optional<State> next_state;            // present iff in play
  Point landing;
};

/// Player B's reply from the terminal conditions of A's shot.
ReturnResult generate_return(const AuxState& aux, const GeneratorParams& params, const CourtLayout& layout, Rng& rng);

/// Low-level shot in the hitter's canonical frame; exposed for tests.
ShotRecord strike(Point hitter, Point receiver, ShotType type, std::optional<Point> target, double run_m,
                  const GeneratorParams& params, const CourtLayout& layout, Rng& rng);

WinnerFeatures winner_features(Point hitter, Point receiver, Point landing, const CourtSpec& spec);
Side hitter_side(Point canonical_hitter);
Zone hitter_zone(Point canonical_hitter, const GeneratorParams& params);
bool landing_in_bounds(Point canonical_landing, ShotType type, Side side, const CourtLayout& layout);

/// One simulated point start with Player A serving. Returns nullopt if the
/// sampled positions fall outside the grid.
std::optional<State> sample_serve_start(const GeneratorParams& params, const CourtLayout& layout, Rng& rng);
/// One simulated point start with Player B serving: B's serve must be in play
/// and A's return position becomes the start state; otherwise nullopt.
std::optional<State> sample_return_start(const GeneratorParams& params, const CourtLayout& layout, Rng& rng);

}  // namespace rallyproc
