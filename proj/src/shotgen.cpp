#include "rallyproc/shotgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rallyproc {

using nlohmann::json;

std::string_view to_string(ShotOutcome o) {
  switch (o) {
    case ShotOutcome::Winner: return "winner";
    case ShotOutcome::Error: return "error";
    case ShotOutcome::InPlay: return "in-play";
  }
  return "?";
}

double winner_probability(const WinnerLogit& w, const WinnerFeatures& f) {
  const double z = w.intercept + w.distance * f.distance + w.depth * f.depth + w.sideline * f.sideline +
                   w.hitter_depth * f.hitter_depth;
  return sigmoid(std::clamp(z, -30.0, 30.0));
}

void GeneratorParams::validate() const {
  for (const auto& m : mixtures) {
    if (m.components.empty()) throw Error("generator: every (shot, side, zone) needs a landing mixture");
    double total = 0.0;
    for (const auto& c : m.components) {
      if (!(c.weight >= 0.0)) throw Error("generator: negative mixture weight");
      if (!c.cov.positive_definite()) throw Error("generator: mixture covariance is not positive definite");
      total += c.weight;
    }
    if (!(total > 0.0)) throw Error("generator: mixture weights sum to zero");
  }
  for (double u : unforced_error_rate)
    if (!(u >= 0.0 && u < 1.0)) throw Error("generator: unforced error rate outside [0, 1)");
  if (!(movement.speed_cap_m > 0.0)) throw Error("generator: speed cap must be positive");
  if (!(movement.recovery >= 0.0 && movement.recovery <= 1.0)) throw Error("generator: recovery outside [0, 1]");
  if (!(net_zone_m < baseline_zone_m)) throw Error("generator: zone thresholds out of order");
  if (!(backhand_error_multiplier >= 0.0)) throw Error("generator: negative backhand multiplier");
}

void GeneratorParams::prepare() {
  validate();
  for (auto& m : mixtures) {
    double total = 0.0;
    for (const auto& c : m.components) total += c.weight;
    m.factors.clear();
    const bool normalise = std::abs(total - 1.0) > 1e-12;
    for (auto& c : m.components) {
      if (normalise) c.weight /= total;
      m.factors.push_back(Chol2::of(c.cov));
    }
  }
}

namespace {

WinnerLogit logit_from_json(const json& j) {
  WinnerLogit w;
  w.intercept = j.value("intercept", 0.0);
  w.distance = j.value("distance", 0.0);
  w.depth = j.value("depth", 0.0);
  w.sideline = j.value("sideline", 0.0);
  w.hitter_depth = j.value("hitter_depth", 0.0);
  return w;
}

json logit_to_json(const WinnerLogit& w) {
  return {{"intercept", w.intercept}, {"distance", w.distance}, {"depth", w.depth},
          {"sideline", w.sideline}, {"hitter_depth", w.hitter_depth}};
}

template <class F>
void for_each_type(const json& j, F&& f) {
  for (int t = 0; t < kShotTypes; ++t) {
    const auto key = std::string(to_string(static_cast<ShotType>(t)));
    if (j.contains(key)) f(t, j.at(key));
  }
}

Side side_from_string(const std::string& s) {
  if (s == "deuce") return Side::Deuce;
  if (s == "ad") return Side::Ad;
  throw Error("generator: unknown side '" + s + "'");
}

}  // namespace

GeneratorParams generator_from_json(const json& j) {
  GeneratorParams p;
  try {
    p.version = j.value("version", "generator.v1");
    p.rng_seed = j.value("rng_seed", std::uint64_t{1});
    if (j.contains("zones")) {
      p.net_zone_m = j.at("zones").value("net_m", p.net_zone_m);
      p.baseline_zone_m = j.at("zones").value("baseline_m", p.baseline_zone_m);
    }
    p.aim_away = j.value("aim_away", p.aim_away);
    for_each_type(j.at("winner_logit"), [&](int t, const json& v) { p.winner[t] = logit_from_json(v); });
    for_each_type(j.at("unforced_error_rate"), [&](int t, const json& v) { p.unforced_error_rate[t] = v.get<double>(); });
    p.backhand_error_multiplier = j.value("backhand_error_multiplier", 1.0);
    if (j.contains("pressure")) {
      const auto& q = j.at("pressure");
      p.pressure.free_run_m = q.value("free_run_m", p.pressure.free_run_m);
      p.pressure.error_per_m = q.value("error_per_m", p.pressure.error_per_m);
      p.pressure.depth_loss_per_m = q.value("depth_loss_per_m", p.pressure.depth_loss_per_m);
      p.pressure.max_error = q.value("max_error", p.pressure.max_error);
    }
    if (j.contains("movement")) {
      const auto& m = j.at("movement");
      auto& mv = p.movement;
      mv.speed_cap_m = m.value("speed_cap_m", mv.speed_cap_m);
      mv.recovery = m.value("recovery", mv.recovery);
      mv.noise_m = m.value("noise_m", mv.noise_m);
      if (m.contains("carry_m")) for_each_type(m.at("carry_m"), [&](int t, const json& v) { mv.carry_m[t] = v.get<double>(); });
      mv.home_depth_m = m.value("home_depth_m", mv.home_depth_m);
      mv.serve_depth_m = m.value("serve_depth_m", mv.serve_depth_m);
      mv.serve_lateral_m = m.value("serve_lateral_m", mv.serve_lateral_m);
      mv.return_depth_m = m.value("return_depth_m", mv.return_depth_m);
      mv.return_lateral_m = m.value("return_lateral_m", mv.return_lateral_m);
      mv.stance_noise_m = m.value("stance_noise_m", mv.stance_noise_m);
    }
    for (const auto& entry : j.at("mixtures")) {
      const ShotType t = shot_type_from_string(entry.at("shot").get<std::string>());
      const Side side = side_from_string(entry.at("side").get<std::string>());
      const std::string zone = entry.value("zone", "any");
      LandingMixture mix;
      for (const auto& c : entry.at("components")) {
        MixtureComponent mc;
        mc.weight = c.at("weight").get<double>();
        mc.mean = {c.at("mean").at(0).get<double>(), c.at("mean").at(1).get<double>()};
        mc.cov = {c.at("cov").at(0).get<double>(), c.at("cov").at(1).get<double>(), c.at("cov").at(2).get<double>()};
        mix.components.push_back(mc);
      }
      auto assign = [&](Zone z) { p.mixture(t, side, z) = mix; };
      if (zone == "any") {
        assign(Zone::Net), assign(Zone::Mid), assign(Zone::Baseline);
      } else if (zone == "net") {
        assign(Zone::Net);
      } else if (zone == "mid") {
        assign(Zone::Mid);
      } else if (zone == "baseline") {
        assign(Zone::Baseline);
      } else {
        throw Error("generator: unknown zone '" + zone + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("generator params: ") + e.what());
  }
  p.prepare();
  return p;
}

json generator_to_json(const GeneratorParams& p) {
  json j;
  j["version"] = p.version;
  j["rng_seed"] = p.rng_seed;
  j["zones"] = {{"net_m", p.net_zone_m}, {"baseline_m", p.baseline_zone_m}};
  j["aim_away"] = p.aim_away;
  json wl, ue, carry;
  for (int t = 0; t < kShotTypes; ++t) {
    const auto key = std::string(to_string(static_cast<ShotType>(t)));
    wl[key] = logit_to_json(p.winner[t]);
    ue[key] = p.unforced_error_rate[t];
    carry[key] = p.movement.carry_m[t];
  }
  j["winner_logit"] = wl;
  j["unforced_error_rate"] = ue;
  j["backhand_error_multiplier"] = p.backhand_error_multiplier;
  j["pressure"] = {{"free_run_m", p.pressure.free_run_m}, {"error_per_m", p.pressure.error_per_m},
                   {"depth_loss_per_m", p.pressure.depth_loss_per_m}, {"max_error", p.pressure.max_error}};
  const auto& mv = p.movement;
  j["movement"] = {{"speed_cap_m", mv.speed_cap_m},         {"recovery", mv.recovery},
                   {"noise_m", mv.noise_m},                 {"carry_m", carry},
                   {"home_depth_m", mv.home_depth_m},       {"serve_depth_m", mv.serve_depth_m},
                   {"serve_lateral_m", mv.serve_lateral_m}, {"return_depth_m", mv.return_depth_m},
                   {"return_lateral_m", mv.return_lateral_m}, {"stance_noise_m", mv.stance_noise_m}};
  json mixes = json::array();
  static constexpr const char* kZones[] = {"net", "mid", "baseline"};
  for (int t = 0; t < kShotTypes; ++t) {
    for (int s = 0; s < 2; ++s) {
      for (int z = 0; z < 3; ++z) {
        const auto& m = p.mixture(static_cast<ShotType>(t), static_cast<Side>(s), static_cast<Zone>(z));
        json comps = json::array();
        for (const auto& c : m.components)
          comps.push_back({{"weight", c.weight}, {"mean", {c.mean.x, c.mean.y}}, {"cov", {c.cov.xx, c.cov.xy, c.cov.yy}}});
        mixes.push_back({{"shot", to_string(static_cast<ShotType>(t))},
                         {"side", s == 0 ? "deuce" : "ad"},
                         {"zone", kZones[z]},
                         {"components", comps}});
      }
    }
  }
  j["mixtures"] = mixes;
  return j;
}

GeneratorParams load_generator(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open generator params " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("generator params " + path.string() + ": " + e.what());
  }
  return generator_from_json(j);
}

std::filesystem::path default_generator_path() {
  return std::filesystem::path(RALLYPROC_DATA_DIR) / "generator.v1.json";
}

GeneratorParams default_generator() { return load_generator(default_generator_path()); }

Side hitter_side(Point h) { return h.y < 0.0 ? Side::Deuce : Side::Ad; }

Zone hitter_zone(Point h, const GeneratorParams& params) {
  const double d = std::abs(h.x);
  if (d < params.net_zone_m) return Zone::Net;
  if (d < params.baseline_zone_m) return Zone::Mid;
  return Zone::Baseline;
}

bool landing_in_bounds(Point landing, ShotType type, Side side, const CourtLayout& layout) {
  const ActionKind kind = type != ShotType::Serve ? ActionKind::Rally
                          : side == Side::Deuce   ? ActionKind::ServeDeuce
                                                  : ActionKind::ServeAd;
  return locate_action(landing, kind, layout).has_value();
}

WinnerFeatures winner_features(Point hitter, Point receiver, Point landing, const CourtSpec& spec) {
  WinnerFeatures f;
  f.distance = std::hypot(landing.x - receiver.x, landing.y - receiver.y);
  f.depth = landing.x / spec.baseline_m;
  f.sideline = std::min(1.0, std::abs(landing.y) / spec.singles_half_width_m);
  f.hitter_depth = std::abs(hitter.x) / spec.baseline_m;
  return f;
}

namespace {

Point sample_in(const Rect& r, Rng& rng) {
  return {r.x0 + uniform01(rng) * r.depth(), r.y0 + uniform01(rng) * r.width()};
}

// Keeps a canonical-frame position inside the grid on the requested half.
Point clamp_to_half(Point p, bool target_half, const CourtSpec& spec) {
  constexpr double kMargin = 1e-6;
  const double lim = 0.5 * spec.width_m - kMargin;
  p.y = std::clamp(p.y, -lim, lim);
  if (target_half)
    p.x = std::clamp(p.x, kMargin, spec.half_length_m - kMargin);
  else
    p.x = std::clamp(p.x, -spec.half_length_m + kMargin, -kMargin);
  return p;
}

Point sample_mixture(const LandingMixture& m, Point shift, Rng& rng) {
  double u = uniform01(rng);
  std::size_t k = 0;
  for (; k + 1 < m.components.size(); ++k) {
    if (u < m.components[k].weight) break;
    u -= m.components[k].weight;
  }
  return sample_gaussian(m.components[k].mean + shift, m.factors[k], rng);
}

double excess_run(double run_m, const PressureParams& p) { return std::max(0.0, run_m - p.free_run_m); }

}  // namespace

ShotRecord strike(Point hitter, Point receiver, ShotType type, std::optional<Point> target, double run_m,
                  const GeneratorParams& params, const CourtLayout& layout, Rng& rng) {
  const CourtSpec& spec = layout.spec;
  const Side side = hitter_side(hitter);
  ShotRecord rec;
  rec.hitter_pos = hitter;
  rec.receiver_pos = receiver;
  rec.shot_type = type;
  const double excess = excess_run(run_m, params.pressure);
  if (target) {
    rec.landing = *target;
  } else {
    const auto& mix = params.mixture(type, side, hitter_zone(hitter, params));
    const Point shift{-params.pressure.depth_loss_per_m * excess, -params.aim_away * receiver.y};
    rec.landing = sample_mixture(mix, shift, rng);
  }

  if (!landing_in_bounds(rec.landing, type, side, layout)) {
    rec.outcome = ShotOutcome::Error;
    return rec;
  }
  const double p_win = winner_probability(params.winner[static_cast<int>(type)],
                                          winner_features(hitter, receiver, rec.landing, spec));
  if (uniform01(rng) < p_win) {
    rec.outcome = ShotOutcome::Winner;
    return rec;
  }
  double p_err = params.unforced_error_rate[static_cast<int>(type)];
  if (side == Side::Ad) p_err *= params.backhand_error_multiplier;
  p_err = std::min(p_err + params.pressure.error_per_m * excess, params.pressure.max_error);
  if (uniform01(rng) < p_err) {
    rec.outcome = ShotOutcome::Error;
    return rec;
  }

  rec.outcome = ShotOutcome::InPlay;
  const auto& mv = params.movement;
  Point dir = rec.landing - hitter;
  const double len = std::hypot(dir.x, dir.y);
  dir = (1.0 / std::max(len, 1e-9)) * dir;
  const Point intercept = clamp_to_half(rec.landing + mv.carry_m[static_cast<int>(type)] * dir, true, spec);
  const Point to_ball = intercept - receiver;
  const double run = std::hypot(to_ball.x, to_ball.y);
  const double frac = run > mv.speed_cap_m ? mv.speed_cap_m / run : 1.0;
  const Point receiver_next =
      clamp_to_half(receiver + frac * to_ball + mv.noise_m * standard_normal2(rng), true, spec);
  const Point home{-mv.home_depth_m, 0.0};
  const Point hitter_next =
      clamp_to_half(hitter + mv.recovery * (home - hitter) + mv.noise_m * standard_normal2(rng), false, spec);
  rec.terminal_state = AuxState{receiver_next, hitter_next, rec.landing, type, frac * run};
  return rec;
}

ShotRecord generate_shot(const State& state, std::optional<Point> target, const GeneratorParams& params,
                         const CourtLayout& layout, Rng& rng) {
  if (state.is_absorbing()) throw Error("generate_shot: state is absorbing");
  const Point a = sample_in(cell_at(state.sigma_a, layout.spec).bounds, rng);
  const Point b = sample_in(cell_at(state.sigma_b, layout.spec).bounds, rng);
  return strike(a, b, state.omega, target, 0.0, params, layout, rng);
}

namespace {

Point rotate(Point p) { return {-p.x, -p.y}; }

std::optional<State> rally_state(Point a, Point b, ShotType omega, const CourtSpec& spec) {
  const auto ca = locate_cell(a, spec);
  const auto cb = locate_cell(b, spec);
  if (!ca || !cb || ca->half() != 0 || cb->half() != 1) return std::nullopt;
  return State::transient(ca->index, cb->index, omega);
}

}  // namespace

ReturnResult generate_return(const AuxState& aux, const GeneratorParams& params, const CourtLayout& layout, Rng& rng) {
  const ShotType type = aux.incoming_type == ShotType::Serve ? ShotType::Return : ShotType::Rally;
  const ShotRecord rec = strike(rotate(aux.striker_pos), rotate(aux.other_pos), type, std::nullopt, aux.run_m, params,
                                layout, rng);
  ReturnResult out;
  out.outcome = rec.outcome;
  out.landing = rotate(rec.landing);
  if (rec.outcome == ShotOutcome::InPlay) {
    const Point a = rotate(rec.terminal_state->striker_pos);
    const Point b = rotate(rec.terminal_state->other_pos);
    out.next_state = rally_state(a, b, ShotType::Rally, layout.spec);
    if (!out.next_state) throw Error("generate_return: player left the grid");
  }
  return out;
}

namespace {

// Server and receiver stances in the server's canonical frame.
std::pair<Point, Point> serve_stances(Side side, const GeneratorParams& params, Rng& rng) {
  const auto& mv = params.movement;
  std::normal_distribution<double> n(0.0, mv.stance_noise_m);
  const double sign = side == Side::Deuce ? -1.0 : 1.0;
  const Point server{-(mv.serve_depth_m + 0.5 * n(rng)), sign * std::abs(mv.serve_lateral_m + n(rng))};
  // Cross-court receiver: the server's deuce side faces the receiver's deuce side, y > 0.
  const Point receiver{mv.return_depth_m + 1.5 * n(rng), -sign * (mv.return_lateral_m + n(rng))};
  return {server, receiver};
}

}  // namespace

std::optional<State> sample_serve_start(const GeneratorParams& params, const CourtLayout& layout, Rng& rng) {
  const Side side = uniform01(rng) < 0.5 ? Side::Deuce : Side::Ad;
  auto [server, receiver] = serve_stances(side, params, rng);
  return rally_state(server, receiver, ShotType::Serve, layout.spec);
}

std::optional<State> sample_return_start(const GeneratorParams& params, const CourtLayout& layout, Rng& rng) {
  const Side side = uniform01(rng) < 0.5 ? Side::Deuce : Side::Ad;
  auto [server, receiver] = serve_stances(side, params, rng);
  const auto spec = layout.spec;
  if (!locate_cell(server, spec) || !locate_cell(receiver, spec)) return std::nullopt;
  const ShotRecord serve = strike(server, receiver, ShotType::Serve, std::nullopt, 0.0, params, layout, rng);
  if (serve.outcome != ShotOutcome::InPlay) return std::nullopt;
  // B served in its canonical frame; A (the returner) is the rotated striker.
  const Point a = rotate(serve.terminal_state->striker_pos);
  const Point b = rotate(serve.terminal_state->other_pos);
  return rally_state(a, b, ShotType::Return, spec);
}

}  // namespace rallyproc
