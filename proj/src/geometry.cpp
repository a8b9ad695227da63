#include "rallyproc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rallyproc/hashing.hpp"

namespace rallyproc {

using nlohmann::json;

std::string_view to_string(ShotType t) {
  switch (t) {
    case ShotType::Serve: return "serve";
    case ShotType::Return: return "return";
    case ShotType::Rally: return "rally";
  }
  return "?";
}

ShotType shot_type_from_string(std::string_view s) {
  if (s == "serve") return ShotType::Serve;
  if (s == "return") return ShotType::Return;
  if (s == "rally") return ShotType::Rally;
  throw Error("unknown shot type '" + std::string(s) + "'");
}

std::string_view to_string(OutcomeTag t) {
  switch (t) {
    case OutcomeTag::AWinner: return "A-winner";
    case OutcomeTag::AError: return "A-error";
    case OutcomeTag::BWinner: return "B-winner";
    case OutcomeTag::BError: return "B-error";
    case OutcomeTag::Continue: return "continue";
  }
  return "?";
}

std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::ServeDeuce: return "serve-deuce";
    case ActionKind::ServeAd: return "serve-ad";
    case ActionKind::Rally: return "rally";
  }
  return "?";
}

ActionKind action_kind_from_string(std::string_view s) {
  if (s == "serve-deuce") return ActionKind::ServeDeuce;
  if (s == "serve-ad") return ActionKind::ServeAd;
  if (s == "rally") return ActionKind::Rally;
  throw Error("unknown action kind '" + std::string(s) + "'");
}

void CourtSpec::validate() const {
  if (rows <= 0 || cols <= 0 || rows * cols != kCellsPerHalf)
    throw Error("court grid must have rows x cols = 42 cells per half");
  if (!(half_length_m > baseline_m)) throw Error("grid must extend behind the baseline");
  if (!(width_m >= 2.0 * singles_half_width_m)) throw Error("grid narrower than the singles court");
  if (!(service_line_m > 0.0 && service_line_m < baseline_m)) throw Error("service line outside the half");
}

int cell_row(int index, const CourtSpec& spec) { return ((index - 1) % kCellsPerHalf) / spec.cols; }
int cell_col(int index, const CourtSpec& spec) { return ((index - 1) % kCellsPerHalf) % spec.cols; }

Cell cell_at(int index, const CourtSpec& spec) {
  if (index < 1 || index > kCells) throw Error("cell index out of range: " + std::to_string(index));
  const int row = cell_row(index, spec);
  const int col = cell_col(index, spec);
  const double rh = spec.row_depth();
  const double cw = spec.col_width();
  Rect r;
  if (index <= kCellsPerHalf) {
    r.x0 = -(row + 1) * rh;
    r.x1 = -row * rh;
  } else {
    r.x0 = row * rh;
    r.x1 = (row + 1) * rh;
  }
  r.y0 = -0.5 * spec.width_m + col * cw;
  r.y1 = r.y0 + cw;
  return {index, r};
}

namespace {

// Bin index for the half-open-from-below convention (lo, hi], which sends
// shared edges to the lower bin; the first bin also owns its lower edge.
int bin_lower_tie(double offset, double width, int count) {
  const int k = static_cast<int>(std::ceil(offset / width - 1e-12)) - 1;
  return std::clamp(k, 0, count - 1);
}

}  // namespace

std::optional<Cell> locate_cell(Point p, const CourtSpec& spec) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) return std::nullopt;
  const double depth = std::abs(p.x);
  if (depth > spec.half_length_m || std::abs(p.y) > 0.5 * spec.width_m) return std::nullopt;
  const int half = p.x <= 0.0 ? 0 : 1;
  const int row = bin_lower_tie(depth, spec.row_depth(), spec.rows);
  const int col = bin_lower_tie(p.y + 0.5 * spec.width_m, spec.col_width(), spec.cols);
  return cell_at(half * kCellsPerHalf + row * spec.cols + col + 1, spec);
}

bool cell_on_deuce_side(int index, const CourtSpec& spec) {
  const int col = cell_col(index, spec);
  if (index <= kCellsPerHalf) return col < spec.cols / 2;
  return col >= spec.cols / 2;
}

bool ActionRegion::contains(Point p) const {
  return std::any_of(parts.begin(), parts.end(), [&](const Rect& r) { return r.contains(p); });
}

double ActionRegion::area() const {
  double a = 0.0;
  for (const auto& r : parts) a += r.area();
  return a;
}

Point ActionRegion::centroid() const {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (const auto& r : parts) {
    const Point c = r.center();
    cx += r.area() * c.x;
    cy += r.area() * c.y;
    a += r.area();
  }
  return {cx / a, cy / a};
}

Rect ActionRegion::bounding_box() const {
  Rect b = parts.front();
  for (const auto& r : parts) {
    b.x0 = std::min(b.x0, r.x0);
    b.x1 = std::max(b.x1, r.x1);
    b.y0 = std::min(b.y0, r.y0);
    b.y1 = std::max(b.y1, r.y1);
  }
  return b;
}

double ActionRegion::width() const { return bounding_box().width(); }

bool PruningRules::keeps(const State& s, const CourtSpec& spec) const {
  if (s.is_absorbing()) return true;
  for (const auto& rule : rules) {
    if (rule.shot != s.omega) continue;
    const int cell = rule.player == Player::A ? s.sigma_a : s.sigma_b;
    switch (rule.kind) {
      case PruneRule::Kind::MinRow:
        if (cell_row(cell, spec) < rule.value) return false;
        break;
      case PruneRule::Kind::ReceiverWrongSide: {
        const int server = rule.player == Player::A ? s.sigma_b : s.sigma_a;
        const bool server_deuce = cell_on_deuce_side(server, spec);
        // A cross-court serve from the server's deuce side goes to the
        // receiver's deuce side; drop receivers hugging the opposite sideline.
        const bool receiver_deuce = cell_on_deuce_side(cell, spec);
        if (receiver_deuce == server_deuce) break;
        const int col = cell_col(cell, spec);
        const bool outer = col < rule.value || col >= spec.cols - rule.value;
        if (outer) return false;
        break;
      }
    }
  }
  return true;
}

std::optional<ActionId> CourtLayout::find_action(std::string_view name) const {
  for (const auto& a : actions)
    if (a.name == name) return a.id;
  return std::nullopt;
}

std::vector<ActionId> CourtLayout::actions_of(ActionKind kind) const {
  std::vector<ActionId> out;
  for (const auto& a : actions)
    if (a.kind == kind) out.push_back(a.id);
  return out;
}

namespace {

double overlap_area(const Rect& a, const Rect& b) {
  const double dx = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double dy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (dx > 0 && dy > 0) ? dx * dy : 0.0;
}

void check_tiling(const std::vector<const ActionRegion*>& regions, const Rect& target, std::string_view what) {
  double total = 0.0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (const auto& r : regions[i]->parts) {
      if (r.x0 < target.x0 - 1e-9 || r.x1 > target.x1 + 1e-9 || r.y0 < target.y0 - 1e-9 || r.y1 > target.y1 + 1e-9)
        throw Error("action " + regions[i]->name + " leaves the " + std::string(what));
      if (!(r.area() > 0)) throw Error("action " + regions[i]->name + " has empty area");
      total += r.area();
    }
    for (std::size_t j = i + 1; j < regions.size(); ++j)
      for (const auto& a : regions[i]->parts)
        for (const auto& b : regions[j]->parts)
          if (overlap_area(a, b) > 1e-12)
            throw Error("actions " + regions[i]->name + " and " + regions[j]->name + " overlap");
  }
  if (std::abs(total - target.area()) > 1e-9 * target.area())
    throw Error("actions do not tile the " + std::string(what));
}

}  // namespace

void CourtLayout::validate() const {
  spec.validate();
  std::vector<const ActionRegion*> deuce, ad, rally;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto& a = actions[i];
    if (a.id.value != i) throw Error("action ids must follow file order");
    if (a.parts.empty()) throw Error("action " + a.name + " has no polygon");
    if (a.conservative != (!a.name.empty() && a.name.front() == 'M'))
      throw Error("action " + a.name + ": conservative flag must match the 'M' prefix");
    (a.kind == ActionKind::ServeDeuce ? deuce : a.kind == ActionKind::ServeAd ? ad : rally).push_back(&a);
  }
  if (deuce.size() != 3 || ad.size() != 3) throw Error("expected three serve actions per service box");
  if (rally.size() != 39) throw Error("expected 39 rally actions");
  const double sw = spec.singles_half_width_m;
  check_tiling(deuce, Rect{0.0, spec.service_line_m, 0.0, sw}, "deuce service box");
  check_tiling(ad, Rect{0.0, spec.service_line_m, -sw, 0.0}, "ad service box");
  check_tiling(rally, Rect{0.0, spec.baseline_m, -sw, sw}, "singles half");
}

namespace {

CourtLayout parse_court(const json& j) {
  CourtLayout layout;
  layout.version = j.at("version").get<std::string>();
  const auto& g = j.at("grid");
  layout.spec.half_length_m = g.at("half_length_m").get<double>();
  layout.spec.width_m = g.at("width_m").get<double>();
  layout.spec.rows = g.at("rows").get<int>();
  layout.spec.cols = g.at("cols").get<int>();
  if (j.contains("lines")) {
    const auto& l = j.at("lines");
    layout.spec.baseline_m = l.value("baseline_m", layout.spec.baseline_m);
    layout.spec.service_line_m = l.value("service_line_m", layout.spec.service_line_m);
    layout.spec.singles_half_width_m = l.value("singles_half_width_m", layout.spec.singles_half_width_m);
  }
  std::uint16_t next = 0;
  for (const auto& a : j.at("actions")) {
    ActionRegion r;
    r.id = ActionId{next++};
    r.name = a.at("name").get<std::string>();
    r.kind = action_kind_from_string(a.at("kind").get<std::string>());
    for (const auto& q : a.at("rects")) r.parts.push_back(Rect{q.at(0), q.at(1), q.at(2), q.at(3)});
    r.conservative = !r.name.empty() && r.name.front() == 'M';
    layout.actions.push_back(std::move(r));
  }
  if (j.contains("pruning")) {
    const auto& p = j.at("pruning");
    layout.pruning.version = p.value("version", "unversioned");
    for (const auto& r : p.at("rules")) {
      PruneRule rule;
      rule.name = r.at("name").get<std::string>();
      const auto kind = r.at("kind").get<std::string>();
      rule.shot = shot_type_from_string(r.at("shot").get<std::string>());
      rule.player = r.at("player").get<std::string>() == "B" ? Player::B : Player::A;
      if (kind == "min-row") {
        rule.kind = PruneRule::Kind::MinRow;
        rule.value = r.at("min_row").get<int>();
      } else if (kind == "receiver-wrong-side") {
        rule.kind = PruneRule::Kind::ReceiverWrongSide;
        rule.value = r.at("columns").get<int>();
      } else {
        throw Error("unknown pruning rule kind '" + kind + "'");
      }
      layout.pruning.rules.push_back(std::move(rule));
    }
  }
  layout.validate();
  return layout;
}

}  // namespace

CourtLayout load_court(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open court layout " + path.string());
  try {
    return parse_court(json::parse(in));
  } catch (const json::exception& e) {
    throw Error("court layout " + path.string() + ": " + e.what());
  }
}

std::filesystem::path default_court_path() { return std::filesystem::path(RALLYPROC_DATA_DIR) / "court.v1.json"; }

CourtLayout default_court() { return load_court(default_court_path()); }

std::optional<ActionId> locate_action(Point p, ActionKind kind, const CourtLayout& layout) {
  for (const auto& a : layout.actions)
    if (a.kind == kind && a.contains(p)) return a.id;
  return std::nullopt;
}

ActionKind action_kind_for(const State& s, const CourtSpec& spec) {
  if (s.omega != ShotType::Serve) return ActionKind::Rally;
  return cell_on_deuce_side(s.sigma_a, spec) ? ActionKind::ServeDeuce : ActionKind::ServeAd;
}

std::vector<ActionId> permissible_actions(const State& s, const CourtLayout& layout) {
  if (s.is_absorbing()) return {};
  return layout.actions_of(action_kind_for(s, layout.spec));
}

StateCensus::StateCensus(const CourtSpec& spec, const PruningRules& pruning) : spec_(spec) {
  spec.validate();
  lookup_.assign(kShotTypes * kCellsPerHalf * kCellsPerHalf, -1);
  std::ostringstream digest;
  digest << "census.v1;" << spec.half_length_m << ';' << spec.width_m << ';' << spec.rows << ';' << spec.cols << ';';
  for (int w = 0; w < kShotTypes; ++w) {
    for (int a = 1; a <= kCellsPerHalf; ++a) {
      for (int b = kCellsPerHalf + 1; b <= kCells; ++b) {
        const State s = State::transient(a, b, static_cast<ShotType>(w));
        if (!pruning.keeps(s, spec)) continue;
        lookup_[(w * kCellsPerHalf + (a - 1)) * kCellsPerHalf + (b - kCellsPerHalf - 1)] =
            static_cast<std::int32_t>(states_.size());
        states_.push_back(s);
        digest << a << ',' << b << ',' << w << ';';
      }
    }
  }
  const bool any_serve = std::any_of(states_.begin(), states_.end(), [](const State& s) { return s.omega == ShotType::Serve; });
  if (!any_serve) throw Error("pruning removed every serve state");
  hash_ = sha256_hex(digest.str()).substr(0, 16);
}

State StateCensus::state(StateId id) const {
  if (id < states_.size()) return states_[id];
  if (id == win_id()) return State::win();
  if (id == lose_id()) return State::lose();
  throw Error("state id out of range: " + std::to_string(id));
}

std::optional<StateId> StateCensus::find(const State& s) const {
  if (s.absorbing == Absorbing::Win) return win_id();
  if (s.absorbing == Absorbing::Lose) return lose_id();
  if (s.sigma_a < 1 || s.sigma_a > kCellsPerHalf || s.sigma_b <= kCellsPerHalf || s.sigma_b > kCells) return std::nullopt;
  const auto idx = lookup_[(static_cast<int>(s.omega) * kCellsPerHalf + (s.sigma_a - 1)) * kCellsPerHalf +
                           (s.sigma_b - kCellsPerHalf - 1)];
  if (idx < 0) return std::nullopt;
  return static_cast<StateId>(idx);
}

StateCensus enumerate_states(const CourtSpec& spec, const PruningRules& pruning) { return StateCensus(spec, pruning); }

}  // namespace rallyproc
