#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rallyproc/types.hpp"

namespace rallyproc {

/// Closed axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;

  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  double area() const { return (x1 - x0) * (y1 - y0); }
  double depth() const { return x1 - x0; }
  double width() const { return y1 - y0; }
  Point center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
};

inline constexpr int kCellsPerHalf = 42;
inline constexpr int kCells = 2 * kCellsPerHalf;

struct CourtSpec {
  double half_length_m = 13.885;
  double width_m = 10.97;
  int rows = 7;
  int cols = 6;
  double baseline_m = 11.885;
  double service_line_m = 6.40;
  double singles_half_width_m = 4.115;

  void validate() const;
  double row_depth() const { return half_length_m / rows; }
  double col_width() const { return width_m / cols; }
};

/// Cells are numbered half-major, then by row (row 0 touches the net), then by
/// column (column 0 has the most negative y): index = 42*half + cols*row + col + 1.
struct Cell {
  int index = 0;
  Rect bounds;

  int half() const { return (index - 1) / kCellsPerHalf; }
};

Cell cell_at(int index, const CourtSpec& spec);
int cell_row(int index, const CourtSpec& spec);
int cell_col(int index, const CourtSpec& spec);

/// Unique cell containing the point. A point on a shared edge belongs to the
/// lower-indexed cell. Returns nullopt outside the 84-cell grid.
std::optional<Cell> locate_cell(Point p, const CourtSpec& spec);

/// True when the cell lies on its occupant's deuce (right-hand) side. Player A
/// faces +x so A's right is y < 0; Player B faces -x so B's right is y > 0.
bool cell_on_deuce_side(int index, const CourtSpec& spec);

enum class ActionKind : std::uint8_t { ServeDeuce = 0, ServeAd = 1, Rally = 2 };

std::string_view to_string(ActionKind k);
ActionKind action_kind_from_string(std::string_view s);

/// A named aim region on Player B's half, stored in global coordinates.
struct ActionRegion {
  ActionId id;
  std::string name;
  ActionKind kind = ActionKind::Rally;
  std::vector<Rect> parts;
  bool conservative = false;

  bool contains(Point p) const;
  double area() const;
  Point centroid() const;
  /// Lateral extent of the bounding box.
  double width() const;
  bool is_rectangle() const { return parts.size() == 1; }
  Rect bounding_box() const;
};

enum class Player : std::uint8_t { A = 0, B = 1 };

struct PruneRule {
  enum class Kind : std::uint8_t { MinRow, ReceiverWrongSide };
  std::string name;
  Kind kind = Kind::MinRow;
  ShotType shot = ShotType::Serve;
  Player player = Player::A;
  int value = 0;  // minimum row, or number of outer columns
};

struct PruningRules {
  std::string version = "none";
  std::vector<PruneRule> rules;

  static PruningRules none() { return {}; }
  bool keeps(const State& s, const CourtSpec& spec) const;
};

struct CourtLayout {
  std::string version;
  CourtSpec spec;
  std::vector<ActionRegion> actions;
  PruningRules pruning;

  const ActionRegion& action(ActionId id) const { return actions.at(id.value); }
  std::optional<ActionId> find_action(std::string_view name) const;
  std::vector<ActionId> actions_of(ActionKind kind) const;
  void validate() const;
};

CourtLayout load_court(const std::filesystem::path& path);
CourtLayout default_court();
std::filesystem::path default_court_path();

/// Region of the given kind containing the point, lowest id on shared edges.
/// Returns nullopt when the point is out of bounds for that kind.
std::optional<ActionId> locate_action(Point p, ActionKind kind, const CourtLayout& layout);

/// Actions available to Player A in a transient state: the three serve actions
/// for the server's side in serve states, otherwise the rally actions.
std::vector<ActionId> permissible_actions(const State& s, const CourtLayout& layout);
ActionKind action_kind_for(const State& s, const CourtSpec& spec);

/// Transient states surviving the pruning rules in a fixed order
/// (shot type, then sigma_A, then sigma_B), followed by W and L.
class StateCensus {
 public:
  StateCensus(const CourtSpec& spec, const PruningRules& pruning);

  std::size_t num_transient() const { return states_.size(); }
  std::size_t size() const { return states_.size() + 2; }
  StateId win_id() const { return static_cast<StateId>(states_.size()); }
  StateId lose_id() const { return static_cast<StateId>(states_.size() + 1); }
  State state(StateId id) const;
  std::optional<StateId> find(const State& s) const;
  std::span<const State> transient() const { return states_; }
  const std::string& hash() const { return hash_; }
  const CourtSpec& spec() const { return spec_; }

 private:
  CourtSpec spec_;
  std::vector<State> states_;
  std::vector<std::int32_t> lookup_;
  std::string hash_;
};

StateCensus enumerate_states(const CourtSpec& spec, const PruningRules& pruning);

}  // namespace rallyproc
