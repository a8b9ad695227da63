#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rallyproc {

/// Court coordinates in metres. |x| is the distance from the net, with
/// Player A's half at x <= 0 and Player B's half at x >= 0; y is the signed
/// distance from the centre line.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }

enum class ShotType : std::uint8_t { Serve = 0, Return = 1, Rally = 2 };
inline constexpr int kShotTypes = 3;

std::string_view to_string(ShotType t);
ShotType shot_type_from_string(std::string_view s);

enum class Absorbing : std::uint8_t { None = 0, Win = 1, Lose = 2 };

/// Player A's decision epoch: both players' cells and the shot A is about to
/// hit, or one of the two absorbing outcomes.
struct State {
  int sigma_a = 0;  // 1..42
  int sigma_b = 0;  // 43..84
  ShotType omega = ShotType::Rally;
  Absorbing absorbing = Absorbing::None;

  static State transient(int a, int b, ShotType w) { return {a, b, w, Absorbing::None}; }
  static State win() { return {0, 0, ShotType::Rally, Absorbing::Win}; }
  static State lose() { return {0, 0, ShotType::Rally, Absorbing::Lose}; }

  bool is_absorbing() const { return absorbing != Absorbing::None; }
  auto operator<=>(const State&) const = default;
};

/// Index of a named intention in the court layout's action list.
struct ActionId {
  std::uint16_t value = 0;
  auto operator<=>(const ActionId&) const = default;
};

/// Index into a state census: transient states first, then W, then L.
using StateId = std::uint32_t;

enum class OutcomeTag : std::uint8_t { AWinner = 0, AError = 1, BWinner = 2, BError = 3, Continue = 4 };
inline constexpr int kAbsorbingTags = 4;

std::string_view to_string(OutcomeTag t);

inline bool tag_wins(OutcomeTag t) { return t == OutcomeTag::AWinner || t == OutcomeTag::BError; }
inline bool tag_loses(OutcomeTag t) { return t == OutcomeTag::AError || t == OutcomeTag::BWinner; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rallyproc
