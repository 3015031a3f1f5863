#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>

#include "poolrank/error.hpp"

namespace poolrank {

enum class Rotation { rot0, rot90, rot180, rot270 };
enum class CropPosition { center, tl, tr, bl, br };

/// Which view of an image a stack (or descriptor) was computed from: one of
/// the four reference rotations, or one of the ten classification crops.
class ViewTag {
public:
  constexpr ViewTag() = default;
  static constexpr ViewTag rotation(Rotation r) { return ViewTag(static_cast<int>(r)); }
  static constexpr ViewTag crop(CropPosition p, bool mirrored) {
    return ViewTag(4 + static_cast<int>(p) * 2 + (mirrored ? 1 : 0));
  }

  constexpr bool is_rotation() const { return code_ < 4; }
  constexpr bool is_crop() const { return !is_rotation(); }
  constexpr Rotation rotation_kind() const { return static_cast<Rotation>(code_); }
  constexpr CropPosition crop_position() const { return static_cast<CropPosition>((code_ - 4) / 2); }
  constexpr bool mirrored() const { return is_crop() && ((code_ - 4) % 2 == 1); }

  /// Dense code in [0, 14): rotations 0..3, then crops (position*2 + mirrored).
  constexpr int code() const { return code_; }
  static constexpr int count = 14;
  static ViewTag from_code(int code) {
    if (code < 0 || code >= count) throw Error(ErrorCode::invalid_argument, "view code " + std::to_string(code));
    return ViewTag(code);
  }

  /// Canonical names: rot0 rot90 rot180 rot270, crop_center crop_tl crop_tr
  /// crop_bl crop_br, each crop optionally suffixed with _mirror.
  std::string str() const {
    static constexpr std::string_view rot_names[] = {"rot0", "rot90", "rot180", "rot270"};
    static constexpr std::string_view crop_names[] = {"center", "tl", "tr", "bl", "br"};
    if (is_rotation()) return std::string(rot_names[code_]);
    std::string s = "crop_" + std::string(crop_names[static_cast<int>(crop_position())]);
    if (mirrored()) s += "_mirror";
    return s;
  }

  static std::optional<ViewTag> parse(std::string_view s) {
    for (int c = 0; c < count; ++c) {
      if (ViewTag(c).str() == s) return ViewTag(c);
    }
    return std::nullopt;
  }

  constexpr auto operator<=>(const ViewTag&) const = default;

private:
  explicit constexpr ViewTag(int code) : code_(code) {}
  int code_ = 0;
};

inline constexpr ViewTag kRot0 = ViewTag::rotation(Rotation::rot0);

}  // namespace poolrank
