#pragma once

// FMS1 feature-map stack files.
//
// Layout (all integers unsigned little-endian):
//   0..3    magic "FMS1"
//   4       version (1)
//   5..7    reserved, zero
//   8..11   K (number of maps)
//   12..15  H
//   16..19  W
//   20..    K*H*W IEEE-754 binary32 little-endian, map-major, row-major within a map

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "poolrank/binary_io.hpp"
#include "poolrank/error.hpp"
#include "poolrank/view_tag.hpp"

namespace poolrank {

/// K feature maps of H x W activations for one view of one image.
class FeatureMapStack {
public:
  FeatureMapStack() = default;

  FeatureMapStack(std::uint32_t maps, std::uint32_t height, std::uint32_t width, std::vector<float> values,
                  std::string image_id = {}, ViewTag view = kRot0)
      : image_id_(std::move(image_id)), view_(view), maps_(maps), height_(height), width_(width),
        values_(std::move(values)) {
    if (maps_ == 0 || height_ == 0 || width_ == 0)
      throw Error(ErrorCode::invalid_shape, "K, H and W must all be >= 1");
    if (static_cast<std::uint64_t>(maps_) * height_ * width_ != values_.size())
      throw Error(ErrorCode::invalid_shape, "payload size does not match K*H*W");
    for (float v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "stack " + image_id_);
    }
  }

  /// Filled with a constant; convenient for tests and fc7-style K x 1 x 1 vectors.
  static FeatureMapStack filled(std::uint32_t maps, std::uint32_t height, std::uint32_t width, float value) {
    return FeatureMapStack(maps, height, width,
                           std::vector<float>(static_cast<std::size_t>(maps) * height * width, value));
  }

  const std::string& image_id() const noexcept { return image_id_; }
  ViewTag view() const noexcept { return view_; }
  std::uint32_t maps() const noexcept { return maps_; }
  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }
  std::size_t cells_per_map() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> map(std::size_t k) const noexcept {
    return std::span<const float>(values_).subspan(k * cells_per_map(), cells_per_map());
  }

  void set_identity(std::string image_id, ViewTag view) {
    image_id_ = std::move(image_id);
    view_ = view;
  }

  /// Shape and payload bits; identity fields are not part of the file.
  bool same_payload(const FeatureMapStack& other) const {
    return maps_ == other.maps_ && height_ == other.height_ && width_ == other.width_ &&
           values_.size() == other.values_.size() &&
           std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
  }

private:
  std::string image_id_;
  ViewTag view_ = kRot0;
  std::uint32_t maps_ = 0;
  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::vector<float> values_;
};

struct StackReport {
  std::uint32_t maps = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::size_t negative_count = 0;
  float min_value = 0.0F;
  float max_value = 0.0F;
};

inline StackReport validate_stack(const FeatureMapStack& stack) {
  StackReport r{stack.maps(), stack.height(), stack.width(), 0, std::numeric_limits<float>::infinity(),
                -std::numeric_limits<float>::infinity()};
  for (float v : stack.values()) {
    if (v < 0.0F) ++r.negative_count;
    r.min_value = std::min(r.min_value, v);
    r.max_value = std::max(r.max_value, v);
  }
  return r;
}

namespace fms {

inline constexpr char kMagic[4] = {'F', 'M', 'S', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 20;
// Guards against absurd headers before any allocation is attempted.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

inline std::vector<std::uint8_t> encode(const FeatureMapStack& stack) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + stack.values().size() * sizeof(float));
  io::put_bytes(out, std::string_view(kMagic, 4));
  out.push_back(kVersion);
  out.insert(out.end(), 3, 0);
  io::put_le<std::uint32_t>(out, stack.maps());
  io::put_le<std::uint32_t>(out, stack.height());
  io::put_le<std::uint32_t>(out, stack.width());
  for (float v : stack.values()) io::put_le<float>(out, v);
  return out;
}

inline FeatureMapStack decode(std::span<const std::uint8_t> data, const std::string& origin = {}) {
  io::Reader in(data);
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) throw Error(ErrorCode::bad_magic, origin);
  in.get_bytes(4);
  if (in.remaining() < kHeaderSize - 4) throw Error(ErrorCode::truncated_payload, origin + " (header)");
  auto version = in.get_le<std::uint8_t>();
  if (version != kVersion) throw Error(ErrorCode::bad_version, origin + " has version " + std::to_string(version));
  in.get_bytes(3);
  auto k = in.get_le<std::uint32_t>();
  auto h = in.get_le<std::uint32_t>();
  auto w = in.get_le<std::uint32_t>();
  if (k == 0 || h == 0 || w == 0) throw Error(ErrorCode::invalid_shape, origin);
  std::uint64_t n = static_cast<std::uint64_t>(k) * h;
  if (n > kMaxElements || n * w > kMaxElements) throw Error(ErrorCode::dimension_overflow, origin);
  n *= w;
  if (in.remaining() < n * sizeof(float)) throw Error(ErrorCode::truncated_payload, origin);
  std::vector<float> values(n);
  for (auto& v : values) {
    v = in.get_le<float>();
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, origin);
  }
  return FeatureMapStack(k, h, w, std::move(values));
}

}  // namespace fms

inline void write_stack(const FeatureMapStack& stack, const std::filesystem::path& path) {
  io::write_file(path, fms::encode(stack));
}

inline FeatureMapStack read_stack(const std::filesystem::path& path) {
  return fms::decode(io::read_file(path), path.string());
}

}  // namespace poolrank
