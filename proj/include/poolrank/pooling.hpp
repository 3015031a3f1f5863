#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poolrank/error.hpp"
#include "poolrank/parallel.hpp"
#include "poolrank/tensor_store.hpp"

namespace poolrank {

enum class PoolingStrategy { max, avg, hybrid };

inline const char* to_string(PoolingStrategy s) {
  switch (s) {
    case PoolingStrategy::max: return "max";
    case PoolingStrategy::avg: return "avg";
    case PoolingStrategy::hybrid: return "hybrid";
  }
  return "?";
}

inline std::optional<PoolingStrategy> parse_strategy(std::string_view s) {
  for (auto v : {PoolingStrategy::max, PoolingStrategy::avg, PoolingStrategy::hybrid}) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

inline std::size_t pooled_dim(PoolingStrategy s, std::size_t maps) {
  return s == PoolingStrategy::hybrid ? 2 * maps : maps;
}

struct Provenance {
  PoolingStrategy strategy = PoolingStrategy::avg;
  std::string normalization = "none";

  bool operator==(const Provenance&) const = default;
};

/// A pooled (and possibly whitened) image-view representation.
struct Descriptor {
  std::string image_id;
  ViewTag view = kRot0;
  std::vector<float> values;
  Provenance provenance;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const Descriptor&) const = default;
};

namespace detail {

inline float max_of(std::span<const float> cells) { return *std::max_element(cells.begin(), cells.end()); }

// Row-major accumulation in double, one rounding to float at the end.
inline float mean_of(std::span<const float> cells) {
  double sum = 0.0;
  for (float v : cells) sum += v;
  return static_cast<float>(sum / static_cast<double>(cells.size()));
}

}  // namespace detail

/// Collapses each feature map to a scalar. Hybrid output is [max || avg].
inline Descriptor pool(const FeatureMapStack& stack, PoolingStrategy strategy) {
  const std::size_t k = stack.maps();
  Descriptor d;
  d.image_id = stack.image_id();
  d.view = stack.view();
  d.provenance.strategy = strategy;
  d.values.resize(pooled_dim(strategy, k));
  for (std::size_t i = 0; i < k; ++i) {
    auto cells = stack.map(i);
    switch (strategy) {
      case PoolingStrategy::max: d.values[i] = detail::max_of(cells); break;
      case PoolingStrategy::avg: d.values[i] = detail::mean_of(cells); break;
      case PoolingStrategy::hybrid:
        d.values[i] = detail::max_of(cells);
        d.values[k + i] = detail::mean_of(cells);
        break;
    }
  }
  return d;
}

/// Order-preserving batch pooling; output is identical for any thread count.
inline std::vector<Descriptor> pool_batch(std::span<const FeatureMapStack> stacks, PoolingStrategy strategy,
                                          std::size_t threads = 0) {
  if (!stacks.empty()) {
    auto k = stacks.front().maps();
    for (const auto& s : stacks) {
      if (s.maps() != k)
        throw Error(ErrorCode::dimension_mismatch,
                    "batch mixes K=" + std::to_string(k) + " and K=" + std::to_string(s.maps()));
    }
  }
  std::vector<Descriptor> out(stacks.size());
  parallel_for(stacks.size(), threads, [&](std::size_t i) { out[i] = pool(stacks[i], strategy); });
  return out;
}

}  // namespace poolrank
