#pragma once

// Rotation-aware brute-force retrieval and mAP evaluation.
//
// Every reference image holds 1-4 orientation descriptors packed as rows of
// one row-major float matrix. The distance from a query to an image is the
// minimum over that image's rows; images are ranked ascending with ties
// broken by image id.
//
// PRI1 file layout (little-endian): "PRI1", u32 version, u32 D, string
// strategy, string normalization, u32 entry count, then per entry: string id,
// u8 has_group, string group, u32 first_row, u32 view count, u8 view codes;
// then u32 row count and rows*D binary32 values. Strings are u32 length + bytes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poolrank/binary_io.hpp"
#include "poolrank/error.hpp"
#include "poolrank/manifest.hpp"
#include "poolrank/parallel.hpp"
#include "poolrank/pooling.hpp"

namespace poolrank {

enum class DistanceMetric { cosine, euclidean };

inline const char* to_string(DistanceMetric m) { return m == DistanceMetric::cosine ? "cosine" : "euclidean"; }

inline std::optional<DistanceMetric> parse_metric(std::string_view s) {
  if (s == "cosine") return DistanceMetric::cosine;
  if (s == "euclidean") return DistanceMetric::euclidean;
  return std::nullopt;
}

/// Counts zero-norm vectors seen by distance computations.
struct DistanceDiagnostics {
  std::atomic<std::uint64_t> zero_vectors{0};
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

inline double cosine_from_parts(double dot_ab, double norm_a, double norm_b, DistanceDiagnostics* diag) {
  if (norm_a == 0.0 || norm_b == 0.0) {
    if (diag) diag->zero_vectors.fetch_add(1, std::memory_order_relaxed);
    return 1.0;
  }
  return std::clamp(1.0 - dot_ab / (norm_a * norm_b), 0.0, 2.0);
}

inline double euclidean_from_parts(double dot_ab, double sq_a, double sq_b) {
  return std::sqrt(std::max(0.0, sq_a + sq_b - 2.0 * dot_ab));
}

}  // namespace detail

/// 1 - cos(a, b), in [0, 2]. A zero vector on either side yields 1.
inline double cosine_distance(std::span<const float> a, std::span<const float> b,
                              DistanceDiagnostics* diag = nullptr) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "cosine_distance");
  double na = std::sqrt(detail::dot(a, a));
  double nb = std::sqrt(detail::dot(b, b));
  return detail::cosine_from_parts(detail::dot(a, b), na, nb, diag);
}

inline double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "euclidean_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct RankedItem {
  std::string image_id;
  double distance = 0.0;

  bool operator==(const RankedItem&) const = default;
};

struct Ranking {
  std::string query_id;
  std::vector<RankedItem> items;

  bool operator==(const Ranking&) const = default;
};

/// All orientation descriptors of one reference image.
struct ReferenceSet {
  std::string image_id;
  std::optional<std::string> group;
  std::vector<Descriptor> views;
};

struct QueryOptions {
  DistanceMetric metric = DistanceMetric::cosine;
  bool exclude_self = true;
};

class RetrievalIndex {
public:
  struct Entry {
    std::string image_id;
    std::optional<std::string> group;
    std::size_t first_row = 0;
    std::vector<ViewTag> views;

    bool operator==(const Entry&) const = default;
  };

  RetrievalIndex() = default;

  /// Builds from explicit per-image sets. Each set needs a rot0 view, only
  /// rotation views, and no repeated tag; all rows share dim and provenance.
  static RetrievalIndex from_sets(std::span<const ReferenceSet> sets) {
    RetrievalIndex index;
    bool first = true;
    std::set<std::string> ids;
    for (const auto& set : sets) {
      if (!ids.insert(set.image_id).second) throw Error(ErrorCode::duplicate_id, set.image_id);
      if (set.views.empty() || std::none_of(set.views.begin(), set.views.end(),
                                            [](const Descriptor& d) { return d.view == kRot0; }))
        throw Error(ErrorCode::bad_manifest, "reference '" + set.image_id + "' has no rot0 descriptor");
      Entry entry{set.image_id, set.group, index.rows(), {}};
      for (const auto& d : set.views) {
        if (!d.view.is_rotation())
          throw Error(ErrorCode::bad_manifest, "reference '" + set.image_id + "' has non-rotation view " +
                                                   d.view.str());
        if (std::find(entry.views.begin(), entry.views.end(), d.view) != entry.views.end())
          throw Error(ErrorCode::duplicate_id, "reference '" + set.image_id + "' repeats view " + d.view.str());
        if (first) {
          index.dim_ = d.dim();
          index.provenance_ = d.provenance;
          first = false;
        }
        if (d.dim() != index.dim_ || d.dim() == 0)
          throw Error(ErrorCode::dimension_mismatch, "reference '" + set.image_id + "' dim " +
                                                         std::to_string(d.dim()) + " vs " +
                                                         std::to_string(index.dim_));
        if (!(d.provenance == index.provenance_))
          throw Error(ErrorCode::bad_manifest, "reference '" + set.image_id +
                                                   "' was normalized with a different model");
        entry.views.push_back(d.view);
        index.matrix_.insert(index.matrix_.end(), d.values.begin(), d.values.end());
      }
      index.entries_.push_back(std::move(entry));
    }
    index.compute_norms();
    return index;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t rows() const noexcept { return dim_ == 0 ? 0 : matrix_.size() / dim_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(matrix_).subspan(r * dim_, dim_);
  }

  const Entry* find(std::string_view image_id) const {
    for (const auto& e : entries_) {
      if (e.image_id == image_id) return &e;
    }
    return nullptr;
  }

  /// One matrix-vector pass over the packed rows.
  Ranking query(const Descriptor& q, const QueryOptions& options = {}, DistanceDiagnostics* diag = nullptr) const {
    if (q.dim() != dim_)
      throw Error(ErrorCode::dimension_mismatch,
                  "query '" + q.image_id + "' dim " + std::to_string(q.dim()) + " vs index " + std::to_string(dim_));
    const std::size_t n = rows();
    std::vector<double> dots(n);
    const float* base = matrix_.data();
    for (std::size_t r = 0; r < n; ++r) {
      const float* row = base + r * dim_;
      double acc = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) acc += static_cast<double>(q.values[c]) * row[c];
      dots[r] = acc;
    }
    const double q_sq = detail::dot(q.values, q.values);
    const double q_norm = std::sqrt(q_sq);

    Ranking ranking;
    ranking.query_id = q.image_id;
    ranking.items.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (options.exclude_self && e.image_id == q.image_id) continue;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < e.views.size(); ++v) {
        std::size_t r = e.first_row + v;
        double d = options.metric == DistanceMetric::cosine
                       ? detail::cosine_from_parts(dots[r], q_norm, norms_[r], diag)
                       : detail::euclidean_from_parts(dots[r], q_sq, norms_[r] * norms_[r]);
        best = std::min(best, d);
      }
      ranking.items.push_back({e.image_id, best});
    }
    std::sort(ranking.items.begin(), ranking.items.end(), [](const RankedItem& a, const RankedItem& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.image_id < b.image_id;
    });
    return ranking;
  }

  bool operator==(const RetrievalIndex& other) const {
    return dim_ == other.dim_ && provenance_ == other.provenance_ && entries_ == other.entries_ &&
           matrix_.size() == other.matrix_.size() &&
           std::memcmp(matrix_.data(), other.matrix_.data(), matrix_.size() * sizeof(float)) == 0;
  }

  std::vector<std::uint8_t> encode() const;
  static RetrievalIndex decode(std::span<const std::uint8_t> data, const std::string& origin = {});

private:
  void compute_norms() {
    norms_.resize(rows());
    for (std::size_t r = 0; r < norms_.size(); ++r) norms_[r] = std::sqrt(detail::dot(row(r), row(r)));
  }

  std::size_t dim_ = 0;
  Provenance provenance_;
  std::vector<Entry> entries_;
  std::vector<float> matrix_;
  std::vector<double> norms_;
};

struct IndexOptions {
  bool all_rotations = true;   // false: index rot0 only
  bool include_queries = false;  // also index query images (rot0), for self-inclusion analysis
};

/// Groups view descriptors by image and indexes every reference entry of a
/// retrieval manifest. Descriptors for images not in the manifest, and crop
/// views, are ignored.
inline RetrievalIndex build_index(std::span<const Descriptor> descriptors, const DatasetManifest& manifest,
                                  const IndexOptions& options = {}) {
  std::map<std::string, std::vector<const Descriptor*>> by_image;
  for (const auto& d : descriptors) by_image[d.image_id].push_back(&d);
  std::vector<ReferenceSet> sets;
  for (const auto& e : manifest.entries) {
    bool wanted = e.role == Role::reference || (options.include_queries && e.role == Role::query);
    if (!wanted) continue;
    ReferenceSet set{e.id, e.group, {}};
    if (auto it = by_image.find(e.id); it != by_image.end()) {
      for (const auto* d : it->second) {
        if (!d->view.is_rotation()) continue;
        bool keep = d->view == kRot0 || (options.all_rotations && e.role == Role::reference);
        if (keep) set.views.push_back(*d);
      }
    }
    if (std::none_of(set.views.begin(), set.views.end(), [](const Descriptor& d) { return d.view == kRot0; }))
      throw Error(ErrorCode::bad_manifest, "missing rot0 descriptor for reference '" + e.id + "'");
    std::sort(set.views.begin(), set.views.end(),
              [](const Descriptor& a, const Descriptor& b) { return a.view < b.view; });
    sets.push_back(std::move(set));
  }
  return RetrievalIndex::from_sets(sets);
}

inline std::vector<Ranking> query_batch(const RetrievalIndex& index, std::span<const Descriptor> queries,
                                        const QueryOptions& options = {}, std::size_t threads = 0,
                                        DistanceDiagnostics* diag = nullptr) {
  std::vector<Ranking> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) { out[i] = index.query(queries[i], options, diag); });
  return out;
}

/// Mean over relevant items of precision at each relevant item's rank.
inline double average_precision(const Ranking& ranking, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::missing_relevant, "query '" + ranking.query_id + "'");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.items.size(); ++i) {
    if (relevant.contains(ranking.items[i].image_id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

struct LabeledQuery {
  Descriptor descriptor;
  std::string group;
};

struct EvalResult {
  double map = 0.0;
  std::vector<std::pair<std::string, double>> per_query_ap;  // input order
};

inline EvalResult evaluate_map(const RetrievalIndex& index, std::span<const LabeledQuery> queries,
                               const QueryOptions& options = {}, std::size_t threads = 0) {
  std::map<std::string, std::set<std::string>> members;
  for (const auto& e : index.entries()) {
    if (e.group) members[*e.group].insert(e.image_id);
  }
  EvalResult result;
  result.per_query_ap.resize(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto& q = queries[i];
    std::set<std::string> relevant;
    if (auto it = members.find(q.group); it != members.end()) relevant = it->second;
    if (options.exclude_self) relevant.erase(q.descriptor.image_id);
    auto ranking = index.query(q.descriptor, options);
    result.per_query_ap[i] = {q.descriptor.image_id, average_precision(ranking, relevant)};
  });
  double sum = 0.0;
  for (const auto& [id, ap] : result.per_query_ap) sum += ap;
  result.map = queries.empty() ? 0.0 : sum / static_cast<double>(queries.size());
  return result;
}

namespace pri {
inline constexpr char kMagic[4] = {'P', 'R', 'I', '1'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace pri

inline std::vector<std::uint8_t> RetrievalIndex::encode() const {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, std::string_view(pri::kMagic, 4));
  io::put_le<std::uint32_t>(out, pri::kVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  io::put_string(out, to_string(provenance_.strategy));
  io::put_string(out, provenance_.normalization);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    io::put_string(out, e.image_id);
    io::put_le<std::uint8_t>(out, e.group ? 1 : 0);
    io::put_string(out, e.group.value_or(""));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.first_row));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.views.size()));
    for (auto v : e.views) io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(v.code()));
  }
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rows()));
  for (float v : matrix_) io::put_le<float>(out, v);
  return out;
}

inline RetrievalIndex RetrievalIndex::decode(std::span<const std::uint8_t> data, const std::string& origin) {
  if (data.size() < 4 || std::memcmp(data.data(), pri::kMagic, 4) != 0) throw Error(ErrorCode::bad_magic, origin);
  io::Reader in(data);
  in.get_bytes(4);
  auto version = in.get_le<std::uint32_t>("version");
  if (version != pri::kVersion) throw Error(ErrorCode::bad_version, origin);
  RetrievalIndex index;
  index.dim_ = in.get_le<std::uint32_t>("dim");
  auto strategy = parse_strategy(in.get_string("strategy"));
  if (!strategy) throw Error(ErrorCode::bad_manifest, origin + ": unknown pooling strategy");
  index.provenance_.strategy = *strategy;
  index.provenance_.normalization = in.get_string("normalization");
  auto count = in.get_le<std::uint32_t>("entry count");
  std::size_t expected_row = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.image_id = in.get_string("entry id");
    bool has_group = in.get_le<std::uint8_t>("entry group flag") != 0;
    auto group = in.get_string("entry group");
    if (has_group) e.group = group;
    e.first_row = in.get_le<std::uint32_t>("entry row");
    auto views = in.get_le<std::uint32_t>("entry views");
    if (views == 0 || views > 4 || e.first_row != expected_row)
      throw Error(ErrorCode::bad_manifest, origin + ": corrupt entry table");
    for (std::uint32_t v = 0; v < views; ++v) e.views.push_back(ViewTag::from_code(in.get_le<std::uint8_t>("view")));
    expected_row += views;
    index.entries_.push_back(std::move(e));
  }
  auto rows = in.get_le<std::uint32_t>("row count");
  if (rows != expected_row) throw Error(ErrorCode::bad_manifest, origin + ": row count mismatch");
  std::uint64_t n = static_cast<std::uint64_t>(rows) * index.dim_;
  in.require(n * sizeof(float), "descriptor matrix");
  index.matrix_.resize(n);
  for (auto& v : index.matrix_) {
    v = in.get_le<float>();
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, origin);
  }
  index.compute_norms();
  return index;
}

inline void save_index(const RetrievalIndex& index, const std::filesystem::path& path) {
  io::write_file(path, index.encode());
}

inline RetrievalIndex load_index(const std::filesystem::path& path) {
  return RetrievalIndex::decode(io::read_file(path), path.string());
}

}  // namespace poolrank
