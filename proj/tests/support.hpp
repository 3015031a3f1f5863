#pragma once

// Test-only helpers: temporary directories, seeded random data and small
// on-disk datasets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolrank/binary_io.hpp"
#include "poolrank/pooling.hpp"
#include "poolrank/tensor_store.hpp"

namespace poolrank::testing {

class TempDir {
public:
  explicit TempDir(const std::string& tag = "poolrank") {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline FeatureMapStack random_stack(std::mt19937_64& rng, std::uint32_t k, std::uint32_t h, std::uint32_t w,
                                    float lo = 0.0F, float hi = 1.0F) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(k) * h * w);
  for (auto& x : v) x = u(rng);
  return FeatureMapStack(k, h, w, std::move(v));
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(u(rng));
  return v;
}

inline Descriptor make_descriptor(std::string id, std::vector<float> values, ViewTag view = kRot0) {
  Descriptor d;
  d.image_id = std::move(id);
  d.view = view;
  d.values = std::move(values);
  return d;
}

/// Rotates every H x W map by 90 degrees clockwise (H and W swap).
inline FeatureMapStack rotate90(const FeatureMapStack& s) {
  const std::uint32_t h = s.height(), w = s.width();
  std::vector<float> out(s.values().size());
  for (std::uint32_t k = 0; k < s.maps(); ++k) {
    auto m = s.map(k);
    for (std::uint32_t r = 0; r < h; ++r)
      for (std::uint32_t c = 0; c < w; ++c) out[k * h * w + c * h + (h - 1 - r)] = m[r * w + c];
  }
  return FeatureMapStack(s.maps(), w, h, std::move(out));
}

/// Stack whose per-map average is exactly `target` in exact arithmetic: each
/// cell is target_k * (1 + a * pattern) with a zero-mean random pattern.
inline FeatureMapStack stack_with_means(std::mt19937_64& rng, std::span<const float> target, std::uint32_t h,
                                        std::uint32_t w, double amplitude = 0.2) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  std::vector<float> v(target.size() * cells);
  std::vector<double> pattern(cells);
  for (std::size_t k = 0; k < target.size(); ++k) {
    double mean = 0.0;
    for (auto& p : pattern) mean += (p = u(rng));
    mean /= static_cast<double>(cells);
    for (std::size_t i = 0; i < cells; ++i)
      v[k * cells + i] = static_cast<float>(target[k] * (1.0 + amplitude * (pattern[i] - mean)));
  }
  return FeatureMapStack(static_cast<std::uint32_t>(target.size()), h, w, std::move(v));
}

struct RetrievalDatasetSpec {
  std::size_t groups = 20;
  std::size_t members = 3;  // one query + (members - 1) references per group
  std::size_t distractors = 40;
  double sigma = 0.05;
  std::uint32_t maps = 256;
  std::uint32_t height = 6;
  std::uint32_t width = 6;
  std::uint64_t seed = 7;
};

/// Writes FMS1 stacks and a retrieval manifest. Group centroids are uniform
/// in [0, 1]^K; members add N(0, sigma^2) per dimension; references carry
/// all four rotations (maps rotated spatially).
inline std::filesystem::path write_retrieval_dataset(const std::filesystem::path& dir, const RetrievalDatasetSpec& spec) {
  std::filesystem::create_directories(dir / "stacks");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  nlohmann::json entries = nlohmann::json::array();
  auto write_views = [&](const std::string& id, std::span<const float> target, bool rotations) {
    auto base = stack_with_means(rng, target, spec.height, spec.width);
    nlohmann::json views;
    FeatureMapStack current = base;
    const char* names[] = {"rot0", "rot90", "rot180", "rot270"};
    for (int r = 0; r < (rotations ? 4 : 1); ++r) {
      std::string rel = "stacks/" + id + "_" + names[r] + ".fms";
      write_stack(current, dir / rel);
      views[names[r]] = rel;
      current = rotate90(current);
    }
    return views;
  };
  for (std::size_t g = 0; g < spec.groups; ++g) {
    std::vector<double> centroid(spec.maps);
    for (auto& c : centroid) c = unit(rng);
    std::string group = "g" + std::to_string(g);
    for (std::size_t m = 0; m < spec.members; ++m) {
      std::vector<float> member(spec.maps);
      for (std::size_t k = 0; k < spec.maps; ++k) member[k] = static_cast<float>(centroid[k] + noise(rng));
      std::string id = group + "_" + std::to_string(m);
      bool is_query = m == 0;
      entries.push_back({{"id", id},
                         {"role", is_query ? "query" : "reference"},
                         {"group", group},
                         {"views", write_views(id, member, !is_query)}});
    }
  }
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    std::vector<float> v(spec.maps);
    for (auto& x : v) x = static_cast<float>(unit(rng));
    std::string id = "distractor_" + std::to_string(d);
    entries.push_back({{"id", id}, {"role", "reference"}, {"group", id}, {"views", write_views(id, v, true)}});
  }
  nlohmann::json doc{{"mode", "retrieval"}, {"entries", entries}};
  auto path = dir / "manifest.json";
  io::write_text(path, doc.dump(1));
  return path;
}

struct ClassificationDatasetSpec {
  std::size_t classes = 3;
  std::size_t train_per_class = 8;
  std::size_t test_per_class = 6;
  std::size_t splits = 2;
  double class_spread = 1.0;  // centroid scale
  double image_noise = 0.3;
  double crop_noise = 0.1;
  std::uint32_t maps = 16;
  std::uint32_t height = 2;
  std::uint32_t width = 2;
  std::uint64_t seed = 11;
};

inline std::filesystem::path write_classification_dataset(const std::filesystem::path& dir,
                                                          const ClassificationDatasetSpec& spec) {
  std::filesystem::create_directories(dir / "stacks");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> centroids(spec.classes, std::vector<double>(spec.maps));
  for (auto& c : centroids)
    for (auto& x : c) x = 1.0 + spec.class_spread * unit(rng);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t s = 0; s < spec.splits; ++s) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < spec.train_per_class + spec.test_per_class; ++i) {
        bool is_train = i < spec.train_per_class;
        std::string id = "s" + std::to_string(s) + "_c" + std::to_string(c) + "_" + std::to_string(i);
        std::vector<double> image(spec.maps);
        for (std::size_t k = 0; k < spec.maps; ++k) image[k] = centroids[c][k] + spec.image_noise * gauss(rng);
        nlohmann::json views;
        for (int code = 4; code < ViewTag::count; ++code) {
          std::vector<float> crop(spec.maps);
          for (std::size_t k = 0; k < spec.maps; ++k)
            crop[k] = static_cast<float>(image[k] + spec.crop_noise * gauss(rng));
          auto tag = ViewTag::from_code(code);
          std::string rel = "stacks/" + id + "_" + tag.str() + ".fms";
          write_stack(stack_with_means(rng, crop, spec.height, spec.width), dir / rel);
          views[tag.str()] = rel;
        }
        entries.push_back({{"id", id},
                           {"role", is_train ? "train" : "test"},
                           {"label", "class" + std::to_string(c)},
                           {"split", static_cast<int>(s)},
                           {"views", views}});
      }
    }
  }
  nlohmann::json doc{{"mode", "classification"}, {"entries", entries}};
  auto path = dir / "manifest.json";
  io::write_text(path, doc.dump(1));
  return path;
}

}  // namespace poolrank::testing
