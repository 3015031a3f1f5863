#pragma once

// One-vs-rest linear SVMs trained by SGD on per-crop descriptors, and the
// ten-crop vote used to classify an image.
//
// For class c every sample gets y = +1 if its label is c, else -1. With t the
// global step counter and lr_t = lr0 / (1 + lr0 * lambda * t):
//   y (w.x + b) < 1 :  w <- (1 - lr_t lambda) w + lr_t y x,  b <- b + lr_t y
//   otherwise       :  w <- (1 - lr_t lambda) w
// Samples are visited in a fresh seeded permutation every epoch; the
// permutation stream depends only on (seed, N), so all classes see the same
// order and can train concurrently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
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
#include "poolrank/whitening.hpp"

namespace poolrank {

struct SgdHyperparams {
  std::uint32_t epochs = 100;
  double lambda = 1e-5;
  double lr0 = 0.2;
  std::uint64_t seed = 42;

  bool operator==(const SgdHyperparams&) const = default;
};

class LinearClassifier {
public:
  LinearClassifier() = default;
  LinearClassifier(std::vector<std::string> classes, std::size_t dim, std::vector<double> weights,
                   std::vector<double> biases, SgdHyperparams hyper = {})
      : classes_(std::move(classes)), dim_(dim), weights_(std::move(weights)), biases_(std::move(biases)),
        hyper_(hyper) {
    if (classes_.size() < 2) throw Error(ErrorCode::insufficient_data, "classifier needs at least 2 classes");
    if (weights_.size() != classes_.size() * dim_ || biases_.size() != classes_.size())
      throw Error(ErrorCode::invalid_shape, "classifier weight shape");
    for (double v : weights_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::numeric_failure, "non-finite classifier weight");
    }
  }

  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const SgdHyperparams& hyperparams() const noexcept { return hyper_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> weights(std::size_t c) const {
    return std::span<const double>(weights_).subspan(c * dim_, dim_);
  }
  std::span<const double> biases() const noexcept { return biases_; }

  std::optional<std::size_t> class_index(std::string_view label) const {
    auto it = std::lower_bound(classes_.begin(), classes_.end(), label);
    if (it == classes_.end() || *it != label) return std::nullopt;
    return static_cast<std::size_t>(it - classes_.begin());
  }

  bool operator==(const LinearClassifier&) const = default;

private:
  std::vector<std::string> classes_;  // sorted
  std::size_t dim_ = 0;
  std::vector<double> weights_;  // C x D row-major
  std::vector<double> biases_;
  SgdHyperparams hyper_;
};

namespace detail {

// Unbiased index in [0, n) by rejection; independent of the standard
// library's distribution implementations.
inline std::uint64_t bounded_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

inline void fisher_yates(std::vector<std::uint32_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    auto j = bounded_index(rng, i);
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace detail

/// Trains one binary model per class. `classes` lists the label set
/// explicitly (sorted internally); every listed class needs a sample.
inline LinearClassifier train(std::span<const Descriptor> samples, std::span<const std::string> labels,
                              std::vector<std::string> classes, const SgdHyperparams& hyper = {},
                              std::size_t threads = 0) {
  if (samples.size() != labels.size()) throw Error(ErrorCode::invalid_argument, "samples/labels length differ");
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error(ErrorCode::insufficient_data, "need at least 2 classes");
  if (!(hyper.lambda >= 0.0) || !(hyper.lr0 > 0.0)) throw Error(ErrorCode::invalid_argument, "lambda/lr");
  const std::size_t n = samples.size();
  if (n == 0) throw Error(ErrorCode::insufficient_data, "no training samples");
  const std::size_t dim = samples.front().dim();

  std::vector<double> x(n * dim);
  std::vector<std::uint32_t> target(n);
  std::vector<std::size_t> per_class(classes.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].dim() != dim) throw Error(ErrorCode::dimension_mismatch, samples[i].image_id);
    std::copy(samples[i].values.begin(), samples[i].values.end(), x.begin() + static_cast<std::ptrdiff_t>(i * dim));
    auto it = std::lower_bound(classes.begin(), classes.end(), labels[i]);
    if (it == classes.end() || *it != labels[i])
      throw Error(ErrorCode::missing_label, "label '" + labels[i] + "' not in class list");
    target[i] = static_cast<std::uint32_t>(it - classes.begin());
    ++per_class[target[i]];
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (per_class[c] == 0) throw Error(ErrorCode::insufficient_data, "class '" + classes[c] + "' has no samples");
  }

  const std::size_t num_classes = classes.size();
  std::vector<double> weights(num_classes * dim, 0.0);
  std::vector<double> biases(num_classes, 0.0);
  parallel_for(num_classes, threads, [&](std::size_t c) {
    double* w = weights.data() + c * dim;
    double b = 0.0;
    std::mt19937_64 rng(hyper.seed);
    std::vector<std::uint32_t> order(n);
    std::uint64_t t = 0;
    for (std::uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0U);
      detail::fisher_yates(order, rng);
      for (auto i : order) {
        const double lr = hyper.lr0 / (1.0 + hyper.lr0 * hyper.lambda * static_cast<double>(t));
        const double y = target[i] == c ? 1.0 : -1.0;
        const double* xi = x.data() + static_cast<std::size_t>(i) * dim;
        double score = b;
        for (std::size_t d = 0; d < dim; ++d) score += w[d] * xi[d];
        const double shrink = 1.0 - lr * hyper.lambda;
        if (y * score < 1.0) {
          for (std::size_t d = 0; d < dim; ++d) w[d] = shrink * w[d] + lr * y * xi[d];
          b += lr * y;
        } else {
          for (std::size_t d = 0; d < dim; ++d) w[d] *= shrink;
        }
        ++t;
      }
    }
    biases[c] = b;
  });
  return LinearClassifier(std::move(classes), dim, std::move(weights), std::move(biases), hyper);
}

inline LinearClassifier train(std::span<const Descriptor> samples, std::span<const std::string> labels,
                              const SgdHyperparams& hyper = {}, std::size_t threads = 0) {
  std::vector<std::string> classes(labels.begin(), labels.end());
  return train(samples, labels, std::move(classes), hyper, threads);
}

/// scores_c = w_c . x + b_c
inline std::vector<double> predict_crop(const LinearClassifier& clf, std::span<const float> x) {
  if (x.size() != clf.dim())
    throw Error(ErrorCode::dimension_mismatch,
                "descriptor dim " + std::to_string(x.size()) + " vs classifier " + std::to_string(clf.dim()));
  std::vector<double> scores(clf.num_classes());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    auto w = clf.weights(c);
    double acc = clf.biases()[c];
    for (std::size_t d = 0; d < x.size(); ++d) acc += w[d] * x[d];
    scores[c] = acc;
  }
  return scores;
}

inline std::vector<double> predict_crop(const LinearClassifier& clf, const Descriptor& d) {
  return predict_crop(clf, d.values);
}

enum class VoteMode {
  argmax,    // a crop is positive for the class with its highest score
  ovr_sign,  // a crop is positive for every class with score > 0
};

inline const char* to_string(VoteMode m) { return m == VoteMode::argmax ? "argmax" : "ovr-sign"; }

inline std::optional<VoteMode> parse_vote_mode(std::string_view s) {
  if (s == "argmax") return VoteMode::argmax;
  if (s == "ovr-sign") return VoteMode::ovr_sign;
  return std::nullopt;
}

inline constexpr std::size_t kCropsPerImage = 10;
inline constexpr std::uint32_t kVoteThreshold = 6;

struct CropVote {
  std::vector<std::vector<double>> scores;  // crops x classes
  std::vector<std::uint32_t> positive_counts;
  std::size_t decision = 0;  // class index
  bool fallback = false;     // no class reached the threshold
};

namespace detail {

// First maximum wins; classes are sorted so this breaks ties lexicographically.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// Votes over per-crop score rows. A class wins when at least 6 of the 10
/// crops are positive for it; otherwise the summed scores decide.
inline CropVote vote(std::vector<std::vector<double>> scores, VoteMode mode = VoteMode::argmax) {
  if (scores.size() != kCropsPerImage)
    throw Error(ErrorCode::invalid_argument, "expected 10 crops, got " + std::to_string(scores.size()));
  const std::size_t num_classes = scores.front().size();
  CropVote v;
  v.positive_counts.assign(num_classes, 0);
  std::vector<double> summed(num_classes, 0.0);
  for (const auto& row : scores) {
    if (row.size() != num_classes) throw Error(ErrorCode::dimension_mismatch, "score row");
    for (std::size_t c = 0; c < num_classes; ++c) summed[c] += row[c];
    if (mode == VoteMode::argmax) {
      ++v.positive_counts[detail::argmax(row)];
    } else {
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (row[c] > 0.0) ++v.positive_counts[c];
      }
    }
  }
  std::optional<std::size_t> winner;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (v.positive_counts[c] < kVoteThreshold) continue;
    if (!winner || v.positive_counts[c] > v.positive_counts[*winner] ||
        (v.positive_counts[c] == v.positive_counts[*winner] && summed[c] > summed[*winner]))
      winner = c;
  }
  v.fallback = !winner;
  v.decision = winner ? *winner : detail::argmax(summed);
  v.scores = std::move(scores);
  return v;
}

inline CropVote classify_image(const LinearClassifier& clf, std::span<const Descriptor> crops,
                               VoteMode mode = VoteMode::argmax) {
  if (crops.size() != kCropsPerImage)
    throw Error(ErrorCode::invalid_argument, "expected 10 crops, got " + std::to_string(crops.size()));
  std::vector<std::vector<double>> scores;
  scores.reserve(crops.size());
  for (const auto& d : crops) scores.push_back(predict_crop(clf, d));
  return vote(std::move(scores), mode);
}

// ---------------------------------------------------------------------------
// Split evaluation

struct ClassificationConfig {
  PoolingStrategy strategy = PoolingStrategy::avg;
  std::optional<WhiteningOptions> whitening = WhiteningOptions{};
  SgdHyperparams hyper;
  VoteMode vote_mode = VoteMode::argmax;
  std::size_t threads = 0;
};

struct SplitResult {
  int split = 0;
  double mean_class_accuracy = 0.0;
  std::map<std::string, double> class_accuracy;
  std::size_t test_images = 0;
};

struct ClassificationReport {
  std::vector<SplitResult> splits;
  double mean_class_accuracy = 0.0;  // mean over splits
  std::map<std::string, double> class_accuracy;  // each class averaged over the splits it appears in
};

/// Pooled (unwhitened) crop descriptors keyed by (split, image id), any order.
using CropTable = std::map<std::pair<int, std::string>, std::vector<Descriptor>>;

namespace detail {

inline const std::vector<Descriptor>& crops_of(const CropTable& table, int split, const std::string& id) {
  auto it = table.find({split, id});
  if (it == table.end() || it->second.size() != kCropsPerImage)
    throw Error(ErrorCode::bad_manifest, "image '" + id + "' needs exactly 10 crop descriptors");
  return it->second;
}

}  // namespace detail

struct TrainedSplit {
  LinearClassifier classifier;
  std::optional<WhiteningModel> whitener;
};

/// Fits the whitener on the split's training crops, then trains on every crop.
inline TrainedSplit train_split(const DatasetManifest& manifest, const CropTable& crops, int split,
                                const ClassificationConfig& config) {
  std::vector<Descriptor> samples;
  std::vector<std::string> labels;
  for (const auto* e : manifest.with_role(Role::train, split)) {
    for (const auto& d : detail::crops_of(crops, split, e->id)) {
      samples.push_back(d);
      labels.push_back(*e->label);
    }
  }
  if (samples.empty()) throw Error(ErrorCode::insufficient_data, "split " + std::to_string(split) + " has no training images");
  TrainedSplit out;
  if (config.whitening) {
    out.whitener = fit_whitener(samples, *config.whitening);
    samples = apply_whitener(*out.whitener, samples);
  }
  out.classifier = train(samples, labels, config.hyper, config.threads);
  return out;
}

inline SplitResult evaluate_split(const DatasetManifest& manifest, const CropTable& crops, int split,
                                  const TrainedSplit& model, VoteMode vote_mode, std::size_t threads = 0) {
  auto tests = manifest.with_role(Role::test, split);
  std::vector<int> correct(tests.size(), 0);
  parallel_for(tests.size(), threads, [&](std::size_t i) {
    const auto& raw = detail::crops_of(crops, split, tests[i]->id);
    std::vector<Descriptor> ready = model.whitener ? apply_whitener(*model.whitener, raw) : raw;
    auto v = classify_image(model.classifier, ready, vote_mode);
    correct[i] = model.classifier.classes()[v.decision] == *tests[i]->label ? 1 : 0;
  });
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // label -> (correct, total)
  for (std::size_t i = 0; i < tests.size(); ++i) {
    auto& t = tally[*tests[i]->label];
    t.first += static_cast<std::size_t>(correct[i]);
    ++t.second;
  }
  SplitResult r;
  r.split = split;
  r.test_images = tests.size();
  double sum = 0.0;
  for (const auto& [label, t] : tally) {
    double acc = static_cast<double>(t.first) / static_cast<double>(t.second);
    r.class_accuracy[label] = acc;
    sum += acc;
  }
  r.mean_class_accuracy = tally.empty() ? 0.0 : sum / static_cast<double>(tally.size());
  return r;
}

/// Per split: fit whitener on train, train, vote on test; metric is the mean
/// over classes of per-class accuracy, then the mean over splits.
inline ClassificationReport evaluate_splits(const DatasetManifest& manifest, const CropTable& crops,
                                            const ClassificationConfig& config) {
  if (manifest.mode != ManifestMode::classification)
    throw Error(ErrorCode::bad_manifest, "evaluate_splits needs a classification manifest");
  ClassificationReport report;
  std::map<std::string, std::pair<double, std::size_t>> per_class;
  for (int split : manifest.splits()) {
    if (manifest.with_role(Role::test, split).empty()) continue;
    auto model = train_split(manifest, crops, split, config);
    auto r = evaluate_split(manifest, crops, split, model, config.vote_mode, config.threads);
    for (const auto& [label, acc] : r.class_accuracy) {
      per_class[label].first += acc;
      ++per_class[label].second;
    }
    report.splits.push_back(std::move(r));
  }
  if (report.splits.empty()) throw Error(ErrorCode::insufficient_data, "no split has test images");
  double sum = 0.0;
  for (const auto& s : report.splits) sum += s.mean_class_accuracy;
  report.mean_class_accuracy = sum / static_cast<double>(report.splits.size());
  for (const auto& [label, p] : per_class) report.class_accuracy[label] = p.first / static_cast<double>(p.second);
  return report;
}

// ---------------------------------------------------------------------------
// PLC1 files
//
// "PLC1", u32 version, u32 C, u32 D, C strings (u32 length + bytes), f64
// weights[C*D] row-major, f64 biases[C], then u32 epochs, f64 lambda, f64 lr0,
// u64 seed, u8 pooling strategy, i32 split, u8 vote mode, u8 has_whitener,
// u32 length + embedded PWM1 bytes.

struct ClassifierBundle {
  LinearClassifier classifier;
  PoolingStrategy strategy = PoolingStrategy::avg;
  int split = 0;
  VoteMode vote_mode = VoteMode::argmax;
  std::optional<WhiteningModel> whitener;

  bool operator==(const ClassifierBundle&) const = default;
};

namespace plc {

inline constexpr char kMagic[4] = {'P', 'L', 'C', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline std::vector<std::uint8_t> encode(const ClassifierBundle& b) {
  const auto& clf = b.classifier;
  std::vector<std::uint8_t> out;
  io::put_bytes(out, std::string_view(kMagic, 4));
  io::put_le<std::uint32_t>(out, kVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clf.num_classes()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clf.dim()));
  for (const auto& label : clf.classes()) io::put_string(out, label);
  for (double w : clf.weights()) io::put_le<double>(out, w);
  for (double v : clf.biases()) io::put_le<double>(out, v);
  const auto& h = clf.hyperparams();
  io::put_le<std::uint32_t>(out, h.epochs);
  io::put_le<double>(out, h.lambda);
  io::put_le<double>(out, h.lr0);
  io::put_le<std::uint64_t>(out, h.seed);
  io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(b.strategy));
  io::put_le<std::int32_t>(out, b.split);
  io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(b.vote_mode));
  io::put_le<std::uint8_t>(out, b.whitener ? 1 : 0);
  if (b.whitener) {
    auto model = pwm::encode(*b.whitener);
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.size()));
    out.insert(out.end(), model.begin(), model.end());
  }
  return out;
}

inline ClassifierBundle decode(std::span<const std::uint8_t> data, const std::string& origin = {}) {
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) throw Error(ErrorCode::bad_magic, origin);
  io::Reader in(data);
  in.get_bytes(4);
  if (in.get_le<std::uint32_t>("version") != kVersion) throw Error(ErrorCode::bad_version, origin);
  auto num_classes = in.get_le<std::uint32_t>("C");
  auto dim = in.get_le<std::uint32_t>("D");
  if (static_cast<std::uint64_t>(num_classes) * dim > (std::uint64_t{1} << 28))
    throw Error(ErrorCode::dimension_overflow, origin);
  std::vector<std::string> classes;
  for (std::uint32_t c = 0; c < num_classes; ++c) classes.push_back(in.get_string("label"));
  if (!std::is_sorted(classes.begin(), classes.end())) throw Error(ErrorCode::bad_manifest, origin + ": labels unsorted");
  in.require((static_cast<std::uint64_t>(num_classes) * dim + num_classes) * sizeof(double), "weights");
  std::vector<double> weights(static_cast<std::size_t>(num_classes) * dim);
  for (auto& w : weights) w = in.get_le<double>();
  std::vector<double> biases(num_classes);
  for (auto& v : biases) v = in.get_le<double>();
  SgdHyperparams h;
  h.epochs = in.get_le<std::uint32_t>("epochs");
  h.lambda = in.get_le<double>("lambda");
  h.lr0 = in.get_le<double>("lr0");
  h.seed = in.get_le<std::uint64_t>("seed");
  ClassifierBundle b;
  b.classifier = LinearClassifier(std::move(classes), dim, std::move(weights), std::move(biases), h);
  auto strategy = in.get_le<std::uint8_t>("strategy");
  if (strategy > 2) throw Error(ErrorCode::bad_manifest, origin + ": unknown strategy");
  b.strategy = static_cast<PoolingStrategy>(strategy);
  b.split = in.get_le<std::int32_t>("split");
  auto mode = in.get_le<std::uint8_t>("vote mode");
  if (mode > 1) throw Error(ErrorCode::bad_manifest, origin + ": unknown vote mode");
  b.vote_mode = static_cast<VoteMode>(mode);
  if (in.get_le<std::uint8_t>("whitener flag") != 0) {
    auto size = in.get_le<std::uint32_t>("whitener size");
    b.whitener = pwm::decode(in.get_span(size, "whitener"), origin + " (embedded whitener)");
  }
  return b;
}

}  // namespace plc

inline void save_classifier(const ClassifierBundle& b, const std::filesystem::path& path) {
  io::write_file(path, plc::encode(b));
}

inline ClassifierBundle load_classifier(const std::filesystem::path& path) {
  return plc::decode(io::read_file(path), path.string());
}

}  // namespace poolrank
