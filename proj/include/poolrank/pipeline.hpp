#pragma once

// Stage functions behind the CLI subcommands, and the end-to-end runner.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolrank/classify.hpp"
#include "poolrank/config.hpp"
#include "poolrank/descriptor_store.hpp"
#include "poolrank/manifest.hpp"
#include "poolrank/parallel.hpp"
#include "poolrank/pooling.hpp"
#include "poolrank/retrieval.hpp"
#include "poolrank/tensor_store.hpp"
#include "poolrank/whitening.hpp"

namespace poolrank {

inline std::string format_real(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// validate

struct ValidationSummary {
  std::size_t entries = 0;
  std::size_t files = 0;
  std::map<std::string, std::size_t> role_counts;
  std::size_t query_groups = 0;
  std::size_t stacks_with_negatives = 0;
  std::set<std::string> shapes;  // "KxHxW"
};

/// Loads the manifest and reads every referenced stack.
inline ValidationSummary validate_manifest(const DatasetManifest& manifest, std::size_t threads = 0) {
  ValidationSummary s;
  s.entries = manifest.entries.size();
  std::vector<std::filesystem::path> paths;
  for (const auto& e : manifest.entries) {
    ++s.role_counts[to_string(e.role)];
    for (const auto& [view, path] : e.views) paths.push_back(path);
  }
  s.query_groups = manifest.query_groups().size();
  std::vector<StackReport> reports(paths.size());
  parallel_for(paths.size(), threads, [&](std::size_t i) { reports[i] = validate_stack(read_stack(paths[i])); });
  s.files = paths.size();
  for (const auto& r : reports) {
    if (r.negative_count > 0) ++s.stacks_with_negatives;
    s.shapes.insert(std::to_string(r.maps) + "x" + std::to_string(r.height) + "x" + std::to_string(r.width));
  }
  return s;
}

inline std::string format_validation(const ValidationSummary& s) {
  std::ostringstream out;
  out << "entries\t" << s.entries << "\n";
  for (const auto& [role, n] : s.role_counts) out << "role." << role << "\t" << n << "\n";
  out << "query_groups\t" << s.query_groups << "\n";
  out << "files\t" << s.files << "\n";
  out << "stacks_with_negatives\t" << s.stacks_with_negatives << "\n";
  for (const auto& shape : s.shapes) out << "shape\t" << shape << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// pool

/// Pools every (entry, view) of the manifest. Each distinct file is read and
/// pooled once; records follow manifest order, views in tag order.
inline DescriptorSet pool_manifest(const DatasetManifest& manifest, PoolingStrategy strategy,
                                   std::size_t threads = 0) {
  std::vector<std::filesystem::path> paths;
  std::map<std::filesystem::path, std::size_t> slot;
  for (const auto& e : manifest.entries) {
    for (const auto& [view, path] : e.views) {
      if (slot.emplace(path, paths.size()).second) paths.push_back(path);
    }
  }
  std::vector<Descriptor> pooled(paths.size());
  std::vector<std::uint32_t> maps(paths.size());
  parallel_for(paths.size(), threads, [&](std::size_t i) {
    auto stack = read_stack(paths[i]);
    maps[i] = stack.maps();
    pooled[i] = pool(stack, strategy);
  });
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i] != maps[0])
      throw Error(ErrorCode::dimension_mismatch, paths[i].string() + " has K=" + std::to_string(maps[i]) +
                                                     ", expected " + std::to_string(maps[0]));
  }
  DescriptorSet set;
  set.mode = manifest.mode;
  set.strategy = strategy;
  for (const auto& e : manifest.entries) {
    for (const auto& [view, path] : e.views) {
      DescriptorRecord r;
      r.descriptor = pooled[slot.at(path)];
      r.descriptor.image_id = e.id;
      r.descriptor.view = view;
      r.role = e.role;
      r.group = e.group;
      r.label = e.label;
      r.split = e.split;
      set.records.push_back(std::move(r));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// fit-whitener

/// Fits on the reference (retrieval) or training (classification) records,
/// every view being one corpus point.
inline WhiteningModel fit_on_set(const DescriptorSet& set, const WhiteningOptions& options,
                                 std::optional<int> split = std::nullopt) {
  Role role = set.mode == ManifestMode::retrieval ? Role::reference : Role::train;
  std::vector<Descriptor> corpus;
  for (const auto& r : set.records) {
    if (r.role == role && (!split || r.split == *split)) corpus.push_back(r.descriptor);
  }
  return fit_whitener(corpus, options);
}

// ---------------------------------------------------------------------------
// index / query / eval-map

inline std::vector<Descriptor> normalized(const DescriptorSet& set, const WhiteningModel* model) {
  std::vector<Descriptor> out;
  out.reserve(set.records.size());
  for (const auto& r : set.records) out.push_back(model ? apply_whitener(*model, r.descriptor) : r.descriptor);
  return out;
}

inline RetrievalIndex index_set(const DescriptorSet& set, const DatasetManifest& manifest,
                                const WhiteningModel* model, const IndexOptions& options = {}) {
  if (set.mode != ManifestMode::retrieval || manifest.mode != ManifestMode::retrieval)
    throw Error(ErrorCode::bad_manifest, "indexing needs retrieval descriptors and manifest");
  auto ds = normalized(set, model);
  return build_index(ds, manifest, options);
}

inline void check_model_matches(const RetrievalIndex& index, const WhiteningModel* model) {
  std::string expected = model ? model->identity() : std::string("none");
  if (index.provenance().normalization != expected)
    throw Error(ErrorCode::bad_manifest, "index was built with normalization '" + index.provenance().normalization +
                                             "' but queries use '" + expected + "'");
}

/// rot0 descriptors of the query records, whitened like the index.
inline std::vector<LabeledQuery> prepare_queries(const RetrievalIndex& index, const DescriptorSet& set,
                                                 const WhiteningModel* model) {
  check_model_matches(index, model);
  std::vector<LabeledQuery> out;
  for (const auto& r : set.records) {
    if (r.role != Role::query || r.descriptor.view != kRot0) continue;
    if (r.descriptor.provenance.strategy != index.provenance().strategy)
      throw Error(ErrorCode::bad_manifest, "query pooling strategy differs from index");
    if (!r.group) throw Error(ErrorCode::missing_relevant, "query '" + r.descriptor.image_id + "' has no group");
    out.push_back({model ? apply_whitener(*model, r.descriptor) : r.descriptor, *r.group});
  }
  return out;
}

inline std::string format_rankings(std::span<const Ranking> rankings, std::size_t topk) {
  std::ostringstream out;
  out << "query_id\trank\timage_id\tdistance\n";
  for (const auto& r : rankings) {
    for (std::size_t i = 0; i < r.items.size() && i < topk; ++i)
      out << r.query_id << "\t" << (i + 1) << "\t" << r.items[i].image_id << "\t"
          << format_real(r.items[i].distance, 9) << "\n";
  }
  return out.str();
}

inline std::string format_ap(const EvalResult& result) {
  std::ostringstream out;
  out << "query_id\tap\n";
  for (const auto& [id, ap] : result.per_query_ap) out << id << "\t" << format_real(ap, 9) << "\n";
  out << "mAP\t" << format_real(result.map, 9) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// train / eval-classify

inline CropTable crop_table(const DescriptorSet& set) {
  CropTable table;
  for (const auto& r : set.records) {
    if (r.descriptor.view.is_crop()) table[{r.split, r.descriptor.image_id}].push_back(r.descriptor);
  }
  return table;
}

inline ClassifierBundle train_bundle(const DatasetManifest& manifest, const DescriptorSet& set, int split,
                                     const ClassificationConfig& config) {
  auto trained = train_split(manifest, crop_table(set), split, config);
  return {std::move(trained.classifier), set.strategy, split, config.vote_mode, std::move(trained.whitener)};
}

inline SplitResult evaluate_bundle(const DatasetManifest& manifest, const DescriptorSet& set,
                                   const ClassifierBundle& bundle, std::size_t threads = 0) {
  if (set.strategy != bundle.strategy) throw Error(ErrorCode::bad_manifest, "pooling strategy differs from classifier");
  TrainedSplit model{bundle.classifier, bundle.whitener};
  return evaluate_split(manifest, crop_table(set), bundle.split, model, bundle.vote_mode, threads);
}

inline std::string format_split(const SplitResult& r) {
  std::ostringstream out;
  out << "split\tclass\taccuracy\n";
  for (const auto& [label, acc] : r.class_accuracy) out << r.split << "\t" << label << "\t" << format_real(acc, 6) << "\n";
  out << "mean_class_accuracy\t" << format_real(r.mean_class_accuracy, 6) << "\n";
  return out.str();
}

inline std::string format_report(const ClassificationReport& report) {
  std::ostringstream out;
  out << "split\tclass\taccuracy\n";
  for (const auto& s : report.splits) {
    for (const auto& [label, acc] : s.class_accuracy) out << s.split << "\t" << label << "\t" << format_real(acc, 6) << "\n";
  }
  for (const auto& s : report.splits)
    out << "split_mean\t" << s.split << "\t" << format_real(s.mean_class_accuracy, 6) << "\n";
  out << "mean_class_accuracy\t" << format_real(report.mean_class_accuracy, 6) << "\n";
  return out.str();
}

inline ClassificationConfig classification_config(const RunConfig& c) {
  ClassificationConfig cc;
  cc.strategy = c.strategy;
  cc.whitening = c.whitening_options();
  cc.hyper = c.hyper;
  cc.hyper.seed = c.seed + kClassifierSeedOffset;
  cc.vote_mode = c.vote_mode;
  cc.threads = c.threads;
  return cc;
}

// ---------------------------------------------------------------------------
// run

struct RunReport {
  ManifestMode mode = ManifestMode::retrieval;
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::map<std::string, double> metrics;
  std::filesystem::path metrics_path;
  std::filesystem::path report_path;
};

/// validate -> pool -> fit-whitener -> index -> eval-map   (retrieval)
/// validate -> pool -> per-split whiten/train/eval          (classification)
/// Every intermediate is written under config.out_dir. metrics.tsv depends
/// only on config and data; report.json adds timings.
inline RunReport run_pipeline(const RunConfig& config) {
  namespace fs = std::filesystem;
  RunReport report;
  using clock = std::chrono::steady_clock;
  auto stage = [&](const char* name, auto&& fn) {
    auto start = clock::now();
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.code(), std::string("stage ") + name + ": " + e.what());
    }
    report.stage_seconds.emplace_back(name, std::chrono::duration<double>(clock::now() - start).count());
  };

  if (config.manifest.empty()) throw Error(ErrorCode::invalid_argument, "no manifest configured");
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + config.out_dir.string());
  io::write_text(config.out_dir / "config.toml", to_config_text(config));

  DatasetManifest manifest;
  stage("validate", [&] {
    manifest = load_manifest(config.manifest);
    io::write_text(config.out_dir / "validation.tsv", format_validation(validate_manifest(manifest, config.threads)));
  });
  report.mode = manifest.mode;
  DescriptorSet set;
  stage("pool", [&] {
    set = pool_manifest(manifest, config.strategy, config.threads);
    write_descriptor_set(set, config.out_dir / "descriptors");
  });

  std::ostringstream metrics;
  if (manifest.mode == ManifestMode::retrieval) {
    std::optional<WhiteningModel> model;
    stage("fit-whitener", [&] {
      if (auto options = config.whitening_options()) {
        model = fit_on_set(set, *options);
        save_model(*model, config.out_dir / "whitener.pwm");
      }
    });
    RetrievalIndex index;
    stage("index", [&] {
      index = index_set(set, manifest, model ? &*model : nullptr, {config.all_rotations, config.include_self});
      save_index(index, config.out_dir / "index.pri");
    });
    EvalResult result;
    stage("eval-map", [&] {
      auto queries = prepare_queries(index, set, model ? &*model : nullptr);
      result = evaluate_map(index, queries, {config.metric, !config.include_self}, config.threads);
      io::write_text(config.out_dir / "ap.tsv", format_ap(result));
    });
    report.metrics["mAP"] = result.map;
    report.metrics["queries"] = static_cast<double>(result.per_query_ap.size());
    metrics << "metric\tvalue\nmAP\t" << format_real(result.map, 9) << "\nqueries\t" << result.per_query_ap.size()
            << "\n";
  } else {
    ClassificationReport result;
    stage("train-eval", [&] {
      result = evaluate_splits(manifest, crop_table(set), classification_config(config));
      io::write_text(config.out_dir / "classification.tsv", format_report(result));
    });
    report.metrics["mean_class_accuracy"] = result.mean_class_accuracy;
    report.metrics["splits"] = static_cast<double>(result.splits.size());
    metrics << "metric\tvalue\nmean_class_accuracy\t" << format_real(result.mean_class_accuracy, 9) << "\nsplits\t"
            << result.splits.size() << "\n";
  }
  report.metrics_path = config.out_dir / "metrics.tsv";
  io::write_text(report.metrics_path, metrics.str());

  nlohmann::json doc;
  doc["mode"] = to_string(manifest.mode);
  doc["config"] = to_config_text(config);
  auto& timings = doc["stage_seconds"] = nlohmann::json::array();
  for (const auto& [name, secs] : report.stage_seconds) timings.push_back({{"stage", name}, {"seconds", secs}});
  doc["metrics"] = report.metrics;
  report.report_path = config.out_dir / "report.json";
  io::write_text(report.report_path, doc.dump(2) + "\n");
  return report;
}

}  // namespace poolrank
