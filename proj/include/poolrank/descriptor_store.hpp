#pragma once

// A directory of pooled descriptors: one FMS1 file (K = D, H = W = 1) per
// (image, view), plus descriptors.json carrying identity and ground truth:
//
//   { "mode": "...", "strategy": "avg", "normalization": "none",
//     "entries": [ { "id", "view", "role", "split", "group"?, "label"?, "file" } ] }

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolrank/error.hpp"
#include "poolrank/manifest.hpp"
#include "poolrank/pooling.hpp"
#include "poolrank/tensor_store.hpp"

namespace poolrank {

struct DescriptorRecord {
  Descriptor descriptor;
  Role role = Role::reference;
  std::optional<std::string> group;
  std::optional<std::string> label;
  int split = 0;

  bool operator==(const DescriptorRecord&) const = default;
};

struct DescriptorSet {
  ManifestMode mode = ManifestMode::retrieval;
  PoolingStrategy strategy = PoolingStrategy::avg;
  std::vector<DescriptorRecord> records;

  bool operator==(const DescriptorSet&) const = default;

  std::vector<Descriptor> descriptors(Role role) const {
    std::vector<Descriptor> out;
    for (const auto& r : records) {
      if (r.role == role) out.push_back(r.descriptor);
    }
    return out;
  }
};

inline constexpr const char* kDescriptorIndexName = "descriptors.json";

inline FeatureMapStack descriptor_as_stack(const Descriptor& d) {
  return FeatureMapStack(static_cast<std::uint32_t>(d.dim()), 1, 1, d.values, d.image_id, d.view);
}

inline void write_descriptor_set(const DescriptorSet& set, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json doc;
  doc["mode"] = to_string(set.mode);
  doc["strategy"] = to_string(set.strategy);
  doc["normalization"] = set.records.empty() ? "none" : set.records.front().descriptor.provenance.normalization;
  auto& entries = doc["entries"] = nlohmann::json::array();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    char name[32];
    std::snprintf(name, sizeof(name), "%07zu.fms", i);
    write_stack(descriptor_as_stack(r.descriptor), dir / name);
    nlohmann::json e{{"id", r.descriptor.image_id},
                     {"view", r.descriptor.view.str()},
                     {"role", to_string(r.role)},
                     {"split", r.split},
                     {"file", name}};
    if (r.group) e["group"] = *r.group;
    if (r.label) e["label"] = *r.label;
    entries.push_back(std::move(e));
  }
  io::write_text(dir / kDescriptorIndexName, doc.dump(1) + "\n");
}

inline DescriptorSet read_descriptor_set(const std::filesystem::path& dir) {
  auto bytes = io::read_file(dir / kDescriptorIndexName);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_manifest, (dir / kDescriptorIndexName).string() + ": " + e.what());
  }
  DescriptorSet set;
  try {
    auto mode = doc.at("mode").get<std::string>();
    set.mode = mode == "classification" ? ManifestMode::classification : ManifestMode::retrieval;
    auto strategy = parse_strategy(doc.at("strategy").get<std::string>());
    if (!strategy) throw Error(ErrorCode::bad_manifest, "unknown strategy in " + dir.string());
    set.strategy = *strategy;
    auto normalization = doc.value("normalization", std::string("none"));
    for (const auto& e : doc.at("entries")) {
      DescriptorRecord r;
      auto view = ViewTag::parse(e.at("view").get<std::string>());
      auto role = parse_role(e.at("role").get<std::string>());
      if (!view || !role) throw Error(ErrorCode::bad_manifest, "bad view/role in " + dir.string());
      auto stack = read_stack(dir / e.at("file").get<std::string>());
      r.descriptor.image_id = e.at("id").get<std::string>();
      r.descriptor.view = *view;
      r.descriptor.values.assign(stack.values().begin(), stack.values().end());
      r.descriptor.provenance = {set.strategy, normalization};
      r.role = *role;
      r.split = e.value("split", 0);
      if (e.contains("group")) r.group = e.at("group").get<std::string>();
      if (e.contains("label")) r.label = e.at("label").get<std::string>();
      set.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_manifest, (dir / kDescriptorIndexName).string() + ": " + e.what());
  }
  return set;
}

}  // namespace poolrank
