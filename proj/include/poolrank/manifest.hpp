#pragma once

// Dataset manifests: JSON documents binding image ids to tensor files, views,
// relevance groups (retrieval) or class labels (classification).
//
//   { "mode": "retrieval" | "classification",
//     "entries": [ { "id": "...", "role": "query|reference|train|test",
//                    "views": { "rot0": "relative/path.fms", ... },
//                    "group": "...", "label": "...", "split": 0 } ] }

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolrank/binary_io.hpp"
#include "poolrank/error.hpp"
#include "poolrank/view_tag.hpp"

namespace poolrank {

enum class ManifestMode { retrieval, classification };
enum class Role { query, reference, train, test };

inline const char* to_string(ManifestMode m) { return m == ManifestMode::retrieval ? "retrieval" : "classification"; }

inline const char* to_string(Role r) {
  switch (r) {
    case Role::query: return "query";
    case Role::reference: return "reference";
    case Role::train: return "train";
    case Role::test: return "test";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  for (Role r : {Role::query, Role::reference, Role::train, Role::test}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

struct ManifestEntry {
  std::string id;
  Role role = Role::reference;
  std::map<ViewTag, std::filesystem::path> views;  // absolute, normalized
  std::optional<std::string> group;
  std::optional<std::string> label;
  int split = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  ManifestMode mode = ManifestMode::retrieval;
  std::vector<ManifestEntry> entries;

  bool operator==(const DatasetManifest&) const = default;

  std::vector<const ManifestEntry*> with_role(Role role, std::optional<int> split = std::nullopt) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
      if (e.role == role && (!split || e.split == *split)) out.push_back(&e);
    }
    return out;
  }

  /// Distinct relevance groups that have at least one query.
  std::set<std::string> query_groups() const {
    std::set<std::string> groups;
    for (const auto& e : entries) {
      if (e.role == Role::query && e.group) groups.insert(*e.group);
    }
    return groups;
  }

  std::set<int> splits() const {
    std::set<int> s;
    for (const auto& e : entries) s.insert(e.split);
    return s;
  }

  std::vector<std::string> class_labels() const {
    std::set<std::string> labels;
    for (const auto& e : entries) {
      if (e.label) labels.insert(*e.label);
    }
    return {labels.begin(), labels.end()};
  }
};

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw Error(ErrorCode::bad_manifest, where + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

inline std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key,
                                                  const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorCode::bad_manifest, where + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace detail

/// Parses and validates a manifest document. Relative view paths are resolved
/// against base_dir; every path must exist.
inline DatasetManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  namespace fs = std::filesystem;
  if (!doc.is_object()) throw Error(ErrorCode::bad_manifest, "top level must be an object");
  DatasetManifest m;
  auto mode = detail::require_string(doc, "mode", "manifest");
  if (mode == "retrieval") {
    m.mode = ManifestMode::retrieval;
  } else if (mode == "classification") {
    m.mode = ManifestMode::classification;
  } else {
    throw Error(ErrorCode::bad_manifest, "unknown mode '" + mode + "'");
  }
  auto entries = doc.find("entries");
  if (entries == doc.end() || !entries->is_array())
    throw Error(ErrorCode::bad_manifest, "missing 'entries' array");

  std::set<std::pair<int, std::string>> seen;
  for (std::size_t i = 0; i < entries->size(); ++i) {
    const auto& obj = (*entries)[i];
    std::string where = "entry " + std::to_string(i);
    if (!obj.is_object()) throw Error(ErrorCode::bad_manifest, where + " is not an object");
    ManifestEntry e;
    e.id = detail::require_string(obj, "id", where);
    where += " ('" + e.id + "')";
    auto role = parse_role(detail::require_string(obj, "role", where));
    if (!role) throw Error(ErrorCode::bad_manifest, where + ": unknown role");
    bool retrieval_role = *role == Role::query || *role == Role::reference;
    if (retrieval_role != (m.mode == ManifestMode::retrieval))
      throw Error(ErrorCode::bad_manifest, where + ": role '" + to_string(*role) + "' not valid in " +
                                               to_string(m.mode) + " mode");
    e.role = *role;
    e.group = detail::optional_string(obj, "group", where);
    e.label = detail::optional_string(obj, "label", where);
    if (auto s = obj.find("split"); s != obj.end()) {
      if (!s->is_number_integer()) throw Error(ErrorCode::bad_manifest, where + ": 'split' must be an integer");
      e.split = s->get<int>();
    }
    auto views = obj.find("views");
    if (views == obj.end() || !views->is_object() || views->empty())
      throw Error(ErrorCode::bad_manifest, where + ": 'views' must be a non-empty object");
    for (const auto& [tag, rel] : views->items()) {
      auto view = ViewTag::parse(tag);
      if (!view) throw Error(ErrorCode::bad_manifest, where + ": unknown view '" + tag + "'");
      if (!rel.is_string()) throw Error(ErrorCode::bad_manifest, where + ": view path must be a string");
      fs::path p = rel.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      p = fs::absolute(p).lexically_normal();
      if (!fs::is_regular_file(p)) throw Error(ErrorCode::dangling_path, where + ": " + p.string());
      e.views.emplace(*view, std::move(p));
    }
    if (!seen.emplace(e.split, e.id).second) throw Error(ErrorCode::duplicate_id, e.id);
    if (m.mode == ManifestMode::classification && !e.label) throw Error(ErrorCode::missing_label, where);
    m.entries.push_back(std::move(e));
  }

  if (m.mode == ManifestMode::retrieval) {
    std::set<std::string> reference_groups;
    for (const auto& e : m.entries) {
      if (e.role == Role::reference && e.group) reference_groups.insert(*e.group);
    }
    for (const auto& e : m.entries) {
      if (e.role != Role::query) continue;
      if (!e.group) throw Error(ErrorCode::missing_relevant, "query '" + e.id + "' has no group");
      if (!reference_groups.contains(*e.group))
        throw Error(ErrorCode::missing_relevant, "query '" + e.id + "' group '" + *e.group + "'");
    }
  } else {
    for (int split : m.splits()) {
      std::set<std::string> train_ids;
      for (const auto* e : m.with_role(Role::train, split)) train_ids.insert(e->id);
      for (const auto* e : m.with_role(Role::test, split)) {
        if (train_ids.contains(e->id))
          throw Error(ErrorCode::bad_manifest, "image '" + e->id + "' is both train and test in split " +
                                                   std::to_string(split));
      }
    }
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::bad_manifest, path.string() + ": " + e.what());
  }
  return parse_manifest(doc, std::filesystem::absolute(path).parent_path());
}

}  // namespace poolrank
