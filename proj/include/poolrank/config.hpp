#pragma once

// Run configuration. Files use a small TOML subset:
//
//   # comment
//   [section]
//   key = "string" | number | true | false
//
// Keys are addressed as "section.key". Defaults reproduce the headline
// configuration: avg pooling, PCA-whitening, cosine distance, four reference
// rotations, SGD with 100 epochs / lambda 1e-5 / lr 0.2.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "poolrank/classify.hpp"
#include "poolrank/error.hpp"
#include "poolrank/pooling.hpp"
#include "poolrank/retrieval.hpp"
#include "poolrank/whitening.hpp"

namespace poolrank {

enum class WhiteningMode { none, plain, pca };

inline const char* to_string(WhiteningMode m) {
  switch (m) {
    case WhiteningMode::none: return "none";
    case WhiteningMode::plain: return "plain";
    case WhiteningMode::pca: return "pca";
  }
  return "?";
}

inline std::optional<WhiteningMode> parse_whitening_mode(std::string_view s) {
  for (auto m : {WhiteningMode::none, WhiteningMode::plain, WhiteningMode::pca}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "poolrank_run";
  PoolingStrategy strategy = PoolingStrategy::avg;
  WhiteningMode whitening = WhiteningMode::pca;
  double epsilon = 1e-6;
  bool prenormalize = false;
  DistanceMetric metric = DistanceMetric::cosine;
  bool all_rotations = true;
  bool include_self = false;
  SgdHyperparams hyper;
  VoteMode vote_mode = VoteMode::argmax;
  std::uint64_t seed = 42;
  std::size_t threads = 0;

  std::optional<WhiteningOptions> whitening_options() const {
    if (whitening == WhiteningMode::none) return std::nullopt;
    return WhiteningOptions{whitening == WhiteningMode::pca, epsilon, prenormalize};
  }
};

// The classifier is the only randomized stage; its seed is the run seed plus
// this offset.
inline constexpr std::uint64_t kClassifierSeedOffset = 0;

using ConfigValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

}  // namespace detail

inline ConfigValues parse_config_text(std::string_view text) {
  ConfigValues values;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::invalid_argument, where + ": unterminated section");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::invalid_argument, where + ": expected key = value");
    auto key = detail::trim(std::string_view(line).substr(0, eq));
    auto value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::invalid_argument, where + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    values[section.empty() ? key : section + "." + key] = value;
  }
  return values;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::invalid_argument, key + ": expected true or false, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (...) {
  }
  throw Error(ErrorCode::invalid_argument, key + ": expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    }
  } catch (...) {
  }
  throw Error(ErrorCode::invalid_argument, key + ": expected a non-negative integer, got '" + v + "'");
}

template <typename T, typename Parser>
T parse_enum(const std::string& key, const std::string& v, Parser parser) {
  auto parsed = parser(v);
  if (!parsed) throw Error(ErrorCode::invalid_argument, key + ": unknown value '" + v + "'");
  return *parsed;
}

}  // namespace detail

/// Applies one "section.key" setting. Unknown keys and malformed values are
/// usage errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "run.manifest") c.manifest = v;
  else if (key == "run.out") c.out_dir = v;
  else if (key == "run.seed") c.seed = parse_uint(key, v);
  else if (key == "run.threads") c.threads = parse_uint(key, v);
  else if (key == "pooling.strategy") c.strategy = parse_enum<PoolingStrategy>(key, v, parse_strategy);
  else if (key == "whitening.mode") c.whitening = parse_enum<WhiteningMode>(key, v, parse_whitening_mode);
  else if (key == "whitening.epsilon") c.epsilon = parse_double(key, v);
  else if (key == "whitening.prenormalize") c.prenormalize = parse_bool(key, v);
  else if (key == "retrieval.metric") c.metric = parse_enum<DistanceMetric>(key, v, parse_metric);
  else if (key == "retrieval.rotations") {
    if (v != "all" && v != "rot0") throw Error(ErrorCode::invalid_argument, key + ": expected all or rot0");
    c.all_rotations = v == "all";
  } else if (key == "retrieval.include_self") c.include_self = parse_bool(key, v);
  else if (key == "classify.epochs") c.hyper.epochs = static_cast<std::uint32_t>(parse_uint(key, v));
  else if (key == "classify.lambda") c.hyper.lambda = parse_double(key, v);
  else if (key == "classify.lr") c.hyper.lr0 = parse_double(key, v);
  else if (key == "classify.vote_mode") c.vote_mode = parse_enum<VoteMode>(key, v, parse_vote_mode);
  else throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
  if (!(c.epsilon > 0.0)) throw Error(ErrorCode::invalid_argument, "whitening.epsilon must be positive");
}

inline void apply_config(RunConfig& c, const ConfigValues& values) {
  for (const auto& [key, value] : values) apply_setting(c, key, value);
}

inline std::string to_config_text(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "[run]\n"
      << "manifest = \"" << c.manifest.string() << "\"\n"
      << "out = \"" << c.out_dir.string() << "\"\n"
      << "seed = " << c.seed << "\n"
      << "threads = " << c.threads << "\n"
      << "\n[pooling]\nstrategy = \"" << to_string(c.strategy) << "\"\n"
      << "\n[whitening]\nmode = \"" << to_string(c.whitening) << "\"\n"
      << "epsilon = " << c.epsilon << "\n"
      << "prenormalize = " << (c.prenormalize ? "true" : "false") << "\n"
      << "\n[retrieval]\nmetric = \"" << to_string(c.metric) << "\"\n"
      << "rotations = \"" << (c.all_rotations ? "all" : "rot0") << "\"\n"
      << "include_self = " << (c.include_self ? "true" : "false") << "\n"
      << "\n[classify]\nepochs = " << c.hyper.epochs << "\n"
      << "lambda = " << c.hyper.lambda << "\n"
      << "lr = " << c.hyper.lr0 << "\n"
      << "vote_mode = \"" << to_string(c.vote_mode) << "\"\n";
  return out.str();
}

}  // namespace poolrank
