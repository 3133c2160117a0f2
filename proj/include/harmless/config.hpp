#pragma once

// Session configuration: batch sizes, thresholds, strategy switches.
//
// Config files are flat `key = value` lines; `#` starts a comment. Keys are the
// field names of SessionConfig.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "harmless/error.hpp"
#include "harmless/features.hpp"
#include "harmless/text.hpp"

namespace harmless {

enum class SamplingMode { random, crash };
enum class CorrectionMode { none, two_person, cormack17, dispute, dispute3 };
// semi: |L_R| >= T_rec * R_E with R_E from the SEMI estimator.
// known_total: the true positive count stands in for R_E (simulation only).
// none: never stop by rule; run until the pool is exhausted.
enum class StopRule { semi, known_total, none };

inline std::string to_string(SamplingMode m) { return m == SamplingMode::random ? "random" : "crash"; }

inline std::string to_string(CorrectionMode m) {
  switch (m) {
    case CorrectionMode::none: return "none";
    case CorrectionMode::two_person: return "two_person";
    case CorrectionMode::cormack17: return "cormack17";
    case CorrectionMode::dispute: return "dispute";
    case CorrectionMode::dispute3: return "dispute3";
  }
  return "?";
}

inline std::string to_string(StopRule r) {
  switch (r) {
    case StopRule::semi: return "semi";
    case StopRule::known_total: return "known_total";
    case StopRule::none: return "none";
  }
  return "?";
}

inline SamplingMode parse_sampling_mode(std::string_view s) {
  if (s == "random") return SamplingMode::random;
  if (s == "crash") return SamplingMode::crash;
  throw ConfigError("sampling_mode", "expected random|crash, got '" + std::string(s) + "'");
}

inline CorrectionMode parse_correction_mode(std::string_view s) {
  if (s == "none") return CorrectionMode::none;
  if (s == "two_person") return CorrectionMode::two_person;
  if (s == "cormack17") return CorrectionMode::cormack17;
  if (s == "dispute") return CorrectionMode::dispute;
  if (s == "dispute3") return CorrectionMode::dispute3;
  throw ConfigError("correction_mode",
                    "expected none|two_person|cormack17|dispute|dispute3, got '" + std::string(s) + "'");
}

inline StopRule parse_stop_rule(std::string_view s) {
  if (s == "semi") return StopRule::semi;
  if (s == "known_total") return StopRule::known_total;
  if (s == "none") return StopRule::none;
  throw ConfigError("stop_rule", "expected semi|known_total|none, got '" + std::string(s) + "'");
}

struct SessionConfig {
  std::size_t n1 = 100;        // batch size
  double alpha = 0.5;          // double-check fraction, N2 = floor(alpha * N1)
  std::size_t n3 = 10;         // certainty switch / undersampling threshold
  double target_recall = 0.95;
  FeatureMode feature_mode = FeatureMode::text;
  SamplingMode sampling_mode = SamplingMode::random;
  CorrectionMode correction_mode = CorrectionMode::none;
  double rho = 6.0;            // knee slope-ratio threshold
  std::uint64_t seed = 0;

  StopRule stop_rule = StopRule::semi;
  bool estimate = true;        // run SEMI every round even if it does not drive stopping
  double svm_c = 1.0;
  double presumptive_cap = 0.1;  // |P| <= cap * |E|
  int estimator_max_iterations = 50;
  bool estimator_reset = true;
  std::size_t knee_min_reviews = 150;
  std::size_t stop_min_positives = 10;  // |L_R| required before a stop rule may fire

  std::size_t n2() const noexcept {
    return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n1) + 1e-9));
  }

  // Field-level diagnostics; empty when valid.
  std::vector<ConfigError> problems() const {
    std::vector<ConfigError> out;
    if (!(target_recall > 0.0 && target_recall <= 1.0)) out.emplace_back("target_recall", "must lie in (0, 1]");
    if (n1 < 1) out.emplace_back("n1", "must be >= 1");
    if (n3 < 1) out.emplace_back("n3", "must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) out.emplace_back("alpha", "must lie in [0, 1]");
    if (!(rho > 0.0)) out.emplace_back("rho", "must be > 0");
    if (!(svm_c > 0.0)) out.emplace_back("svm_c", "must be > 0");
    if (!(presumptive_cap >= 0.0 && presumptive_cap <= 1.0))
      out.emplace_back("presumptive_cap", "must lie in [0, 1]");
    if (estimator_max_iterations < 1) out.emplace_back("estimator_max_iterations", "must be >= 1");
    return out;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw p.front();
  }

  bool operator==(const SessionConfig&) const = default;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "not a number: '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key, "not a non-negative integer: '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key, "out of range: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  auto l = text::to_lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError(key, "not a boolean: '" + v + "'");
}

}  // namespace detail

// Applies one key/value pair. Unknown keys are rejected.
inline void set_field(SessionConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "n1") c.n1 = parse_uint(key, value);
  else if (key == "alpha") c.alpha = parse_double(key, value);
  else if (key == "n3") c.n3 = parse_uint(key, value);
  else if (key == "target_recall" || key == "t_rec") c.target_recall = parse_double(key, value);
  else if (key == "feature_mode") {
    try {
      c.feature_mode = parse_feature_mode(value);
    } catch (const ArgumentError& e) {
      throw ConfigError(key, e.what());
    }
  } else if (key == "sampling_mode") c.sampling_mode = parse_sampling_mode(value);
  else if (key == "correction_mode") c.correction_mode = parse_correction_mode(value);
  else if (key == "rho") c.rho = parse_double(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "stop_rule") c.stop_rule = parse_stop_rule(value);
  else if (key == "estimate") c.estimate = parse_bool(key, value);
  else if (key == "svm_c") c.svm_c = parse_double(key, value);
  else if (key == "presumptive_cap") c.presumptive_cap = parse_double(key, value);
  else if (key == "estimator_max_iterations")
    c.estimator_max_iterations = static_cast<int>(parse_uint(key, value));
  else if (key == "estimator_reset") c.estimator_reset = parse_bool(key, value);
  else if (key == "knee_min_reviews") c.knee_min_reviews = parse_uint(key, value);
  else if (key == "stop_min_positives") c.stop_min_positives = parse_uint(key, value);
  else throw ConfigError(key, "unknown configuration key");
}

inline SessionConfig parse_config_text(const std::string& body, SessionConfig base = {}) {
  std::istringstream in(body);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto t = text::trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected key = value");
    set_field(base, text::trim(t.substr(0, eq)), text::trim(t.substr(eq + 1)));
  }
  return base;
}

inline SessionConfig load_config_file(const std::string& path, SessionConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), base);
}

inline nlohmann::json to_json(const SessionConfig& c) {
  return {{"n1", c.n1},
          {"alpha", c.alpha},
          {"n3", c.n3},
          {"target_recall", c.target_recall},
          {"feature_mode", to_string(c.feature_mode)},
          {"sampling_mode", to_string(c.sampling_mode)},
          {"correction_mode", to_string(c.correction_mode)},
          {"rho", c.rho},
          {"seed", c.seed},
          {"stop_rule", to_string(c.stop_rule)},
          {"estimate", c.estimate},
          {"svm_c", c.svm_c},
          {"presumptive_cap", c.presumptive_cap},
          {"estimator_max_iterations", c.estimator_max_iterations},
          {"estimator_reset", c.estimator_reset},
          {"knee_min_reviews", c.knee_min_reviews},
          {"stop_min_positives", c.stop_min_positives}};
}

// Missing keys keep the values of `base`. Values may be JSON numbers, booleans
// or strings.
inline SessionConfig config_from_json(const nlohmann::json& j, SessionConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string v;
    if (value.is_string()) v = value.get<std::string>();
    else if (value.is_boolean()) v = value.get<bool>() ? "true" : "false";
    else if (value.is_number_unsigned()) v = std::to_string(value.get<std::uint64_t>());
    else if (value.is_number_integer()) {
      auto i = value.get<std::int64_t>();
      if (i < 0 && (key == "n1" || key == "n3" || key == "seed" || key == "knee_min_reviews" || key == "stop_min_positives" ||
                    key == "estimator_max_iterations"))
        throw ConfigError(key, "must be non-negative");
      v = std::to_string(i);
    } else if (value.is_number_float()) {
      std::ostringstream ss;
      ss.precision(17);
      ss << value.get<double>();
      v = ss.str();
    } else {
      throw ConfigError(key, "unsupported value type");
    }
    set_field(base, key, v);
  }
  return base;
}

}  // namespace harmless
