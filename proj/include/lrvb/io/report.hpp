#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <json.hpp>

#include "lrvb/diagnostics.hpp"

namespace lrvb::io {

using Json = nlohmann::ordered_json;

/// Non-finite values become null.
inline Json number(std::optional<double> x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

inline Json to_json(const FitReport& r) {
  Json j = Json::object();
  for (const auto& [k, v] : r.fields()) j[k] = number(v);
  return j;
}

struct BuildInfo {
  std::string tool = "vbtool";
  std::string revision = "unknown";
  std::string compiler;
};

inline Json to_json(const BuildInfo& b) {
  return Json{{"tool", b.tool}, {"revision", b.revision}, {"compiler", b.compiler}};
}

/// Fixed key order and round-trip float formatting, so equal inputs give equal bytes.
inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace lrvb::io
