#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace shapkit {

// Per-patch scores for one class.
struct Attribution {
  std::vector<double> values;
  std::size_t class_index = 0;
  std::string method;
  // |sum(values) - (v(1) - v(0))|; NaN when not computed.
  double efficiency_gap = 0.0;

  // {"method", "class", "values", "efficiency_gap"}
  nlohmann::json to_json() const;
  static Attribution from_json(const nlohmann::json& j);
};

}  // namespace shapkit
