#include "shapkit/attribution.hpp"

#include <cmath>

namespace shapkit {

nlohmann::json Attribution::to_json() const {
  nlohmann::json j = {{"method", method}, {"class", class_index}, {"values", values}};
  if (std::isnan(efficiency_gap)) {
    j["efficiency_gap"] = nullptr;
  } else {
    j["efficiency_gap"] = efficiency_gap;
  }
  return j;
}

Attribution Attribution::from_json(const nlohmann::json& j) {
  Attribution a;
  a.method = j.at("method").get<std::string>();
  a.class_index = j.at("class").get<std::size_t>();
  a.values = j.at("values").get<std::vector<double>>();
  a.efficiency_gap = j.at("efficiency_gap").is_null() ? std::nan("")
                                                      : j.at("efficiency_gap").get<double>();
  return a;
}

}  // namespace shapkit
