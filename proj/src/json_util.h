#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "pare/error.h"

namespace pare::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view k : known) ok |= (k == key);
    if (!ok) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out, std::string_view section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

}  // namespace pare::detail
