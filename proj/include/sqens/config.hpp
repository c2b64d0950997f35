#pragma once

// JSON forms of the configuration types. Readers are strict: unknown keys and
// wrongly typed values raise config errors, missing keys keep defaults.

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "sqens/errors.hpp"
#include "sqens/ensemble.hpp"
#include "sqens/training.hpp"

namespace sqens {

using Json = nlohmann::json;

/// j[key] converted to T, or fallback when absent; wrong types raise config errors.
template <typename T>
T json_get(const Json& j, const char* key, T fallback, std::string_view where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorKind::config, std::string(where) + "." + key + " has the wrong type");
  }
}

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

Json to_json(const SqParams& p);
Json to_json(const RangePolicy& r);
Json to_json(const ArchConfig& a);
Json to_json(const SqConfig& s);
Json to_json(const TrainConfig& c);
Json to_json(const History& h);

SqParams sq_params_from_json(const Json& j, SqParams base = {});
RangePolicy range_from_json(const Json& j);
ArchConfig arch_from_json(const Json& j, ArchConfig base = {});
SqConfig sq_config_from_json(const Json& j, SqConfig base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
History history_from_json(const Json& j);

}  // namespace sqens
