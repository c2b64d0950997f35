#include "sqens/config.hpp"

#include <algorithm>
#include <string>

#include "sqens/errors.hpp"

namespace sqens {

namespace {

void require_object(const Json& j, std::string_view where) {
  if (!j.is_object()) fail(ErrorKind::config, std::string(where) + " must be an object");
}

}  // namespace

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  require_object(j, where);
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(ErrorKind::config, "unknown key '" + key + "' in " + std::string(where));
}

Json to_json(const SqParams& p) { return {{"alpha", p.alpha}, {"n_bins", p.n_bins}, {"tau", p.tau}}; }

Json to_json(const RangePolicy& r) {
  if (r.kind == RangePolicy::Kind::fixed) return {{"kind", "fixed"}, {"min", r.lo}, {"max", r.hi}};
  return {{"kind", "per_vector_minmax"}};
}

Json to_json(const ArchConfig& a) {
  return {{"input_dim", a.input_dim},
          {"extractor", a.extractor},
          {"classifier", a.classifier},
          {"n_classes", a.n_classes},
          {"activation", std::string(to_string(a.activation))}};
}

Json to_json(const SqConfig& s) {
  return {{"input_enabled", s.input_enabled},
          {"feature_enabled", s.feature_enabled},
          {"input", to_json(s.input)},
          {"feature", to_json(s.feature)},
          {"input_range", to_json(s.input_range)},
          {"feature_range", to_json(s.feature_range)},
          {"n_members", s.n_members},
          {"aggregation", std::string(to_string(s.aggregation))}};
}

Json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"mu", c.mu},
          {"n_bins", c.n_bins},
          {"n_members", c.n_members},
          {"tau", c.tau},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed}};
}

Json to_json(const History& h) {
  Json arr = Json::array();
  for (const auto& e : h)
    arr.push_back({{"epoch", e.epoch},
                   {"total", e.total},
                   {"ce", e.ce},
                   {"mi", e.mi},
                   {"spacing", e.spacing},
                   {"accuracy", e.accuracy}});
  return arr;
}

SqParams sq_params_from_json(const Json& j, SqParams base) {
  check_keys(j, {"alpha", "n_bins", "tau"}, "sq");
  base.alpha = json_get(j, "alpha", base.alpha, "sq");
  base.n_bins = json_get(j, "n_bins", base.n_bins, "sq");
  base.tau = json_get(j, "tau", base.tau, "sq");
  return base;
}

RangePolicy range_from_json(const Json& j) {
  check_keys(j, {"kind", "min", "max"}, "range");
  const auto kind = json_get<std::string>(j, "kind", "", "range");
  if (kind == "fixed") return RangePolicy::fixed(json_get(j, "min", 0.0, "range"), json_get(j, "max", 1.0, "range"));
  if (kind == "per_vector_minmax") return RangePolicy::per_vector_minmax();
  fail(ErrorKind::config, "range.kind must be 'fixed' or 'per_vector_minmax'");
}

ArchConfig arch_from_json(const Json& j, ArchConfig a) {
  check_keys(j, {"input_dim", "extractor", "classifier", "n_classes", "activation"}, "arch");
  a.input_dim = json_get(j, "input_dim", a.input_dim, "arch");
  a.extractor = json_get(j, "extractor", a.extractor, "arch");
  a.classifier = json_get(j, "classifier", a.classifier, "arch");
  a.n_classes = json_get(j, "n_classes", a.n_classes, "arch");
  if (j.contains("activation")) a.activation = activation_from_string(json_get<std::string>(j, "activation", "", "arch"));
  return a;
}

SqConfig sq_config_from_json(const Json& j, SqConfig s) {
  check_keys(j,
             {"input_enabled", "feature_enabled", "input", "feature", "input_range", "feature_range", "n_members",
              "aggregation"},
             "sq");
  s.input_enabled = json_get(j, "input_enabled", s.input_enabled, "sq");
  s.feature_enabled = json_get(j, "feature_enabled", s.feature_enabled, "sq");
  if (j.contains("input")) s.input = sq_params_from_json(j.at("input"), s.input);
  if (j.contains("feature")) s.feature = sq_params_from_json(j.at("feature"), s.feature);
  if (j.contains("input_range")) s.input_range = range_from_json(j.at("input_range"));
  if (j.contains("feature_range")) s.feature_range = range_from_json(j.at("feature_range"));
  s.n_members = json_get(j, "n_members", s.n_members, "sq");
  if (j.contains("aggregation"))
    s.aggregation = aggregation_from_string(json_get<std::string>(j, "aggregation", "", "sq"));
  return s;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  check_keys(j,
             {"alpha", "beta", "mu", "n_bins", "n_members", "tau", "learning_rate", "momentum", "optimizer",
              "batch_size", "epochs", "seed"},
             "train");
  c.alpha = json_get(j, "alpha", c.alpha, "train");
  c.beta = json_get(j, "beta", c.beta, "train");
  c.mu = json_get(j, "mu", c.mu, "train");
  c.n_bins = json_get(j, "n_bins", c.n_bins, "train");
  c.n_members = json_get(j, "n_members", c.n_members, "train");
  c.tau = json_get(j, "tau", c.tau, "train");
  c.learning_rate = json_get(j, "learning_rate", c.learning_rate, "train");
  c.momentum = json_get(j, "momentum", c.momentum, "train");
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(json_get<std::string>(j, "optimizer", "", "train"));
  c.batch_size = json_get(j, "batch_size", c.batch_size, "train");
  c.epochs = json_get(j, "epochs", c.epochs, "train");
  c.seed = json_get(j, "seed", c.seed, "train");
  return c;
}

History history_from_json(const Json& j) {
  if (!j.is_array()) fail(ErrorKind::config, "history must be an array");
  History h;
  for (const auto& e : j) {
    check_keys(e, {"epoch", "total", "ce", "mi", "spacing", "accuracy"}, "history");
    h.push_back({json_get(e, "epoch", 0, "history"), json_get(e, "total", 0.0, "history"), json_get(e, "ce", 0.0, "history"),
                 json_get(e, "mi", 0.0, "history"), json_get(e, "spacing", 0.0, "history"),
                 json_get(e, "accuracy", 0.0, "history")});
  }
  return h;
}

}  // namespace sqens
