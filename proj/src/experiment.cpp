#include "sqens/experiment.hpp"

#include <fstream>

#include "sqens/errors.hpp"

namespace sqens {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

DatasetSpec dataset_from_json(const Json& j, const std::filesystem::path& base) {
  check_keys(j,
             {"kind", "train_images", "train_labels", "test_images", "test_labels", "train_limit", "test_limit",
              "n_per_class", "test_per_class", "classes", "dim", "separation"},
             "dataset");
  DatasetSpec d;
  const auto kind = json_get<std::string>(j, "kind", "", "dataset");
  if (kind == "mnist") {
    d.kind = DatasetSpec::Kind::mnist;
    for (const char* k : {"n_per_class", "test_per_class", "classes", "dim", "separation"})
      if (j.contains(k)) fail(ErrorKind::config, std::string("dataset.") + k + " only applies to blobs");
    auto path = [&](const char* key) {
      if (!j.contains(key)) fail(ErrorKind::config, std::string("dataset.") + key + " is required for mnist");
      return resolve(base, json_get<std::string>(j, key, "", "dataset"));
    };
    d.train_images = path("train_images");
    d.train_labels = path("train_labels");
    d.test_images = path("test_images");
    d.test_labels = path("test_labels");
  } else if (kind == "blobs") {
    d.kind = DatasetSpec::Kind::blobs;
    for (const char* k : {"train_images", "train_labels", "test_images", "test_labels"})
      if (j.contains(k)) fail(ErrorKind::config, std::string("dataset.") + k + " only applies to mnist");
    d.n_per_class = json_get(j, "n_per_class", d.n_per_class, "dataset");
    d.test_per_class = json_get(j, "test_per_class", d.test_per_class, "dataset");
    d.classes = json_get(j, "classes", d.classes, "dataset");
    d.dim = json_get(j, "dim", d.dim, "dataset");
    d.separation = json_get(j, "separation", d.separation, "dataset");
  } else {
    fail(ErrorKind::config, "dataset.kind must be 'mnist' or 'blobs'");
  }
  d.train_limit = json_get(j, "train_limit", d.train_limit, "dataset");
  d.test_limit = json_get(j, "test_limit", d.test_limit, "dataset");
  return d;
}

Json to_json(const DatasetSpec& d) {
  Json j;
  if (d.kind == DatasetSpec::Kind::mnist) {
    j = {{"kind", "mnist"},
         {"train_images", d.train_images.string()},
         {"train_labels", d.train_labels.string()},
         {"test_images", d.test_images.string()},
         {"test_labels", d.test_labels.string()}};
  } else {
    j = {{"kind", "blobs"},
         {"n_per_class", d.n_per_class},
         {"test_per_class", d.test_per_class},
         {"classes", d.classes},
         {"dim", d.dim},
         {"separation", d.separation}};
  }
  j["train_limit"] = d.train_limit;
  j["test_limit"] = d.test_limit;
  return j;
}

}  // namespace

Json to_json(const AttackConfig& c) {
  return {{"kind", std::string(to_string(c.kind))}, {"epsilon", c.epsilon},         {"steps", c.steps},
          {"step_size", c.step_size},               {"eot_samples", c.eot_samples}, {"random_init", c.random_init},
          {"seed", c.seed}};
}

AttackConfig attack_from_json(const Json& j, AttackConfig c) {
  check_keys(j, {"kind", "epsilon", "steps", "step_size", "eot_samples", "random_init", "seed"}, "attack");
  if (j.contains("kind")) c.kind = attack_from_string(json_get<std::string>(j, "kind", "", "attack"));
  c.epsilon = json_get(j, "epsilon", c.epsilon, "attack");
  c.steps = json_get(j, "steps", c.steps, "attack");
  c.step_size = json_get(j, "step_size", c.step_size, "attack");
  c.eot_samples = json_get(j, "eot_samples", c.eot_samples, "attack");
  c.random_init = json_get(j, "random_init", c.random_init, "attack");
  c.seed = json_get(j, "seed", c.seed, "attack");
  return c;
}

ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base_dir) {
  check_keys(j, {"dataset", "arch", "sq", "train", "attacks", "eval", "detect", "output", "init_checkpoint", "seed"},
             "config");
  ExperimentConfig c;
  c.seed = json_get(j, "seed", c.seed, "config");
  c.train.seed = c.seed;
  c.eval.seed = c.seed;
  if (!j.contains("dataset")) fail(ErrorKind::config, "config.dataset is required");
  c.dataset = dataset_from_json(j.at("dataset"), base_dir);
  if (c.dataset.kind == DatasetSpec::Kind::mnist) {
    c.arch.input_dim = 784;
    c.arch.n_classes = 10;
  } else {
    c.arch.input_dim = c.dataset.dim;
    c.arch.n_classes = c.dataset.classes;
  }
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"), c.arch);
  if (j.contains("sq")) c.sq = sq_config_from_json(j.at("sq"), c.sq);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  if (j.contains("attacks")) {
    if (!j.at("attacks").is_array()) fail(ErrorKind::config, "config.attacks must be a list");
    AttackConfig base;
    base.seed = c.seed;
    for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_from_json(a, base));
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    check_keys(e, {"members", "seed"}, "eval");
    c.eval.members = json_get(e, "members", c.eval.members, "eval");
    c.eval.seed = json_get(e, "seed", c.eval.seed, "eval");
  }
  if (j.contains("detect")) {
    const Json& d = j.at("detect");
    check_keys(d, {"offset_sds", "two_sided"}, "detect");
    c.detect.offset_sds = json_get(d, "offset_sds", c.detect.offset_sds, "detect");
    c.detect.two_sided = json_get(d, "two_sided", c.detect.two_sided, "detect");
  }
  c.output = resolve(base_dir, json_get<std::string>(j, "output", c.output.string(), "config"));
  if (j.contains("init_checkpoint"))
    c.init_checkpoint = resolve(base_dir, json_get<std::string>(j, "init_checkpoint", "", "config"));
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::io, "cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j, path.parent_path());
}

std::vector<std::string> validate(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.train_limit < 0 || d.test_limit < 0) fail(ErrorKind::config, "dataset limits must be non-negative");
  if (d.kind == DatasetSpec::Kind::blobs) {
    if (d.n_per_class < 1 || d.test_per_class < 1) fail(ErrorKind::config, "blob counts must be positive");
    if (d.classes < 2 || d.classes > d.dim) fail(ErrorKind::config, "blobs need 2 <= classes <= dim");
    if (d.separation < 0) fail(ErrorKind::config, "blob separation must be non-negative");
    if (c.arch.input_dim != d.dim) fail(ErrorKind::config, "arch.input_dim must equal dataset.dim");
    if (c.arch.n_classes != d.classes) fail(ErrorKind::config, "arch.n_classes must equal dataset.classes");
  } else {
    if (c.arch.input_dim != 784) fail(ErrorKind::config, "MNIST models need arch.input_dim = 784");
    if (c.arch.n_classes != 10) fail(ErrorKind::config, "MNIST models need arch.n_classes = 10");
  }
  validate(c.arch);
  validate(c.sq);
  std::vector<std::string> warnings = validate(c.train);
  for (const auto& a : c.attacks) validate(a);
  if (c.eval.members < 0) fail(ErrorKind::config, "eval.members must be non-negative");
  if (!c.sq.input_enabled && !c.sq.feature_enabled && c.train.n_members > 1)
    warnings.push_back("quantizers are off, so members are identical; consider n_members = 1");
  return warnings;
}

Json to_json(const ExperimentConfig& c) {
  Json attacks = Json::array();
  for (const auto& a : c.attacks) attacks.push_back(to_json(a));
  Json j = {{"dataset", to_json(c.dataset)},
            {"arch", to_json(c.arch)},
            {"sq", to_json(c.sq)},
            {"train", to_json(c.train)},
            {"attacks", attacks},
            {"eval", {{"members", c.eval.members}, {"seed", c.eval.seed}}},
            {"detect", {{"offset_sds", c.detect.offset_sds}, {"two_sided", c.detect.two_sided}}},
            {"output", c.output.string()},
            {"seed", c.seed}};
  if (!c.init_checkpoint.empty()) j["init_checkpoint"] = c.init_checkpoint.string();
  return j;
}

Splits load_datasets(const DatasetSpec& spec, std::uint64_t seed) {
  Splits s;
  if (spec.kind == DatasetSpec::Kind::mnist) {
    s.train = load_mnist(spec.train_images, spec.train_labels);
    s.test = load_mnist(spec.test_images, spec.test_labels);
  } else {
    s.train = synth_blobs(spec.n_per_class, spec.classes, spec.dim, spec.separation, seed);
    s.test = synth_blobs(spec.test_per_class, spec.classes, spec.dim, spec.separation, seed ^ 0x7e57ULL);
  }
  if (spec.train_limit > 0 && spec.train_limit < s.train.size()) s.train = s.train.head(spec.train_limit);
  if (spec.test_limit > 0 && spec.test_limit < s.test.size()) s.test = s.test.head(spec.test_limit);
  return s;
}

}  // namespace sqens
