// Command line front end: train, attack, detect, aip, quantize-demo.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sqens/detector.hpp"
#include "sqens/errors.hpp"
#include "sqens/experiment.hpp"
#include "sqens/quant.hpp"
#include "sqens/report.hpp"
#include "sqens/training.hpp"

using namespace sqens;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) { g_stop.store(true); }

enum Exit { ok = 0, unexpected = 1, usage = 2, data = 3, numeric = 4, library = 5, interrupted = 130 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
      return usage;
    case ErrorKind::io:
    case ErrorKind::wrong_magic:
    case ErrorKind::truncated:
    case ErrorKind::count_mismatch:
    case ErrorKind::label_out_of_range:
    case ErrorKind::corrupt_file:
    case ErrorKind::version_mismatch:
    case ErrorKind::insufficient_data:
      return data;
    case ErrorKind::non_finite:
    case ErrorKind::degenerate_grid:
      return numeric;
    default:
      return library;
  }
}

struct Options {
  std::string config;
  std::optional<double> alpha, beta, mu;
  std::optional<int> bins, members;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, model;
  int threads = 1;
};

class Log {
 public:
  Log(const fs::path& path, bool quiet) : file_(path), quiet_(quiet), start_(std::chrono::steady_clock::now()) {
    if (!file_) fail(ErrorKind::io, "cannot write " + path.string());
  }
  void operator()(const std::string& msg) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "[%8.2fs] ", t);
    file_ << stamp << msg << std::endl;
    if (!quiet_) std::cerr << stamp << msg << std::endl;
  }
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::ofstream file_;
  bool quiet_;
  std::chrono::steady_clock::time_point start_;
};

// Flags are applied to the JSON document before parsing, so they go through
// the same validation as the file.
ExperimentConfig resolve_config(const Options& o) {
  std::ifstream f(o.config);
  if (!f) fail(ErrorKind::io, "cannot open config " + o.config);
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, o.config + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
  auto section = [&](const char* key) -> Json& {
    if (!j.contains(key)) j[key] = Json::object();
    return j[key];
  };
  if (o.alpha) section("train")["alpha"] = *o.alpha;
  if (o.beta) section("train")["beta"] = *o.beta;
  if (o.mu) section("train")["mu"] = *o.mu;
  if (o.bins) section("train")["n_bins"] = *o.bins;
  if (o.members) {
    section("train")["n_members"] = *o.members;
    section("eval")["members"] = *o.members;
  }
  if (o.seed) {
    j["seed"] = *o.seed;
    for (const char* key : {"train", "eval"})
      if (j.contains(key) && j[key].is_object()) j[key].erase("seed");
    if (j.contains("attacks") && j["attacks"].is_array())
      for (auto& a : j["attacks"])
        if (a.is_object()) a.erase("seed");
  }
  ExperimentConfig c = experiment_from_json(j, fs::path(o.config).parent_path());
  if (o.out) c.output = *o.out;
  return c;
}

struct Context {
  ExperimentConfig cfg;
  std::vector<std::string> warnings;
  std::unique_ptr<Log> log;
};

Context prepare(const Options& o, const std::string& command, bool quiet) {
  Context ctx;
  ctx.cfg = resolve_config(o);
  ctx.warnings = validate(ctx.cfg);
  fs::create_directories(ctx.cfg.output);
  ctx.log = std::make_unique<Log>(ctx.cfg.output / (command + ".log"), quiet);
  std::ofstream(ctx.cfg.output / "config.resolved.json") << to_json(ctx.cfg).dump(2) << '\n';
  (*ctx.log)(command + ": output in " + ctx.cfg.output.string());
  for (const auto& w : ctx.warnings) (*ctx.log)("warning: " + w);
  return ctx;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

fs::path model_path(const Options& o, const ExperimentConfig& c) {
  return o.model ? fs::path(*o.model) : c.output / "model.sqar";
}

// Loads the checkpoint; explicit quantizer flags override what it stores.
SQEnsembleModel<float> load_model(const Options& o, const ExperimentConfig& c, Log& log) {
  const fs::path p = model_path(o, c);
  auto ck = load_checkpoint<float>(p);
  for (SqParams* q : {&ck.model.sq.input, &ck.model.sq.feature}) {
    if (o.alpha) q->alpha = *o.alpha;
    if (o.bins) q->n_bins = *o.bins;
  }
  validate(ck.model.sq);
  log("loaded " + p.string() + " (" + std::to_string(ck.history.size()) + " epochs of history)");
  return ck.model;
}

int members_for(const ExperimentConfig& c, const SQEnsembleModel<float>& m) {
  return c.eval.members > 0 ? c.eval.members : m.sq.n_members;
}

std::string describe(const AttackConfig& a) {
  std::ostringstream s;
  s << to_string(a.kind) << " eps=" << a.epsilon << " eot=" << a.eot_samples;
  if (a.kind == AttackKind::pgd) s << " steps=" << a.steps << " step=" << a.effective_step();
  return s.str();
}

int cmd_train(const Options& o, bool quiet) {
  Context ctx = prepare(o, "train", quiet);
  auto& cfg = ctx.cfg;
  auto& log = *ctx.log;
  const Splits d = load_datasets(cfg.dataset, cfg.seed);
  log("train " + std::to_string(d.train.size()) + " images, test " + std::to_string(d.test.size()));

  SQEnsembleModel<float> m;
  if (!cfg.init_checkpoint.empty()) {
    m = load_checkpoint<float>(cfg.init_checkpoint).model;
    m.sq.input_enabled = cfg.sq.input_enabled;
    m.sq.feature_enabled = cfg.sq.feature_enabled;
    m.sq.input_range = cfg.sq.input_range;
    m.sq.feature_range = cfg.sq.feature_range;
    m.sq.aggregation = cfg.sq.aggregation;
    log("fine-tuning from " + cfg.init_checkpoint.string());
  } else {
    m = build_model<float>(cfg.arch, cfg.sq, cfg.seed);
  }
  if (m.arch.input_dim != d.train.dim()) fail(ErrorKind::config, "model input width does not match the dataset");

  std::ofstream hist(cfg.output / "history.csv");
  hist << "epoch,total,ce,mi,spacing,accuracy\n";
  TrainHooks hooks;
  hooks.stop = &g_stop;
  hooks.on_epoch = [&](const EpochRecord& r) {
    hist << r.epoch << ',' << format_double(r.total) << ',' << format_double(r.ce) << ',' << format_double(r.mi)
         << ',' << format_double(r.spacing) << ',' << format_double(r.accuracy) << std::endl;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %d  loss %.4f  ce %.4f  mi %.4f  spacing %.4f  acc %.4f", r.epoch,
                  r.total, r.ce, r.mi, r.spacing, r.accuracy);
    log(line);
  };
  History h = train(m, d.train, cfg.train, hooks);
  const bool stopped = g_stop.load();
  save_checkpoint(Checkpoint<float>{m, cfg.train, h}, cfg.output / "model.sqar");
  log("saved " + (cfg.output / "model.sqar").string());

  Json summary = {{"command", "train"}, {"config", to_json(cfg)}, {"history", to_json(h)},
                  {"interrupted", stopped}, {"warnings", ctx.warnings}};
  if (!stopped) {
    const auto r = evaluate(m, d.test, members_for(cfg, m), cfg.eval.seed, o.threads);
    summary["test_accuracy"] = r.accuracy;
    summary["test_mean_mi"] = r.mean_mi();
    log("test accuracy " + format_double(r.accuracy) + ", mean MI " + format_double(r.mean_mi()));
  }
  summary["seconds"] = log.seconds();
  write_json(cfg.output / "train_summary.json", summary);
  return stopped ? interrupted : ok;
}

// Shared by attack and aip: clean evaluation, then one row per attack,
// flushed as it completes.
struct SweepResult {
  AttackReport report;
  bool stopped = false;
};

SweepResult sweep(const Options& o, Context& ctx, const SQEnsembleModel<float>& m, const Dataset& test,
                  const std::function<void(const AttackReport&)>& on_row) {
  auto& log = *ctx.log;
  SweepResult s;
  const int members = members_for(ctx.cfg, m);
  const auto clean = evaluate(m, test, members, ctx.cfg.eval.seed, o.threads);
  s.report.clean_accuracy = clean.accuracy;
  s.report.clean_mi = clean.mean_mi();
  s.report.clean_mi_per_image = clean.mi;
  log("clean accuracy " + format_double(clean.accuracy) + ", mean MI " + format_double(clean.mean_mi()) + " (" +
      std::to_string(members) + " members, " + std::to_string(test.size()) + " images)");
  for (const auto& a : ctx.cfg.attacks) {
    if (g_stop.load()) {
      s.stopped = true;
      log("interrupted; partial results kept");
      break;
    }
    const Dataset adv = a.epsilon == 0 ? test : attack_dataset(m, test, a, o.threads);
    const auto e = evaluate(m, adv, members, ctx.cfg.eval.seed, o.threads);
    s.report.rows.push_back({a, e.accuracy, e.mean_mi(), e.mi});
    log(describe(a) + ": accuracy " + format_double(e.accuracy) + ", mean MI " + format_double(e.mean_mi()));
    on_row(s.report);
  }
  return s;
}

int cmd_attack(const Options& o, bool quiet) {
  Context ctx = prepare(o, "attack", quiet);
  const auto m = load_model(o, ctx.cfg, *ctx.log);
  const Dataset test = load_datasets(ctx.cfg.dataset, ctx.cfg.seed).test;
  std::ofstream csv(ctx.cfg.output / "attack.csv");
  csv << "attack,epsilon,steps,step_size,eot_samples,accuracy,mean_mi,clean_accuracy,clean_mi\n";
  const auto s = sweep(o, ctx, m, test, [&](const AttackReport& r) {
    const auto& row = r.rows.back();
    const auto& a = row.config;
    csv << to_string(a.kind) << ',' << format_double(a.epsilon) << ',' << a.steps << ','
        << format_double(a.effective_step()) << ',' << a.eot_samples << ',' << format_double(row.accuracy) << ','
        << format_double(row.mean_mi) << ',' << format_double(r.clean_accuracy) << ',' << format_double(r.clean_mi)
        << std::endl;
  });
  Json rows = Json::array();
  for (const auto& r : s.report.rows)
    rows.push_back({{"attack", to_json(r.config)}, {"accuracy", r.accuracy}, {"mean_mi", r.mean_mi}});
  write_json(ctx.cfg.output / "attack_summary.json",
             {{"command", "attack"},
              {"model", model_path(o, ctx.cfg).string()},
              {"clean_accuracy", s.report.clean_accuracy},
              {"clean_mi", s.report.clean_mi},
              {"rows", rows},
              {"interrupted", s.stopped},
              {"seconds", ctx.log->seconds()}});
  return s.stopped ? interrupted : ok;
}

int cmd_aip(const Options& o, bool quiet) {
  Context ctx = prepare(o, "aip", quiet);
  const auto m = load_model(o, ctx.cfg, *ctx.log);
  const Dataset test = load_datasets(ctx.cfg.dataset, ctx.cfg.seed).test;
  std::ofstream csv(ctx.cfg.output / "aip.csv");
  write_aip_header(csv);
  csv.flush();
  const auto s = sweep(o, ctx, m, test, [&](const AttackReport& r) {
    write_aip_row(csv, aip_rows(r).back());
    csv.flush();
  });
  const auto rows = aip_rows(s.report);
  std::ofstream(ctx.cfg.output / "aip.svg") << aip_svg(rows, "adversarial information plane");
  Json jr = Json::array();
  for (const auto& r : rows)
    jr.push_back({{"attack", std::string(to_string(r.attack))},
                  {"strength_index", r.strength_index},
                  {"epsilon", r.epsilon},
                  {"accuracy", r.accuracy},
                  {"mean_mi", r.mean_mi}});
  write_json(ctx.cfg.output / "aip_summary.json", {{"command", "aip"},
                                                   {"model", model_path(o, ctx.cfg).string()},
                                                   {"clean_accuracy", s.report.clean_accuracy},
                                                   {"clean_mi", s.report.clean_mi},
                                                   {"rows", jr},
                                                   {"interrupted", s.stopped},
                                                   {"seconds", ctx.log->seconds()}});
  return s.stopped ? interrupted : ok;
}

int cmd_detect(const Options& o, bool quiet) {
  Context ctx = prepare(o, "detect", quiet);
  auto& log = *ctx.log;
  const auto m = load_model(o, ctx.cfg, log);
  const Dataset test = load_datasets(ctx.cfg.dataset, ctx.cfg.seed).test;
  std::ofstream csv(ctx.cfg.output / "detect.csv");
  csv << "attack,epsilon,auc,offset,tpr_at_offset,fpr_at_offset\n";
  Json rows = Json::array();
  DetectorCalibration cal;
  const auto s = sweep(o, ctx, m, test, [&](const AttackReport& r) {
    if (r.rows.size() == 1) cal = calibrate(r.clean_mi_per_image, members_for(ctx.cfg, m));
    const auto& row = r.rows.back();
    const std::size_t i = r.rows.size();
    const auto& det = ctx.cfg.detect;
    const RocCurve curve = roc(r.clean_mi_per_image, row.mi, det.two_sided, cal.mean);
    const double offset = det.offset_sds * cal.stddev;
    double tp = 0, fp = 0;
    for (double v : row.mi) tp += detect(v, cal, offset, det.two_sided).flag;
    for (double v : r.clean_mi_per_image) fp += detect(v, cal, offset, det.two_sided).flag;
    tp /= double(row.mi.size());
    fp /= double(r.clean_mi_per_image.size());
    const std::string name = "roc_" + std::to_string(i) + "_" + std::string(to_string(row.config.kind)) + ".csv";
    std::ofstream rc(ctx.cfg.output / name);
    write_roc_csv(rc, curve);
    csv << to_string(row.config.kind) << ',' << format_double(row.config.epsilon) << ',' << format_double(curve.auc)
        << ',' << format_double(offset) << ',' << format_double(tp) << ',' << format_double(fp) << std::endl;
    log("  AUC " + format_double(curve.auc) + ", detected " + format_double(tp) + " at offset " +
        format_double(offset) + " (clean false positives " + format_double(fp) + ")");
    rows.push_back({{"attack", to_json(row.config)}, {"auc", curve.auc}, {"roc_csv", name},
                    {"tpr_at_offset", tp}, {"fpr_at_offset", fp}});
  });
  if (s.report.rows.empty()) cal = calibrate(s.report.clean_mi_per_image, members_for(ctx.cfg, m));
  write_json(ctx.cfg.output / "detect_summary.json",
             {{"command", "detect"},
              {"model", model_path(o, ctx.cfg).string()},
              {"calibration", {{"mean", cal.mean}, {"stddev", cal.stddev}, {"n", cal.n}, {"n_members", cal.n_members}}},
              {"two_sided", ctx.cfg.detect.two_sided},
              {"rows", rows},
              {"interrupted", s.stopped},
              {"seconds", log.seconds()}});
  return s.stopped ? interrupted : ok;
}

int cmd_quantize_demo(double value, int bins, double alpha, double lo, double hi) {
  const BinGrid grid = make_bin_grid(lo, hi, bins);
  (void)validate(SqParams{alpha, bins, 0.5});
  const QuantDistribution d = sq_pmf(value, grid, alpha);
  std::cout << "# value " << format_double(value) << ", " << bins << " bins on [" << format_double(lo) << ", "
            << format_double(hi) << "], alpha " << format_double(alpha) << "\n";
  std::cout << "bin,center,probability\n";
  for (int i = 0; i < d.size(); ++i)
    std::cout << i << ',' << format_double(d.bin(i)) << ',' << format_double(d.probs[i]) << '\n';
  std::cout << "# mean " << format_double(pmf_mean(d)) << '\n';
  return ok;
}

void add_common(CLI::App* sub, Options& o, bool model, bool& quiet) {
  sub->add_flag("-q,--quiet", quiet, "log to file only");
  sub->add_option("--config", o.config, "experiment JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--alpha", o.alpha, "SQ sparsity radius (both quantizers)");
  sub->add_option("--beta", o.beta, "MI regularization weight");
  sub->add_option("--mu", o.mu, "bin spacing regularization weight");
  sub->add_option("--bins", o.bins, "bins per quantizer");
  sub->add_option("--members", o.members, "ensemble members (training and evaluation)");
  sub->add_option("--seed", o.seed, "master seed; replaces every seed in the config");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--threads", o.threads, "worker threads for evaluation and attacks; results do not depend on it")->check(CLI::PositiveNumber);
  if (model) sub->add_option("--model", o.model, "checkpoint (default: <out>/model.sqar)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-quantization ensembles: training, attacks and MI-based detection"};
  app.require_subcommand(1);
  Options o;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "train a model and save <out>/model.sqar");
  add_common(train_cmd, o, false, quiet);
  auto* attack_cmd = app.add_subcommand("attack", "evaluate accuracy under the configured attacks");
  add_common(attack_cmd, o, true, quiet);
  auto* detect_cmd = app.add_subcommand("detect", "MI threshold detection and ROC curves");
  add_common(detect_cmd, o, true, quiet);
  auto* aip_cmd = app.add_subcommand("aip", "adversarial information plane CSV and SVG");
  add_common(aip_cmd, o, true, quiet);

  double value = 0.5, alpha = 4.0, lo = 0.0, hi = 1.0;
  int bins = 16;
  auto* demo = app.add_subcommand("quantize-demo", "print the SQ probability table of one value");
  demo->add_option("--value", value, "value to quantize")->required();
  demo->add_option("--bins", bins, "number of bins");
  demo->add_option("--alpha", alpha, "sparsity radius in bin widths");
  demo->add_option("--min", lo, "lowest bin");
  demo->add_option("--max", hi, "highest bin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  }

  std::signal(SIGINT, on_sigint);
  try {
    if (*train_cmd) return cmd_train(o, quiet);
    if (*attack_cmd) return cmd_attack(o, quiet);
    if (*detect_cmd) return cmd_detect(o, quiet);
    if (*aip_cmd) return cmd_aip(o, quiet);
    if (*demo) return cmd_quantize_demo(value, bins, alpha, lo, hi);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return unexpected;
  }
  return usage;
}
