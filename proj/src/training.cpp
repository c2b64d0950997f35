#include "sqens/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "sqens/config.hpp"
#include "sqens/errors.hpp"

namespace sqens {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  fail(ErrorKind::config, "unknown optimizer '" + std::string(s) + "'");
}

std::vector<std::string> validate(const TrainConfig& cfg) {
  if (cfg.beta < 0) fail(ErrorKind::config, "beta must be non-negative");
  if (cfg.mu < 0) fail(ErrorKind::config, "mu must be non-negative");
  if (cfg.n_members < 1) fail(ErrorKind::config, "n_members must be at least 1");
  if (cfg.batch_size < 1) fail(ErrorKind::config, "batch_size must be at least 1");
  if (cfg.epochs < 0) fail(ErrorKind::config, "epochs must be non-negative");
  if (!(cfg.learning_rate > 0)) fail(ErrorKind::config, "learning_rate must be positive");
  if (cfg.momentum < 0 || cfg.momentum >= 1) fail(ErrorKind::config, "momentum must be in [0, 1)");
  return validate(SqParams{cfg.alpha, cfg.n_bins, cfg.tau});
}

namespace {

template <typename Scalar>
std::vector<Tensor<Scalar>*> parameters(SQEnsembleModel<Scalar>& m) {
  std::vector<Tensor<Scalar>*> out;
  for (auto& l : m.extractor) out.push_back(&l.w), out.push_back(&l.b);
  for (auto& l : m.classifier) out.push_back(&l.w), out.push_back(&l.b);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> snapshot(const std::vector<Tensor<Scalar>*>& ps) {
  std::vector<Tensor<Scalar>> s;
  for (const auto* p : ps) s.push_back(*p);
  return s;
}

template <typename Scalar>
void restore(const std::vector<Tensor<Scalar>*>& ps, const std::vector<Tensor<Scalar>>& s) {
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = s[i];
}

// Fisher-Yates on our own uniform stream, so the order does not depend on the
// standard library.
void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_open(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

template <typename Scalar>
int correct_in_batch(const Tensor<Scalar>& logits, const std::vector<int>& labels, int members) {
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(logits.cols());
    for (int k = 0; k < members; ++k) {
      const Eigen::RowVectorXd l = logits.row(static_cast<Eigen::Index>(i) * members + k).template cast<double>();
      const Eigen::RowVectorXd e = (l.array() - l.maxCoeff()).exp();
      p += e / e.sum();
    }
    correct += argmax_lowest(p) == labels[i];
  }
  return correct;
}

}  // namespace

template <typename Scalar>
History train(SQEnsembleModel<Scalar>& m, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  (void)validate(cfg);
  if (data.size() == 0) fail(ErrorKind::insufficient_data, "training set is empty");
  if (data.dim() != m.arch.input_dim) fail(ErrorKind::shape_mismatch, "dataset width does not match the model");
  apply(m, cfg);
  History history;
  if (cfg.epochs == 0) return history;

  const auto params = parameters(m);
  std::vector<Tensor<Scalar>> vel, sq;
  for (const auto* p : params) {
    vel.push_back(Tensor<Scalar>::Zero(p->rows(), p->cols()));
    sq.push_back(Tensor<Scalar>::Zero(p->rows(), p->cols()));
  }
  auto last_good = snapshot(params);
  long adam_step = 0;
  const int n = data.size();
  const int members = cfg.n_members;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = derive_rng(cfg.seed, {1, static_cast<std::uint64_t>(epoch)});
    shuffle(order, shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    int seen = 0, correct = 0;
    bool stopped = false;
    for (int start = 0, step = 0; start < n; start += cfg.batch_size, ++step) {
      if (hooks.stop && hooks.stop->load()) {
        stopped = true;
        break;
      }
      const int b = std::min(cfg.batch_size, n - start);
      Tensor<Scalar> xb(b, data.dim());
      std::vector<int> yb(static_cast<std::size_t>(b));
      std::vector<Rng> rngs;
      rngs.reserve(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = data.images.row(idx).template cast<Scalar>();
        yb[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(idx)];
        rngs.push_back(derive_rng(cfg.seed, {2, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                                             static_cast<std::uint64_t>(i)}));
      }

      Tape<Scalar> t;
      const ParamVars p = bind_params(t, m, true);
      GraphOutput g;
      const LossTerms l = loss_graph(t, m, p, t.constant(xb), std::span<const int>(yb), cfg.beta, cfg.mu, members,
                                     std::span<Rng>(rngs), nullptr, &g);
      const double total = t.value(l.total)(0, 0);
      const double ce = t.value(l.ce)(0, 0), mi = t.value(l.mi)(0, 0), sp = t.value(l.spacing)(0, 0);
      if (!std::isfinite(total)) {
        restore(params, last_good);
        const char* term = !std::isfinite(ce) ? "cross-entropy" : !std::isfinite(mi) ? "mutual information"
                                                                                      : "bin spacing";
        fail(ErrorKind::non_finite, std::string("loss diverged in the ") + term + " term at epoch " +
                                        std::to_string(epoch) + ", step " + std::to_string(step) +
                                        "; parameters restored to the last finished epoch");
      }
      t.backward(l.total);

      ++adam_step;
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor<Scalar> grad = t.grad(p.vars[k]);
        if (!grad.allFinite()) {
          restore(params, last_good);
          fail(ErrorKind::non_finite, "non-finite gradient at epoch " + std::to_string(epoch) +
                                          "; parameters restored to the last finished epoch");
        }
        const Scalar lr = Scalar(cfg.learning_rate);
        if (cfg.optimizer == OptimizerKind::sgd_momentum) {
          vel[k] = Scalar(cfg.momentum) * vel[k] + grad;
          *params[k] -= lr * vel[k];
        } else {
          const double b1 = cfg.momentum, b2 = 0.999;
          vel[k] = Scalar(b1) * vel[k] + Scalar(1 - b1) * grad;
          sq[k] = Scalar(b2) * sq[k] + Scalar(1 - b2) * grad.cwiseProduct(grad);
          const Scalar c1 = Scalar(1 - std::pow(b1, double(adam_step)));
          const Scalar c2 = Scalar(1 - std::pow(b2, double(adam_step)));
          *params[k] -= (lr * (vel[k] / c1).array() / ((sq[k] / c2).array().sqrt() + Scalar(1e-8))).matrix();
        }
      }

      rec.total += total * b;
      rec.ce += ce * b;
      rec.mi += mi * b;
      rec.spacing += sp * b;
      correct += correct_in_batch(t.value(g.logits), yb, members);
      seen += b;
    }
    if (seen > 0) {
      rec.total /= seen;
      rec.ce /= seen;
      rec.mi /= seen;
      rec.spacing /= seen;
      rec.accuracy = double(correct) / seen;
      history.push_back(rec);
      if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    last_good = snapshot(params);
    if (stopped) break;
  }
  return history;
}

template <typename Scalar>
double accuracy(const SQEnsembleModel<Scalar>& m, const Dataset& data, int members, std::uint64_t seed) {
  if (data.size() == 0) fail(ErrorKind::insufficient_data, "evaluation set is empty");
  const int chunk = 100;
  int correct = 0;
  for (int start = 0; start < data.size(); start += chunk) {
    const int b = std::min(chunk, data.size() - start);
    std::vector<Rng> rngs;
    for (int i = 0; i < b; ++i) rngs.push_back(derive_rng(seed, {static_cast<std::uint64_t>(start + i)}));
    const Tensor<Scalar> x = data.images.middleRows(start, b).template cast<Scalar>();
    const auto out = forward_ensemble(m, x, members, std::span<Rng>(rngs));
    for (int i = 0; i < b; ++i) correct += out.predictions[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(start + i)];
  }
  return double(correct) / data.size();
}

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'A', 'R'};

template <typename T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t at) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + at, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename Scalar>
std::vector<std::pair<std::string, const Tensor<Scalar>*>> named_blocks(const SQEnsembleModel<Scalar>& m) {
  std::vector<std::pair<std::string, const Tensor<Scalar>*>> out;
  for (std::size_t i = 0; i < m.extractor.size(); ++i) {
    out.emplace_back("extractor." + std::to_string(i) + ".w", &m.extractor[i].w);
    out.emplace_back("extractor." + std::to_string(i) + ".b", &m.extractor[i].b);
  }
  for (std::size_t i = 0; i < m.classifier.size(); ++i) {
    out.emplace_back("classifier." + std::to_string(i) + ".w", &m.classifier[i].w);
    out.emplace_back("classifier." + std::to_string(i) + ".b", &m.classifier[i].b);
  }
  return out;
}

template <typename Stored, typename Scalar>
void read_block(const std::string& bytes, std::size_t at, Tensor<Scalar>& dst) {
  for (Eigen::Index i = 0; i < dst.size(); ++i)
    dst.data()[i] = static_cast<Scalar>(get_le<Stored>(bytes, at + static_cast<std::size_t>(i) * sizeof(Stored)));
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const Checkpoint<Scalar>& c, const std::filesystem::path& path) {
  Json header;
  header["format"] = "sqens-checkpoint";
  header["dtype"] = sizeof(Scalar) == 4 ? "f32" : "f64";
  header["arch"] = to_json(c.model.arch);
  header["sq"] = to_json(c.model.sq);
  header["train"] = to_json(c.config);
  header["history"] = to_json(c.history);
  Json blocks = Json::array();
  for (const auto& [name, t] : named_blocks(c.model)) blocks.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
  header["params"] = blocks;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : named_blocks(c.model))
    for (Eigen::Index i = 0; i < t->size(); ++i) put_le<Scalar>(out, t->data()[i]);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::io, "write failed for " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  if (bytes.size() < 16) fail(ErrorKind::corrupt_file, "checkpoint is too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::wrong_magic, path.string() + " is not a checkpoint");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion)
    fail(ErrorKind::version_mismatch, "checkpoint version " + std::to_string(version) + ", this reader handles " +
                                          std::to_string(kCheckpointVersion));
  const auto len = get_le<std::uint64_t>(bytes, 8);
  if (len > bytes.size() - 16) fail(ErrorKind::corrupt_file, "header length exceeds the file");

  Checkpoint<Scalar> c;
  std::size_t width = 0;
  try {
    const Json header = Json::parse(bytes.substr(16, len));
    check_keys(header, {"format", "dtype", "arch", "sq", "train", "history", "params"}, "checkpoint");
    const std::string dtype = header.at("dtype").get<std::string>();
    width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) fail(ErrorKind::corrupt_file, "unknown dtype " + dtype);
    const ArchConfig arch = arch_from_json(header.at("arch"));
    const SqConfig sq = sq_config_from_json(header.at("sq"));
    c.model = build_model<Scalar>(arch, sq, 0);
    c.config = train_config_from_json(header.at("train"));
    c.history = history_from_json(header.at("history"));
    const auto blocks = named_blocks(c.model);
    const Json& params = header.at("params");
    if (params.size() != blocks.size()) fail(ErrorKind::corrupt_file, "parameter list does not match the architecture");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& [name, t] = blocks[i];
      if (params[i].at("name") != name || params[i].at("rows") != t->rows() || params[i].at("cols") != t->cols())
        fail(ErrorKind::corrupt_file, "parameter block " + name + " does not match the architecture");
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::corrupt_file, std::string("unreadable checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::corrupt_file) throw;
    fail(ErrorKind::corrupt_file, std::string("invalid checkpoint header: ") + e.what());
  }

  std::size_t at = 16 + len;
  std::size_t need = 0;
  for (const auto& [name, t] : named_blocks(c.model)) need += static_cast<std::size_t>(t->size()) * width;
  if (bytes.size() - at != need) fail(ErrorKind::corrupt_file, "parameter payload has the wrong size");
  auto fill = [&](Tensor<Scalar>& t) {
    if (width == 4)
      read_block<float>(bytes, at, t);
    else
      read_block<double>(bytes, at, t);
    at += static_cast<std::size_t>(t.size()) * width;
  };
  for (auto& l : c.model.extractor) fill(l.w), fill(l.b);
  for (auto& l : c.model.classifier) fill(l.w), fill(l.b);
  return c;
}

template History train(SQEnsembleModel<float>&, const Dataset&, const TrainConfig&, const TrainHooks&);
template History train(SQEnsembleModel<double>&, const Dataset&, const TrainConfig&, const TrainHooks&);
template double accuracy(const SQEnsembleModel<float>&, const Dataset&, int, std::uint64_t);
template double accuracy(const SQEnsembleModel<double>&, const Dataset&, int, std::uint64_t);
template void save_checkpoint(const Checkpoint<float>&, const std::filesystem::path&);
template void save_checkpoint(const Checkpoint<double>&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace sqens
