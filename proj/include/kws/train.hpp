#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kws/adam.hpp"
#include "kws/common.hpp"
#include "kws/dataset.hpp"
#include "kws/model.hpp"

namespace kws {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 50;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  double min_learning_rate = 1e-5;
  double min_improvement = 1e-4;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) fail("config-error", "batch_size must be at least 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail("config-error", "split_ratio must be in (0, 1)");
    if (learning_rate <= 0.0) fail("config-error", "learning_rate must be positive");
    if (plateau_patience < 1) fail("config-error", "plateau_patience must be at least 1");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
};

// Halves the learning rate once validation loss has failed to improve by at
// least min_improvement for `patience` consecutive epochs; never goes below
// min_lr.
struct PlateauScheduler {
  double lr;
  double factor;
  int patience;
  double min_lr;
  double min_improvement;

  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  void observe(double val_loss) {
    if (val_loss <= best - min_improvement) {
      best = val_loss;
      bad_epochs = 0;
      return;
    }
    if (++bad_epochs >= patience) {
      lr = std::max(lr * factor, min_lr);
      bad_epochs = 0;
    }
  }
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

namespace detail {

template <typename T>
void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Stratified split: each class contributes round(n * ratio) items to the
// training side (clamped so both sides stay non-empty). Disjoint and
// exhaustive by construction.
inline SplitIndices split_dataset(const std::vector<int>& item_labels, std::size_t n_classes,
                                  double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail("config-error", "split ratio must be in (0, 1)");
  std::vector<std::vector<std::size_t>> per_class(n_classes);
  for (std::size_t i = 0; i < item_labels.size(); ++i) {
    const int label = item_labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      fail("invalid-argument", "label out of range: " + std::to_string(label));
    }
    per_class[static_cast<std::size_t>(label)].push_back(i);
  }
  SplitIndices out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& members = per_class[c];
    if (members.size() < 2) {
      fail("insufficient-data",
           "class " + std::to_string(c) + " has " + std::to_string(members.size()) +
               " item(s); need at least 2 to split");
    }
    Rng rng = make_rng(seed, 0x5B117, c);
    detail::fisher_yates(members, rng);
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * ratio));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::size_t> counts;  // n x n row-major

  explicit ConfusionMatrix(std::vector<std::string> label_names = {})
      : labels(std::move(label_names)), counts(labels.size() * labels.size(), 0) {}

  std::size_t n() const { return labels.size(); }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n() + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n() + pred]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (std::size_t c : counts) t += c;
    return t;
  }

  double accuracy() const {
    std::size_t diag = 0;
    for (std::size_t i = 0; i < n(); ++i) diag += at(i, i);
    const std::size_t tot = total();
    return tot == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(tot);
  }
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  ConfusionMatrix confusion;
  std::vector<double> precision;
  std::vector<double> recall;
};

inline int argmax_lowest(const float* row, std::size_t n) {
  int best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = static_cast<int>(i);
  }
  return best;
}

// Infer-mode pass over a labeled set: accuracy, mean cross-entropy,
// confusion matrix and per-class precision/recall (0 when undefined).
inline EvalResult evaluate(const nn::Model<float>& model, const std::vector<Example>& examples,
                           std::size_t batch_size = 64) {
  if (examples.empty()) fail("insufficient-data", "evaluate needs a non-empty set");
  const std::size_t n_classes = model.spec.n_classes();
  EvalResult res;
  res.confusion = ConfusionMatrix(model.labels.empty()
                                      ? std::vector<std::string>(n_classes, "")
                                      : model.labels);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const nn::Tensor<float> batch = stack_batch(examples, idx);
    const nn::Tensor<float> probs = nn::model_infer(model, batch);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = probs.data.data() + i * n_classes;
      const int truth = examples[idx[i]].label;
      const int pred = argmax_lowest(row, n_classes);
      res.confusion.at(static_cast<std::size_t>(truth), static_cast<std::size_t>(pred)) += 1;
      if (pred == truth) ++correct;
      loss_sum -= std::log(std::max(static_cast<double>(row[truth]), 1e-12));
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  res.loss = loss_sum / static_cast<double>(examples.size());
  res.precision.assign(n_classes, 0.0);
  res.recall.assign(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t col = 0, row = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      col += res.confusion.at(k, c);
      row += res.confusion.at(c, k);
    }
    if (col > 0) res.precision[c] = static_cast<double>(res.confusion.at(c, c)) / static_cast<double>(col);
    if (row > 0) res.recall[c] = static_cast<double>(res.confusion.at(c, c)) / static_cast<double>(row);
  }
  return res;
}

struct TrainResult {
  nn::Model<float> model;  // best-validation-accuracy checkpoint
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Seeded end-to-end: shuffle, mini-batches (final partial batch kept),
// train-mode forward, fused cross-entropy backward, Adam step; then a full
// infer-mode validation pass and the plateau schedule. The checkpoint with
// the best validation accuracy is retained.
inline TrainResult train_model(const std::vector<Example>& train_set,
                               const std::vector<Example>& val_set, const TrainConfig& cfg,
                               const nn::ModelSpec& spec, std::vector<std::string> labels) {
  cfg.validate();
  if (train_set.empty()) fail("insufficient-data", "empty training set");
  if (val_set.empty()) fail("insufficient-data", "empty validation set");

  nn::Model<float> model = nn::build_model<float>(spec, std::move(labels));
  nn::init_parameters(model, cfg.seed);
  auto params = model.trainable_params();
  auto adam = nn::AdamState<float>::for_params(params);
  PlateauScheduler sched{cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience,
                         cfg.min_learning_rate, cfg.min_improvement};
  Rng dropout_rng = make_rng(cfg.seed, 0xD0);

  TrainResult result;
  result.model = model;
  double best_acc = -1.0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t n_classes = model.spec.n_classes();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr;
    Rng shuffle_rng = make_rng(cfg.seed, 0x40D3, epoch);
    detail::fisher_yates(order, shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const nn::Tensor<float> batch = stack_batch(train_set, idx);
      std::vector<int> batch_labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = train_set[idx[i]].label;

      nn::ForwardCtx<float> ctx;
      const nn::Tensor<float> probs =
          nn::model_forward(model, batch, nn::Mode::train, &dropout_rng, &ctx);
      const auto ce = nn::cross_entropy(probs, batch_labels);
      if (!std::isfinite(ce.loss)) {
        fail("numeric-error", "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(start / cfg.batch_size));
      }
      loss_sum += static_cast<double>(ce.loss) * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (argmax_lowest(probs.data.data() + i * n_classes, n_classes) == batch_labels[i]) ++correct;
      }

      auto all_grads = nn::model_backward(model, ctx, ce.grad_logits);
      const auto grads = nn::trainable_grads(model, all_grads);
      nn::adam_step(params, grads, adam, static_cast<float>(lr));
    }

    const EvalResult val = evaluate(model, val_set, cfg.batch_size);

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(train_set.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    em.val_loss = val.loss;
    em.val_accuracy = val.accuracy;
    em.learning_rate = lr;
    result.metrics.push_back(em);

    if (val.accuracy > best_acc) {
      best_acc = val.accuracy;
      result.model = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = val.accuracy;
    }
    sched.observe(val.loss);
  }
  return result;
}

inline std::string metrics_to_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char buf[256];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.train_loss,
                  m.train_accuracy, m.val_loss, m.val_accuracy, m.learning_rate);
    out += buf;
  }
  return out;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics,
                              const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  os << metrics_to_csv(metrics);
}

inline std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::string out = "class";
  for (const auto& l : cm.labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < cm.n(); ++i) {
    out += cm.labels[i];
    for (std::size_t j = 0; j < cm.n(); ++j) out += "," + std::to_string(cm.at(i, j));
    out += "\n";
  }
  return out;
}

inline void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  os << confusion_to_csv(cm);
}

// key = value lines; '#' starts a comment. Unknown keys are rejected so a
// typo cannot silently fall back to a default.
inline TrainConfig parse_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open config " + path.string());
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char ch : line) {
        if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
      }
      if (blank) continue;
      fail("config-error", path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "batch_size") cfg.batch_size = std::stoul(value);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "max_epochs") cfg.max_epochs = std::stoul(value);
      else if (key == "plateau_factor") cfg.plateau_factor = std::stod(value);
      else if (key == "plateau_patience") cfg.plateau_patience = std::stoi(value);
      else if (key == "min_learning_rate") cfg.min_learning_rate = std::stod(value);
      else if (key == "min_improvement") cfg.min_improvement = std::stod(value);
      else if (key == "split_ratio") cfg.split_ratio = std::stod(value);
      else fail("config-error", "unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail("config-error", "bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      fail("config-error", "bad value for '" + key + "': " + value);
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace kws
