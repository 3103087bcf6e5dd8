#pragma once

// Density classification on top of a pretrained backbone: class weighting,
// weighted cross-entropy, full fine-tuning with early stopping on validation
// macro F1, and inference.

#include "agekit/checkpoint.hpp"
#include "agekit/dataset.hpp"
#include "agekit/erase.hpp"
#include "agekit/evalstat.hpp"
#include "agekit/optim.hpp"
#include "agekit/vit.hpp"

#include <functional>
#include <numeric>

namespace agekit {

/// w_c = N / (K * n_c). The weights satisfy sum_c w_c n_c / N = 1.
inline std::vector<double> compute_class_weights(const std::vector<long long>& counts) {
  if (counts.empty()) throw ValidationError("no classes to weight");
  long long total = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= 0)
      throw ValidationError("class " + std::string(1, static_cast<char>('A' + c)) +
                            " has no training samples; merge it with a neighboring class or oversample");
    total += counts[c];
  }
  std::vector<double> w;
  const double k = static_cast<double>(counts.size());
  for (long long n : counts) w.push_back(static_cast<double>(total) / (k * static_cast<double>(n)));
  return w;
}

inline std::vector<long long> label_counts(const std::vector<ImageSample>& samples) {
  std::vector<long long> counts(kNumClasses, 0);
  for (const auto& s : samples) {
    if (!s.label) throw ValidationError("sample " + s.id + " has no label");
    ++counts[density_index(*s.label)];
  }
  return counts;
}

enum class LossKind { SoftmaxCE, OneVsRestBCE };

/// Mean over the batch of w_y * (-log softmax(z)_y). Writes d loss / d logits
/// when `dlogits` is non-null.
template <typename T>
double weighted_ce_loss(const Mat<T>& logits, const std::vector<int>& labels, const std::vector<double>& weights,
                        Mat<T>* dlogits = nullptr) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.rows() == 0)
    throw ShapeError("logits and labels disagree in batch size");
  if (logits.cols() != static_cast<Eigen::Index>(weights.size())) throw ShapeError("one weight per class expected");
  if (!all_finite(logits)) throw NumericError("non-finite logits");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double loss = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw ValidationError("label out of range");
    const double mx = static_cast<double>(logits.row(i).maxCoeff());
    double z = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<double>(logits(i, k)) - mx);
    const double w = weights[y];
    loss += w * (mx + std::log(z) - static_cast<double>(logits(i, y)));
    if (dlogits) {
      for (Eigen::Index k = 0; k < logits.cols(); ++k)
        (*dlogits)(i, k) = static_cast<T>(w * inv_n * std::exp(static_cast<double>(logits(i, k)) - mx) / z);
      (*dlogits)(i, y) -= static_cast<T>(w * inv_n);
    }
  }
  return loss * inv_n;
}

/// One-vs-rest variant: mean over the batch of w_y * sum_k BCE(sigmoid(z_k), [k == y]).
template <typename T>
double weighted_bce_loss(const Mat<T>& logits, const std::vector<int>& labels, const std::vector<double>& weights,
                         Mat<T>* dlogits = nullptr) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.rows() == 0)
    throw ShapeError("logits and labels disagree in batch size");
  if (logits.cols() != static_cast<Eigen::Index>(weights.size())) throw ShapeError("one weight per class expected");
  if (!all_finite(logits)) throw NumericError("non-finite logits");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double loss = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw ValidationError("label out of range");
    const double w = weights[y];
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const double z = logits(i, k), t = k == y ? 1.0 : 0.0;
      // log(1 + e^z) - t z, computed stably.
      loss += w * (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z);
      if (dlogits) (*dlogits)(i, k) = static_cast<T>(w * inv_n * (1.0 / (1.0 + std::exp(-z)) - t));
    }
  }
  return loss * inv_n;
}

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 5e-6;
  double weight_decay = 1e-4;
  int patience = 10;  // epochs without validation macro F1 improvement
  AugmentationPolicy policy;
  std::uint64_t seed = 0;
  std::vector<double> class_weights;  // empty: derived from training counts
  LossKind loss = LossKind::SoftmaxCE;

  void validate() const {
    if (epochs < 0 || batch_size <= 0) throw ConfigError("epochs must be >= 0 and batch_size > 0");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (patience < 0) throw ConfigError("patience must be non-negative");
    if (!class_weights.empty()) {
      if (class_weights.size() != static_cast<std::size_t>(kNumClasses))
        throw ConfigError("class_weights needs one value per class");
      for (double w : class_weights)
        if (!(w > 0)) throw ConfigError("class weights must be positive");
    }
    policy.validate();
  }
};

struct Prediction {
  std::vector<int> labels;
  Mat<float> probabilities;  // batch × classes, rows sum to 1
};

/// Argmax labels and softmax probabilities; no augmentation.
inline Prediction predict(const ClassifierParams<float>& model, const ViTConfig& vit, const std::vector<Image>& images) {
  Prediction p;
  const auto fr = forward<float>(images, model.backbone, vit, false);
  Mat<float> logits = classifier_logits(model, fr.embeddings);
  softmax_rows_inplace(logits);
  p.probabilities = std::move(logits);
  for (Eigen::Index i = 0; i < p.probabilities.rows(); ++i) {
    Eigen::Index k = 0;
    p.probabilities.row(i).maxCoeff(&k);
    p.labels.push_back(static_cast<int>(k));
  }
  return p;
}

inline std::vector<int> labels_of(const std::vector<ImageSample>& samples) {
  std::vector<int> y;
  for (const auto& s : samples) {
    if (!s.label) throw ValidationError("sample " + s.id + " has no label");
    y.push_back(density_index(*s.label));
  }
  return y;
}

inline Confusion evaluate(const ClassifierParams<float>& model, const ViTConfig& vit,
                          const std::vector<ImageSample>& samples) {
  std::vector<Image> images;
  for (const auto& s : samples) images.push_back(s.pixels);
  return confusion_matrix(labels_of(samples), predict(model, vit, images).labels);
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_macro_f1 = 0;
};

struct TrainResult {
  ClassifierParams<float> model;  // best by validation macro F1
  std::vector<EpochLog> log;
  int best_epoch = 0;             // 0: the initial model was never beaten
  double best_val_macro_f1 = 0;
  double initial_val_macro_f1 = 0;
};

using MaskLookup = std::function<const BoolGrid*(const std::string& id)>;

/// Fine-tunes backbone and head. The best-so-far score starts from an
/// evaluation of the initial model; only strict improvements replace it.
inline TrainResult train_classifier(const std::vector<ImageSample>& train, const std::vector<ImageSample>& val,
                                    const VitParams<float>& backbone, const ViTConfig& vit, const TrainConfig& cfg,
                                    const MaskLookup& masks = {},
                                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw ValidationError("training and validation splits must be non-empty");
  if (cfg.policy.mode == EraseMode::AGE) {
    std::vector<std::string> missing;
    for (const auto& s : train)
      if (!masks || masks(s.id) == nullptr) missing.push_back(s.id);
    if (!missing.empty()) {
      std::string list;
      for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
      if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size() - 20) + " more)";
      throw ConfigError("AGE policy but no mask for " + std::to_string(missing.size()) + " training sample(s): " + list);
    }
  }
  const auto weights = cfg.class_weights.empty() ? compute_class_weights(label_counts(train)) : cfg.class_weights;
  const auto train_labels = labels_of(train);

  Rng init_rng = stream_for(cfg.seed, 0, "classifier-head");
  TrainResult res;
  ClassifierParams<float> model = init_classifier(backbone, kNumClasses, init_rng);
  AdamW<float, ClassifierParams<float>> opt(model, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  res.model = model;
  res.initial_val_macro_f1 = res.best_val_macro_f1 = macro_f1(evaluate(model, vit, val)).macro;
  int stale = 0;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = stream_for(cfg.seed, static_cast<std::uint64_t>(epoch), "shuffle");
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const auto bsz = static_cast<Eigen::Index>(end - start);
      std::vector<VitCache<float>> caches(static_cast<std::size_t>(bsz));
      Mat<float> emb(bsz, vit.embed_dim);
      std::vector<int> labels;
      for (std::size_t j = start; j < end; ++j) {
        const auto& s = train[order[j]];
        Rng rng = stream_for(cfg.seed, static_cast<std::uint64_t>(epoch), s.id);
        const BoolGrid* mask = masks ? masks(s.id) : nullptr;
        const auto aug = apply_policy(s.pixels, mask, cfg.policy, rng);
        emb.row(static_cast<Eigen::Index>(j - start)) = vit_embed<float>(model.backbone, vit, aug.image, &caches[j - start]);
        labels.push_back(train_labels[order[j]]);
      }
      const Mat<float> logits = classifier_logits(model, emb);
      Mat<float> dlogits;
      const double loss = cfg.loss == LossKind::SoftmaxCE ? weighted_ce_loss(logits, labels, weights, &dlogits)
                                                          : weighted_bce_loss(logits, labels, weights, &dlogits);
      loss_sum += loss * static_cast<double>(bsz);

      auto grad = zeros_like(model);
      grad.head_w = emb.transpose() * dlogits;
      grad.head_b = dlogits.colwise().sum();
      const Mat<float> demb = dlogits * model.head_w.transpose();
      for (Eigen::Index i = 0; i < bsz; ++i)
        vit_backward(model.backbone, vit, caches[static_cast<std::size_t>(i)], Mat<float>(demb.row(i)), grad.backbone);
      opt.step(model, grad);
    }
    if (!params_finite(model)) throw NumericError("classifier parameters diverged at epoch " + std::to_string(epoch));

    EpochLog row{epoch, loss_sum / static_cast<double>(train.size()), macro_f1(evaluate(model, vit, val)).macro};
    res.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (row.val_macro_f1 > res.best_val_macro_f1) {
      res.best_val_macro_f1 = row.val_macro_f1;
      res.best_epoch = epoch;
      res.model = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return res;
}

inline void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "epoch,train_loss,val_macro_f1\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_macro_f1);
    out << buf;
  }
}

inline void save_classifier_checkpoint(const std::filesystem::path& path, const ClassifierParams<float>& model,
                                       const ViTConfig& vit, nlohmann::json extra = nlohmann::json::object()) {
  TensorFile tf;
  tf.meta = std::move(extra);
  tf.meta["kind"] = "classifier";
  tf.meta["vit"] = to_json(vit);
  tf.meta["num_classes"] = model.head_w.cols();
  add_tensors(tf, model, "");
  write_tensor_file(path, tf);
}

inline ClassifierParams<float> load_classifier_checkpoint(const std::filesystem::path& path, ViTConfig* vit_out = nullptr) {
  const auto tf = read_tensor_file(path);
  if (tf.meta.value("kind", "") != "classifier") throw IoError("not a classifier checkpoint: " + path.string());
  const auto vit = vit_config_from_json(tf.meta.at("vit"));
  ClassifierParams<float> model;
  model.backbone = vit_shape(vit);
  const int k = tf.meta.at("num_classes");
  model.head_w = Mat<float>::Zero(vit.embed_dim, k);
  model.head_b = Mat<float>::Zero(1, k);
  take_tensors(tf, model, "");
  if (vit_out) *vit_out = vit;
  return model;
}

}  // namespace agekit
