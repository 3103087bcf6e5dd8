#pragma once

// Self-distillation pretraining: a student and an EMA teacher of identical
// architecture see different random crops of the same image; the student is
// trained to match the teacher's centered, sharpened softmax output.

#include "agekit/checkpoint.hpp"
#include "agekit/dataset.hpp"
#include "agekit/optim.hpp"
#include "agekit/transforms.hpp"
#include "agekit/vit.hpp"

#include <functional>
#include <numbers>
#include <numeric>

namespace agekit {

struct ScaleInterval {
  double lo = 0;
  double hi = 1;
  bool operator==(const ScaleInterval&) const = default;
};

struct DinoConfig {
  ScaleInterval global_crop_scale{0.4, 1.0};
  ScaleInterval local_crop_scale{0.05, 0.4};
  int num_global_crops = 2;
  int num_local_crops = 8;
  int global_crop_size = 224;
  int local_crop_size = 96;
  int projection_dim = 256;
  int head_hidden_dim = 512;
  int head_bottleneck_dim = 64;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;
  double ema_momentum_start = 0.996;
  double ema_momentum_end = 1.0;
  int epochs = 300;
  int batch_size = 32;
  double learning_rate = 5e-4;
  double min_learning_rate = 1e-6;
  int warmup_epochs = 10;
  double weight_decay = 0.04;
  int smoothing_window = 20;
  bool augment = true;  // flip / jitter / blur / solarize on crops
  bool center_warm_start = true;  // first step sets the center to the teacher batch mean
  double clip_grad = 3.0;          // per-tensor gradient norm cap; 0 disables
  int freeze_last_layer_epochs = 1;

  void validate() const {
    auto in_unit = [](const ScaleInterval& s) { return s.lo > 0 && s.hi <= 1 && s.lo <= s.hi; };
    if (!in_unit(global_crop_scale) || !in_unit(local_crop_scale))
      throw ConfigError("crop scale intervals must lie in (0,1]");
    if (student_temp <= 0 || teacher_temp <= 0) throw ConfigError("temperatures must be positive");
    for (double m : {center_momentum, ema_momentum_start, ema_momentum_end})
      if (m < 0 || m > 1) throw ConfigError("momenta must lie in [0,1]");
    if (num_global_crops < 1 || num_local_crops < 0) throw ConfigError("invalid crop counts");
    if (batch_size <= 0 || epochs < 0) throw ConfigError("invalid batch size or epochs");
    if (smoothing_window <= 0) throw ConfigError("smoothing_window must be positive");
    if (clip_grad < 0 || freeze_last_layer_epochs < 0) throw ConfigError("clip_grad and freeze_last_layer_epochs must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Crops and photometric augmentation

struct CropInfo {
  int top = 0, left = 0, height = 0, width = 0;
  double sampled_scale = 0;  // requested area fraction
  double aspect = 1;
  bool flipped = false;
  bool global = true;

  double area_fraction(int rows, int cols) const {
    return static_cast<double>(height) * width / (static_cast<double>(rows) * cols);
  }
};

struct Crop {
  Image pixels;
  CropInfo info;
};

/// Samples the geometry of a random resized crop: area fraction uniform in
/// `scale`, log-uniform aspect ratio in [3/4, 4/3], 10 placement attempts,
/// then a square of the sampled area clipped to the image.
inline CropInfo sample_crop_geometry(int rows, int cols, ScaleInterval scale, Rng& rng) {
  const double area = static_cast<double>(rows) * cols;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  CropInfo info;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double s = uniform(rng, scale.lo, scale.hi);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(s * area * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(s * area / ratio)));
    info.sampled_scale = s;
    if (w > 0 && h > 0 && w <= cols && h <= rows) {
      info.height = h;
      info.width = w;
      info.aspect = ratio;
      info.top = static_cast<int>(uniform(rng) * (rows - h + 1));
      info.left = static_cast<int>(uniform(rng) * (cols - w + 1));
      info.top = std::min(info.top, rows - h);
      info.left = std::min(info.left, cols - w);
      return info;
    }
  }
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(info.sampled_scale * area))), 1,
                              std::min(rows, cols));
  info.height = info.width = side;
  info.aspect = 1;
  info.top = (rows - side) / 2;
  info.left = (cols - side) / 2;
  return info;
}

/// Global and local views of `image`. Global view 1 is always blurred,
/// global view 2 is rarely blurred and sometimes solarized, local views are
/// blurred half the time; all views get flip and intensity jitter.
inline std::vector<Crop> multi_crop(const Image& image, const DinoConfig& cfg, Rng& rng) {
  const int rows = static_cast<int>(image.rows()), cols = static_cast<int>(image.cols());
  std::vector<Crop> crops;
  const int total = cfg.num_global_crops + cfg.num_local_crops;
  for (int v = 0; v < total; ++v) {
    const bool global = v < cfg.num_global_crops;
    const auto scale = global ? cfg.global_crop_scale : cfg.local_crop_scale;
    const int side = global ? cfg.global_crop_size : cfg.local_crop_size;
    Crop crop;
    crop.info = sample_crop_geometry(rows, cols, scale, rng);
    crop.info.global = global;
    const auto& g = crop.info;
    crop.pixels = resize_bilinear(image.block(g.top, g.left, g.height, g.width), side, side);
    if (cfg.augment) {
      crop.info.flipped = bernoulli(rng, 0.5);
      if (crop.info.flipped) crop.pixels = hflip(crop.pixels);
      if (bernoulli(rng, 0.8)) crop.pixels = intensity_jitter(crop.pixels, 0.4, 0.4, rng);
      const double blur_p = global ? (v == 0 ? 1.0 : 0.1) : 0.5;
      if (bernoulli(rng, blur_p)) crop.pixels = gaussian_blur(crop.pixels, uniform(rng, 0.1, 2.0) * side / 224.0);
      if (global && v == 1 && bernoulli(rng, 0.2)) crop.pixels = solarize(crop.pixels);
    }
    crops.push_back(std::move(crop));
  }
  return crops;
}

// ---------------------------------------------------------------------------
// Loss, EMA, centering

namespace detail {

template <typename T>
Mat<T> softmax_row(const Mat<T>& logits, T temp) {
  Mat<T> z = logits / temp;
  const T mx = z.maxCoeff();
  z = (z.array() - mx).exp().matrix();
  return z / z.sum();
}

template <typename T>
Mat<T> log_softmax_row(const Mat<T>& logits, T temp) {
  Mat<T> z = logits / temp;
  const T mx = z.maxCoeff();
  const T lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

}  // namespace detail

struct DinoLossResult {
  double loss = 0;
  std::vector<Mat<float>> d_student;  // gradient per student view
  int pairs = 0;
};

/// Cross-entropy between teacher and student view distributions, averaged
/// over (teacher global view, student view) pairs excluding a view with
/// itself. Teacher logits are centered and sharpened; student logits are
/// tempered. Student views are ordered globals first.
inline DinoLossResult dino_loss(const std::vector<Mat<float>>& student_logits,
                                const std::vector<Mat<float>>& teacher_logits, const Mat<float>& center,
                                const DinoConfig& cfg, bool with_grad = true) {
  for (const auto& s : student_logits)
    if (!s.allFinite()) throw NumericError("non-finite student logits");
  for (const auto& t : teacher_logits)
    if (!t.allFinite()) throw NumericError("non-finite teacher logits");
  const auto ts = static_cast<float>(cfg.student_temp), tt = static_cast<float>(cfg.teacher_temp);

  std::vector<Mat<float>> p_t;
  for (const auto& t : teacher_logits) p_t.push_back(detail::softmax_row<float>(t - center, tt));
  std::vector<Mat<float>> logp_s, p_s;
  for (const auto& s : student_logits) {
    logp_s.push_back(detail::log_softmax_row<float>(s, ts));
    p_s.push_back(logp_s.back().array().exp().matrix());
  }

  DinoLossResult r;
  double total = 0;
  if (with_grad)
    for (const auto& s : student_logits) r.d_student.push_back(Mat<float>::Zero(1, s.cols()));
  for (std::size_t it = 0; it < p_t.size(); ++it)
    for (std::size_t is = 0; is < logp_s.size(); ++is) {
      if (is == it) continue;
      total += -static_cast<double>(p_t[it].cwiseProduct(logp_s[is]).sum());
      ++r.pairs;
      if (with_grad) r.d_student[is] += (p_s[is] - p_t[it]) / ts;
    }
  if (r.pairs == 0) return r;
  r.loss = total / r.pairs;
  if (with_grad)
    for (auto& d : r.d_student) d /= static_cast<float>(r.pairs);
  return r;
}

/// teacher = m * teacher + (1 - m) * student, elementwise over all tensors.
template <typename T, class P>
void ema_update(P& teacher, const P& student, double m) {
  if (m < 0 || m > 1) throw ConfigError("EMA momentum must lie in [0,1]");
  auto t = named_tensors<T>(teacher);
  auto s = named_tensors<T>(student);
  if (t.size() != s.size()) throw ShapeError("EMA: parameter sets differ in tensor count");
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].second->rows() != s[i].second->rows() || t[i].second->cols() != s[i].second->cols())
      throw ShapeError("EMA: shape mismatch for `" + t[i].first + "`");
  const T mm = static_cast<T>(m), om = static_cast<T>(1.0 - m);
  for (std::size_t i = 0; i < t.size(); ++i) *t[i].second = mm * *t[i].second + om * *s[i].second;
}

/// center = momentum * center + (1 - momentum) * mean over rows of `outputs`.
inline Mat<float> update_center(const Mat<float>& center, const Mat<float>& outputs, double momentum) {
  if (outputs.rows() == 0) throw ValidationError("update_center: empty teacher batch");
  if (outputs.cols() != center.cols()) throw ShapeError("update_center: dimension mismatch");
  const Mat<float> mean = outputs.colwise().mean();
  return static_cast<float>(momentum) * center + static_cast<float>(1.0 - momentum) * mean;
}

/// Cosine ramp from `start` at step 0 to `end` at `total_steps`.
inline double cosine_schedule(double start, double end, long step, long total_steps) {
  if (total_steps <= 0) return start;
  const double t = std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return end + (start - end) * 0.5 * (1 + std::cos(std::numbers::pi * t));
}

/// Linear warmup to `base` over `warmup` steps, then cosine decay to `min`.
inline double warmup_cosine(double base, double min, long step, long warmup, long total) {
  if (step < warmup) return base * (step + 1) / static_cast<double>(warmup);
  return cosine_schedule(base, min, step - warmup, total - warmup);
}

// ---------------------------------------------------------------------------
// Training

struct DinoState {
  DinoNetParams<float> student;
  DinoNetParams<float> teacher;
  Mat<float> center;
  long step = 0;
};

inline DinoState init_dino_state(const ViTConfig& vit, const DinoConfig& cfg, std::uint64_t seed) {
  vit.validate();
  cfg.validate();
  Rng rng = stream_for(seed, 0, "init");
  DinoState s;
  s.student.backbone = init_vit<float>(vit, rng);
  s.student.head = init_projection_head<float>(vit.embed_dim, cfg.head_hidden_dim, cfg.head_bottleneck_dim,
                                               cfg.projection_dim, rng);
  s.teacher = s.student;
  s.center = Mat<float>::Zero(1, cfg.projection_dim);
  return s;
}

/// Single-writer trainer. Per-image crop streams are keyed by
/// (seed, epoch, sample id).
class DinoTrainer {
 public:
  DinoTrainer(ViTConfig vit, DinoConfig cfg, std::uint64_t seed, long total_steps, long steps_per_epoch)
      : vit_(vit),
        cfg_(cfg),
        seed_(seed),
        total_steps_(total_steps),
        steps_per_epoch_(steps_per_epoch),
        state_(init_dino_state(vit, cfg, seed)),
        opt_(state_.student, AdamOptions{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay}) {}

  const DinoState& state() const { return state_; }
  DinoState& mutable_state() { return state_; }
  const ViTConfig& vit_config() const { return vit_; }
  const DinoConfig& config() const { return cfg_; }

  double momentum_at(long step) const {
    return cosine_schedule(cfg_.ema_momentum_start, cfg_.ema_momentum_end, step, total_steps_);
  }
  double learning_rate_at(long step) const {
    return warmup_cosine(cfg_.learning_rate, cfg_.min_learning_rate, step, cfg_.warmup_epochs * steps_per_epoch_,
                         total_steps_);
  }

  /// One optimization step over a batch; returns the mean loss.
  double step(const std::vector<const ImageSample*>& batch, int epoch) {
    if (batch.empty()) throw ValidationError("empty DINO batch");
    auto grad = zeros_like(state_.student);
    const int ng = cfg_.num_global_crops;
    Mat<float> teacher_out(static_cast<Eigen::Index>(batch.size()) * ng, cfg_.projection_dim);
    double loss = 0;

    std::vector<std::vector<Crop>> crops(batch.size());
    std::vector<std::vector<Mat<float>>> t_logits(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Rng rng = stream_for(seed_, static_cast<std::uint64_t>(epoch), batch[b]->id);
      crops[b] = multi_crop(batch[b]->pixels, cfg_, rng);
      for (int v = 0; v < ng; ++v) {
        const auto e = vit_embed<float>(state_.teacher.backbone, vit_, crops[b][v].pixels);
        t_logits[b].push_back(projection_forward(state_.teacher.head, e));
        teacher_out.row(static_cast<Eigen::Index>(b) * ng + v) = t_logits[b].back().row(0);
      }
    }
    if (state_.step == 0 && cfg_.center_warm_start) state_.center = teacher_out.colwise().mean();

    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& views = crops[b];
      std::vector<VitCache<float>> vcache(views.size());
      std::vector<ProjectionCache<float>> pcache(views.size());
      std::vector<Mat<float>> s_logits;
      for (std::size_t v = 0; v < views.size(); ++v) {
        const auto e = vit_embed<float>(state_.student.backbone, vit_, views[v].pixels, &vcache[v]);
        s_logits.push_back(projection_forward(state_.student.head, e, &pcache[v]));
      }
      const auto lr = dino_loss(s_logits, t_logits[b], state_.center, cfg_);
      loss += lr.loss;
      const float inv_b = 1.0f / static_cast<float>(batch.size());
      for (std::size_t v = 0; v < views.size(); ++v) {
        const Mat<float> d = lr.d_student[v] * inv_b;
        const auto de = projection_backward(state_.student.head, pcache[v], d, grad.head);
        vit_backward(state_.student.backbone, vit_, vcache[v], de, grad.backbone);
      }
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss))
      throw NumericError("DINO loss diverged (non-finite) at step " + std::to_string(state_.step));

    if (epoch < cfg_.freeze_last_layer_epochs) grad.head.last_w.setZero();
    if (cfg_.clip_grad > 0)
      for (auto& [name, g] : named_tensors<float>(grad)) {
        const float norm = g->norm();
        if (norm > cfg_.clip_grad) *g *= static_cast<float>(cfg_.clip_grad) / (norm + 1e-6f);
      }

    last_momentum_ = momentum_at(state_.step);
    opt_.set_learning_rate(learning_rate_at(state_.step));
    opt_.step(state_.student, grad);
    ema_update<float>(state_.teacher, state_.student, last_momentum_);
    state_.center = update_center(state_.center, teacher_out, cfg_.center_momentum);
    ++state_.step;
    return loss;
  }

  double last_momentum() const { return last_momentum_; }

 private:
  ViTConfig vit_;
  DinoConfig cfg_;
  std::uint64_t seed_;
  long total_steps_;
  long steps_per_epoch_;
  DinoState state_;
  AdamW<float, DinoNetParams<float>> opt_;
  double last_momentum_ = 0;
};

struct PretrainResult {
  DinoState best;          // state at the least smoothed training loss
  long best_step = 0;      // number of steps taken when `best` was captured
  std::vector<double> losses;  // per step
};

/// Trailing mean over the last `window` entries ending at index i.
inline double smoothed(const std::vector<double>& v, std::size_t i, int window) {
  const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(i) + 1, 0.0) /
         static_cast<double>(i + 1 - lo);
}

using PretrainCallback = std::function<void(long step, double loss)>;

/// Full pretraining loop. Only steps with a full smoothing window (or the
/// last step, for short runs) are eligible as the retained checkpoint.
inline PretrainResult pretrain(const std::vector<ImageSample>& data, const ViTConfig& vit, const DinoConfig& cfg,
                               std::uint64_t seed, const PretrainCallback& on_step = {}) {
  if (data.empty()) throw ValidationError("pretraining dataset is empty");
  cfg.validate();
  const long n = static_cast<long>(data.size());
  const long per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total = per_epoch * cfg.epochs;
  DinoTrainer trainer(vit, cfg, seed, total, per_epoch);

  PretrainResult result;
  result.best = trainer.state();
  const long eligible_from = std::min<long>(cfg.smoothing_window, total);
  double best_smoothed = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = stream_for(seed, static_cast<std::uint64_t>(epoch), "shuffle");
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (long b = 0; b < per_epoch; ++b) {
      std::vector<const ImageSample*> batch;
      for (long i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
        batch.push_back(&data[order[static_cast<std::size_t>(i)]]);
      const double loss = trainer.step(batch, epoch);
      result.losses.push_back(loss);
      if (on_step) on_step(trainer.state().step, loss);
      const long steps_done = trainer.state().step;
      if (steps_done >= eligible_from) {
        const double s = smoothed(result.losses, result.losses.size() - 1, cfg.smoothing_window);
        if (s < best_smoothed) {
          best_smoothed = s;
          result.best = trainer.state();
          result.best_step = steps_done;
        }
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_dino_checkpoint(const std::filesystem::path& path, const DinoState& s, const ViTConfig& vit,
                                 const DinoConfig& cfg) {
  TensorFile tf;
  tf.meta = {{"kind", "dino"},
             {"vit", to_json(vit)},
             {"step", s.step},
             {"projection_dim", cfg.projection_dim},
             {"head_hidden_dim", cfg.head_hidden_dim},
             {"head_bottleneck_dim", cfg.head_bottleneck_dim}};
  add_tensors(tf, s.teacher, "teacher.");
  add_tensors(tf, s.student, "student.");
  tf.tensors.emplace_back("center", s.center);
  write_tensor_file(path, tf);
}

struct LoadedDino {
  ViTConfig vit;
  DinoState state;
};

inline LoadedDino load_dino_checkpoint(const std::filesystem::path& path) {
  const auto tf = read_tensor_file(path);
  if (tf.meta.value("kind", "") != "dino") throw IoError("not a DINO checkpoint: " + path.string());
  LoadedDino out;
  out.vit = vit_config_from_json(tf.meta.at("vit"));
  DinoConfig shape;
  shape.projection_dim = tf.meta.at("projection_dim");
  shape.head_hidden_dim = tf.meta.at("head_hidden_dim");
  shape.head_bottleneck_dim = tf.meta.at("head_bottleneck_dim");
  out.state = init_dino_state(out.vit, shape, 0);
  take_tensors(tf, out.state.teacher, "teacher.");
  take_tensors(tf, out.state.student, "student.");
  out.state.center = tf.at("center");
  out.state.step = tf.meta.value("step", 0L);
  return out;
}

/// Backbone used downstream: the teacher, as in the reference method.
inline VitParams<float> load_backbone(const std::filesystem::path& path, ViTConfig* cfg_out = nullptr) {
  auto d = load_dino_checkpoint(path);
  if (cfg_out) *cfg_out = d.vit;
  return std::move(d.state.teacher.backbone);
}

inline void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss trace: " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, losses[i]);
    out << buf;
  }
}

}  // namespace agekit
