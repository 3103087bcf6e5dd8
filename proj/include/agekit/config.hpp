#pragma once

// Experiment configuration: a flat `key = value` file covering data, model,
// pretraining, head selection, masks, downstream training and the sweep.
// Two built-in profiles: `quick` (phantoms, tiny model) and `paper` (the
// full protocol at 224/16 with a DeiT-small-shaped backbone).

#include "agekit/attnmap.hpp"
#include "agekit/dino.hpp"
#include "agekit/downstream.hpp"
#include "agekit/evalstat.hpp"
#include "agekit/phantom.hpp"

#include <charconv>
#include <functional>
#include <set>

namespace agekit {

struct MaskConfig {
  double threshold = 0.5;
  int dilation_cells = 1;
  bool fallback = true;
};

struct DataConfig {
  std::string manifest;  // empty: generate phantoms
  std::uint64_t phantom_seed = 1;
  PhantomOptions phantom;
  PhantomCounts phantom_counts;
};

/// Standard augmentation knobs; expanded into the policy's ordered list.
struct StandardAugConfig {
  double hflip_probability = 0.5;
  double rotation_degrees = 10.0;
  double jitter = 0.10;

  std::vector<StandardAug> expand() const {
    std::vector<StandardAug> out;
    if (hflip_probability > 0) out.push_back({AugKind::HFlip, hflip_probability, 0});
    if (rotation_degrees > 0) out.push_back({AugKind::Rotate, 1.0, rotation_degrees});
    if (jitter > 0) out.push_back({AugKind::Jitter, 1.0, jitter});
    return out;
  }
};

struct ExperimentConfig {
  std::string profile = "quick";
  DataConfig data;
  ViTConfig vit;
  DinoConfig dino;
  HeadSelectionConfig heads;
  MaskConfig mask;
  TrainConfig train;
  StandardAugConfig augs;
  std::vector<Method> sweep;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed = 0;  // pretraining and head-selection seed
  std::vector<Comparison> comparisons;
  TTestVariant ttest = TTestVariant::Pooled;
  std::string output = "runs";

  /// Downstream config for one sweep entry.
  TrainConfig train_config(const Method& m, std::uint64_t run_seed) const {
    TrainConfig t = train;
    t.policy.mode = m.mode;
    t.policy.probability = m.mode == EraseMode::None ? 0.0 : m.probability;
    t.policy.standard_augs = augs.expand();
    t.seed = run_seed;
    return t;
  }

  void validate() const {
    vit.validate();
    dino.validate();
    heads.validate();
    for (int side : {dino.global_crop_size, dino.local_crop_size})
      if (side <= 0 || side % vit.patch_size != 0) throw ConfigError("crop sizes must be multiples of vit.patch_size");
    if (!(mask.threshold > 0 && mask.threshold < 1)) throw ConfigError("mask.threshold must lie in (0,1)");
    if (mask.dilation_cells < 0) throw ConfigError("mask.dilation_cells must be non-negative");
    for (double p : {augs.hflip_probability})
      if (p < 0 || p > 1) throw ConfigError("train.hflip_probability must lie in [0,1]");
    if (augs.rotation_degrees < 0 || augs.jitter < 0 || augs.jitter >= 1)
      throw ConfigError("rotation and jitter magnitudes must be non-negative (jitter < 1)");
    train.validate();
    if (sweep.empty()) throw ConfigError("sweep must list at least one method");
    if (std::set<Method>(sweep.begin(), sweep.end()).size() != sweep.size()) throw ConfigError("sweep entries must be unique");
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("seeds must be unique");
    for (const auto& c : comparisons)
      if (std::find(sweep.begin(), sweep.end(), c.a) == sweep.end() ||
          std::find(sweep.begin(), sweep.end(), c.b) == sweep.end())
        throw ConfigError("comparison " + method_label(c.a) + ":" + method_label(c.b) + " names a method outside the sweep");
    if (data.manifest.empty() && data.phantom.image_size < 64) throw ConfigError("data.phantom.image_size must be >= 64");
  }
};

// ---------------------------------------------------------------------------
// Value formatting and parsing

namespace cfgio {

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(detail::trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(detail::trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

inline std::string fmt_interval(double lo, double hi) { return fmt(lo) + "," + fmt(hi); }

inline std::pair<double, double> parse_interval(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() != 2) throw ConfigError("expected 'lo,hi', got '" + s + "'");
  return {parse_number<double>(parts[0]), parse_number<double>(parts[1])};
}

inline std::string fmt_counts(const std::map<Density, int>& m) {
  std::string out;
  for (Density d : kAllDensities) {
    if (!out.empty()) out += ',';
    auto it = m.find(d);
    out += density_name(d) + ":" + std::to_string(it == m.end() ? 0 : it->second);
  }
  return out;
}

inline std::map<Density, int> parse_counts(const std::string& s) {
  std::map<Density, int> m;
  for (const auto& item : split(s, ',')) {
    const auto kv = split(item, ':');
    if (kv.size() != 2) throw ConfigError("expected 'A:n,B:n,...', got '" + s + "'");
    const auto d = parse_density(kv[0]);
    if (!d) throw ConfigError("unknown class '" + kv[0] + "'");
    const int n = parse_number<int>(kv[1]);
    if (n < 0) throw ConfigError("negative phantom count");
    m[*d] = n;
  }
  return m;
}

}  // namespace cfgio

struct ConfigField {
  std::string key;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

/// Every configurable key, in template order.
inline const std::vector<ConfigField>& config_fields() {
  using namespace cfgio;
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto num = [&f](std::string key, std::string doc, auto member) {
      using T = std::remove_reference_t<decltype(member(std::declval<C&>()))>;
      f.push_back({std::move(key), std::move(doc), [member](const C& c) { return fmt(member(const_cast<C&>(c))); },
                   [member](C& c, const std::string& v) {
                     if constexpr (std::is_same_v<T, bool>) member(c) = parse_bool(v);
                     else member(c) = parse_number<T>(v);
                   }});
    };
    auto str = [&f](std::string key, std::string doc, auto member) {
      f.push_back({std::move(key), std::move(doc), [member](const C& c) { return member(const_cast<C&>(c)); },
                   [member](C& c, const std::string& v) { member(c) = v; }});
    };
    auto interval = [&f](std::string key, std::string doc, auto lo, auto hi) {
      f.push_back({std::move(key), std::move(doc),
                   [lo, hi](const C& c) { return fmt_interval(lo(const_cast<C&>(c)), hi(const_cast<C&>(c))); },
                   [lo, hi](C& c, const std::string& v) { std::tie(lo(c), hi(c)) = parse_interval(v); }});
    };

    str("profile", "profile the file was generated from (quick | paper)", [](C& c) -> std::string& { return c.profile; });
    str("output", "output directory (relative paths resolve against $AGEKIT_OUTPUT_ROOT when set)",
        [](C& c) -> std::string& { return c.output; });
    num("seed", "seed for pretraining and head selection", [](C& c) -> std::uint64_t& { return c.seed; });

    str("data.manifest", "manifest CSV (id,path,label,split); empty generates phantoms",
        [](C& c) -> std::string& { return c.data.manifest; });
    num("data.phantom.seed", "phantom generator seed", [](C& c) -> std::uint64_t& { return c.data.phantom_seed; });
    num("data.phantom.image_size", "phantom side length in pixels", [](C& c) -> int& { return c.data.phantom.image_size; });
    num("data.phantom.mlo_probability", "fraction of phantoms with a pectoral wedge",
        [](C& c) -> double& { return c.data.phantom.mlo_probability; });
    num("data.phantom.skin_fold_probability", "fraction of phantoms with a skin fold",
        [](C& c) -> double& { return c.data.phantom.skin_fold_probability; });
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      f.push_back({"data.phantom." + split_name(s), "phantom class counts for the " + split_name(s) + " split",
                   [s](const C& c) {
                     auto it = c.data.phantom_counts.find(s);
                     return fmt_counts(it == c.data.phantom_counts.end() ? std::map<Density, int>{} : it->second);
                   },
                   [s](C& c, const std::string& v) { c.data.phantom_counts[s] = parse_counts(v); }});
    }

    num("vit.image_size", "input side length", [](C& c) -> int& { return c.vit.image_size; });
    num("vit.patch_size", "patch side length", [](C& c) -> int& { return c.vit.patch_size; });
    num("vit.embed_dim", "token width (multiple of num_heads)", [](C& c) -> int& { return c.vit.embed_dim; });
    num("vit.depth", "transformer blocks", [](C& c) -> int& { return c.vit.depth; });
    num("vit.num_heads", "attention heads per block", [](C& c) -> int& { return c.vit.num_heads; });
    num("vit.mlp_ratio", "MLP hidden width / embed_dim", [](C& c) -> double& { return c.vit.mlp_ratio; });

    interval("dino.global_crop_scale", "area fraction interval of global crops",
             [](C& c) -> double& { return c.dino.global_crop_scale.lo; }, [](C& c) -> double& { return c.dino.global_crop_scale.hi; });
    interval("dino.local_crop_scale", "area fraction interval of local crops",
             [](C& c) -> double& { return c.dino.local_crop_scale.lo; }, [](C& c) -> double& { return c.dino.local_crop_scale.hi; });
    num("dino.num_global_crops", "global views per image", [](C& c) -> int& { return c.dino.num_global_crops; });
    num("dino.num_local_crops", "local views per image", [](C& c) -> int& { return c.dino.num_local_crops; });
    num("dino.global_crop_size", "global view side length", [](C& c) -> int& { return c.dino.global_crop_size; });
    num("dino.local_crop_size", "local view side length", [](C& c) -> int& { return c.dino.local_crop_size; });
    num("dino.projection_dim", "projection head output size", [](C& c) -> int& { return c.dino.projection_dim; });
    num("dino.head_hidden_dim", "projection MLP width", [](C& c) -> int& { return c.dino.head_hidden_dim; });
    num("dino.head_bottleneck_dim", "projection bottleneck width", [](C& c) -> int& { return c.dino.head_bottleneck_dim; });
    num("dino.student_temp", "student softmax temperature", [](C& c) -> double& { return c.dino.student_temp; });
    num("dino.teacher_temp", "teacher softmax temperature", [](C& c) -> double& { return c.dino.teacher_temp; });
    num("dino.center_momentum", "teacher centering momentum", [](C& c) -> double& { return c.dino.center_momentum; });
    num("dino.center_warm_start", "initialize the center from the first teacher batch",
        [](C& c) -> bool& { return c.dino.center_warm_start; });
    num("dino.ema_momentum_start", "teacher EMA momentum at step 0", [](C& c) -> double& { return c.dino.ema_momentum_start; });
    num("dino.ema_momentum_end", "teacher EMA momentum at the last step (cosine ramp)",
        [](C& c) -> double& { return c.dino.ema_momentum_end; });
    num("dino.epochs", "pretraining epochs", [](C& c) -> int& { return c.dino.epochs; });
    num("dino.batch_size", "pretraining batch size", [](C& c) -> int& { return c.dino.batch_size; });
    num("dino.learning_rate", "peak AdamW learning rate", [](C& c) -> double& { return c.dino.learning_rate; });
    num("dino.min_learning_rate", "final learning rate (cosine)", [](C& c) -> double& { return c.dino.min_learning_rate; });
    num("dino.warmup_epochs", "linear learning-rate warmup epochs", [](C& c) -> int& { return c.dino.warmup_epochs; });
    num("dino.weight_decay", "decoupled weight decay", [](C& c) -> double& { return c.dino.weight_decay; });
    num("dino.smoothing_window", "steps in the loss smoothing window used to pick the checkpoint",
        [](C& c) -> int& { return c.dino.smoothing_window; });
    num("dino.clip_grad", "per-tensor gradient norm cap (0 disables)", [](C& c) -> double& { return c.dino.clip_grad; });
    num("dino.freeze_last_layer_epochs", "epochs during which the projection output layer is frozen",
        [](C& c) -> int& { return c.dino.freeze_last_layer_epochs; });
    num("dino.augment", "flip / jitter / blur / solarize on crops", [](C& c) -> bool& { return c.dino.augment; });

    num("heads.sample_fraction", "fraction of the training split used for head statistics",
        [](C& c) -> double& { return c.heads.sample_fraction; });
    num("heads.activation_threshold", "normalized attention above which a cell is active",
        [](C& c) -> double& { return c.heads.activation_threshold; });
    num("heads.count_ceiling", "heads whose maximum active-cell count is below this qualify",
        [](C& c) -> int& { return c.heads.count_ceiling; });
    num("heads.histogram_bins", "bins of the per-head count histogram", [](C& c) -> int& { return c.heads.histogram_bins; });

    num("mask.threshold", "normalized attention above which a cell is foreground", [](C& c) -> double& { return c.mask.threshold; });
    num("mask.dilation_cells", "Chebyshev dilation of the foreground, in cells", [](C& c) -> int& { return c.mask.dilation_cells; });
    num("mask.fallback", "mark the argmax cell when the foreground is empty", [](C& c) -> bool& { return c.mask.fallback; });

    num("train.epochs", "maximum downstream epochs", [](C& c) -> int& { return c.train.epochs; });
    num("train.batch_size", "downstream batch size", [](C& c) -> int& { return c.train.batch_size; });
    num("train.learning_rate", "AdamW learning rate", [](C& c) -> double& { return c.train.learning_rate; });
    num("train.weight_decay", "decoupled weight decay", [](C& c) -> double& { return c.train.weight_decay; });
    num("train.patience", "early-stopping patience (epochs without validation macro F1 gain)",
        [](C& c) -> int& { return c.train.patience; });
    f.push_back({"train.loss", "softmax_ce | ovr_bce",
                 [](const C& c) { return std::string(c.train.loss == LossKind::SoftmaxCE ? "softmax_ce" : "ovr_bce"); },
                 [](C& c, const std::string& v) {
                   if (v == "softmax_ce") c.train.loss = LossKind::SoftmaxCE;
                   else if (v == "ovr_bce") c.train.loss = LossKind::OneVsRestBCE;
                   else throw ConfigError("train.loss must be softmax_ce or ovr_bce");
                 }});
    f.push_back({"train.class_weights", "auto (N / (K n_c) from training counts) or four comma-separated weights",
                 [](const C& c) {
                   if (c.train.class_weights.empty()) return std::string("auto");
                   std::string s;
                   for (double w : c.train.class_weights) s += (s.empty() ? "" : ",") + fmt(w);
                   return s;
                 },
                 [](C& c, const std::string& v) {
                   c.train.class_weights.clear();
                   if (v == "auto") return;
                   for (const auto& x : split(v, ',')) c.train.class_weights.push_back(parse_number<double>(x));
                 }});
    num("train.fill_value", "intensity written over erased AGE pixels", [](C& c) -> float& { return c.train.policy.fill_value; });
    interval("train.re_area", "random erasing area fraction interval",
             [](C& c) -> double& { return c.train.policy.re.area.lo; }, [](C& c) -> double& { return c.train.policy.re.area.hi; });
    interval("train.re_aspect", "random erasing aspect ratio interval",
             [](C& c) -> double& { return c.train.policy.re.aspect.lo; }, [](C& c) -> double& { return c.train.policy.re.aspect.hi; });
    num("train.hflip_probability", "standard augmentation: horizontal flip probability",
        [](C& c) -> double& { return c.augs.hflip_probability; });
    num("train.rotation_degrees", "standard augmentation: rotation range in degrees",
        [](C& c) -> double& { return c.augs.rotation_degrees; });
    num("train.jitter", "standard augmentation: brightness/contrast range", [](C& c) -> double& { return c.augs.jitter; });

    f.push_back({"sweep", "methods to train: none, RE@P, AGE@P",
                 [](const C& c) {
                   std::string s;
                   for (const auto& m : c.sweep) s += (s.empty() ? "" : ",") + method_label(m);
                   return s;
                 },
                 [](C& c, const std::string& v) {
                   c.sweep.clear();
                   for (const auto& x : split(v, ',')) c.sweep.push_back(parse_method_label(x));
                 }});
    f.push_back({"seeds", "downstream run seeds",
                 [](const C& c) {
                   std::string s;
                   for (auto x : c.seeds) s += (s.empty() ? "" : ",") + fmt(x);
                   return s;
                 },
                 [](C& c, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& x : split(v, ',')) c.seeds.push_back(parse_number<std::uint64_t>(x));
                 }});
    f.push_back({"compare", "t-test pairs a:b",
                 [](const C& c) {
                   std::string s;
                   for (const auto& p : c.comparisons) s += (s.empty() ? "" : ",") + method_label(p.a) + ":" + method_label(p.b);
                   return s;
                 },
                 [](C& c, const std::string& v) {
                   c.comparisons.clear();
                   for (const auto& x : split(v, ',')) {
                     const auto ab = split(x, ':');
                     if (ab.size() != 2) throw ConfigError("compare entries look like AGE@0.6:none");
                     c.comparisons.push_back({parse_method_label(ab[0]), parse_method_label(ab[1])});
                   }
                 }});
    f.push_back({"ttest", "pooled | welch",
                 [](const C& c) { return std::string(c.ttest == TTestVariant::Pooled ? "pooled" : "welch"); },
                 [](C& c, const std::string& v) {
                   if (v == "pooled") c.ttest = TTestVariant::Pooled;
                   else if (v == "welch") c.ttest = TTestVariant::Welch;
                   else throw ConfigError("ttest must be pooled or welch");
                 }});
    return f;
  }();
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

// ---------------------------------------------------------------------------
// Profiles

inline ExperimentConfig quick_profile() {
  ExperimentConfig c;
  c.profile = "quick";
  c.output = "runs/quick";
  c.data.phantom.image_size = 64;
  c.data.phantom_counts = {{Split::Train, {{Density::A, 2}, {Density::B, 20}, {Density::C, 150}, {Density::D, 28}}},
                           {Split::Val, {{Density::A, 1}, {Density::B, 6}, {Density::C, 45}, {Density::D, 8}}},
                           {Split::Test, {{Density::A, 1}, {Density::B, 6}, {Density::C, 45}, {Density::D, 8}}}};
  c.vit = {64, 8, 24, 2, 6, 2.0, 0};
  auto& d = c.dino;
  d.global_crop_size = 64;
  d.local_crop_size = 32;
  d.num_local_crops = 2;
  d.projection_dim = 64;
  d.head_hidden_dim = 64;
  d.head_bottleneck_dim = 32;
  d.epochs = 10;
  d.warmup_epochs = 1;
  d.ema_momentum_start = 0.99;
  c.heads.count_ceiling = 16;  // same share of the 8x8 grid as 50 of 196 cells
  c.train.epochs = 30;
  c.train.learning_rate = 1e-3;
  c.sweep = {Method{}, {EraseMode::RE, 0.6}, {EraseMode::AGE, 0.6}};
  c.seeds = {0, 1};
  c.comparisons = {{{EraseMode::AGE, 0.6}, {}}, {{EraseMode::AGE, 0.6}, {EraseMode::RE, 0.6}}};
  return c;
}

inline ExperimentConfig paper_profile() {
  ExperimentConfig c;
  c.profile = "paper";
  c.output = "runs/paper";
  c.data.manifest = "data/manifest.csv";
  c.vit = {224, 16, 384, 12, 6, 4.0, 0};  // DeiT-small shape
  auto& d = c.dino;
  d.global_crop_scale = {0.4, 1.0};
  d.local_crop_scale = {0.05, 0.4};
  d.num_global_crops = 2;
  d.num_local_crops = 8;
  d.global_crop_size = 224;
  d.local_crop_size = 96;
  d.projection_dim = 4096;
  d.head_hidden_dim = 2048;
  d.head_bottleneck_dim = 256;
  d.epochs = 300;
  d.batch_size = 32;
  c.heads = {};
  c.train.epochs = 50;
  c.train.batch_size = 8;
  c.train.learning_rate = 5e-6;
  c.train.weight_decay = 1e-4;
  c.sweep = {Method{}};
  for (auto mode : {EraseMode::RE, EraseMode::AGE})
    for (double p : {0.2, 0.4, 0.6, 0.8}) c.sweep.push_back({mode, p});
  c.seeds = {0, 1, 2, 3, 4};
  c.comparisons = {{{EraseMode::AGE, 0.6}, {}}, {{EraseMode::AGE, 0.6}, {EraseMode::RE, 0.2}}};
  return c;
}

inline ExperimentConfig profile_config(const std::string& name) {
  if (name == "quick") return quick_profile();
  if (name == "paper") return paper_profile();
  throw ConfigError("unknown profile '" + name + "' (expected quick or paper)");
}

// ---------------------------------------------------------------------------
// Text form

inline std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "# age-kit experiment configuration (" << c.profile << " profile)\n";
  std::string section;
  for (const auto& f : config_fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    if (sec != section) {
      os << "\n# [" << sec << "]\n";
      section = sec;
    }
    os << "# " << f.doc << '\n' << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

/// Applies one `key=value` override.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const auto key = detail::trim(assignment.substr(0, eq));
  const auto& field = config_field(key);
  try {
    field.set(c, detail::trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

/// Parses a config file body. A `profile` line selects the base defaults;
/// every other line overrides one key. Unknown or repeated keys are errors.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config") {
  std::vector<std::tuple<int, std::string, std::string>> lines;
  std::istringstream in(text);
  std::string line, base = "quick";
  std::set<std::string> seen;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
    if (key == "profile") base = value;
    lines.emplace_back(no, std::move(key), std::move(value));
  }
  ExperimentConfig c = profile_config(base);
  for (const auto& [no, key, value] : lines) {
    try {
      config_field(key).set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace agekit
