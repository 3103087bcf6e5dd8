#pragma once

// Pipeline commands shared by the CLI and the acceptance harness. Every
// command reads an ExperimentConfig and works inside one output directory:
//
//   <output>/pretrain/dino.ckpt, loss.csv
//   <output>/heads/report.json
//   <output>/masks/<id>.pgm, index.json
//   <output>/runs/<method>/seed-<s>/result.csv, log.csv
//   <output>/results.csv
//   <output>/report/report.txt, report.json, panels/

#include "agekit/config.hpp"

#include <cstdlib>
#include <ostream>

namespace agekit {

struct Workspace {
  std::filesystem::path root;

  std::filesystem::path checkpoint() const { return root / "pretrain" / "dino.ckpt"; }
  std::filesystem::path loss_trace() const { return root / "pretrain" / "loss.csv"; }
  std::filesystem::path head_report() const { return root / "heads" / "report.json"; }
  std::filesystem::path masks() const { return root / "masks"; }
  std::filesystem::path run_dir(const Method& m, std::uint64_t seed) const {
    return root / "runs" / method_label(m) / ("seed-" + std::to_string(seed));
  }
  std::filesystem::path results() const { return root / "results.csv"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

/// Relative output paths resolve against $AGEKIT_OUTPUT_ROOT when it is set.
inline Workspace workspace_for(const ExperimentConfig& cfg) {
  std::filesystem::path out = cfg.output;
  if (out.is_relative())
    if (const char* root = std::getenv("AGEKIT_OUTPUT_ROOT"); root && *root) out = std::filesystem::path(root) / out;
  return {out};
}

struct Dataset {
  std::vector<ImageSample> train, val, test;
  std::map<std::string, PhantomSpec> phantom_specs;  // empty for manifest data

  const std::vector<ImageSample>& split(Split s) const {
    return s == Split::Train ? train : s == Split::Val ? val : test;
  }
};

/// Loads the manifest, or generates phantoms when no manifest is configured.
/// Images are resized to the backbone input side and min-max normalized.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  const int side = cfg.vit.image_size, patch = cfg.vit.patch_size;
  if (!cfg.data.manifest.empty()) {
    if (!std::filesystem::exists(cfg.data.manifest)) throw IoError("dataset manifest not found: " + cfg.data.manifest);
    const auto m = load_manifest(cfg.data.manifest);
    d.train = load_split(m, Split::Train, side, patch);
    d.val = load_split(m, Split::Val, side, patch);
    d.test = load_split(m, Split::Test, side, patch);
  } else {
    for (auto& p : generate_phantom_dataset(cfg.data.phantom_seed, cfg.data.phantom_counts, cfg.data.phantom)) {
      auto s = resize_and_normalize(p.sample, side, patch);
      d.phantom_specs.emplace(s.id, std::move(p.spec));
      (p.split == Split::Train ? d.train : p.split == Split::Val ? d.val : d.test).push_back(std::move(s));
    }
  }
  if (d.train.empty()) throw ValidationError("the training split is empty");
  return d;
}

namespace detail {

inline void note(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << std::endl;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void require_file(const std::filesystem::path& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) throw IoError(path.string() + " not found; " + hint);
}

inline VitParams<float> backbone_for(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint) {
  require_file(checkpoint, "run `age-kit pretrain` first");
  ViTConfig vit;
  auto bb = load_backbone(checkpoint, &vit);
  if (!(vit == cfg.vit)) throw ConfigError("checkpoint backbone shape does not match the vit.* settings");
  return bb;
}

}  // namespace detail

/// Writes the documented config template for `profile`.
inline void cmd_init(const std::string& profile, const std::filesystem::path& path) {
  detail::write_text(path, config_to_text(profile_config(profile)));
}

/// DINO pretraining on the training split; keeps the least-smoothed-loss state.
inline std::filesystem::path cmd_pretrain(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto ws = workspace_for(cfg);
  const auto data = load_dataset(cfg);
  detail::note(log, "pretraining on " + std::to_string(data.train.size()) + " images");
  const long report_every = std::max<long>(1, (static_cast<long>(data.train.size()) + cfg.dino.batch_size - 1) /
                                                  cfg.dino.batch_size);
  const auto res = pretrain(data.train, cfg.vit, cfg.dino, cfg.seed, [&](long step, double loss) {
    if (step % report_every == 0) detail::note(log, "  step " + std::to_string(step) + " loss " + cfgio::fmt(loss));
  });
  std::filesystem::create_directories(ws.checkpoint().parent_path());
  save_dino_checkpoint(ws.checkpoint(), res.best, cfg.vit, cfg.dino);
  write_loss_trace(ws.loss_trace(), res.losses);
  detail::note(log, "kept step " + std::to_string(res.best_step) + " -> " + ws.checkpoint().string());
  return ws.checkpoint();
}

/// Per-head active-cell statistics on a seeded sample of the training split.
inline HeadSelectionReport cmd_select_head(const ExperimentConfig& cfg, std::filesystem::path checkpoint = {},
                                           std::ostream* log = nullptr) {
  cfg.validate();
  const auto ws = workspace_for(cfg);
  if (checkpoint.empty()) checkpoint = ws.checkpoint();
  const auto backbone = detail::backbone_for(cfg, checkpoint);
  const auto data = load_dataset(cfg);
  const auto rep = select_head(backbone, cfg.vit, data.train, cfg.heads, cfg.seed);
  auto j = to_json(rep);
  j["checkpoint_hash"] = file_hash(checkpoint);
  j["activation_threshold"] = cfg.heads.activation_threshold;
  j["count_ceiling"] = cfg.heads.count_ceiling;
  detail::write_text(ws.head_report(), j.dump(2) + "\n");
  detail::note(log, "selected head " + std::to_string(rep.selected_head) + (rep.fallback ? " (fallback)" : "") +
                        " from " + std::to_string(rep.sample_size) + " images");
  return rep;
}

/// Thresholded attention masks of `head` for every training image. A negative
/// head reads the selection report.
inline std::filesystem::path cmd_build_masks(const ExperimentConfig& cfg, std::filesystem::path checkpoint = {},
                                             int head = -1, std::ostream* log = nullptr) {
  cfg.validate();
  const auto ws = workspace_for(cfg);
  if (checkpoint.empty()) checkpoint = ws.checkpoint();
  const auto backbone = detail::backbone_for(cfg, checkpoint);
  const auto hash = file_hash(checkpoint);
  if (head < 0) {
    detail::require_file(ws.head_report(), "run `age-kit select-head` or pass --head");
    const auto j = detail::read_json(ws.head_report());
    if (j.value("checkpoint_hash", "") != hash)
      throw ConfigError("head report was computed from a different checkpoint; rerun select-head");
    head = j.at("selected_head");
  }
  if (head >= cfg.vit.num_heads) throw ConfigError("head " + std::to_string(head) + " out of range");
  const auto data = load_dataset(cfg);
  std::map<std::string, BinaryMask> masks;
  for (const auto& s : data.train) {
    const auto maps = extract_cls_attention(backbone, cfg.vit, s.pixels);
    auto m = make_mask(maps.maps[static_cast<std::size_t>(head)], cfg.mask.threshold, cfg.mask.dilation_cells,
                       cfg.vit.patch_size, cfg.mask.fallback);
    m.source_head = head;
    masks.emplace(s.id, std::move(m));
  }
  std::filesystem::remove_all(ws.masks());
  write_mask_cache(ws.masks(), masks,
                   {{"source_head", head},
                    {"threshold", cfg.mask.threshold},
                    {"dilation_cells", cfg.mask.dilation_cells},
                    {"patch_size", cfg.vit.patch_size},
                    {"image_size", cfg.vit.image_size},
                    {"checkpoint_hash", hash}});
  detail::note(log, std::to_string(masks.size()) + " masks from head " + std::to_string(head) + " -> " +
                        ws.masks().string());
  return ws.masks();
}

/// Loads the mask cache and checks it matches the configured backbone.
inline MaskCache load_checked_masks(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                    const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(dir / "index.json"))
    throw ConfigError("AGE needs a mask cache at " + dir.string() + "; run `age-kit build-masks` first");
  auto cache = load_mask_cache(dir);
  if (cache.index.value("image_size", 0) != cfg.vit.image_size)
    throw ConfigError("mask cache resolution does not match vit.image_size");
  if (std::filesystem::exists(checkpoint) && cache.index.value("checkpoint_hash", "") != file_hash(checkpoint))
    throw ConfigError("mask cache was built from a different checkpoint; rerun build-masks");
  return cache;
}

/// Visual-inspection panel: original | attention overlay | mask | augmented.
inline RgbImage inspection_panel(const ImageSample& s, const Mat<double>& map, const BoolGrid* mask,
                                 const Image& augmented) {
  std::vector<RgbImage> tiles{gray_to_rgb(s.pixels), attention_overlay(s.pixels, map)};
  tiles.push_back(gray_to_rgb(mask ? mask_to_image(*mask) : Image::Zero(s.pixels.rows(), s.pixels.cols())));
  tiles.push_back(gray_to_rgb(augmented));
  return hstack(tiles);
}

inline int head_for_panels(const Workspace& ws, const MaskCache* masks) {
  if (masks) return masks->index.value("source_head", 0);
  if (std::filesystem::exists(ws.head_report())) return detail::read_json(ws.head_report()).value("selected_head", 0);
  return 0;
}

/// Writes `count` inspection panels for `method` applied to training images.
inline std::vector<std::filesystem::path> write_panels(const ExperimentConfig& cfg, const Method& method,
                                                       const std::filesystem::path& dir, int count,
                                                       std::uint64_t seed) {
  const auto ws = workspace_for(cfg);
  const auto backbone = detail::backbone_for(cfg, ws.checkpoint());
  const auto data = load_dataset(cfg);
  std::optional<MaskCache> masks;
  if (std::filesystem::exists(ws.masks() / "index.json")) masks = load_checked_masks(cfg, ws.masks(), ws.checkpoint());
  if (method.mode == EraseMode::AGE && !masks)
    throw ConfigError("AGE panels need a mask cache; run `age-kit build-masks` first");
  const int head = head_for_panels(ws, masks ? &*masks : nullptr);
  auto policy = cfg.train_config(method, seed).policy;
  policy.probability = method.mode == EraseMode::None ? 0.0 : 1.0;  // always show the erasing step
  policy.standard_augs.clear();

  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto picks = sample_subset(data.train.size(), std::min(1.0, static_cast<double>(count) / data.train.size()), seed);
  for (auto i : picks) {
    const auto& s = data.train[i];
    const auto maps = extract_cls_attention(backbone, cfg.vit, s.pixels);
    const BoolGrid* mask = masks ? masks->find(s.id) : nullptr;
    Rng rng = stream_for(seed, 0, s.id);
    const auto out = apply_policy(s.pixels, mask, policy, rng);
    const auto path = dir / (s.id + "_" + method_label(method) + ".png");
    write_png(path, inspection_panel(s, maps.maps[static_cast<std::size_t>(head)], mask, out.image));
    written.push_back(path);
  }
  return written;
}

/// One downstream run: fine-tune, evaluate on the test split, write result.csv
/// and log.csv under runs/<method>/seed-<s>/.
inline RunResult cmd_train(const ExperimentConfig& cfg, const Method& method, std::uint64_t seed,
                           std::ostream* log = nullptr) {
  cfg.validate();
  const auto ws = workspace_for(cfg);
  const auto backbone = detail::backbone_for(cfg, ws.checkpoint());
  const auto data = load_dataset(cfg);
  if (data.val.empty() || data.test.empty()) throw ValidationError("validation and test splits must be non-empty");
  std::optional<MaskCache> masks;
  if (method.mode == EraseMode::AGE) masks = load_checked_masks(cfg, ws.masks(), ws.checkpoint());
  MaskLookup lookup;
  if (masks) lookup = [&](const std::string& id) { return masks->find(id); };

  const auto label = method_label(method);
  detail::note(log, "train " + label + " seed " + std::to_string(seed));
  const auto res = train_classifier(data.train, data.val, backbone, cfg.vit, cfg.train_config(method, seed), lookup,
                                    [&](const EpochLog& e) {
                                      detail::note(log, "  epoch " + std::to_string(e.epoch) + " loss " +
                                                            cfgio::fmt(e.train_loss) + " val macro F1 " +
                                                            cfgio::fmt(e.val_macro_f1));
                                    });
  const auto run = make_run_result(method, seed, evaluate(res.model, cfg.vit, data.test));
  const auto dir = ws.run_dir(method, seed);
  std::filesystem::create_directories(dir);
  write_training_log(dir / "log.csv", res.log);
  write_results_csv(dir / "result.csv", {run});
  detail::note(log, "  test macro F1 " + format_score(run.macro_f1) + " (best epoch " + std::to_string(res.best_epoch) + ")");
  return run;
}

/// Reads the per-run results of every configured (method, seed) pair that has
/// completed, in sweep order.
inline std::vector<RunResult> collect_results(const ExperimentConfig& cfg) {
  const auto ws = workspace_for(cfg);
  std::vector<RunResult> all;
  for (const auto& m : cfg.sweep)
    for (auto seed : cfg.seeds) {
      const auto path = ws.run_dir(m, seed) / "result.csv";
      if (!std::filesystem::exists(path)) continue;
      for (auto& r : read_results_csv(path)) all.push_back(std::move(r));
    }
  return all;
}

/// Every (method, seed) pair of the sweep. Completed pairs are skipped, so an
/// interrupted sweep resumes where it stopped. Writes results.csv.
inline std::filesystem::path cmd_sweep(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto ws = workspace_for(cfg);
  detail::require_file(ws.checkpoint(), "run `age-kit pretrain` first");
  if (std::any_of(cfg.sweep.begin(), cfg.sweep.end(), [](const Method& m) { return m.mode == EraseMode::AGE; }))
    load_checked_masks(cfg, ws.masks(), ws.checkpoint());
  for (const auto& m : cfg.sweep)
    for (auto seed : cfg.seeds) {
      if (std::filesystem::exists(ws.run_dir(m, seed) / "result.csv")) {
        detail::note(log, "skip " + method_label(m) + " seed " + std::to_string(seed) + " (done)");
        continue;
      }
      cmd_train(cfg, m, seed, log);
    }
  write_results_csv(ws.results(), collect_results(cfg));
  return ws.results();
}

/// Grid of mean (std) macro F1, t-tests for the configured pairs, and
/// inspection panels when a checkpoint is available.
inline Report cmd_report(const ExperimentConfig& cfg, std::ostream* log = nullptr, int panels = 4) {
  const auto ws = workspace_for(cfg);
  std::vector<RunResult> runs;
  if (std::filesystem::exists(ws.results())) runs = read_results_csv(ws.results());
  if (runs.empty()) runs = collect_results(cfg);
  if (runs.empty()) throw ValidationError("no results under " + ws.root.string() + "; run `age-kit sweep` first");
  std::map<Method, std::vector<RunResult>> by_method;
  for (auto& r : runs) by_method[r.method].push_back(std::move(r));
  std::vector<Comparison> comparisons;
  for (const auto& c : cfg.comparisons)
    if (by_method.count(c.a) && by_method.count(c.b)) comparisons.push_back(c);
  const auto report = build_report(by_method, comparisons, cfg.ttest);
  detail::write_text(ws.report_dir() / "report.txt", report.text);
  detail::write_text(ws.report_dir() / "report.json", report.json.dump(2) + "\n");
  if (panels > 0 && std::filesystem::exists(ws.checkpoint()))
    for (const auto& m : cfg.sweep)
      if (m.mode != EraseMode::AGE || std::filesystem::exists(ws.masks() / "index.json"))
        write_panels(cfg, m, ws.report_dir() / "panels", panels, cfg.seed);
  detail::note(log, report.text);
  return report;
}

/// Writes the configured phantom dataset (PNG images, spec sidecars, truth
/// masks, manifest.csv) to `dir`.
inline std::filesystem::path cmd_phantoms(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  return export_phantom_dataset(dir, generate_phantom_dataset(cfg.data.phantom_seed, cfg.data.phantom_counts,
                                                              cfg.data.phantom));
}

}  // namespace agekit
