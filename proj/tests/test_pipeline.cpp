#include "agekit/pipeline.hpp"

#include <gtest/gtest.h>

using namespace agekit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("agekit-pipeline-" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny_config(const fs::path& out) {
  auto cfg = quick_profile();
  cfg.data.phantom_counts = {{Split::Train, {{Density::A, 4}, {Density::B, 6}, {Density::C, 10}, {Density::D, 6}}},
                             {Split::Val, {{Density::A, 1}, {Density::B, 2}, {Density::C, 3}, {Density::D, 2}}},
                             {Split::Test, {{Density::A, 1}, {Density::B, 2}, {Density::C, 3}, {Density::D, 2}}}};
  cfg.dino.epochs = 1;
  cfg.dino.batch_size = 13;
  cfg.train.epochs = 1;
  cfg.sweep = {Method{}, {EraseMode::AGE, 0.6}};
  cfg.seeds = {0, 1};
  cfg.comparisons = {{{EraseMode::AGE, 0.6}, {}}};
  cfg.output = out.string();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Pipeline, InitTemplateParsesBack) {
  const auto dir = fresh_dir("init");
  cmd_init("paper", dir / "paper.cfg");
  const auto c = load_config(dir / "paper.cfg");
  EXPECT_EQ(config_to_text(c), config_to_text(paper_profile()));
  fs::remove_all(dir);
}

TEST(Pipeline, OutputRootFromEnvironment) {
  auto cfg = quick_profile();
  cfg.output = "exp";
  ::setenv("AGEKIT_OUTPUT_ROOT", "/data/root", 1);
  EXPECT_EQ(workspace_for(cfg).root, fs::path("/data/root/exp"));
  cfg.output = "/abs/exp";
  EXPECT_EQ(workspace_for(cfg).root, fs::path("/abs/exp"));
  ::unsetenv("AGEKIT_OUTPUT_ROOT");
}

TEST(Pipeline, MissingManifestIsUserError) {
  auto cfg = tiny_config(fresh_dir("missing"));
  cfg.data.manifest = "/nonexistent/manifest.csv";
  EXPECT_THROW(cmd_pretrain(cfg), UserError);
}

TEST(Pipeline, FullRunResumeAndGuards) {
  const auto dir = fresh_dir("full");
  const auto cfg = tiny_config(dir);
  const auto ws = workspace_for(cfg);

  EXPECT_THROW(cmd_report(cfg), ValidationError);
  EXPECT_THROW(cmd_sweep(cfg), UserError);  // no checkpoint yet

  const auto ckpt = cmd_pretrain(cfg);
  const auto hash = file_hash(ckpt);
  cmd_pretrain(cfg);
  EXPECT_EQ(file_hash(ckpt), hash);
  EXPECT_NO_THROW(load_backbone(ckpt));

  EXPECT_THROW(cmd_sweep(cfg), ConfigError);  // AGE in the sweep, no masks

  const auto rep = cmd_select_head(cfg);
  EXPECT_EQ(rep.per_head.size(), static_cast<std::size_t>(cfg.vit.num_heads));
  EXPECT_EQ(cmd_select_head(cfg).selected_head, rep.selected_head);

  cmd_build_masks(cfg);
  const auto cache = load_mask_cache(ws.masks());
  const auto data = load_dataset(cfg);
  EXPECT_EQ(cache.masks.size(), data.train.size());
  for (const auto& s : data.train) {
    ASSERT_NE(cache.find(s.id), nullptr) << s.id;
    EXPECT_GT(cache.find(s.id)->count(), 0) << s.id;
  }
  EXPECT_EQ(cache.index.at("checkpoint_hash"), hash);
  EXPECT_EQ(cache.index.at("source_head"), rep.selected_head);

  cmd_sweep(cfg);
  EXPECT_EQ(read_results_csv(ws.results()).size(), 4u);

  // A completed pair is not retrained: its (edited) result survives a rerun.
  const auto done = ws.run_dir({EraseMode::AGE, 0.6}, 1) / "result.csv";
  auto runs = read_results_csv(done);
  runs[0].macro_f1 = 0.123;
  write_results_csv(done, runs);
  fs::remove_all(ws.run_dir(Method{}, 0));
  cmd_sweep(cfg);
  const auto all = read_results_csv(ws.results());
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(all[3].macro_f1, 0.123);
  EXPECT_TRUE(fs::exists(ws.run_dir(Method{}, 0) / "result.csv"));

  const auto report = cmd_report(cfg, nullptr, 1);
  EXPECT_TRUE(fs::exists(ws.report_dir() / "report.txt"));
  EXPECT_TRUE(fs::exists(ws.report_dir() / "report.json"));
  int panels = 0;
  for (const auto& e : fs::directory_iterator(ws.report_dir() / "panels")) {
    const auto img = read_png(e.path());
    EXPECT_EQ(img.cols(), 4 * cfg.vit.image_size + 3 * 4);  // four tiles, three gaps
    ++panels;
  }
  EXPECT_EQ(panels, 2);
  EXPECT_NE(report.text.find("AGE"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Pipeline, PaperSweepSize) {
  const auto c = paper_profile();
  EXPECT_EQ(c.sweep.size() * c.seeds.size(), 45u);
}

TEST(Pipeline, HeadSampleSizeOnTwoHundredPhantoms) {
  auto cfg = quick_profile();
  cfg.data.phantom_counts = {{Split::Train, {{Density::A, 20}, {Density::B, 40}, {Density::C, 100}, {Density::D, 40}}}};
  const auto data = load_dataset(cfg);
  Rng rng(1);
  const auto rep = select_head(init_vit<float>(cfg.vit, rng), cfg.vit, data.train, cfg.heads, 3);
  EXPECT_EQ(rep.sample_size, 20);
}

TEST(Pipeline, PhantomExportHasManifest) {
  const auto dir = fresh_dir("phantoms");
  auto cfg = tiny_config(dir);
  const auto manifest = cmd_phantoms(cfg, dir);
  const auto m = load_manifest(manifest);
  EXPECT_EQ(m.entries.size(), 42u);
  EXPECT_FALSE(slurp(dir / "train-C-0000.json").empty());
  fs::remove_all(dir);
}
