// age-kit: attention-guided erasing pipeline driver.
//
//   age-kit init --profile quick --config exp.cfg
//   age-kit pretrain --config exp.cfg
//   age-kit select-head --config exp.cfg
//   age-kit build-masks --config exp.cfg [--head H]
//   age-kit augment --config exp.cfg --method AGE@0.6
//   age-kit train --config exp.cfg --method AGE@0.6 --seed 0
//   age-kit sweep --config exp.cfg
//   age-kit report --config exp.cfg
//   age-kit phantoms --config exp.cfg --dir data/phantoms
//
// Exit codes: 0 success, 1 internal failure, 2 user or config error.

#include "agekit/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace agekit;

namespace {

struct Options {
  std::string config;
  std::string profile = "quick";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string checkpoint;
  std::string method = "AGE@0.6";
  std::string dir;
  int head = -1;
  int panels = 4;
};

ExperimentConfig resolve_config(const Options& o) {
  auto cfg = o.config.empty() ? profile_config(o.profile) : load_config(o.config);
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  if (!o.output.empty()) cfg.output = o.output;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "experiment config file");
  cmd->add_option("--profile", o.profile, "built-in profile when no config file is given (quick | paper)");
  cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("-o,--output", o.output, "output directory (default: config `output`)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"age-kit: DINO pretraining, attention-guided erasing and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto* init = app.add_subcommand("init", "write a documented config template");
  init->add_option("--profile", o.profile, "quick | paper");
  init->add_option("-c,--config", o.config, "path of the file to write")->required();

  auto* pre = app.add_subcommand("pretrain", "DINO self-supervised pretraining");
  add_common(pre, o);
  pre->add_option("--seed", o.seed, "pretraining seed (overrides `seed`)");

  auto* sel = app.add_subcommand("select-head", "per-head attention statistics and head choice");
  add_common(sel, o);
  sel->add_option("--seed", o.seed, "sampling seed (overrides `seed`)");
  sel->add_option("--checkpoint", o.checkpoint, "DINO checkpoint (default: workspace checkpoint)");

  auto* masks = app.add_subcommand("build-masks", "attention masks for every training image");
  add_common(masks, o);
  masks->add_option("--checkpoint", o.checkpoint, "DINO checkpoint (default: workspace checkpoint)");
  masks->add_option("--head", o.head, "attention head (default: the selection report)");

  auto* aug = app.add_subcommand("augment", "write original / attention / mask / erased panels");
  add_common(aug, o);
  aug->add_option("--method", o.method, "none, RE@P or AGE@P");
  aug->add_option("--seed", o.seed, "augmentation seed");
  aug->add_option("--count", o.panels, "number of panels");
  aug->add_option("--dir", o.dir, "panel directory (default: <output>/panels)");

  auto* train = app.add_subcommand("train", "one downstream run evaluated on the test split");
  add_common(train, o);
  train->add_option("--method", o.method, "none, RE@P or AGE@P");
  std::uint64_t run_seed = 0;
  train->add_option("--seed", run_seed, "run seed");

  auto* sweep = app.add_subcommand("sweep", "every (method, seed) pair of the config; resumes");
  add_common(sweep, o);

  auto* report = app.add_subcommand("report", "summary grid, t-tests and inspection panels");
  add_common(report, o);
  report->add_option("--panels", o.panels, "panels per method (0 disables)");

  auto* ph = app.add_subcommand("phantoms", "export the configured phantom dataset with a manifest");
  add_common(ph, o);
  ph->add_option("--dir", o.dir, "destination directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (init->parsed()) {
      cmd_init(o.profile, o.config);
      std::cout << "wrote " << o.config << '\n';
      return 0;
    }
    const auto cfg = resolve_config(o);
    if (pre->parsed()) {
      cmd_pretrain(cfg, &std::cout);
    } else if (sel->parsed()) {
      cmd_select_head(cfg, o.checkpoint, &std::cout);
    } else if (masks->parsed()) {
      cmd_build_masks(cfg, o.checkpoint, o.head, &std::cout);
    } else if (aug->parsed()) {
      const auto dir = o.dir.empty() ? workspace_for(cfg).root / "panels" : std::filesystem::path(o.dir);
      for (const auto& p : write_panels(cfg, parse_method_label(o.method), dir, o.panels, cfg.seed))
        std::cout << p.string() << '\n';
    } else if (train->parsed()) {
      cmd_train(cfg, parse_method_label(o.method), run_seed, &std::cout);
    } else if (sweep->parsed()) {
      const auto results = cmd_sweep(cfg, &std::cout);
      std::cout << "wrote " << results.string() << '\n';
    } else if (report->parsed()) {
      cmd_report(cfg, &std::cout, o.panels);
    } else if (ph->parsed()) {
      const auto manifest = cmd_phantoms(cfg, o.dir);
      std::cout << "wrote " << manifest.string() << '\n';
    }
    return 0;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
