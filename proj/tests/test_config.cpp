#include "agekit/config.hpp"

#include <gtest/gtest.h>

using namespace agekit;

TEST(Config, PaperProfileRoundTripsProtocol) {
  const auto c = parse_config(config_to_text(paper_profile()));
  EXPECT_EQ(c.vit.image_size, 224);
  EXPECT_EQ(c.vit.patch_size, 16);
  EXPECT_EQ(c.vit.num_heads, 6);
  EXPECT_EQ(c.dino.global_crop_scale, (ScaleInterval{0.4, 1.0}));
  EXPECT_EQ(c.dino.local_crop_scale, (ScaleInterval{0.05, 0.4}));
  EXPECT_EQ(c.dino.global_crop_size, 224);
  EXPECT_EQ(c.dino.epochs, 300);
  EXPECT_EQ(c.dino.batch_size, 32);
  EXPECT_EQ(c.train.epochs, 50);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_EQ(c.train.learning_rate, 5e-6);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.heads.sample_fraction, 0.10);
  EXPECT_EQ(c.heads.count_ceiling, 50);
  std::vector<double> re_p, age_p;
  for (const auto& m : c.sweep) {
    if (m.mode == EraseMode::RE) re_p.push_back(m.probability);
    if (m.mode == EraseMode::AGE) age_p.push_back(m.probability);
  }
  EXPECT_EQ(re_p, (std::vector<double>{0.2, 0.4, 0.6, 0.8}));
  EXPECT_EQ(age_p, (std::vector<double>{0.2, 0.4, 0.6, 0.8}));
  EXPECT_EQ(c.sweep.size(), 9u);
  EXPECT_EQ(c.seeds.size(), 5u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTripIsExact) {
  for (const auto& base : {quick_profile(), paper_profile()}) {
    const auto text = config_to_text(base);
    EXPECT_EQ(config_to_text(parse_config(text)), text);
  }
}

TEST(Config, QuickProfileIsValid) {
  const auto c = quick_profile();
  EXPECT_NO_THROW(c.validate());
  EXPECT_TRUE(c.data.manifest.empty());
  EXPECT_EQ(c.seeds.size(), 2u);
}

TEST(Config, OverridesAndErrors) {
  auto c = parse_config("profile = paper\nvit.depth = 2  # shallower\n");
  EXPECT_EQ(c.vit.depth, 2);
  EXPECT_EQ(c.dino.epochs, 300);
  apply_override(c, "sweep=none,AGE@0.6");
  EXPECT_EQ(c.sweep.size(), 2u);
  apply_override(c, "train.class_weights = 1,2,3,4");
  EXPECT_EQ(c.train.class_weights, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(apply_override(c, "nonsense=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "vit.depth"), ConfigError);
  EXPECT_THROW(parse_config("vit.depth = two\n"), ConfigError);
  EXPECT_THROW(parse_config("vit.depth = 2\nvit.depth = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("profile = huge\n"), ConfigError);
  try {
    parse_config("\n\nbogus.key = 1\n", "exp.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("exp.cfg:3"), std::string::npos);
  }
}

TEST(Config, ValidationRejectsDuplicates) {
  auto c = quick_profile();
  apply_override(c, "seeds=1,1");
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_profile();
  apply_override(c, "sweep=none,none");
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_profile();
  apply_override(c, "compare=AGE@0.2:none");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, TrainConfigForSweepEntry) {
  const auto c = quick_profile();
  const auto t = c.train_config({EraseMode::AGE, 0.6}, 3);
  EXPECT_EQ(t.policy.mode, EraseMode::AGE);
  EXPECT_EQ(t.policy.probability, 0.6);
  EXPECT_EQ(t.seed, 3u);
  EXPECT_EQ(t.policy.standard_augs.size(), 3u);
  EXPECT_EQ(c.train_config({}, 0).policy.probability, 0.0);
}
