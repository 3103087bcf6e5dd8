#include "agekit/attnmap.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace agekit;

namespace {

Mat<double> grid(std::initializer_list<std::initializer_list<double>> rows) {
  Mat<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Mat<double> random_grid(int n, Rng& rng) {
  Mat<double> m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
  return m;
}

ViTConfig small_vit(int image = 32, int patch = 8) {
  ViTConfig c;
  c.image_size = image;
  c.patch_size = patch;
  c.embed_dim = 12;
  c.depth = 2;
  c.num_heads = 6;
  c.mlp_ratio = 2.0;
  return c;
}

}  // namespace

TEST(CountActiveCells, HandComputed) {
  EXPECT_EQ(count_active_cells(grid({{0.1, 0.9}, {0.2, 0.4}}), 0.5), 1);
  const auto n = normalize_map(grid({{0.1, 0.9}, {0.2, 0.4}}));
  EXPECT_NEAR(n(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(n(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(n(1, 0), 0.125, 1e-12);
  EXPECT_NEAR(n(1, 1), 0.375, 1e-12);
}

TEST(CountActiveCells, ConstantGridIsZero) {
  EXPECT_EQ(count_active_cells(Mat<double>::Constant(14, 14, 0.3), 0.5), 0);
  EXPECT_EQ(count_active_cells(Mat<double>::Constant(14, 14, 0.3), 1e-9), 0);
}

TEST(CountActiveCells, TinyThresholdCountsAllButUniqueMinimum) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_grid(7, rng);
    EXPECT_EQ(count_active_cells(m, 1e-12), 48);
  }
}

TEST(ChooseHead, RuleApplication) {
  EXPECT_EQ(choose_head({180, 120, 96, 75, 60, 42}, 50), std::make_pair(5, false));
  EXPECT_EQ(choose_head({80, 70, 90, 85, 75, 95}, 50), std::make_pair(1, true));
  EXPECT_EQ(choose_head({30, 30, 30, 30, 30, 30}, 50), std::make_pair(0, false));
  EXPECT_EQ(choose_head({40, 10, 10, 60}, 50), std::make_pair(1, false));
  EXPECT_THROW(choose_head({}, 50), ValidationError);
}

TEST(SelectHead, SummaryIsInvariantToSampleOrder) {
  Rng rng(11);
  std::vector<std::vector<int>> counts;
  for (int i = 0; i < 15; ++i) {
    std::vector<int> row;
    for (int h = 0; h < 6; ++h) row.push_back(static_cast<int>(uniform(rng, 0, 64)));
    counts.push_back(row);
  }
  HeadSelectionConfig cfg;
  cfg.count_ceiling = 40;
  const auto a = summarize_head_counts(counts, 64, cfg);
  std::reverse(counts.begin(), counts.end());
  std::shuffle(counts.begin(), counts.end(), rng);
  const auto b = summarize_head_counts(counts, 64, cfg);
  EXPECT_EQ(to_json(a), to_json(b));
  ASSERT_EQ(a.per_head.size(), 6u);
  for (const auto& h : a.per_head) {
    int total = 0;
    for (int v : h.histogram) total += v;
    EXPECT_EQ(total, 15);
  }
}

TEST(SelectHead, EndToEndOnBackbone) {
  const auto vit = small_vit();
  Rng rng(5);
  const auto backbone = init_vit<float>(vit, rng);
  std::vector<ImageSample> train(200);
  for (int i = 0; i < 200; ++i) {
    train[i].id = "s" + std::to_string(i);
    train[i].pixels = random_grid(32, rng).cast<float>();
  }
  HeadSelectionConfig cfg;
  cfg.count_ceiling = 8;
  const auto rep = select_head(backbone, vit, train, cfg, 42);
  EXPECT_EQ(rep.sample_size, 20);
  EXPECT_EQ(rep.per_head.size(), 6u);
  const auto again = select_head(backbone, vit, train, cfg, 42);
  EXPECT_EQ(to_json(rep), to_json(again));
  EXPECT_EQ(to_json(head_report_from_json(to_json(rep))), to_json(rep));
  EXPECT_THROW(select_head(backbone, vit, {}, cfg, 42), ValidationError);
}

TEST(Extract, SinglePatchImage) {
  const auto vit = small_vit(16, 16);
  Rng rng(9);
  const auto backbone = init_vit<float>(vit, rng);
  const auto maps = extract_cls_attention(backbone, vit, random_grid(16, rng).cast<float>());
  ASSERT_EQ(maps.maps.size(), 6u);
  for (std::size_t h = 0; h < 6; ++h) {
    ASSERT_EQ(maps.maps[h].rows(), 1);
    EXPECT_NEAR(maps.maps[h](0, 0), 1.0 - maps.cls_self_attention[h], 1e-6);
  }
}

TEST(Extract, DefaultGeometryAndResolutionCheck) {
  ViTConfig vit;
  vit.depth = 1;
  Rng rng(1);
  const auto backbone = init_vit<float>(vit, rng);
  const auto maps = extract_cls_attention(backbone, vit, Image::Constant(224, 224, 0.5f));
  ASSERT_EQ(maps.maps.size(), 6u);
  for (const auto& m : maps.maps) {
    EXPECT_EQ(m.rows(), 14);
    EXPECT_EQ(m.cols(), 14);
  }
  EXPECT_THROW(extract_cls_attention(backbone, vit, Image::Zero(112, 112)), ShapeError);
}

TEST(MakeMask, HandComputed) {
  const auto m = make_mask(grid({{0.1, 0.9}, {0.2, 0.4}}), 0.5, 0, 16);
  EXPECT_FALSE(m.grid(0, 0));
  EXPECT_TRUE(m.grid(0, 1));
  EXPECT_FALSE(m.grid(1, 0));
  EXPECT_FALSE(m.grid(1, 1));
  EXPECT_EQ(m.pixel_mask.rows(), 32);
  EXPECT_EQ(m.pixel_mask.count(), 256);
}

TEST(MakeMask, ConstantGridFallsBackToFirstArgmax) {
  const auto m = make_mask(Mat<double>::Constant(4, 4, 0.2), 0.5, 0, 8);
  EXPECT_EQ(m.grid.count(), 1);
  EXPECT_TRUE(m.grid(0, 0));
  const auto off = make_mask(Mat<double>::Constant(4, 4, 0.2), 0.5, 0, 8, false);
  EXPECT_EQ(off.grid.count(), 0);
}

TEST(MakeMask, DilationNeighborhood) {
  Mat<double> g = Mat<double>::Zero(5, 5);
  g(2, 2) = 1.0;
  EXPECT_EQ(make_mask(g, 0.5, 1, 4).grid.count(), 9);
  EXPECT_EQ(make_mask(g, 0.5, 2, 4).grid.count(), 25);
  Mat<double> corner = Mat<double>::Zero(5, 5);
  corner(0, 0) = 1.0;
  EXPECT_EQ(make_mask(corner, 0.5, 1, 4).grid.count(), 4);
}

TEST(MakeMask, ThresholdMonotonicity) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_grid(14, rng);
    const double t1 = uniform(rng, 0.01, 0.99), t2 = uniform(rng, t1, 0.999);
    const BoolGrid lo = threshold_map(m, t1), hi = threshold_map(m, t2);
    EXPECT_EQ((hi.array() && !lo.array()).count(), 0);
  }
}

TEST(MakeMask, PixelCountIsPatchAreaTimesCells) {
  Rng rng(23);
  for (int patch : {1, 4, 16}) {
    const auto m = make_mask(random_grid(6, rng), uniform(rng, 0.1, 0.9), 0, patch);
    EXPECT_EQ(m.pixel_mask.count(), static_cast<Eigen::Index>(patch) * patch * m.grid.count());
    for (Eigen::Index r = 0; r < m.pixel_mask.rows(); ++r)
      for (Eigen::Index c = 0; c < m.pixel_mask.cols(); ++c) ASSERT_EQ(m.pixel_mask(r, c), m.grid(r / patch, c / patch));
  }
}

TEST(MaskCache, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "agekit_mask_cache_test";
  std::filesystem::remove_all(dir);
  Rng rng(2);
  std::map<std::string, BinaryMask> masks;
  masks["a"] = make_mask(random_grid(4, rng), 0.5, 0, 8);
  masks["b"] = make_mask(random_grid(4, rng), 0.3, 1, 8);
  write_mask_cache(dir, masks, {{"source_head", 5}});
  const auto cache = load_mask_cache(dir);
  EXPECT_EQ(cache.index.at("source_head"), 5);
  ASSERT_NE(cache.find("a"), nullptr);
  EXPECT_EQ(*cache.find("a"), masks["a"].pixel_mask);
  EXPECT_EQ(*cache.find("b"), masks["b"].pixel_mask);
  EXPECT_EQ(cache.find("c"), nullptr);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_mask_cache(dir), IoError);
}
