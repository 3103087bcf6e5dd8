#include "agekit/dino.hpp"
#include "agekit/phantom.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace agekit;

namespace {

ViTConfig tiny_vit() {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.depth = 1;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  return c;
}

DinoConfig tiny_dino() {
  DinoConfig d;
  d.global_crop_size = 16;
  d.local_crop_size = 8;
  d.num_local_crops = 2;
  d.projection_dim = 16;
  d.head_hidden_dim = 16;
  d.head_bottleneck_dim = 8;
  d.batch_size = 4;
  d.epochs = 1;
  d.warmup_epochs = 0;
  d.learning_rate = 1e-3;
  return d;
}

std::vector<ImageSample> random_samples(int n, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i) {
    Image img(side, side);
    for (Eigen::Index k = 0; k < img.size(); ++k) img.data()[k] = static_cast<float>(uniform(rng));
    out.push_back({"s" + std::to_string(i), img, std::nullopt, std::nullopt, std::nullopt});
  }
  return out;
}

Mat<float> row(std::initializer_list<float> v) {
  Mat<float> m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (float x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST(MultiCrop, GlobalAreaFractionsStayInInterval) {
  DinoConfig cfg;
  cfg.num_global_crops = 1;
  cfg.num_local_crops = 0;
  cfg.global_crop_size = 16;
  Rng rng(11);
  const Image img = Image::Zero(128, 128);
  for (int i = 0; i < 1000; ++i) {
    const auto crops = multi_crop(img, cfg, rng);
    const auto& info = crops[0].info;
    EXPECT_GE(info.sampled_scale, 0.4);
    EXPECT_LE(info.sampled_scale, 1.0);
    // Realized area differs from the sampled one only by rounding of the sides.
    const double realized = info.area_fraction(128, 128);
    EXPECT_GE(realized, 0.4 - 2.0 * 129 / (128.0 * 128));
    EXPECT_LE(realized, 1.0);
    EXPECT_EQ(crops[0].pixels.rows(), 16);
  }
}

TEST(MultiCrop, LocalCropsUseLocalScale) {
  DinoConfig cfg;
  cfg.global_crop_size = 32;
  cfg.local_crop_size = 16;
  Rng rng(2);
  const auto crops = multi_crop(Image::Zero(64, 64), cfg, rng);
  ASSERT_EQ(crops.size(), 10u);
  for (int i = 2; i < 10; ++i) {
    EXPECT_FALSE(crops[i].info.global);
    EXPECT_GE(crops[i].info.sampled_scale, 0.05);
    EXPECT_LE(crops[i].info.sampled_scale, 0.4);
    EXPECT_EQ(crops[i].pixels.rows(), 16);
  }
}

TEST(MultiCrop, CollapsedIntervalGivesFullImageResize) {
  DinoConfig cfg;
  cfg.global_crop_scale = {1.0, 1.0};
  cfg.num_local_crops = 0;
  cfg.global_crop_size = 32;
  cfg.augment = false;
  Rng rng(5);
  Image img(64, 64);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) img(r, c) = static_cast<float>((r * 7 + c * 3) % 17) / 17.0f;
  const auto crops = multi_crop(img, cfg, rng);
  for (const auto& c : crops) {
    EXPECT_EQ(c.info.height, 64);
    EXPECT_EQ(c.info.width, 64);
    EXPECT_TRUE(c.pixels.isApprox(resize_bilinear(img, 32, 32)));
  }
}

TEST(MultiCrop, SeededGeometryIsReproducible) {
  DinoConfig cfg;
  cfg.global_crop_size = 32;
  cfg.local_crop_size = 16;
  const Image img = Image::Random(64, 64);
  Rng a(99), b(99);
  const auto ca = multi_crop(img, cfg, a);
  const auto cb = multi_crop(img, cfg, b);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_EQ(ca[i].info.top, cb[i].info.top);
    EXPECT_EQ(ca[i].info.left, cb[i].info.left);
    EXPECT_EQ(ca[i].info.height, cb[i].info.height);
    EXPECT_EQ(ca[i].pixels, cb[i].pixels);
  }
}

TEST(DinoLoss, PerfectMatchIsZero) {
  DinoConfig cfg;
  cfg.num_global_crops = 1;
  // Very confident teacher and student on index 1.
  const auto t = row({0, 100, 0});
  const auto s = row({0, 1000, 0});
  const auto r = dino_loss({s, s}, {t}, Mat<float>::Zero(1, 3), cfg);
  EXPECT_NEAR(r.loss, 0.0, 1e-6);
}

TEST(DinoLoss, UniformTwoWayIsLn2) {
  DinoConfig cfg;
  cfg.num_global_crops = 2;
  const auto z = row({0, 0});
  for (double st : {0.1, 1.0, 3.0}) {
    cfg.student_temp = st;
    const auto r = dino_loss({z, z}, {z, z}, Mat<float>::Zero(1, 2), cfg);
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-6);
  }
}

TEST(DinoLoss, AveragesOverNonSelfPairs) {
  DinoConfig cfg;
  cfg.num_global_crops = 2;
  Rng rng(4);
  std::vector<Mat<float>> s(4), t(2);
  for (auto& m : s) m = Mat<float>::Random(1, 5);
  for (auto& m : t) m = Mat<float>::Random(1, 5);
  const Mat<float> center = Mat<float>::Random(1, 5) * 0.1f;
  const auto r = dino_loss(s, t, center, cfg);
  EXPECT_EQ(r.pairs, 6);

  // Oracle: enumerate pairs directly in double precision.
  auto softmax = [](Eigen::VectorXd v) {
    v = (v.array() - v.maxCoeff()).exp();
    return Eigen::VectorXd(v / v.sum());
  };
  double total = 0;
  int pairs = 0;
  for (int it = 0; it < 2; ++it)
    for (int is = 0; is < 4; ++is) {
      if (it == is) continue;
      const Eigen::VectorXd pt =
          softmax(((t[it] - center).cast<double>().transpose() / cfg.teacher_temp).eval());
      const Eigen::VectorXd ps = softmax((s[is].cast<double>().transpose() / cfg.student_temp).eval());
      total += -(pt.array() * ps.array().log()).sum();
      ++pairs;
    }
  EXPECT_EQ(pairs, 6);
  EXPECT_NEAR(r.loss, total / pairs, 1e-4);
}

TEST(DinoLoss, NonNegativeAndEqualsTeacherEntropyWhenMatched) {
  DinoConfig cfg;
  cfg.num_global_crops = 1;
  cfg.student_temp = cfg.teacher_temp = 0.5;
  const auto t = row({0.3f, -0.2f, 0.9f});
  const auto r = dino_loss({t, t}, {t}, Mat<float>::Zero(1, 3), cfg);
  const Mat<float> p = detail::softmax_row<float>(t, 0.5f);
  const double entropy = -(p.array() * p.array().log()).sum();
  EXPECT_NEAR(r.loss, entropy, 1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(DinoLoss, RejectsNonFinite) {
  DinoConfig cfg;
  cfg.num_global_crops = 1;
  const auto bad = row({0, std::numeric_limits<float>::infinity()});
  EXPECT_THROW(dino_loss({bad}, {row({0, 0})}, Mat<float>::Zero(1, 2), cfg), NumericError);
}

TEST(Ema, IdentityCopyAndHandComputed) {
  using P = ProjectionHeadParams<float>;
  Rng rng(1);
  P t = init_projection_head<float>(4, 4, 4, 4, rng);
  P s = init_projection_head<float>(4, 4, 4, 4, rng);
  P t1 = t;
  ema_update<float>(t1, s, 1.0);
  EXPECT_EQ(t1.fc1_w, t.fc1_w);
  P t0 = t;
  ema_update<float>(t0, s, 0.0);
  EXPECT_EQ(t0.last_w, s.last_w);

  P a = t, b = t;
  a.fc1_w.setConstant(1.0f);
  b.fc1_w.setConstant(0.0f);
  ema_update<float>(a, b, 0.9);
  EXPECT_FLOAT_EQ(a.fc1_w(0, 0), 0.9f);

  P wrong = s;
  wrong.fc1_w.resize(2, 2);
  EXPECT_THROW(ema_update<float>(t, wrong, 0.5), ShapeError);
}

TEST(Center, UpdateRule) {
  const Mat<float> c0 = Mat<float>::Zero(1, 1);
  Mat<float> batch(2, 1);
  batch << 1.0f, 3.0f;
  EXPECT_FLOAT_EQ(update_center(c0, batch, 1.0)(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(update_center(c0, batch, 0.9)(0, 0), 0.2f);
  EXPECT_THROW(update_center(c0, Mat<float>(0, 1), 0.9), ValidationError);

  // Geometric series: after k steps toward constant x, c = x (1 - m^k).
  Mat<float> c = c0;
  Mat<float> constant = Mat<float>::Constant(4, 1, 5.0f);
  for (int k = 0; k < 200; ++k) c = update_center(c, constant, 0.9);
  EXPECT_NEAR(c(0, 0), 5.0 * (1 - std::pow(0.9, 200)), 1e-4);
}

TEST(Trainer, TeacherFollowsEmaReplayExactly) {
  const auto vit = tiny_vit();
  auto cfg = tiny_dino();
  const auto data = random_samples(4, 24, 3);
  std::vector<const ImageSample*> batch;
  for (const auto& s : data) batch.push_back(&s);
  DinoTrainer tr(vit, cfg, 17, 5, 1);

  auto replay = tr.state().teacher;
  for (int step = 0; step < 5; ++step) {
    tr.step(batch, step);
    ema_update<float>(replay, tr.state().student, tr.last_momentum());
    const auto a = named_tensors<float>(replay);
    const auto b = named_tensors<float>(tr.state().teacher);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(*a[i].second, *b[i].second) << a[i].first;
  }
}

TEST(Trainer, NoGradientReachesTeacher) {
  auto cfg = tiny_dino();
  cfg.ema_momentum_start = cfg.ema_momentum_end = 1.0;
  const auto data = random_samples(4, 24, 5);
  std::vector<const ImageSample*> batch;
  for (const auto& s : data) batch.push_back(&s);
  DinoTrainer tr(tiny_vit(), cfg, 3, 3, 1);
  const auto before = tr.state().teacher;
  const auto student_before = tr.state().student;
  tr.step(batch, 0);
  tr.step(batch, 1);
  const auto a = named_tensors<float>(before);
  const auto b = named_tensors<float>(tr.state().teacher);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
  EXPECT_NE(student_before.head.last_w, tr.state().student.head.last_w);
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
  auto cfg = tiny_dino();
  cfg.epochs = 0;
  const auto data = random_samples(3, 24, 1);
  const auto r = pretrain(data, tiny_vit(), cfg, 21);
  const auto init = init_dino_state(tiny_vit(), cfg, 21);
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.best.student.backbone.pos_embed, init.student.backbone.pos_embed);
  EXPECT_EQ(r.best.teacher.head.last_w, init.teacher.head.last_w);
}

TEST(Pretrain, SameSeedSameTrace) {
  auto cfg = tiny_dino();
  cfg.epochs = 2;
  const auto data = random_samples(6, 24, 2);
  const auto a = pretrain(data, tiny_vit(), cfg, 8);
  const auto b = pretrain(data, tiny_vit(), cfg, 8);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.losses.size(), 4u);
}

TEST(Pretrain, EmptyDatasetIsRejected) {
  EXPECT_THROW(pretrain({}, tiny_vit(), tiny_dino(), 1), ValidationError);
}

TEST(Checkpoint, RoundTripReproducesForward) {
  auto cfg = tiny_dino();
  const auto state = init_dino_state(tiny_vit(), cfg, 4);
  const auto path = std::filesystem::temp_directory_path() / "agekit_dino_ckpt_test.bin";
  save_dino_checkpoint(path, state, tiny_vit(), cfg);
  const auto loaded = load_dino_checkpoint(path);
  EXPECT_EQ(loaded.vit, tiny_vit());
  const Image img = Image::Random(16, 16);
  const auto a = forward({img}, state.teacher.backbone, tiny_vit(), false);
  const auto b = forward({img}, loaded.state.teacher.backbone, tiny_vit(), false);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(loaded.state.center, state.center);
  std::filesystem::remove(path);
}
