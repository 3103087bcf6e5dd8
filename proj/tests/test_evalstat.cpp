#include "agekit/evalstat.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace agekit;

namespace {

struct Reference {
  std::vector<double> a, b;
  double t_pooled, dof_pooled, p_pooled;
  double t_welch, dof_welch, p_welch;
};

// Reference values computed with scipy.stats.ttest_ind (equal_var True/False)
// before this implementation existed.
const std::vector<Reference> kReferences = {
    {{0.56, 0.57, 0.55, 0.56, 0.56},
     {0.59, 0.60, 0.58, 0.59, 0.59},
     -6.708203932499362, 8, 0.000151420478576503,
     -6.708203932499362, 7.999999999999999, 0.00015142047857650306},
    {{0.5594, 0.5321, 0.5877, 0.5410, 0.5768},
     {0.5910, 0.6085, 0.5742, 0.5861, 0.5952},
     -2.6623143217920284, 8, 0.028702273716127318,
     -2.6623143217920284, 6.127934174914456, 0.03665887095309958},
    {{1.2, 3.4, 2.2, 5.1, 0.3, 2.8, 3.3},
     {2.0, 4.1, 3.9},
     -0.7042133773845757, 8, 0.5012811983800811,
     -0.8034984523965513, 5.299136999028508, 0.45620267328226366},
    {{10, 12, 9.5, 11},
     {30, 35, 28, 33, 31, 40},
     -10.00927936229355, 8, 8.429602574237662e-06,
     -12.16083865844074, 5.964023930820547, 1.964136772344471e-05},
};

// Per-class F1 by explicit enumeration of (truth, prediction) pairs.
std::vector<double> brute_force_f1(const Confusion& c) {
  std::vector<double> out;
  for (int k = 0; k < c.rows(); ++k) {
    long long tp = 0, fp = 0, fn = 0;
    for (int t = 0; t < c.rows(); ++t)
      for (int p = 0; p < c.cols(); ++p) {
        if (t == k && p == k) tp += c(t, p);
        else if (p == k) fp += c(t, p);
        else if (t == k) fn += c(t, p);
      }
    if (tp == 0) {
      out.push_back(0.0);
      continue;
    }
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / (tp + fn);
    out.push_back(2 * precision * recall / (precision + recall));
  }
  return out;
}

RunResult run(Method m, std::uint64_t seed, double f1) {
  RunResult r;
  r.method = m;
  r.seed = seed;
  r.macro_f1 = f1;
  r.per_class_f1 = {f1, f1, f1, f1};
  return r;
}

}  // namespace

TEST(MacroF1, PerfectPredictor) {
  Confusion c = Confusion::Zero(4, 4);
  c.diagonal() << 20, 380, 3060, 540;
  EXPECT_DOUBLE_EQ(macro_f1(c).macro, 1.0);
}

TEST(MacroF1, AllPredictCOnTestCounts) {
  Confusion c = Confusion::Zero(4, 4);
  c.col(2) << 20, 380, 3060, 540;
  const auto f = macro_f1(c);
  EXPECT_NEAR(f.per_class[2], 2 * 0.765 / 1.765, 1e-12);
  EXPECT_EQ(f.per_class[0], 0.0);
  EXPECT_NEAR(f.macro, 0.2167, 1e-4);
}

TEST(MacroF1, TwoClassHandComputed) {
  Confusion c(2, 2);
  c << 3, 1, 2, 4;
  const auto f = macro_f1(c);
  EXPECT_NEAR(f.per_class[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(f.per_class[1], 8.0 / 11.0, 1e-12);
  EXPECT_NEAR(f.macro, 0.5 * (2.0 / 3.0 + 8.0 / 11.0), 1e-12);
}

TEST(MacroF1, MatchesBruteForceOnRandomMatrices) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    Confusion c(4, 4);
    for (Eigen::Index i = 0; i < c.size(); ++i)
      c.data()[i] = bernoulli(rng, 0.2) ? 0 : static_cast<long long>(uniform(rng, 0, 50));
    c(0, 0) += 1;
    const auto got = macro_f1(c);
    const auto want = brute_force_f1(c);
    double macro = 0;
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(got.per_class[k], want[k], 1e-12);
      macro += want[k];
    }
    EXPECT_NEAR(got.macro, macro / 4, 1e-12);
  }
}

TEST(MacroF1, PermutationInvariance) {
  Rng rng(5);
  Confusion c(4, 4);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<long long>(uniform(rng, 1, 30));
  const std::array<int, 4> perm{2, 0, 3, 1};
  Confusion p(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) p(perm[i], perm[j]) = c(i, j);
  EXPECT_NEAR(macro_f1(c).macro, macro_f1(p).macro, 1e-12);
}

TEST(MacroF1, Errors) {
  Confusion c = Confusion::Zero(4, 4);
  EXPECT_THROW(macro_f1(c), ValidationError);
  c(0, 1) = -1;
  EXPECT_THROW(macro_f1(c), ValidationError);
}

TEST(ConfusionMatrix, CountsPairs) {
  const auto c = confusion_matrix({0, 1, 2, 2, 3}, {0, 2, 2, 2, 1});
  EXPECT_EQ(c(0, 0), 1);
  EXPECT_EQ(c(1, 2), 1);
  EXPECT_EQ(c(2, 2), 2);
  EXPECT_EQ(c(3, 1), 1);
  EXPECT_EQ(c.sum(), 5);
  EXPECT_THROW(confusion_matrix({0}, {4}), ValidationError);
}

TEST(Aggregate, MeanAndSampleStd) {
  const auto a = aggregate_scores({0.57, 0.58, 0.59, 0.60, 0.61});
  EXPECT_NEAR(a.mean, 0.59, 1e-12);
  EXPECT_NEAR(a.std, 0.01581138830084191, 1e-12);
  const auto same = aggregate_scores({0.59, 0.59, 0.59, 0.59, 0.59});
  EXPECT_NEAR(same.std, 0.0, 1e-15);
  const auto perm = aggregate_scores({0.61, 0.57, 0.60, 0.58, 0.59});
  EXPECT_NEAR(perm.mean, a.mean, 1e-15);
  EXPECT_NEAR(perm.std, a.std, 1e-15);
  EXPECT_THROW(aggregate_scores({0.5}), ValidationError);
}

TEST(TTest, MatchesReferenceValues) {
  for (const auto& r : kReferences) {
    const auto p = unpaired_ttest(r.a, r.b, TTestVariant::Pooled);
    EXPECT_NEAR(p.t_statistic, r.t_pooled, 1e-9);
    EXPECT_NEAR(p.degrees_of_freedom, r.dof_pooled, 1e-9);
    EXPECT_NEAR(p.p_value, r.p_pooled, 1e-9);
    const auto w = unpaired_ttest(r.a, r.b, TTestVariant::Welch);
    EXPECT_NEAR(w.t_statistic, r.t_welch, 1e-9);
    EXPECT_NEAR(w.degrees_of_freedom, r.dof_welch, 1e-9);
    EXPECT_NEAR(w.p_value, r.p_welch, 1e-9);
  }
}

TEST(TTest, SymmetryAndScaleInvariance) {
  for (const auto& r : kReferences)
    for (auto v : {TTestVariant::Pooled, TTestVariant::Welch}) {
      const auto ab = unpaired_ttest(r.a, r.b, v), ba = unpaired_ttest(r.b, r.a, v);
      EXPECT_NEAR(ab.t_statistic, -ba.t_statistic, 1e-12);
      EXPECT_NEAR(ab.p_value, ba.p_value, 1e-15);
      std::vector<double> ka, kb;
      for (double x : r.a) ka.push_back(3.5 * x);
      for (double x : r.b) kb.push_back(3.5 * x);
      EXPECT_NEAR(unpaired_ttest(ka, kb, v).t_statistic, ab.t_statistic, 1e-9);
    }
}

TEST(TTest, DegenerateCases) {
  const auto same = unpaired_ttest({0.5, 0.6, 0.7}, {0.5, 0.6, 0.7});
  EXPECT_EQ(same.t_statistic, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  const auto flat = unpaired_ttest({0.5, 0.5}, {0.5, 0.5, 0.5});
  EXPECT_EQ(flat.p_value, 1.0);
  EXPECT_FALSE(flat.degenerate);
  const auto apart = unpaired_ttest({0.5, 0.5}, {0.6, 0.6});
  EXPECT_EQ(apart.p_value, 0.0);
  EXPECT_TRUE(apart.degenerate);
  EXPECT_THROW(unpaired_ttest({0.5}, {0.6, 0.7}), ValidationError);
}

TEST(TTest, PValueFallsAsMeansSeparate) {
  const std::vector<double> a{0.1, 0.3, 0.2, 0.4, 0.25};
  double last = 1.1;
  for (double shift = 0.0; shift <= 0.5; shift += 0.05) {
    std::vector<double> b;
    for (double x : a) b.push_back(x + shift + (x - 0.25) * 0.5);
    const double p = unpaired_ttest(a, b).p_value;
    EXPECT_LE(p, last);
    last = p;
  }
}

TEST(MethodLabel, RoundTrip) {
  for (const Method& m : {Method{}, Method{EraseMode::RE, 0.2}, Method{EraseMode::AGE, 0.6}})
    EXPECT_EQ(parse_method_label(method_label(m)), m);
  EXPECT_EQ(method_label({EraseMode::AGE, 0.6}), "AGE@0.6");
  EXPECT_THROW(parse_method_label("XY@0.2"), ConfigError);
  EXPECT_THROW(parse_method_label("AGE@1.5"), ConfigError);
}

TEST(ResultsCsv, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "agekit_results_test.csv";
  Confusion c(4, 4);
  c << 1, 1, 0, 0, 0, 5, 2, 0, 0, 3, 20, 1, 0, 0, 2, 4;
  const std::vector<RunResult> runs{make_run_result({EraseMode::AGE, 0.6}, 3, c), make_run_result({}, 4, c)};
  write_results_csv(path, runs);
  const auto back = read_results_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].method, runs[0].method);
  EXPECT_EQ(back[0].seed, 3u);
  EXPECT_NEAR(back[0].macro_f1, runs[0].macro_f1, 1e-10);
  EXPECT_NEAR(back[1].per_class_f1[2], runs[1].per_class_f1[2], 1e-10);
  std::filesystem::remove(path);
}

TEST(Report, GridShapeBestCellAndComparisons) {
  std::map<Method, std::vector<RunResult>> runs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    runs[{}].push_back(run({}, s, 0.55 + 0.002 * s));
    for (double p : {0.2, 0.4, 0.6, 0.8}) {
      runs[{EraseMode::RE, p}].push_back(run({EraseMode::RE, p}, s, 0.56 + 0.001 * s));
      runs[{EraseMode::AGE, p}].push_back(run({EraseMode::AGE, p}, s, (p == 0.6 ? 0.59 : 0.57) + 0.001 * s));
    }
  }
  const auto rep = build_report(runs, {{{EraseMode::AGE, 0.6}, {}}});
  EXPECT_EQ(rep.json["methods"].size(), 9u);
  EXPECT_EQ(rep.json["best"], "AGE@0.6");
  ASSERT_EQ(rep.json["comparisons"].size(), 1u);
  EXPECT_EQ(rep.json["comparisons"][0]["a"], "AGE@0.6");
  EXPECT_LT(rep.json["comparisons"][0]["p_value"].get<double>(), 0.05);
  EXPECT_NE(rep.text.find("P=0.8"), std::string::npos);
  EXPECT_NE(rep.text.find("AGE@0.6 vs none"), std::string::npos);
  // Header, baseline row, RE row, AGE row.
  const auto table = rep.text.substr(0, rep.text.find("\nUnpaired"));
  EXPECT_EQ(std::count(table.begin(), table.end(), '*'), 2);  // legend + best cell
}

TEST(Report, SingleMethodAndUnequalCounts) {
  std::map<Method, std::vector<RunResult>> runs;
  runs[{}] = {run({}, 0, 0.5), run({}, 1, 0.6)};
  const auto rep = build_report(runs, {});
  EXPECT_EQ(rep.json["methods"].size(), 1u);
  EXPECT_TRUE(rep.json["comparisons"].empty());
  runs[{EraseMode::AGE, 0.6}] = {run({EraseMode::AGE, 0.6}, 0, 0.7)};
  EXPECT_THROW(build_report(runs, {}), ValidationError);
}
