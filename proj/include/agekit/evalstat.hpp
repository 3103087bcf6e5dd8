#pragma once

// Confusion matrices, per-class and macro F1, multi-seed aggregation, the
// two-tailed unpaired t-test, and the sweep report.

#include "agekit/core.hpp"
#include "agekit/erase.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace agekit {

/// Rows are truth, columns prediction.
using Confusion = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Confusion confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred, int classes = kNumClasses) {
  if (truth.size() != pred.size()) throw ShapeError("truth and prediction lengths differ");
  Confusion c = Confusion::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || pred[i] < 0 || pred[i] >= classes)
      throw ValidationError("class index out of range at position " + std::to_string(i));
    ++c(truth[i], pred[i]);
  }
  return c;
}

struct F1Scores {
  std::vector<double> per_class;
  double macro = 0;
};

/// Per-class F1 with F1 = 0 whenever TP = 0 (including classes absent from
/// both truth and prediction); the macro average runs over all classes.
inline F1Scores macro_f1(const Confusion& c) {
  if (c.rows() != c.cols() || c.rows() == 0) throw ShapeError("confusion matrix must be square and non-empty");
  if ((c.array() < 0).any()) throw ValidationError("confusion matrix has negative counts");
  if (c.sum() == 0) throw ValidationError("confusion matrix is empty");
  F1Scores s;
  for (Eigen::Index k = 0; k < c.rows(); ++k) {
    const double tp = static_cast<double>(c(k, k));
    const double fp = static_cast<double>(c.col(k).sum()) - tp;
    const double fn = static_cast<double>(c.row(k).sum()) - tp;
    s.per_class.push_back(tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0);
  }
  for (double f : s.per_class) s.macro += f;
  s.macro /= static_cast<double>(s.per_class.size());
  return s;
}

struct Aggregate {
  double mean = 0;
  double std = 0;  // sample (n-1) standard deviation
  int n = 0;
};

inline Aggregate aggregate_scores(const std::vector<double>& scores) {
  if (scores.size() < 2) throw ValidationError("at least two runs are needed for a standard deviation");
  Aggregate a;
  a.n = static_cast<int>(scores.size());
  for (double v : scores) a.mean += v;
  a.mean /= a.n;
  double ss = 0;
  for (double v : scores) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / (a.n - 1));
  return a;
}

// ---------------------------------------------------------------------------
// t-test

enum class TTestVariant { Pooled, Welch };

struct TTestResult {
  double t_statistic = 0;
  double degrees_of_freedom = 0;
  double p_value = 1;
  TTestVariant variant = TTestVariant::Pooled;
  bool degenerate = false;  // both samples constant with different means
};

/// Two-tailed unpaired t-test (pooled-variance Student or Welch).
inline TTestResult unpaired_ttest(const std::vector<double>& a, const std::vector<double>& b,
                                  TTestVariant variant = TTestVariant::Pooled) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("t-test needs at least two values per sample");
  for (const auto* s : {&a, &b})
    for (double v : *s)
      if (!std::isfinite(v)) throw NumericError("t-test input is not finite");
  auto moments = [](const std::vector<double>& x) {
    double m = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());

  TTestResult r;
  r.variant = variant;
  double se2 = 0;
  if (variant == TTestVariant::Pooled) {
    r.degrees_of_freedom = na + nb - 2;
    const double sp2 = ((na - 1) * va + (nb - 1) * vb) / r.degrees_of_freedom;
    se2 = sp2 * (1 / na + 1 / nb);
  } else {
    const double qa = va / na, qb = vb / nb;
    se2 = qa + qb;
    r.degrees_of_freedom = se2 > 0 ? se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) : na + nb - 2;
  }
  const double diff = ma - mb;
  if (!(se2 > 0)) {
    if (diff == 0) return r;
    r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = 0;
    r.degenerate = true;
    return r;
  }
  r.t_statistic = diff / std::sqrt(se2);
  const boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = std::min(1.0, 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic))));
  return r;
}

// ---------------------------------------------------------------------------
// Runs and results files

struct Method {
  EraseMode mode = EraseMode::None;
  double probability = 0;
  auto operator<=>(const Method&) const = default;
};

inline std::string format_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return buf;
}

/// "none", "RE@0.2", "AGE@0.6".
inline std::string method_label(const Method& m) {
  if (m.mode == EraseMode::None) return "none";
  return erase_mode_name(m.mode) + "@" + format_probability(m.probability);
}

inline Method parse_method_label(const std::string& s) {
  if (s == "none") return {};
  const auto at = s.find('@');
  const auto mode = parse_erase_mode(s.substr(0, at));
  if (at == std::string::npos || !mode || *mode == EraseMode::None) throw ConfigError("bad method label: " + s);
  double p = 0;
  try {
    p = std::stod(s.substr(at + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad method label: " + s);
  }
  if (!(p >= 0 && p <= 1)) throw ConfigError("method probability out of range: " + s);
  return {*mode, p};
}

struct RunResult {
  Method method;
  std::uint64_t seed = 0;
  Confusion confusion;
  std::vector<double> per_class_f1;
  double macro_f1 = 0;
};

inline RunResult make_run_result(const Method& m, std::uint64_t seed, const Confusion& c) {
  const auto f = macro_f1(c);
  return {m, seed, c, f.per_class, f.macro};
}

inline const char* kResultsHeader = "method,P,seed,macro_f1,f1_A,f1_B,f1_C,f1_D";

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

inline std::string results_row(const RunResult& r) {
  std::ostringstream os;
  os << method_label(r.method) << ',' << format_probability(r.method.probability) << ',' << r.seed << ','
     << format_score(r.macro_f1);
  for (double f : r.per_class_f1) os << ',' << format_score(f);
  return os.str();
}

inline void write_results_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kResultsHeader << '\n';
  for (const auto& r : runs) out << results_row(r) << '\n';
}

inline std::vector<RunResult> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw ValidationError(path.string() + ": expected header '" + std::string(kResultsHeader) + "'");
  std::vector<RunResult> runs;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw ValidationError(path.string() + ": row " + std::to_string(row) + " has " +
                                             std::to_string(f.size()) + " fields, expected 8");
    RunResult r;
    try {
      r.method = parse_method_label(f[0]);
      r.seed = std::stoull(f[2]);
      r.macro_f1 = std::stod(f[3]);
      for (int k = 0; k < 4; ++k) r.per_class_f1.push_back(std::stod(f[4 + k]));
    } catch (const ConfigError& e) {
      throw ValidationError(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ": row " + std::to_string(row) + " is not numeric");
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Report

struct Comparison {
  Method a, b;
};

struct Report {
  std::string text;
  nlohmann::json json;
};

/// Mean (std) grid over erasing modes and probabilities with a baseline row,
/// the best cell starred, and a t-test per requested comparison.
inline Report build_report(const std::map<Method, std::vector<RunResult>>& runs,
                           const std::vector<Comparison>& comparisons,
                           TTestVariant variant = TTestVariant::Pooled) {
  if (runs.empty()) throw ValidationError("no results to report");
  const std::size_t n = runs.begin()->second.size();
  for (const auto& [m, rs] : runs)
    if (rs.size() != n)
      throw ValidationError("unequal run counts: " + method_label(runs.begin()->first) + " has " + std::to_string(n) +
                            ", " + method_label(m) + " has " + std::to_string(rs.size()));

  std::map<Method, std::vector<double>> scores;
  std::map<Method, Aggregate> agg;
  for (const auto& [m, rs] : runs) {
    for (const auto& r : rs) scores[m].push_back(r.macro_f1);
    if (n >= 2) {
      agg[m] = aggregate_scores(scores[m]);
    } else {
      agg[m] = {scores[m].front(), 0.0, 1};
    }
  }
  Method best = runs.begin()->first;
  for (const auto& [m, a] : agg)
    if (a.mean > agg[best].mean) best = m;

  auto cell = [&](const Method& m) {
    char buf[48];
    const auto& a = agg.at(m);
    std::snprintf(buf, sizeof buf, "%.4f (%.3f)%s", a.mean, a.std, m == best ? "*" : "");
    return std::string(buf);
  };

  std::vector<double> probs;
  for (const auto& [m, _] : runs)
    if (m.mode != EraseMode::None && std::find(probs.begin(), probs.end(), m.probability) == probs.end())
      probs.push_back(m.probability);
  std::sort(probs.begin(), probs.end());

  nlohmann::json j;
  j["runs_per_method"] = n;
  j["best"] = method_label(best);
  j["methods"] = nlohmann::json::array();
  for (const auto& [m, a] : agg)
    j["methods"].push_back({{"method", method_label(m)}, {"mode", erase_mode_name(m.mode)}, {"P", m.probability},
                            {"mean_macro_f1", a.mean}, {"std_macro_f1", a.std}, {"runs", a.n}});

  std::ostringstream os;
  os << "Macro F1, mean (std) over " << n << " run" << (n == 1 ? "" : "s") << "; * marks the best cell\n\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "method");
  os << buf;
  for (double p : probs) {
    std::snprintf(buf, sizeof buf, " | %-17s", ("P=" + format_probability(p)).c_str());
    os << buf;
  }
  if (probs.empty()) os << " | macro F1";
  os << '\n';
  if (runs.count(Method{})) {
    std::snprintf(buf, sizeof buf, "%-8s | %-17s", "none", cell(Method{}).c_str());
    os << buf << '\n';
  }
  for (auto mode : {EraseMode::RE, EraseMode::AGE}) {
    bool any = false;
    for (double p : probs) any = any || runs.count({mode, p});
    if (!any) continue;
    std::snprintf(buf, sizeof buf, "%-8s", erase_mode_name(mode).c_str());
    os << buf;
    for (double p : probs) {
      std::snprintf(buf, sizeof buf, " | %-17s", runs.count({mode, p}) ? cell({mode, p}).c_str() : "-");
      os << buf;
    }
    os << '\n';
  }

  j["comparisons"] = nlohmann::json::array();
  if (!comparisons.empty()) {
    os << "\nUnpaired two-tailed t-test (" << (variant == TTestVariant::Pooled ? "pooled" : "Welch") << ")\n";
    for (const auto& c : comparisons) {
      if (!runs.count(c.a) || !runs.count(c.b))
        throw ValidationError("comparison references a method without results: " + method_label(c.a) + " vs " +
                              method_label(c.b));
      const auto t = unpaired_ttest(scores[c.a], scores[c.b], variant);
      std::snprintf(buf, sizeof buf, "t = %.4f, dof = %.2f, p = %.3g", t.t_statistic, t.degrees_of_freedom, t.p_value);
      os << "  " << method_label(c.a) << " vs " << method_label(c.b) << ": " << buf
         << (t.degenerate ? " (degenerate: zero variance)" : "") << '\n';
      j["comparisons"].push_back({{"a", method_label(c.a)}, {"b", method_label(c.b)}, {"t", t.t_statistic},
                                  {"dof", t.degrees_of_freedom}, {"p_value", t.p_value}, {"degenerate", t.degenerate},
                                  {"mean_difference", agg[c.a].mean - agg[c.b].mean}});
    }
  }
  return {os.str(), j};
}

}  // namespace agekit
