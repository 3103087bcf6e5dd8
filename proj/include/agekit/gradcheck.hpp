#pragma once

// Central finite-difference check of analytic gradients.

#include "agekit/vit.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace agekit {

struct GradCheckResult {
  double max_relative_error = 0;
  double max_absolute_error = 0;
  int checked = 0;  // entries compared with the relative criterion
  int skipped = 0;  // entries where both gradients are below the floor
};

/// `loss` evaluates the scalar loss at `params`; when `grad` is non-null it
/// also accumulates the analytic gradient into it (pre-zeroed).
template <class P>
using LossFn = std::function<double(const P& params, P* grad)>;

/// Compares analytic gradients with central differences on `samples`
/// parameter entries drawn uniformly (without replacement) over all tensors.
template <class P>
GradCheckResult gradient_check(const P& params, const LossFn<P>& loss, double epsilon, int samples, Rng& rng,
                               double floor = 1e-8) {
  P grad = zeros_like(params);
  loss(params, &grad);

  P probe = params;
  auto ptensors = named_tensors<double>(probe);
  auto gtensors = named_tensors<double>(grad);
  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t t = 0; t < ptensors.size(); ++t)
    for (Eigen::Index i = 0; i < ptensors[t].second->size(); ++i) entries.emplace_back(t, i);
  std::shuffle(entries.begin(), entries.end(), rng);
  entries.resize(std::min<std::size_t>(entries.size(), static_cast<std::size_t>(samples)));

  GradCheckResult out;
  for (const auto& [t, i] : entries) {
    double& x = ptensors[t].second->data()[i];
    const double saved = x;
    x = saved + epsilon;
    const double up = loss(probe, nullptr);
    x = saved - epsilon;
    const double down = loss(probe, nullptr);
    x = saved;
    const double numeric = (up - down) / (2 * epsilon);
    const double analytic = gtensors[t].second->data()[i];
    const double abs_err = std::abs(numeric - analytic);
    out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
    const double mag = std::max(std::abs(numeric), std::abs(analytic));
    if (mag < floor) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    out.max_relative_error = std::max(out.max_relative_error, abs_err / mag);
  }
  return out;
}

}  // namespace agekit
