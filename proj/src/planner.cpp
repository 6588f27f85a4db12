#include "llmrel/planner.hpp"

#include <cmath>
#include <numeric>

#include "llmrel/errors.hpp"

namespace llmrel {

void PlanningSpec::validate() const {
  if (!(margin_of_error > 0.0 && margin_of_error < 1.0))
    throw PreconditionError("margin of error must lie in (0, 1)");
  if (!(family_confidence > 0.0 && family_confidence < 1.0))
    throw PreconditionError("family confidence must lie in (0, 1)");
  if (k_comparisons < 1) throw PreconditionError("k_comparisons must be >= 1");
  if (replicates < 2) throw PreconditionError("replicates must be >= 2");
  if (categories < 2) throw PreconditionError("categories must be >= 2");
  if (c_values.empty()) throw PreconditionError("no C values supplied");
  for (const auto& [metric, c] : c_values)
    if (!(c > 0.0) || !std::isfinite(c))
      throw PreconditionError("C for " + metric + " must be positive");
}

double sidak_adjust(double family_confidence, std::size_t k_comparisons) {
  if (k_comparisons == 0) throw PreconditionError("Sidak adjustment needs k >= 1");
  if (!(family_confidence > 0.0 && family_confidence < 1.0))
    throw PreconditionError("family confidence must lie in (0, 1)");
  // 1 - c^(1/k) without cancellation for c close to 1.
  return -std::expm1(std::log(family_confidence) / static_cast<double>(k_comparisons));
}

SamplePlan required_sample_size(const PlanningSpec& spec) {
  spec.validate();
  SamplePlan plan;
  plan.adjusted_alpha = sidak_adjust(spec.family_confidence, spec.k_comparisons);
  plan.z_critical = normal_critical_value(plan.adjusted_alpha);
  const double scale =
      plan.z_critical * plan.z_critical / (spec.margin_of_error * spec.margin_of_error);
  for (const auto& [metric, c] : spec.c_values) {
    const auto n = static_cast<std::size_t>(std::ceil(scale * c));
    plan.per_metric_n[metric] = std::max<std::size_t>(n, 1);
    plan.n_final = std::max(plan.n_final, plan.per_metric_n[metric]);
  }
  return plan;
}

double estimate_c_monte_carlo(Metric metric, std::size_t q, std::size_t raters,
                              const RaterModel& rating_model, std::size_t trials,
                              std::size_t subjects_per_trial, std::uint64_t seed,
                              Execution exec) {
  if (trials < 100) throw PreconditionError("C estimation needs >= 100 trials");
  if (subjects_per_trial < 100) throw PreconditionError("C estimation needs >= 100 subjects per trial");
  if (rating_model.categories() != q)
    throw PreconditionError("rating model category count does not match q");
  rating_model.validate(raters);

  const auto mc = monte_carlo(trials, seed, exec, [&](Rng& rng) {
    return coefficient_value(metric, simulate_matrix(rating_model, subjects_per_trial, raters, rng));
  });
  const auto n = static_cast<double>(mc.values.size());
  const double mean = std::accumulate(mc.values.begin(), mc.values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : mc.values) ss += (v - mean) * (v - mean);
  return static_cast<double>(subjects_per_trial) * ss / (n - 1.0);
}

}  // namespace llmrel
