#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "llmrel/agreement.hpp"
#include "llmrel/simulator.hpp"

namespace llmrel {

/// Inputs to precision-based sample sizing.
struct PlanningSpec {
  double margin_of_error = 0.10;    // E0
  double family_confidence = 0.90;  // joint confidence over all comparisons
  std::size_t k_comparisons = 1;
  std::size_t replicates = 5;       // r
  std::size_t categories = 2;       // q
  /// Metric name -> C, where Var(coefficient) ~ C / n. C = 1/A for the
  /// tabulated agreement value A.
  std::map<std::string, double> c_values;

  void validate() const;
};

struct SamplePlan {
  std::map<std::string, std::size_t> per_metric_n;
  std::size_t n_final = 0;
  double adjusted_alpha = 0.0;
  double z_critical = 0.0;
};

/// Per-comparison alpha that holds the family-wise confidence over k
/// comparisons: 1 - family_confidence^(1/k).
double sidak_adjust(double family_confidence, std::size_t k_comparisons);

/// n = ceil(z^2 C / E0^2) per metric with z the two-sided critical value at
/// the adjusted alpha; n_final is the largest.
SamplePlan required_sample_size(const PlanningSpec& spec);

/// C = subjects_per_trial x sample variance of the coefficient over
/// simulated matrices with `raters` raters (replicates) each.
double estimate_c_monte_carlo(Metric metric, std::size_t q, std::size_t raters,
                              const RaterModel& rating_model, std::size_t trials,
                              std::size_t subjects_per_trial, std::uint64_t seed,
                              Execution exec = Execution::parallel);

}  // namespace llmrel
