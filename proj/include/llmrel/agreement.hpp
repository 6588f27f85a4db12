#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llmrel/kernels.hpp"
#include "llmrel/ratings.hpp"

namespace llmrel {

enum class Metric {
  PercentAgreement,
  CohenKappa,
  FleissKappa,
  CongerKappa,
  GwetAC1,
  BrennanPrediger,
  KrippendorffAlpha,
};

inline constexpr std::array<Metric, 7> kAllMetrics{
    Metric::PercentAgreement, Metric::CohenKappa,      Metric::FleissKappa,
    Metric::CongerKappa,      Metric::GwetAC1,         Metric::BrennanPrediger,
    Metric::KrippendorffAlpha};

/// Metrics defined for any number of raters (everything except Cohen).
inline constexpr std::array<Metric, 6> kMultiRaterMetrics{
    Metric::PercentAgreement, Metric::FleissKappa,     Metric::CongerKappa,
    Metric::GwetAC1,          Metric::BrennanPrediger, Metric::KrippendorffAlpha};

std::string_view to_string(Metric metric);
std::optional<Metric> parse_metric(std::string_view name);
bool is_chance_corrected(Metric metric);

struct ConfidenceInterval {
  double variance = 0.0;
  double low = 0.0;
  double high = 0.0;
  double confidence = 0.0;
};

struct AgreementEstimate {
  Metric metric{};
  double estimate = 0.0;
  /// Present only for estimates produced by jackknife_ci.
  std::optional<ConfidenceInterval> interval;
  std::size_t n_used = 0;
  std::size_t raters = 0;
  std::vector<std::string> warnings;
};

// Point estimates. Invalid labels are already missing cells in the matrix.
// All throw PreconditionError when no subject carries >= 2 ratings, and
// UndefinedCoefficient when the chance term leaves 0/0.

AgreementEstimate percent_agreement(const RatingsMatrix& matrix);
/// Exactly two raters; marginals over subjects rated by both.
AgreementEstimate cohen_kappa(const RatingsMatrix& matrix);
AgreementEstimate fleiss_kappa(const RatingsMatrix& matrix);
AgreementEstimate conger_kappa(const RatingsMatrix& matrix);
AgreementEstimate gwet_ac1(const RatingsMatrix& matrix);
AgreementEstimate brennan_prediger(const RatingsMatrix& matrix);
/// Nominal distance only.
AgreementEstimate krippendorff_alpha(const RatingsMatrix& matrix);

AgreementEstimate compute(Metric metric, const RatingsMatrix& matrix);

/// Coefficient value with one subject row ignored; the building block for
/// delete-one jackknife replicates.
double coefficient_value(Metric metric, const RatingsMatrix& matrix,
                         std::optional<std::size_t> excluded_subject = std::nullopt);

/// Two-sided standard normal critical value z with P(|Z| > z) = alpha.
double normal_critical_value(double alpha);

/// Delete-one-subject jackknife variance and normal-approximation interval,
/// truncated to the metric's range. Requires >= 3 subjects with two or more
/// ratings. Undefined leave-one-out fits are skipped with a warning; more
/// than 10% undefined is an error.
AgreementEstimate jackknife_ci(const RatingsMatrix& matrix, Metric metric, double confidence,
                               Execution exec = Execution::parallel);

}  // namespace llmrel
