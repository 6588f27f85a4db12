#include "llmrel/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "llmrel/errors.hpp"

namespace llmrel {

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::PercentAgreement:
      return "percent_agreement";
    case Metric::CohenKappa:
      return "cohen_kappa";
    case Metric::FleissKappa:
      return "fleiss_kappa";
    case Metric::CongerKappa:
      return "conger_kappa";
    case Metric::GwetAC1:
      return "gwet_ac1";
    case Metric::BrennanPrediger:
      return "brennan_prediger";
    case Metric::KrippendorffAlpha:
      return "krippendorff_alpha";
  }
  return "unknown";
}

std::optional<Metric> parse_metric(std::string_view name) {
  for (Metric m : kAllMetrics)
    if (to_string(m) == name) return m;
  return std::nullopt;
}

bool is_chance_corrected(Metric metric) { return metric != Metric::PercentAgreement; }

namespace {

constexpr double kDegenerate = 1e-12;

/// Per-subject category counts for one row, skipping missing cells.
int tally_row(std::span<const std::int8_t> row, std::vector<int>& counts) {
  std::fill(counts.begin(), counts.end(), 0);
  int rated = 0;
  for (auto c : row) {
    if (c == RatingsMatrix::kMissing) continue;
    ++counts[static_cast<std::size_t>(c)];
    ++rated;
  }
  return rated;
}

/// Ingredients shared by the Fleiss-family coefficients.
struct PairwiseTally {
  std::size_t n_pairable = 0;   // r_i >= 2
  std::size_t n_rated = 0;      // r_i >= 1
  double agreement_sum = 0.0;   // sum over pairable of sum_k r_ik(r_ik-1) / r_i(r_i-1)
  std::vector<double> pi_sum;   // sum over rated of r_ik / r_i

  double pa() const { return agreement_sum / static_cast<double>(n_pairable); }
  double pi(std::size_t k) const { return pi_sum[k] / static_cast<double>(n_rated); }
};

PairwiseTally pairwise_tally(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const std::size_t q = m.n_categories();
  PairwiseTally t;
  t.pi_sum.assign(q, 0.0);
  std::vector<int> counts(q);
  for (std::size_t i = 0; i < m.n_subjects(); ++i) {
    if (skip && *skip == i) continue;
    const int r = tally_row(m.row(i), counts);
    if (r == 0) continue;
    ++t.n_rated;
    for (std::size_t k = 0; k < q; ++k)
      t.pi_sum[k] += static_cast<double>(counts[k]) / static_cast<double>(r);
    if (r < 2) continue;
    ++t.n_pairable;
    long matched = 0;
    for (int c : counts) matched += static_cast<long>(c) * (c - 1);
    t.agreement_sum += static_cast<double>(matched) / (static_cast<double>(r) * (r - 1));
  }
  if (t.n_pairable == 0)
    throw PreconditionError("no subject has two or more non-missing ratings");
  return t;
}

double chance_corrected(double observed, double expected, std::string_view what) {
  if (std::abs(1.0 - expected) < kDegenerate)
    throw UndefinedCoefficient(std::string(what) +
                               " undefined: expected chance agreement equals 1");
  return (observed - expected) / (1.0 - expected);
}

double percent_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  return pairwise_tally(m, skip).pa();
}

double fleiss_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const auto t = pairwise_tally(m, skip);
  double pe = 0.0;
  for (std::size_t k = 0; k < m.n_categories(); ++k) pe += t.pi(k) * t.pi(k);
  return chance_corrected(t.pa(), pe, "Fleiss' kappa");
}

double gwet_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const auto t = pairwise_tally(m, skip);
  const auto q = static_cast<double>(m.n_categories());
  double pe = 0.0;
  for (std::size_t k = 0; k < m.n_categories(); ++k) pe += t.pi(k) * (1.0 - t.pi(k));
  pe /= (q - 1.0);
  return chance_corrected(t.pa(), pe, "Gwet's AC1");
}

double brennan_prediger_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const auto t = pairwise_tally(m, skip);
  const double pe = 1.0 / static_cast<double>(m.n_categories());
  return (t.pa() - pe) / (1.0 - pe);
}

double cohen_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  if (m.n_raters() != 2)
    throw PreconditionError("Cohen's kappa needs exactly 2 raters, got " +
                            std::to_string(m.n_raters()));
  const std::size_t q = m.n_categories();
  std::vector<double> first(q, 0.0), second(q, 0.0);
  std::size_t both = 0, agree = 0;
  for (std::size_t i = 0; i < m.n_subjects(); ++i) {
    if (skip && *skip == i) continue;
    const auto row = m.row(i);
    if (row[0] == RatingsMatrix::kMissing || row[1] == RatingsMatrix::kMissing) continue;
    ++both;
    if (row[0] == row[1]) ++agree;
    first[static_cast<std::size_t>(row[0])] += 1.0;
    second[static_cast<std::size_t>(row[1])] += 1.0;
  }
  if (both == 0) throw PreconditionError("no subject was rated by both raters");
  const auto n = static_cast<double>(both);
  double pe = 0.0;
  for (std::size_t k = 0; k < q; ++k) pe += (first[k] / n) * (second[k] / n);
  return chance_corrected(static_cast<double>(agree) / n, pe, "Cohen's kappa");
}

double conger_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const std::size_t g = m.n_raters();
  const std::size_t q = m.n_categories();
  if (g < 2) throw PreconditionError("Conger's kappa needs at least 2 raters");
  const auto t = pairwise_tally(m, skip);

  std::vector<double> counts(g * q, 0.0);
  std::vector<double> totals(g, 0.0);
  for (std::size_t i = 0; i < m.n_subjects(); ++i) {
    if (skip && *skip == i) continue;
    const auto row = m.row(i);
    for (std::size_t r = 0; r < g; ++r) {
      if (row[r] == RatingsMatrix::kMissing) continue;
      counts[r * q + static_cast<std::size_t>(row[r])] += 1.0;
      totals[r] += 1.0;
    }
  }
  for (std::size_t r = 0; r < g; ++r)
    if (totals[r] == 0.0)
      throw PreconditionError("Conger's kappa: rater '" + m.rater_ids()[r] +
                              "' rated no subjects");

  const auto gd = static_cast<double>(g);
  double pe = 0.0;
  for (std::size_t k = 0; k < q; ++k) {
    double mean = 0.0;
    for (std::size_t r = 0; r < g; ++r) mean += counts[r * q + k] / totals[r];
    mean /= gd;
    double ss = 0.0;
    for (std::size_t r = 0; r < g; ++r) {
      const double d = counts[r * q + k] / totals[r] - mean;
      ss += d * d;
    }
    pe += mean * mean - (ss / (gd - 1.0)) / gd;
  }
  return chance_corrected(t.pa(), pe, "Conger's kappa");
}

double krippendorff_value(const RatingsMatrix& m, std::optional<std::size_t> skip) {
  const std::size_t q = m.n_categories();
  std::vector<double> coincidence(q * q, 0.0);
  std::vector<int> counts(q);
  std::size_t pairable = 0;
  for (std::size_t i = 0; i < m.n_subjects(); ++i) {
    if (skip && *skip == i) continue;
    const int r = tally_row(m.row(i), counts);
    if (r < 2) continue;
    ++pairable;
    const double denom = r - 1;
    for (std::size_t c = 0; c < q; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t k = 0; k < q; ++k) {
        const double pairs = static_cast<double>(counts[c]) * counts[k] - (c == k ? counts[c] : 0);
        coincidence[c * q + k] += pairs / denom;
      }
    }
  }
  if (pairable == 0) throw PreconditionError("no subject has two or more non-missing ratings");

  std::vector<double> marginal(q, 0.0);
  for (std::size_t c = 0; c < q; ++c)
    for (std::size_t k = 0; k < q; ++k) marginal[c] += coincidence[c * q + k];
  const double total = std::accumulate(marginal.begin(), marginal.end(), 0.0);

  double disagree_observed = 0.0, disagree_expected = 0.0;
  for (std::size_t c = 0; c < q; ++c)
    for (std::size_t k = 0; k < q; ++k) {
      if (c == k) continue;
      disagree_observed += coincidence[c * q + k];
      disagree_expected += marginal[c] * marginal[k];
    }
  disagree_observed /= total;
  disagree_expected /= total * (total - 1.0);
  if (disagree_expected < kDegenerate)
    throw UndefinedCoefficient(
        "Krippendorff's alpha undefined: only one category observed among pairable values");
  return 1.0 - disagree_observed / disagree_expected;
}

std::size_t subjects_used(Metric metric, const RatingsMatrix& m) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.n_subjects(); ++i) {
    const auto row = m.row(i);
    if (metric == Metric::CohenKappa) {
      if (row.size() == 2 && row[0] != RatingsMatrix::kMissing &&
          row[1] != RatingsMatrix::kMissing)
        ++n;
      continue;
    }
    const auto rated = std::count_if(row.begin(), row.end(),
                                     [](auto c) { return c != RatingsMatrix::kMissing; });
    if (rated >= 2) ++n;
  }
  return n;
}

AgreementEstimate make_estimate(Metric metric, const RatingsMatrix& m) {
  AgreementEstimate e;
  e.metric = metric;
  e.estimate = coefficient_value(metric, m);
  e.n_used = subjects_used(metric, m);
  e.raters = m.n_raters();
  return e;
}

}  // namespace

double coefficient_value(Metric metric, const RatingsMatrix& matrix,
                         std::optional<std::size_t> excluded_subject) {
  switch (metric) {
    case Metric::PercentAgreement:
      return percent_value(matrix, excluded_subject);
    case Metric::CohenKappa:
      return cohen_value(matrix, excluded_subject);
    case Metric::FleissKappa:
      return fleiss_value(matrix, excluded_subject);
    case Metric::CongerKappa:
      return conger_value(matrix, excluded_subject);
    case Metric::GwetAC1:
      return gwet_value(matrix, excluded_subject);
    case Metric::BrennanPrediger:
      return brennan_prediger_value(matrix, excluded_subject);
    case Metric::KrippendorffAlpha:
      return krippendorff_value(matrix, excluded_subject);
  }
  throw PreconditionError("unknown metric");
}

AgreementEstimate percent_agreement(const RatingsMatrix& m) {
  return make_estimate(Metric::PercentAgreement, m);
}
AgreementEstimate cohen_kappa(const RatingsMatrix& m) {
  return make_estimate(Metric::CohenKappa, m);
}
AgreementEstimate fleiss_kappa(const RatingsMatrix& m) {
  return make_estimate(Metric::FleissKappa, m);
}
AgreementEstimate conger_kappa(const RatingsMatrix& m) {
  return make_estimate(Metric::CongerKappa, m);
}
AgreementEstimate gwet_ac1(const RatingsMatrix& m) { return make_estimate(Metric::GwetAC1, m); }
AgreementEstimate brennan_prediger(const RatingsMatrix& m) {
  return make_estimate(Metric::BrennanPrediger, m);
}
AgreementEstimate krippendorff_alpha(const RatingsMatrix& m) {
  return make_estimate(Metric::KrippendorffAlpha, m);
}

AgreementEstimate compute(Metric metric, const RatingsMatrix& matrix) {
  return make_estimate(metric, matrix);
}

double normal_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw PreconditionError("alpha must lie in (0, 1)");
  static const boost::math::normal standard;
  return boost::math::quantile(boost::math::complement(standard, alpha / 2.0));
}

AgreementEstimate jackknife_ci(const RatingsMatrix& matrix, Metric metric, double confidence,
                               Execution exec) {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw PreconditionError("confidence must lie in (0, 1)");
  auto result = make_estimate(metric, matrix);
  const std::size_t pairable = subjects_used(Metric::PercentAgreement, matrix);
  if (pairable < 3)
    throw PreconditionError("jackknife needs >= 3 subjects with two or more ratings, got " +
                            std::to_string(pairable));

  // Deleting a subject with no ratings leaves every coefficient unchanged.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < matrix.n_subjects(); ++i) {
    const auto row = matrix.row(i);
    if (std::any_of(row.begin(), row.end(), [](auto c) { return c != RatingsMatrix::kMissing; }))
      rows.push_back(i);
  }

  const auto replicates = leave_one_out(matrix, metric, rows, exec);
  std::vector<double> defined;
  defined.reserve(replicates.size());
  std::size_t skipped = 0;
  for (std::size_t j = 0; j < replicates.size(); ++j) {
    if (replicates[j]) {
      defined.push_back(*replicates[j]);
    } else {
      ++skipped;
    }
  }
  if (skipped > 0) {
    if (static_cast<double>(skipped) > 0.10 * static_cast<double>(replicates.size()))
      throw UndefinedCoefficient(std::string(to_string(metric)) + ": " +
                                 std::to_string(skipped) + " of " +
                                 std::to_string(replicates.size()) +
                                 " leave-one-out fits undefined (limit 10%)");
    result.warnings.push_back(std::to_string(skipped) +
                              " undefined leave-one-out fit(s) skipped");
  }

  const auto m = static_cast<double>(defined.size());
  const double mean = std::accumulate(defined.begin(), defined.end(), 0.0) / m;
  double ss = 0.0;
  for (double v : defined) ss += (v - mean) * (v - mean);

  ConfidenceInterval ci;
  ci.confidence = confidence;
  ci.variance = (m - 1.0) / m * ss;
  const double half = normal_critical_value(1.0 - confidence) * std::sqrt(ci.variance);
  const double floor = is_chance_corrected(metric) ? -1.0 : 0.0;
  ci.low = std::clamp(result.estimate - half, floor, 1.0);
  ci.high = std::clamp(result.estimate + half, floor, 1.0);
  result.interval = ci;
  return result;
}

}  // namespace llmrel
