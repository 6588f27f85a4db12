#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmrel/agreement.hpp"
#include "llmrel/label.hpp"
#include "llmrel/rng.hpp"

namespace llmrel {

/// The r replicate labels one model produced for one subject, in replicate order.
struct ReplicateSet {
  std::string subject_id;
  std::string model_id;
  std::vector<Label> labels;
};

/// How Invalid replicates enter per-subject agreement.
enum class NaMode {
  dropped,    // excluded from the denominator
  penalized,  // counted as disagreement
};

std::string_view to_string(NaMode mode);

/// Modal-fraction agreement: count of the most common valid label divided by
/// all replicates (penalized) or by valid replicates (dropped). nullopt means
/// undefined: dropped mode with no valid label.
std::optional<double> per_subject_agreement(std::span<const Label> labels, NaMode mode);

/// Majority over valid labels; a Positive/Negative tie is settled by one
/// coin flip from rng. Invalid only when no valid label exists. The rng is
/// consumed only on a tie.
Label majority_label(std::span<const Label> labels, Rng& rng);

/// Consensus of one model's replicates for one subject.
inline Label consensus_label(std::span<const Label> labels, Rng& rng) {
  return majority_label(labels, rng);
}

struct AgreementProfile {
  std::map<std::string, std::optional<double>> per_subject;
  /// Subject counts per agreement level; undefined subjects are not counted.
  std::map<double, std::size_t> histogram;
  /// Histogram mass at 1.0 over subjects with a defined agreement.
  double perfect_agreement_share = 0.0;
  std::size_t undefined = 0;
};

struct UnavailableMetric {
  Metric metric{};
  std::string reason;
};

struct IntraRaterReport {
  std::string model_id;
  std::size_t subjects = 0;
  std::size_t replicates = 0;
  std::size_t missing_cells = 0;
  AgreementProfile penalized;
  AgreementProfile dropped;
  /// Share of subjects whose r replicates are identical valid labels.
  double perfect_agreement_share = 0.0;
  std::vector<AgreementEstimate> coefficient_estimates;
  std::vector<UnavailableMetric> unavailable;
  double per_comparison_confidence = 0.0;
};

struct IntraRaterOptions {
  std::vector<Metric> metrics{kMultiRaterMetrics.begin(), kMultiRaterMetrics.end()};
  /// Number of models compared jointly; drives the Sidak adjustment.
  std::size_t family_size = 1;
  double family_confidence = 0.90;
  Execution exec = Execution::parallel;
};

/// Subjects x replicates matrix (replicates act as raters, Invalid -> missing).
/// Subject order follows first appearance in sets.
RatingsMatrix replicate_matrix(std::span<const ReplicateSet> sets);

IntraRaterReport intra_rater_report(std::span<const ReplicateSet> sets,
                                    const IntraRaterOptions& options);

/// model -> subject -> consensus label.
using ConsensusMap = std::map<std::string, std::map<std::string, Label>>;

/// Collapses every model's replicates by consensus_label. Each (model,
/// subject) pair gets its own generator derived from seed, so the result does
/// not depend on input order.
ConsensusMap consensus_by_model(std::span<const ReplicateSet> sets, std::uint64_t seed);

/// Agreement across models (consensus labels as ratings) for one subset.
/// Requires >= 2 models covering the same subjects.
std::vector<AgreementEstimate> inter_rater_report(const ConsensusMap& consensus,
                                                  std::span<const std::string> subset,
                                                  std::span<const Metric> metrics,
                                                  double confidence = 0.95,
                                                  Execution exec = Execution::parallel);

struct RankedModel {
  std::string model_id;
  double score = 0.0;
};

/// Prefixes of the ranking for N = n_min..n_max. The ranking must be sorted
/// by descending score; equal scores are ordered by model_id.
std::vector<std::vector<std::string>> top_n_model_subsets(std::span<const RankedModel> ranked,
                                                          std::size_t n_min, std::size_t n_max);

}  // namespace llmrel
