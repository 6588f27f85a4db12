#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llmrel/agreement.hpp"
#include "llmrel/ratings.hpp"
#include "llmrel/replicate.hpp"
#include "llmrel/rng.hpp"

namespace llmrel {

/// Confusion-matrix rater model. Per-rater lists hold either one entry
/// (shared by every rater) or one entry per rater.
struct RaterModel {
  using Distribution = std::vector<double>;
  using Confusion = std::vector<Distribution>;  // row = true category

  Distribution truth_distribution;
  std::vector<Confusion> per_rater_confusion;
  std::vector<double> na_rate{0.0};
  std::uint64_t seed = 0;

  /// Throws PreconditionError unless every distribution sums to 1 (+-1e-12),
  /// sizes agree with q, and per-rater lists fit n_raters.
  void validate(std::size_t n_raters) const;

  std::size_t categories() const { return truth_distribution.size(); }

  /// Ratings independent of the truth and uniform over q categories.
  static RaterModel independent_uniform(std::size_t q, std::uint64_t seed);
  /// Binary truth drawn 50/50; each rating flips away from the truth with
  /// probability flip and is Invalid with probability na_rate.
  static RaterModel binary_consistent(double flip, double na_rate, std::uint64_t seed);
};

RatingsMatrix simulate_matrix(const RaterModel& model, std::size_t n_subjects,
                              std::size_t n_raters);
/// Same draws as simulate_matrix but from a caller-owned stream.
RatingsMatrix simulate_matrix(const RaterModel& model, std::size_t n_subjects,
                              std::size_t n_raters, Rng& rng);

/// Replicate sets for several models annotating the same subjects. The
/// model's per-rater entries are indexed by model; all replicates of a model
/// share its confusion row. Binary models only.
std::vector<ReplicateSet> simulate_replicate_sets(const RaterModel& model,
                                                  std::span<const std::string> model_ids,
                                                  std::size_t n_subjects,
                                                  std::size_t replicates);

struct NullCalibration {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t trials = 0;
  std::size_t discarded = 0;
};

/// Mean and sample SD of a coefficient over matrices of independent uniform
/// raters. Undefined trials are redrawn (cap 10%).
NullCalibration null_calibration(Metric metric, std::size_t q, std::size_t raters,
                                 std::size_t n_subjects, std::size_t trials, std::uint64_t seed,
                                 Execution exec = Execution::parallel);

}  // namespace llmrel
