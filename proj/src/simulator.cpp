#include "llmrel/simulator.hpp"

#include <cmath>
#include <numeric>

#include "llmrel/errors.hpp"

namespace llmrel {

namespace {

void check_distribution(const RaterModel::Distribution& d, std::size_t q, const char* what) {
  if (d.size() != q)
    throw PreconditionError(std::string(what) + " has " + std::to_string(d.size()) +
                            " entries, expected " + std::to_string(q));
  for (double p : d)
    if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError(std::string(what) + ": probability outside [0, 1]");
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12)
    throw PreconditionError(std::string(what) + " sums to " + std::to_string(total));
}

template <class T>
const T& per_rater(const std::vector<T>& items, std::size_t rater) {
  return items.size() == 1 ? items.front() : items[rater];
}

}  // namespace

void RaterModel::validate(std::size_t n_raters) const {
  const std::size_t q = truth_distribution.size();
  if (q < 2) throw PreconditionError("rater model needs q >= 2 categories");
  check_distribution(truth_distribution, q, "truth distribution");
  auto fits = [&](std::size_t size) { return size == 1 || size == n_raters; };
  if (per_rater_confusion.empty() || !fits(per_rater_confusion.size()))
    throw PreconditionError("per-rater confusion list must have 1 or n_raters entries");
  if (na_rate.empty() || !fits(na_rate.size()))
    throw PreconditionError("na_rate list must have 1 or n_raters entries");
  for (const auto& confusion : per_rater_confusion) {
    if (confusion.size() != q) throw PreconditionError("confusion matrix must have q rows");
    for (const auto& row : confusion) check_distribution(row, q, "confusion row");
  }
  for (double p : na_rate)
    if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("na_rate outside [0, 1]");
}

RaterModel RaterModel::independent_uniform(std::size_t q, std::uint64_t seed) {
  RaterModel m;
  m.truth_distribution.assign(q, 1.0 / static_cast<double>(q));
  m.per_rater_confusion.assign(1, Confusion(q, m.truth_distribution));
  m.seed = seed;
  return m;
}

RaterModel RaterModel::binary_consistent(double flip, double na_rate, std::uint64_t seed) {
  RaterModel m;
  m.truth_distribution = {0.5, 0.5};
  m.per_rater_confusion = {{{1.0 - flip, flip}, {flip, 1.0 - flip}}};
  m.na_rate = {na_rate};
  m.seed = seed;
  return m;
}

RatingsMatrix simulate_matrix(const RaterModel& model, std::size_t n_subjects,
                              std::size_t n_raters, Rng& rng) {
  if (n_subjects == 0 || n_raters == 0)
    throw PreconditionError("simulate_matrix needs at least one subject and one rater");
  model.validate(n_raters);
  const std::size_t q = model.categories();

  std::vector<RatingsMatrix::Cell> cells;
  cells.reserve(n_subjects * n_raters);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    const auto truth = rng.categorical(model.truth_distribution);
    for (std::size_t g = 0; g < n_raters; ++g) {
      const bool invalid = rng.bernoulli(per_rater(model.na_rate, g));
      const auto emitted = rng.categorical(per_rater(model.per_rater_confusion, g)[truth]);
      cells.push_back(invalid ? RatingsMatrix::Cell{} : RatingsMatrix::Cell{static_cast<int>(emitted)});
    }
  }

  std::vector<std::string> subjects(n_subjects), raters(n_raters), categories(q);
  for (std::size_t i = 0; i < n_subjects; ++i) subjects[i] = "s" + std::to_string(i + 1);
  for (std::size_t g = 0; g < n_raters; ++g) raters[g] = "r" + std::to_string(g + 1);
  if (q == 2) {
    categories = {"positive", "negative"};
  } else {
    for (std::size_t k = 0; k < q; ++k) categories[k] = "c" + std::to_string(k + 1);
  }
  return RatingsMatrix(std::move(subjects), std::move(raters), std::move(categories), cells);
}

RatingsMatrix simulate_matrix(const RaterModel& model, std::size_t n_subjects,
                              std::size_t n_raters) {
  Rng rng(model.seed);
  return simulate_matrix(model, n_subjects, n_raters, rng);
}

std::vector<ReplicateSet> simulate_replicate_sets(const RaterModel& model,
                                                  std::span<const std::string> model_ids,
                                                  std::size_t n_subjects,
                                                  std::size_t replicates) {
  if (model_ids.empty() || n_subjects == 0 || replicates == 0)
    throw PreconditionError("simulate_replicate_sets needs models, subjects and replicates");
  model.validate(model_ids.size());
  if (model.categories() != 2)
    throw PreconditionError("replicate sets carry binary labels; model must have q = 2");

  Rng rng(model.seed);
  std::vector<ReplicateSet> sets;
  sets.reserve(n_subjects * model_ids.size());
  for (std::size_t i = 0; i < n_subjects; ++i) {
    const auto truth = rng.categorical(model.truth_distribution);
    for (std::size_t mi = 0; mi < model_ids.size(); ++mi) {
      ReplicateSet set;
      set.subject_id = "s" + std::to_string(i + 1);
      set.model_id = model_ids[mi];
      for (std::size_t rep = 0; rep < replicates; ++rep) {
        const bool invalid = rng.bernoulli(per_rater(model.na_rate, mi));
        const auto emitted = rng.categorical(per_rater(model.per_rater_confusion, mi)[truth]);
        set.labels.push_back(invalid ? Label::Invalid
                                     : label_from_category(static_cast<int>(emitted)));
      }
      sets.push_back(std::move(set));
    }
  }
  return sets;
}

NullCalibration null_calibration(Metric metric, std::size_t q, std::size_t raters,
                                 std::size_t n_subjects, std::size_t trials, std::uint64_t seed,
                                 Execution exec) {
  if (trials < 100) throw PreconditionError("null calibration needs >= 100 trials");
  const auto model = RaterModel::independent_uniform(q, seed);
  const auto mc = monte_carlo(trials, seed, exec, [&](Rng& rng) {
    return coefficient_value(metric, simulate_matrix(model, n_subjects, raters, rng));
  });

  NullCalibration out;
  out.trials = trials;
  out.discarded = mc.discarded;
  const auto n = static_cast<double>(mc.values.size());
  out.mean = std::accumulate(mc.values.begin(), mc.values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : mc.values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / (n - 1.0));
  return out;
}

}  // namespace llmrel
