#include "llmrel/replicate.hpp"

#include <algorithm>
#include <set>

#include "llmrel/errors.hpp"
#include "llmrel/planner.hpp"

namespace llmrel {

std::string_view to_string(NaMode mode) {
  return mode == NaMode::dropped ? "na_dropped" : "na_penalized";
}

namespace {

struct ValidCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t valid() const { return positive + negative; }
  std::size_t modal() const { return std::max(positive, negative); }
};

ValidCounts count_valid(std::span<const Label> labels) {
  ValidCounts c;
  for (Label l : labels) {
    if (l == Label::Positive) ++c.positive;
    if (l == Label::Negative) ++c.negative;
  }
  return c;
}

AgreementProfile build_profile(const std::vector<std::pair<std::string, std::vector<Label>>>& rows,
                               NaMode mode) {
  AgreementProfile profile;
  std::size_t defined = 0, perfect = 0;
  for (const auto& [subject, labels] : rows) {
    const auto value = per_subject_agreement(labels, mode);
    profile.per_subject[subject] = value;
    if (!value) {
      ++profile.undefined;
      continue;
    }
    ++defined;
    ++profile.histogram[*value];
    if (*value == 1.0) ++perfect;
  }
  profile.perfect_agreement_share =
      defined == 0 ? 0.0 : static_cast<double>(perfect) / static_cast<double>(defined);
  return profile;
}

}  // namespace

std::optional<double> per_subject_agreement(std::span<const Label> labels, NaMode mode) {
  if (labels.empty()) throw PreconditionError("per-subject agreement needs at least one label");
  const auto c = count_valid(labels);
  if (mode == NaMode::penalized)
    return static_cast<double>(c.modal()) / static_cast<double>(labels.size());
  if (c.valid() == 0) return std::nullopt;
  return static_cast<double>(c.modal()) / static_cast<double>(c.valid());
}

Label majority_label(std::span<const Label> labels, Rng& rng) {
  const auto c = count_valid(labels);
  if (c.valid() == 0) return Label::Invalid;
  if (c.positive > c.negative) return Label::Positive;
  if (c.negative > c.positive) return Label::Negative;
  return rng.bernoulli(0.5) ? Label::Positive : Label::Negative;
}

RatingsMatrix replicate_matrix(std::span<const ReplicateSet> sets) {
  if (sets.empty()) throw PreconditionError("no replicate sets");
  const std::size_t r = sets.front().labels.size();
  if (r == 0) throw PreconditionError("replicate sets need r >= 1");
  std::vector<std::string> subjects;
  std::vector<std::vector<Label>> rows;
  std::set<std::string> seen;
  for (const auto& s : sets) {
    if (s.labels.size() != r) throw PreconditionError("replicate sets disagree on r");
    if (!seen.insert(s.subject_id).second)
      throw PreconditionError("duplicate replicate set for subject '" + s.subject_id + "'");
    subjects.push_back(s.subject_id);
    rows.push_back(s.labels);
  }
  std::vector<std::string> raters;
  for (std::size_t k = 0; k < r; ++k) raters.push_back("replicate_" + std::to_string(k + 1));
  return RatingsMatrix::from_labels(std::move(subjects), std::move(raters), rows);
}

IntraRaterReport intra_rater_report(std::span<const ReplicateSet> sets,
                                    const IntraRaterOptions& options) {
  if (sets.size() < 3) throw PreconditionError("intra-rater report needs >= 3 subjects");
  const auto& model_id = sets.front().model_id;
  for (const auto& s : sets)
    if (s.model_id != model_id)
      throw PreconditionError("intra-rater report mixes models '" + model_id + "' and '" +
                              s.model_id + "'");

  IntraRaterReport report;
  report.model_id = model_id;
  const auto matrix = replicate_matrix(sets);
  report.subjects = matrix.n_subjects();
  report.replicates = matrix.n_raters();
  report.missing_cells = matrix.missing_count();

  std::vector<std::pair<std::string, std::vector<Label>>> rows;
  rows.reserve(sets.size());
  for (const auto& s : sets) rows.emplace_back(s.subject_id, s.labels);
  report.penalized = build_profile(rows, NaMode::penalized);
  report.dropped = build_profile(rows, NaMode::dropped);
  report.perfect_agreement_share = report.penalized.perfect_agreement_share;

  const double alpha = sidak_adjust(options.family_confidence, std::max<std::size_t>(options.family_size, 1));
  report.per_comparison_confidence = 1.0 - alpha;
  for (Metric metric : options.metrics) {
    try {
      report.coefficient_estimates.push_back(
          jackknife_ci(matrix, metric, report.per_comparison_confidence, options.exec));
    } catch (const UndefinedCoefficient& e) {
      report.unavailable.push_back({metric, e.what()});
    } catch (const PreconditionError& e) {
      report.unavailable.push_back({metric, e.what()});
    }
  }
  return report;
}

ConsensusMap consensus_by_model(std::span<const ReplicateSet> sets, std::uint64_t seed) {
  ConsensusMap out;
  for (const auto& s : sets) {
    Rng rng(derive_seed(seed, {fnv1a(s.model_id), fnv1a(s.subject_id)}));
    auto [it, inserted] = out[s.model_id].emplace(s.subject_id, consensus_label(s.labels, rng));
    if (!inserted)
      throw PreconditionError("duplicate replicate set for (" + s.model_id + ", " +
                              s.subject_id + ")");
  }
  return out;
}

std::vector<AgreementEstimate> inter_rater_report(const ConsensusMap& consensus,
                                                  std::span<const std::string> subset,
                                                  std::span<const Metric> metrics,
                                                  double confidence, Execution exec) {
  if (subset.size() < 2) throw PreconditionError("inter-rater analysis needs >= 2 models");
  std::vector<const std::map<std::string, Label>*> columns;
  for (const auto& id : subset) {
    auto it = consensus.find(id);
    if (it == consensus.end()) throw PreconditionError("no consensus labels for model '" + id + "'");
    columns.push_back(&it->second);
  }
  const auto& reference = *columns.front();
  for (std::size_t c = 1; c < columns.size(); ++c) {
    bool same = columns[c]->size() == reference.size();
    for (auto a = reference.begin(), b = columns[c]->begin(); same && a != reference.end(); ++a, ++b)
      same = a->first == b->first;
    if (!same)
      throw PreconditionError("models '" + subset[0] + "' and '" + subset[c] +
                              "' cover different subjects");
  }

  std::vector<std::string> subjects;
  std::vector<std::vector<Label>> rows;
  for (const auto& [subject, label] : reference) {
    subjects.push_back(subject);
    std::vector<Label> row;
    for (const auto* column : columns) row.push_back(column->at(subject));
    rows.push_back(std::move(row));
  }
  const auto matrix = RatingsMatrix::from_labels(std::move(subjects),
                                                 {subset.begin(), subset.end()}, rows);
  std::vector<AgreementEstimate> out;
  for (Metric metric : metrics) out.push_back(jackknife_ci(matrix, metric, confidence, exec));
  return out;
}

std::vector<std::vector<std::string>> top_n_model_subsets(std::span<const RankedModel> ranked,
                                                          std::size_t n_min, std::size_t n_max) {
  if (n_min < 1 || n_min > n_max) throw PreconditionError("invalid subset size range");
  if (n_max > ranked.size())
    throw PreconditionError("subset size " + std::to_string(n_max) + " exceeds the " +
                            std::to_string(ranked.size()) + " ranked models");
  for (std::size_t i = 1; i < ranked.size(); ++i)
    if (ranked[i].score > ranked[i - 1].score)
      throw PreconditionError("ranking is not sorted by descending score");

  std::vector<RankedModel> order(ranked.begin(), ranked.end());
  std::stable_sort(order.begin(), order.end(), [](const RankedModel& a, const RankedModel& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.model_id < b.model_id;
  });
  std::vector<std::vector<std::string>> subsets;
  for (std::size_t n = n_min; n <= n_max; ++n) {
    std::vector<std::string> subset;
    for (std::size_t i = 0; i < n; ++i) subset.push_back(order[i].model_id);
    subsets.push_back(std::move(subset));
  }
  return subsets;
}

}  // namespace llmrel
