#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmrel/harness.hpp"
#include "llmrel/label.hpp"
#include "llmrel/rng.hpp"

namespace llmrel {

/// Next-trading-day returns for the stock an article is about and for the
/// market index, as fractions (0.012 = 1.2%).
struct CriterionRecord {
  std::string ticker;
  std::string article_date;
  double stock_next_day_return = 0.0;
  double index_next_day_return = 0.0;
};

/// Label assigned when the stock exactly matches the index.
enum class ZeroExcessRule { negative, positive };

/// Positive when the stock outperformed the index, Negative when it
/// underperformed; zero excess return follows `tie`.
Label external_criterion_label(const CriterionRecord& record,
                               ZeroExcessRule tie = ZeroExcessRule::negative);

/// Returns CSV: ticker,article_date,stock_next_day_return,index_next_day_return.
std::vector<CriterionRecord> read_returns_csv(std::istream& in);
std::vector<CriterionRecord> read_returns_csv(const std::filesystem::path& path);

/// Criterion label per article, joined on (ticker, date). Articles without a
/// returns row are left out and reported through `missing`.
std::map<std::string, Label> criterion_labels(std::span<const Article> articles,
                                              std::span<const CriterionRecord> returns,
                                              ZeroExcessRule tie,
                                              std::vector<std::string>* missing = nullptr);

std::map<std::string, Label> benchmark_labels(std::span<const Article> articles);

inline constexpr std::array<const char*, 5> kValidityMetrics{"accuracy", "tpr", "tnr", "ppv",
                                                             "f1"};

/// Confusion cells and rates. Invalid predictions are never correct: on a
/// Positive reference they are false negatives, on a Negative reference they
/// count against TNR (not predicted Negative) but are not false positives.
struct ConfusionMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;  // reference Negative, predicted Positive
  std::size_t tn = 0;
  std::size_t fn = 0;  // reference Positive, not predicted Positive
  std::size_t invalid = 0;
  std::size_t total = 0;
  std::optional<double> accuracy, tpr, tnr, ppv, f1;  // nullopt: zero denominator

  std::optional<double> get(std::string_view name) const;
};

ConfusionMetrics confusion_metrics(std::span<const Label> predicted,
                                   std::span<const Label> reference);

/// Majority over valid labels with a seeded coin flip on ties; Invalid when
/// no model gave a valid label.
Label ensemble_vote(const std::map<std::string, Label>& first_replicate_labels, Rng& rng);

enum class ReferenceKind { benchmark, external_criterion };
std::string_view to_string(ReferenceKind kind);

struct MetricSummary {
  std::optional<double> mean;
  double std_error = 0.0;  // sample SD / sqrt(defined)
  std::size_t defined = 0;
};

struct ValidityReport {
  std::string model_id;  // or "ensemble"
  ReferenceKind reference = ReferenceKind::benchmark;
  std::size_t articles = 0;
  std::vector<ConfusionMetrics> per_replicate;
  std::map<std::string, MetricSummary> summary;
  std::vector<std::string> warnings;
};

/// Scores each replicate of one model separately against the reference and
/// summarises across replicates. Articles without a record for a replicate
/// (failed tasks) count as Invalid; records for articles outside the
/// reference are ignored with a warning.
ValidityReport validity_report(std::span<const AnnotationRecord> records,
                               const std::map<std::string, Label>& reference,
                               ReferenceKind kind);

/// Majority vote over every model's replicate-1 label per article.
ValidityReport ensemble_report(std::span<const AnnotationRecord> records,
                               const std::map<std::string, Label>& reference,
                               ReferenceKind kind, std::uint64_t seed);

}  // namespace llmrel
