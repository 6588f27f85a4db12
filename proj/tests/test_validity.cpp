#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "llmrel/errors.hpp"
#include "llmrel/validity.hpp"

using namespace llmrel;

namespace {

constexpr Label P = Label::Positive;
constexpr Label N = Label::Negative;
constexpr Label I = Label::Invalid;

AnnotationRecord rec(std::string article, std::string model, std::size_t rep, Label label) {
  AnnotationRecord r;
  r.article_id = std::move(article);
  r.model_id = std::move(model);
  r.replicate_index = rep;
  r.attempt_count = 1;
  r.parsed_label = label;
  return r;
}

}  // namespace

TEST_SUITE("validity") {
  TEST_CASE("invalid predictions are never correct") {
    const std::vector<Label> pred{P, P, N, I}, ref{P, N, N, P};
    const auto m = confusion_metrics(pred, ref);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.tn == 1);
    CHECK(m.fn == 1);
    CHECK(m.invalid == 1);
    CHECK(*m.accuracy == 0.5);
    CHECK(*m.tpr == 0.5);
    CHECK(*m.tnr == 0.5);
    CHECK(*m.ppv == 0.5);
    CHECK(*m.f1 == 0.5);
  }

  TEST_CASE("invalid on a negative reference lowers TNR but is not a false positive") {
    const std::vector<Label> pred{I, N}, ref{N, N};
    const auto m = confusion_metrics(pred, ref);
    CHECK(m.fp == 0);
    CHECK(*m.tnr == 0.5);
    CHECK_FALSE(m.tpr.has_value());
    CHECK_FALSE(m.ppv.has_value());
    CHECK_FALSE(m.f1.has_value());
  }

  TEST_CASE("zero denominators are undefined rather than zero") {
    const std::vector<Label> pred{N, N}, ref{P, P};
    const auto m = confusion_metrics(pred, ref);
    CHECK(*m.tpr == 0.0);
    CHECK_FALSE(m.ppv.has_value());
    CHECK_FALSE(m.tnr.has_value());
    CHECK_FALSE(m.f1.has_value());
    CHECK_THROWS_AS(m.get("auc"), PreconditionError);
    const std::vector<Label> bad_ref{P, I};
    CHECK_THROWS_AS(confusion_metrics(pred, bad_ref), PreconditionError);
  }

  TEST_CASE("confusion cells partition the articles") {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 1 + rng.index(20);
      std::vector<Label> pred(n), ref(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = kAllLabels[rng.index(3)];
        ref[i] = rng.bernoulli(0.5) ? P : N;
      }
      const auto m = confusion_metrics(pred, ref);
      std::size_t invalid_negative = 0;
      for (std::size_t i = 0; i < n; ++i) invalid_negative += pred[i] == I && ref[i] == N;
      CHECK(m.tp + m.fp + m.tn + m.fn + invalid_negative == n);
      for (const char* name : kValidityMetrics)
        if (auto v = m.get(name)) {
          CHECK(*v >= 0.0);
          CHECK(*v <= 1.0);
        }
    }
  }

  TEST_CASE("external criterion labels") {
    CHECK(external_criterion_label({"A", "2024-01-01", 0.02, 0.01}) == P);
    CHECK(external_criterion_label({"A", "2024-01-01", -0.02, 0.01}) == N);
    CHECK(external_criterion_label({"A", "2024-01-01", 0.01, 0.01}) == N);
    CHECK(external_criterion_label({"A", "2024-01-01", 0.01, 0.01}, ZeroExcessRule::positive) == P);
    CHECK_THROWS_AS(external_criterion_label(
                        {"A", "2024-01-01", std::numeric_limits<double>::quiet_NaN(), 0.0}),
                    PreconditionError);
  }

  TEST_CASE("criterion labels join on ticker and date") {
    std::vector<Article> articles{{"a1", "2024-01-02", "AAPL", "t", "b", P, ""},
                                  {"a2", "2024-01-03", "MSFT", "t", "b", N, ""},
                                  {"a3", "2024-01-04", "GE", "t", "b", N, ""}};
    std::istringstream csv(
        "ticker,article_date,stock_next_day_return,index_next_day_return\n"
        "AAPL,2024-01-02,-0.01,0.00\n"
        "MSFT,2024-01-03,0.03,0.01\n"
        "GE,2024-01-05,0.0,0.0\n");
    const auto returns = read_returns_csv(csv);
    std::vector<std::string> missing;
    const auto labels = criterion_labels(articles, returns, ZeroExcessRule::negative, &missing);
    CHECK(labels.size() == 2);
    CHECK(labels.at("a1") == N);
    CHECK(labels.at("a2") == P);
    CHECK(missing == std::vector<std::string>{"a3"});
  }

  TEST_CASE("per-replicate report with mean and standard error") {
    const std::map<std::string, Label> ref{{"a", P}, {"b", N}, {"c", P}, {"d", N}};
    std::vector<AnnotationRecord> records;
    // Replicate 1 is perfect, replicate 2 gets half right.
    for (auto [article, label] : ref) records.push_back(rec(article, "m", 1, label));
    records.push_back(rec("a", "m", 2, P));
    records.push_back(rec("b", "m", 2, P));
    records.push_back(rec("c", "m", 2, I));
    records.push_back(rec("d", "m", 2, N));
    const auto r = validity_report(records, ref, ReferenceKind::benchmark);
    REQUIRE(r.per_replicate.size() == 2);
    CHECK(*r.per_replicate[0].accuracy == 1.0);
    CHECK(*r.per_replicate[1].accuracy == 0.5);
    const auto& acc = r.summary.at("accuracy");
    CHECK(*acc.mean == doctest::Approx(0.75));
    // sd of {1, 0.5} = 0.353553; se = sd / sqrt(2) = 0.25
    CHECK(acc.std_error == doctest::Approx(0.25));
    CHECK(acc.defined == 2);

    auto shuffled = records;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto again = validity_report(shuffled, ref, ReferenceKind::benchmark);
    CHECK(*again.summary.at("f1").mean == *r.summary.at("f1").mean);
  }

  TEST_CASE("missing records count as invalid and unknown articles are ignored") {
    const std::map<std::string, Label> ref{{"a", P}, {"b", N}};
    const std::vector<AnnotationRecord> records{rec("a", "m", 1, P), rec("zzz", "m", 1, P)};
    const auto r = validity_report(records, ref, ReferenceKind::external_criterion);
    CHECK(r.per_replicate[0].tp == 1);
    CHECK(r.per_replicate[0].tn == 0);
    CHECK(r.warnings.size() >= 2);
    CHECK(r.summary.at("accuracy").std_error == 0.0);
  }

  TEST_CASE("ensemble uses replicate-1 labels and a seeded tie-break") {
    const std::map<std::string, Label> ref{{"a", P}, {"b", N}};
    const std::vector<AnnotationRecord> records{
        rec("a", "m1", 1, P), rec("a", "m2", 1, P), rec("a", "m3", 1, N),
        rec("a", "m1", 2, N), rec("a", "m2", 2, N),
        rec("b", "m1", 1, N), rec("b", "m2", 1, I), rec("b", "m3", 1, N)};
    const auto r = ensemble_report(records, ref, ReferenceKind::benchmark, 1);
    CHECK(r.model_id == "ensemble");
    CHECK(*r.summary.at("accuracy").mean == 1.0);

    Rng rng(5);
    const std::map<std::string, Label> none{{"m1", I}, {"m2", I}};
    CHECK(ensemble_vote(none, rng) == I);
    const auto again = ensemble_report(records, ref, ReferenceKind::benchmark, 1);
    CHECK(*again.summary.at("f1").mean == *r.summary.at("f1").mean);
  }

  TEST_CASE("coin-flip annotator is near chance") {
    std::map<std::string, Label> ref;
    std::vector<AnnotationRecord> records;
    Rng rng(21);
    for (int i = 0; i < 2000; ++i) {
      const auto id = "a" + std::to_string(i);
      ref[id] = rng.bernoulli(0.5) ? P : N;
      records.push_back(rec(id, "coin", 1, rng.bernoulli(0.5) ? P : N));
    }
    const auto r = validity_report(records, ref, ReferenceKind::external_criterion);
    CHECK(std::abs(*r.summary.at("accuracy").mean - 0.5) < 0.04);
  }
}
