#include "llmrel/validity.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "llmrel/csv.hpp"
#include "llmrel/errors.hpp"
#include "llmrel/replicate.hpp"

namespace llmrel {

Label external_criterion_label(const CriterionRecord& record, ZeroExcessRule tie) {
  if (!std::isfinite(record.stock_next_day_return) || !std::isfinite(record.index_next_day_return))
    throw PreconditionError("non-finite return for " + record.ticker + " on " +
                            record.article_date);
  const double excess = record.stock_next_day_return - record.index_next_day_return;
  if (excess > 0.0) return Label::Positive;
  if (excess < 0.0) return Label::Negative;
  return tie == ZeroExcessRule::positive ? Label::Positive : Label::Negative;
}

std::vector<CriterionRecord> read_returns_csv(std::istream& in) {
  const auto table = csv::read(in);
  const auto c_ticker = table.column("ticker"), c_date = table.column("article_date"),
             c_stock = table.column("stock_next_day_return"),
             c_index = table.column("index_next_day_return");
  auto number = [](const std::string& text, std::size_t row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v))
      throw InputError("returns row " + std::to_string(row) + ": '" + text +
                       "' is not a finite number");
    return v;
  };
  std::vector<CriterionRecord> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    out.push_back({row[c_ticker], row[c_date], number(row[c_stock], i + 2),
                   number(row[c_index], i + 2)});
  }
  return out;
}

std::vector<CriterionRecord> read_returns_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open returns " + path.string());
  return read_returns_csv(in);
}

std::map<std::string, Label> criterion_labels(std::span<const Article> articles,
                                              std::span<const CriterionRecord> returns,
                                              ZeroExcessRule tie,
                                              std::vector<std::string>* missing) {
  std::map<std::pair<std::string, std::string>, const CriterionRecord*> index;
  for (const auto& r : returns) index[{r.ticker, r.article_date}] = &r;
  std::map<std::string, Label> out;
  for (const auto& a : articles) {
    auto it = index.find({a.ticker, a.date});
    if (it == index.end()) {
      if (missing) missing->push_back(a.article_id);
      continue;
    }
    out[a.article_id] = external_criterion_label(*it->second, tie);
  }
  return out;
}

std::map<std::string, Label> benchmark_labels(std::span<const Article> articles) {
  std::map<std::string, Label> out;
  for (const auto& a : articles) out[a.article_id] = a.benchmark_label;
  return out;
}

std::optional<double> ConfusionMetrics::get(std::string_view name) const {
  if (name == "accuracy") return accuracy;
  if (name == "tpr") return tpr;
  if (name == "tnr") return tnr;
  if (name == "ppv") return ppv;
  if (name == "f1") return f1;
  throw PreconditionError("unknown validity metric " + std::string(name));
}

ConfusionMetrics confusion_metrics(std::span<const Label> predicted,
                                   std::span<const Label> reference) {
  if (predicted.size() != reference.size())
    throw PreconditionError("predicted and reference labels differ in length");
  if (predicted.empty()) throw PreconditionError("confusion metrics need at least one label");

  ConfusionMetrics m;
  m.total = predicted.size();
  std::size_t positives = 0, negatives = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const Label p = predicted[i], ref = reference[i];
    if (ref == Label::Invalid) throw PreconditionError("reference labels must be valid");
    if (p == Label::Invalid) ++m.invalid;
    if (ref == Label::Positive) {
      ++positives;
      if (p == Label::Positive) ++m.tp;
      else ++m.fn;
    } else {
      ++negatives;
      if (p == Label::Negative) ++m.tn;
      if (p == Label::Positive) ++m.fp;
    }
  }
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = ratio(m.tp + m.tn, m.total);
  m.tpr = ratio(m.tp, positives);
  m.tnr = ratio(m.tn, negatives);
  m.ppv = ratio(m.tp, m.tp + m.fp);
  if (m.ppv && m.tpr && *m.ppv + *m.tpr > 0.0)
    m.f1 = 2.0 * *m.ppv * *m.tpr / (*m.ppv + *m.tpr);
  return m;
}

Label ensemble_vote(const std::map<std::string, Label>& first_replicate_labels, Rng& rng) {
  if (first_replicate_labels.empty()) throw PreconditionError("ensemble vote needs >= 1 model");
  std::vector<Label> labels;
  labels.reserve(first_replicate_labels.size());
  for (const auto& [model, label] : first_replicate_labels) labels.push_back(label);
  return majority_label(labels, rng);
}

std::string_view to_string(ReferenceKind kind) {
  return kind == ReferenceKind::benchmark ? "benchmark" : "external_criterion";
}

namespace {

void summarise(ValidityReport& report) {
  for (const char* name : kValidityMetrics) {
    std::vector<double> values;
    std::size_t undefined = 0;
    for (const auto& m : report.per_replicate) {
      if (auto v = m.get(name)) values.push_back(*v);
      else ++undefined;
    }
    MetricSummary s;
    s.defined = values.size();
    if (!values.empty()) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      s.mean = mean;
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        s.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1)) /
                      std::sqrt(static_cast<double>(values.size()));
      }
    }
    if (undefined > 0)
      report.warnings.push_back(std::string(name) + " undefined in " + std::to_string(undefined) +
                                " replicate(s); excluded from mean and standard error");
    report.summary[name] = s;
  }
}

}  // namespace

ValidityReport validity_report(std::span<const AnnotationRecord> records,
                               const std::map<std::string, Label>& reference,
                               ReferenceKind kind) {
  if (records.empty()) throw PreconditionError("validity report needs records");
  if (reference.empty()) throw PreconditionError("validity report needs reference labels");
  ValidityReport report;
  report.model_id = records.front().model_id;
  report.reference = kind;
  report.articles = reference.size();

  std::size_t replicates = 0;
  std::map<std::size_t, std::map<std::string, Label>> by_replicate;
  std::set<std::string> outside;
  for (const auto& r : records) {
    if (r.model_id != report.model_id)
      throw PreconditionError("validity report mixes models '" + report.model_id + "' and '" +
                              r.model_id + "'");
    replicates = std::max(replicates, r.replicate_index);
    if (!reference.contains(r.article_id)) {
      outside.insert(r.article_id);
      continue;
    }
    by_replicate[r.replicate_index][r.article_id] = r.parsed_label;
  }
  if (!outside.empty())
    report.warnings.push_back(std::to_string(outside.size()) +
                              " article(s) without a reference label ignored");

  std::vector<Label> ref;
  for (const auto& [article, label] : reference) ref.push_back(label);
  std::size_t missing = 0;
  for (std::size_t k = 1; k <= replicates; ++k) {
    const auto& got = by_replicate[k];
    std::vector<Label> pred;
    pred.reserve(ref.size());
    for (const auto& [article, label] : reference) {
      auto it = got.find(article);
      if (it == got.end()) ++missing;
      pred.push_back(it == got.end() ? Label::Invalid : it->second);
    }
    report.per_replicate.push_back(confusion_metrics(pred, ref));
  }
  if (missing > 0)
    report.warnings.push_back(std::to_string(missing) +
                              " (article, replicate) pair(s) without a record scored as invalid");
  summarise(report);
  return report;
}

ValidityReport ensemble_report(std::span<const AnnotationRecord> records,
                               const std::map<std::string, Label>& reference,
                               ReferenceKind kind, std::uint64_t seed) {
  if (reference.empty()) throw PreconditionError("ensemble report needs reference labels");
  std::set<std::string> models;
  std::map<std::string, std::map<std::string, Label>> votes;  // article -> model -> label
  for (const auto& r : records) {
    models.insert(r.model_id);
    if (r.replicate_index == 1) votes[r.article_id][r.model_id] = r.parsed_label;
  }
  if (models.empty()) throw PreconditionError("ensemble report needs records");

  ValidityReport report;
  report.model_id = "ensemble";
  report.reference = kind;
  report.articles = reference.size();
  std::vector<Label> pred, ref;
  for (const auto& [article, label] : reference) {
    auto ballot = votes[article];
    for (const auto& model : models) ballot.try_emplace(model, Label::Invalid);
    Rng rng(derive_seed(seed, fnv1a(article)));
    pred.push_back(ensemble_vote(ballot, rng));
    ref.push_back(label);
  }
  report.per_replicate.push_back(confusion_metrics(pred, ref));
  summarise(report);
  return report;
}

}  // namespace llmrel
