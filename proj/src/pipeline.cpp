#include "llmrel/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>
#include <json.hpp>

#include "llmrel/csv.hpp"
#include "llmrel/errors.hpp"
#include "llmrel/replicate.hpp"
#include "llmrel/simulator.hpp"

#ifndef LLMREL_VERSION
#define LLMREL_VERSION "dev"
#endif

namespace llmrel {

using nlohmann::json;

std::string_view tool_version() { return LLMREL_VERSION; }

// ---------------------------------------------------------------------------
// Config

namespace {

void reject_unknown(const json& section, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  for (const auto& [key, value] : section.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback,
                      const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig parse_model(const json& j, std::size_t index) {
  const std::string where = "models[" + std::to_string(index) + "]";
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown(j,
                 {"model_id", "backend", "base_url", "credential_env", "temperature",
                  "max_tokens", "cost_tier", "request_timeout_s", "mock"},
                 where);
  ModelConfig m;
  m.model_id = get_or<std::string>(j, "model_id", "", where);
  m.backend = parse_backend_kind(get_or<std::string>(j, "backend", "mock", where));
  m.base_url = get_or<std::string>(j, "base_url", "", where);
  m.credential_env = get_or<std::string>(j, "credential_env", "", where);
  m.temperature = get_or<double>(j, "temperature", 0.0, where);
  m.max_tokens = get_count(j, "max_tokens", 3000, where);
  m.cost_tier = get_or<std::string>(j, "cost_tier", "cheap", where);
  m.request_timeout_s = get_or<double>(j, "request_timeout_s", 600.0, where);
  if (j.contains("mock")) {
    const auto& mj = j.at("mock");
    reject_unknown(mj, {"flip_rate", "invalid_rate", "failure_rate", "fixed_response"},
                   where + ".mock");
    m.mock.flip_rate = get_or<double>(mj, "flip_rate", 0.0, where + ".mock");
    m.mock.invalid_rate = get_or<double>(mj, "invalid_rate", 0.0, where + ".mock");
    m.mock.failure_rate = get_or<double>(mj, "failure_rate", 0.0, where + ".mock");
    m.mock.fixed_response = get_or<std::string>(mj, "fixed_response", "", where + ".mock");
  }
  if (m.model_id.empty()) throw ConfigError(where + ".model_id is required");
  return m;
}

}  // namespace

Config parse_config(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  reject_unknown(doc, {"seed", "planning", "models", "experiment", "reliability", "validity"},
                 "config");

  Config c;
  c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");

  if (doc.contains("planning")) {
    const auto& p = doc.at("planning");
    reject_unknown(p,
                   {"margin_of_error", "family_confidence", "k_comparisons", "replicates",
                    "categories", "c_values"},
                   "planning");
    PlanningSpec spec;
    spec.margin_of_error = get_or<double>(p, "margin_of_error", 0.10, "planning");
    spec.family_confidence = get_or<double>(p, "family_confidence", 0.90, "planning");
    spec.k_comparisons = get_count(p, "k_comparisons", 1, "planning");
    spec.replicates = get_count(p, "replicates", 5, "planning");
    spec.categories = get_count(p, "categories", 2, "planning");
    spec.c_values = get_or<std::map<std::string, double>>(p, "c_values", {}, "planning");
    try {
      spec.validate();
    } catch (const PreconditionError& e) {
      throw ConfigError(std::string("planning: ") + e.what());
    }
    c.planning = spec;
  }

  if (doc.contains("models")) {
    const auto& models = doc.at("models");
    if (!models.is_array()) throw ConfigError("models must be a list");
    for (std::size_t i = 0; i < models.size(); ++i) c.models.push_back(parse_model(models[i], i));
  }

  if (doc.contains("experiment")) {
    const auto& e = doc.at("experiment");
    reject_unknown(e,
                   {"replicates", "concurrency_limit", "dataset", "target_n", "retry", "prompt",
                    "virtual_clock"},
                   "experiment");
    c.experiment.replicates = get_count(e, "replicates", 5, "experiment");
    c.experiment.concurrency_limit = get_count(e, "concurrency_limit", 4, "experiment");
    c.experiment.dataset = resolve(base_dir, get_or<std::string>(e, "dataset", "", "experiment"));
    c.experiment.target_n = get_count(e, "target_n", 0, "experiment");
    c.experiment.virtual_clock = get_or<bool>(e, "virtual_clock", false, "experiment");
    if (e.contains("retry")) {
      const auto& r = e.at("retry");
      reject_unknown(r, {"max_attempts", "delay_seconds"}, "experiment.retry");
      c.experiment.retry.max_attempts = get_count(r, "max_attempts", 3, "experiment.retry");
      const double delay = get_or<double>(r, "delay_seconds", 30.0, "experiment.retry");
      if (!(delay >= 0.0)) throw ConfigError("experiment.retry.delay_seconds must be >= 0");
      c.experiment.retry.delay = std::chrono::milliseconds(static_cast<long long>(delay * 1000.0));
    }
    if (e.contains("prompt")) {
      const auto& p = e.at("prompt");
      reject_unknown(p, {"system", "system_file", "user_template"}, "experiment.prompt");
      if (p.contains("system_file"))
        c.experiment.prompt.system =
            read_text(resolve(base_dir, get_or<std::string>(p, "system_file", "", "prompt")));
      if (p.contains("system"))
        c.experiment.prompt.system = get_or<std::string>(p, "system", "", "prompt");
      if (p.contains("user_template"))
        c.experiment.prompt.user = get_or<std::string>(p, "user_template", "", "prompt");
    }
    if (c.experiment.replicates < 1) throw ConfigError("experiment.replicates must be >= 1");
    if (c.experiment.concurrency_limit < 1)
      throw ConfigError("experiment.concurrency_limit must be >= 1");
    if (c.experiment.retry.max_attempts < 1)
      throw ConfigError("experiment.retry.max_attempts must be >= 1");
    if (c.experiment.target_n % 2 != 0) throw ConfigError("experiment.target_n must be even");
    validate_template(c.experiment.prompt);
  }

  if (doc.contains("reliability")) {
    const auto& r = doc.at("reliability");
    reject_unknown(r,
                   {"metrics", "family_size", "family_confidence", "inter_confidence", "top_n"},
                   "reliability");
    if (r.contains("metrics")) {
      c.reliability.metrics.clear();
      for (const auto& name : get_or<std::vector<std::string>>(r, "metrics", {}, "reliability")) {
        const auto metric = parse_metric(name);
        if (!metric) throw ConfigError("reliability.metrics: unknown metric '" + name + "'");
        c.reliability.metrics.push_back(*metric);
      }
    }
    c.reliability.family_size = get_count(r, "family_size", 0, "reliability");
    c.reliability.family_confidence = get_or<double>(r, "family_confidence", 0.90, "reliability");
    c.reliability.inter_confidence = get_or<double>(r, "inter_confidence", 0.95, "reliability");
    if (r.contains("top_n")) {
      const auto range = get_or<std::vector<std::size_t>>(r, "top_n", {}, "reliability");
      if (range.size() != 2 || range[0] < 2 || range[0] > range[1])
        throw ConfigError("reliability.top_n must be [min, max] with 2 <= min <= max");
      c.reliability.top_n_min = range[0];
      c.reliability.top_n_max = range[1];
    }
    for (double conf : {c.reliability.family_confidence, c.reliability.inter_confidence})
      if (!(conf > 0.0 && conf < 1.0)) throw ConfigError("reliability confidences must lie in (0, 1)");
  }

  if (doc.contains("validity")) {
    const auto& v = doc.at("validity");
    reject_unknown(v, {"returns_csv", "zero_excess"}, "validity");
    c.validity.returns_csv = resolve(base_dir, get_or<std::string>(v, "returns_csv", "", "validity"));
    const auto tie = get_or<std::string>(v, "zero_excess", "negative", "validity");
    if (tie == "negative") c.validity.tie = ZeroExcessRule::negative;
    else if (tie == "positive") c.validity.tie = ZeroExcessRule::positive;
    else throw ConfigError("validity.zero_excess must be 'negative' or 'positive'");
  }
  return c;
}

Config load_config(const fs::path& path) {
  auto config = parse_config(read_text(path), path.parent_path());
  config.path = path;
  return config;
}

// ---------------------------------------------------------------------------
// Digests

std::string sha256_bytes(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-256 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return sha256_bytes(s.str());
}

std::string content_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  const std::string bytes = s.str();
  if (!bytes.starts_with(kRecordsHeader)) return sha256_bytes(bytes);

  std::istringstream text(bytes);
  auto table = csv::read(text);
  const auto ts = table.column("timestamp_utc"), lat = table.column("latency_ms");
  std::ostringstream canonical;
  for (auto* row : {&table.header}) csv::write_row(canonical, *row);
  for (auto& row : table.rows) {
    row[ts].clear();
    row[lat].clear();
    csv::write_row(canonical, row);
  }
  return sha256_bytes(canonical.str());
}

std::string file_stem(std::string_view id) {
  std::string out(id);
  for (auto& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  return out;
}

// ---------------------------------------------------------------------------
// Serialization helpers

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const AgreementEstimate& e) {
  json j{{"metric", to_string(e.metric)},
         {"estimate", e.estimate},
         {"n_used", e.n_used},
         {"raters", e.raters},
         {"warnings", e.warnings}};
  if (e.interval) {
    j["variance"] = e.interval->variance;
    j["ci_low"] = e.interval->low;
    j["ci_high"] = e.interval->high;
    j["confidence"] = e.interval->confidence;
  }
  return j;
}

json to_json(const AgreementProfile& p) {
  json histogram = json::array();
  for (const auto& [level, count] : p.histogram) histogram.push_back({{"level", level}, {"count", count}});
  json per_subject = json::object();
  for (const auto& [subject, value] : p.per_subject) per_subject[subject] = optional_number(value);
  return {{"perfect_agreement_share", p.perfect_agreement_share},
          {"undefined", p.undefined},
          {"histogram", histogram},
          {"per_subject", per_subject}};
}

json to_json(const IntraRaterReport& r) {
  json coefficients = json::array(), unavailable = json::array();
  for (const auto& e : r.coefficient_estimates) coefficients.push_back(to_json(e));
  for (const auto& u : r.unavailable)
    unavailable.push_back({{"metric", to_string(u.metric)}, {"reason", u.reason}});
  return {{"model_id", r.model_id},
          {"subjects", r.subjects},
          {"replicates", r.replicates},
          {"missing_cells", r.missing_cells},
          {"per_comparison_confidence", r.per_comparison_confidence},
          {"perfect_agreement_share", r.perfect_agreement_share},
          {"na_penalized", to_json(r.penalized)},
          {"na_dropped", to_json(r.dropped)},
          {"coefficients", coefficients},
          {"unavailable", unavailable}};
}

json to_json(const ValidityReport& r) {
  json reps = json::array();
  for (const auto& m : r.per_replicate) {
    json row{{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}, {"invalid", m.invalid},
             {"total", m.total}};
    for (const char* name : kValidityMetrics) row[name] = optional_number(m.get(name));
    reps.push_back(row);
  }
  json summary = json::object();
  for (const auto& [name, s] : r.summary)
    summary[name] = {{"mean", optional_number(s.mean)}, {"std_error", s.std_error}, {"defined", s.defined}};
  return {{"model_id", r.model_id},
          {"reference", to_string(r.reference)},
          {"articles", r.articles},
          {"per_replicate", reps},
          {"summary", summary},
          {"warnings", r.warnings}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string fixed(double v, int decimals) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(decimals) << v;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Phases

std::vector<fs::path> plan_phase(const PlanningSpec& spec, const fs::path& out_dir,
                                 std::ostream& table) {
  const auto plan = required_sample_size(spec);
  fs::create_directories(out_dir);
  json per_metric = json::object();
  for (const auto& [metric, n] : plan.per_metric_n) per_metric[metric] = n;
  json doc{{"margin_of_error", spec.margin_of_error},
           {"family_confidence", spec.family_confidence},
           {"k_comparisons", spec.k_comparisons},
           {"replicates", spec.replicates},
           {"categories", spec.categories},
           {"c_values", spec.c_values},
           {"adjusted_alpha", plan.adjusted_alpha},
           {"z_critical", plan.z_critical},
           {"per_metric_n", per_metric},
           {"n_final", plan.n_final}};
  const auto path = out_dir / "plan.json";
  write_json(path, doc);

  table << "Sample-size plan (E0 = " << fmt(spec.margin_of_error)
        << ", family confidence = " << fmt(spec.family_confidence)
        << ", k = " << spec.k_comparisons << ", r = " << spec.replicates
        << ", q = " << spec.categories << ")\n";
  table << "  adjusted alpha  " << fixed(plan.adjusted_alpha, 6) << "\n";
  table << "  z critical      " << fixed(plan.z_critical, 4) << "\n\n";
  table << "  " << std::left << std::setw(22) << "metric" << std::right << std::setw(10) << "C"
        << std::setw(10) << "n" << "\n";
  for (const auto& [metric, n] : plan.per_metric_n)
    table << "  " << std::left << std::setw(22) << metric << std::right << std::setw(10)
          << fixed(spec.c_values.at(metric), 5) << std::setw(10) << n << "\n";
  table << "  " << std::left << std::setw(22) << "n_final" << std::right << std::setw(20)
        << plan.n_final << "\n";
  return {path};
}

std::vector<fs::path> curate_phase(const fs::path& raw_dataset, std::size_t target_n,
                                   std::uint64_t seed, const fs::path& out_dir) {
  auto raw = read_dataset_csv(raw_dataset);
  Rng rng(derive_seed(seed, fnv1a("curate")));
  const auto curated = curate_dataset(std::move(raw), target_n, rng);
  fs::create_directories(out_dir);
  const auto path = out_dir / "curated.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset_csv(out, curated);
  return {path};
}

std::vector<fs::path> run_phase(const Config& config, const fs::path& dataset,
                                const fs::path& out_dir, std::uint64_t seed, Clock& clock) {
  if (config.models.empty()) throw ConfigError("config lists no models");
  for (const auto& m : config.models) m.validate();
  const auto articles = read_dataset_csv(dataset);
  fs::create_directories(out_dir);

  ExperimentOptions options;
  options.replicates = config.experiment.replicates;
  options.concurrency_limit = config.experiment.concurrency_limit;
  options.seed = seed;
  options.prompt = config.experiment.prompt;
  options.retry = config.experiment.retry;

  const auto records = out_dir / "records.csv", failures = out_dir / "failures.csv";
  ExperimentSummary summary;
  {
    CsvRecordSink sink(records, failures);
    summary = run_experiment(articles, config.models, options, clock, sink);
  }
  json per_model = json::array();
  for (const auto& m : summary.per_model)
    per_model.push_back({{"model_id", m.model_id},
                         {"positive", m.positive},
                         {"negative", m.negative},
                         {"invalid", m.invalid},
                         {"failures", m.failures}});
  const auto summary_path = out_dir / "run_summary.json";
  write_json(summary_path, {{"articles", articles.size()},
                            {"models", config.models.size()},
                            {"replicates", options.replicates},
                            {"tasks", summary.tasks},
                            {"records", summary.records},
                            {"failures", summary.failures},
                            {"per_model", per_model}});
  return {records, failures, summary_path};
}

namespace {

/// model -> replicate sets, one per article, Invalid where a replicate is
/// missing (failed task).
std::map<std::string, std::vector<ReplicateSet>> group_replicates(
    const std::vector<AnnotationRecord>& records) {
  std::map<std::string, std::size_t> replicates;
  std::map<std::string, std::vector<std::string>> article_order;
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, Label>> cells;
  for (const auto& r : records) {
    replicates[r.model_id] = std::max(replicates[r.model_id], r.replicate_index);
    auto& slot = cells[{r.model_id, r.article_id}];
    if (slot.empty()) article_order[r.model_id].push_back(r.article_id);
    if (!slot.emplace(r.replicate_index, r.parsed_label).second)
      throw InputError("duplicate record for (" + r.article_id + ", " + r.model_id +
                       ", replicate " + std::to_string(r.replicate_index) + ")");
  }
  std::map<std::string, std::vector<ReplicateSet>> out;
  for (const auto& [model, articles] : article_order) {
    for (const auto& article : articles) {
      ReplicateSet set{article, model, std::vector<Label>(replicates[model], Label::Invalid)};
      for (const auto& [rep, label] : cells[{model, article}]) set.labels[rep - 1] = label;
      out[model].push_back(std::move(set));
    }
  }
  return out;
}

}  // namespace

std::vector<fs::path> reliability_phase(const fs::path& records_path,
                                        const std::vector<ModelConfig>& models,
                                        const ReliabilityConfig& config, std::uint64_t seed,
                                        const fs::path& out_dir) {
  const auto records = read_records_csv(records_path);
  if (records.empty()) throw InputError("no annotation records in " + records_path.string());
  const auto by_model = group_replicates(records);
  const auto dir = out_dir / "reliability";
  fs::create_directories(dir);
  std::vector<fs::path> outputs;

  std::map<std::string, std::string> tier;
  for (const auto& m : models) tier[m.model_id] = m.cost_tier;
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& [model, sets] : by_model) {
    auto it = tier.find(model);
    groups[it == tier.end() ? "all" : it->second].push_back(model);
  }

  const auto intra_csv = dir / "intra_rater_summary.csv";
  std::ofstream intra(intra_csv, std::ios::binary | std::ios::trunc);
  intra << "model,metric,estimate,ci_low,ci_high,n_used\n";
  std::map<std::string, double> alpha_score;
  for (const auto& [group, members] : groups) {
    for (const auto& model : members) {
      IntraRaterOptions options;
      options.metrics = config.metrics;
      options.family_size = config.family_size > 0 ? config.family_size : members.size();
      options.family_confidence = config.family_confidence;
      const auto& sets = by_model.at(model);
      const auto report = intra_rater_report(sets, options);
      const auto path = dir / ("intra_" + file_stem(model) + ".json");
      auto doc = to_json(report);
      doc["cost_tier"] = group;
      doc["family_size"] = options.family_size;
      write_json(path, doc);
      outputs.push_back(path);
      alpha_score[model] = -std::numeric_limits<double>::infinity();
      for (const auto& e : report.coefficient_estimates) {
        csv::write_row(intra, {model, to_string(e.metric), fmt(e.estimate, 10),
                               fmt(e.interval->low, 10), fmt(e.interval->high, 10),
                               std::to_string(e.n_used)});
        if (e.metric == Metric::KrippendorffAlpha) alpha_score[model] = e.estimate;
      }
    }
  }
  intra.close();
  outputs.push_back(intra_csv);

  std::vector<ReplicateSet> all_sets;
  for (const auto& [model, sets] : by_model) all_sets.insert(all_sets.end(), sets.begin(), sets.end());
  const auto consensus = consensus_by_model(all_sets, seed);

  const auto inter_csv = dir / "inter_rater_summary.csv";
  std::ofstream inter(inter_csv, std::ios::binary | std::ios::trunc);
  inter << "model,metric,estimate,ci_low,ci_high,n_used\n";
  for (const auto& [group, members] : groups) {
    if (members.size() < 2) continue;
    std::vector<RankedModel> ranked;
    for (const auto& m : members) ranked.push_back({m, alpha_score[m]});
    std::sort(ranked.begin(), ranked.end(), [](const RankedModel& a, const RankedModel& b) {
      return a.score != b.score ? a.score > b.score : a.model_id < b.model_id;
    });
    const std::size_t hi = std::min(config.top_n_max, ranked.size());
    if (config.top_n_min > hi) continue;
    for (const auto& subset : top_n_model_subsets(ranked, config.top_n_min, hi)) {
      std::vector<Metric> metrics = config.metrics;
      if (subset.size() == 2 &&
          std::find(metrics.begin(), metrics.end(), Metric::CohenKappa) == metrics.end())
        metrics.push_back(Metric::CohenKappa);
      if (subset.size() != 2) std::erase(metrics, Metric::CohenKappa);

      json estimates = json::array(), unavailable = json::array();
      std::string label;
      for (const auto& m : subset) label += (label.empty() ? "" : "+") + m;
      for (Metric metric : metrics) {
        try {
          const Metric one[] = {metric};
          const auto e = inter_rater_report(consensus, subset, one, config.inter_confidence);
          estimates.push_back(to_json(e.front()));
          csv::write_row(inter, {label, to_string(metric), fmt(e.front().estimate, 10),
                                 fmt(e.front().interval->low, 10),
                                 fmt(e.front().interval->high, 10),
                                 std::to_string(e.front().n_used)});
        } catch (const UndefinedCoefficient& e) {
          unavailable.push_back({{"metric", to_string(metric)}, {"reason", e.what()}});
        } catch (const PreconditionError& e) {
          unavailable.push_back({{"metric", to_string(metric)}, {"reason", e.what()}});
        }
      }
      const auto path =
          dir / ("inter_" + file_stem(group) + "_top" + std::to_string(subset.size()) + ".json");
      write_json(path, {{"cost_tier", group},
                        {"models", subset},
                        {"confidence", config.inter_confidence},
                        {"coefficients", estimates},
                        {"unavailable", unavailable}});
      outputs.push_back(path);
    }
  }
  inter.close();
  outputs.push_back(inter_csv);
  return outputs;
}

std::vector<fs::path> validity_phase(const fs::path& records_path, const fs::path& dataset,
                                     const ValidityConfig& config, std::uint64_t seed,
                                     const fs::path& out_dir) {
  const auto records = read_records_csv(records_path);
  if (records.empty()) throw InputError("no annotation records in " + records_path.string());
  const auto articles = read_dataset_csv(dataset);
  const auto dir = out_dir / "validity";
  fs::create_directories(dir);

  std::vector<std::pair<ReferenceKind, std::map<std::string, Label>>> references;
  references.emplace_back(ReferenceKind::benchmark, benchmark_labels(articles));
  std::vector<std::string> missing;
  if (!config.returns_csv.empty()) {
    const auto returns = read_returns_csv(config.returns_csv);
    auto labels = criterion_labels(articles, returns, config.tie, &missing);
    if (labels.empty()) throw InputError("no article matched a returns row on (ticker, date)");
    references.emplace_back(ReferenceKind::external_criterion, std::move(labels));
  }

  std::map<std::string, std::vector<AnnotationRecord>> by_model;
  for (const auto& r : records) by_model[r.model_id].push_back(r);

  std::vector<fs::path> outputs;
  const auto summary_csv = dir / "validity_summary.csv";
  std::ofstream summary(summary_csv, std::ios::binary | std::ios::trunc);
  summary << "model,reference,metric,mean,std_error\n";
  auto emit = [&](const ValidityReport& report) {
    auto doc = to_json(report);
    if (report.reference == ReferenceKind::external_criterion && !missing.empty())
      doc["articles_without_returns"] = missing;
    const auto path = dir / (file_stem(report.model_id) + "__" +
                             std::string(to_string(report.reference)) + ".json");
    write_json(path, doc);
    outputs.push_back(path);
    for (const char* name : kValidityMetrics) {
      const auto& s = report.summary.at(name);
      csv::write_row(summary, {report.model_id, to_string(report.reference), name,
                               s.mean ? fmt(*s.mean, 10) : "", fmt(s.std_error, 10)});
    }
  };
  for (const auto& [kind, reference] : references) {
    for (const auto& [model, model_records] : by_model)
      emit(validity_report(model_records, reference, kind));
    emit(ensemble_report(records, reference, kind, seed));
  }
  summary.close();
  outputs.push_back(summary_csv);
  return outputs;
}

std::vector<fs::path> simulate_phase(const SimulationRequest& request, std::uint64_t seed,
                                     const fs::path& out_dir) {
  fs::create_directories(out_dir);
  RaterModel model = request.categories == 2
                         ? RaterModel::binary_consistent(request.flip, request.na_rate, seed)
                         : RaterModel::independent_uniform(request.categories, seed);
  if (request.categories != 2) model.na_rate = {request.na_rate};
  const auto matrix = simulate_matrix(model, request.subjects, request.raters);
  const auto matrix_path = out_dir / "simulated_matrix.csv";
  {
    std::ofstream out(matrix_path, std::ios::binary | std::ios::trunc);
    write_ratings_csv(out, matrix);
  }

  json coefficients = json::object();
  for (Metric m : kAllMetrics) {
    if (m == Metric::CohenKappa && matrix.n_raters() != 2) continue;
    try {
      coefficients[std::string(to_string(m))] = coefficient_value(m, matrix);
    } catch (const std::exception& e) {
      coefficients[std::string(to_string(m))] = nullptr;
    }
  }
  json doc{{"seed", seed},
           {"subjects", request.subjects},
           {"raters", request.raters},
           {"categories", request.categories},
           {"flip", request.flip},
           {"na_rate", request.na_rate},
           {"coefficients", coefficients}};
  if (request.calibrate) {
    const auto cal = null_calibration(*request.calibrate, request.categories, request.raters,
                                      request.subjects, request.trials, seed);
    doc["null_calibration"] = {{"metric", to_string(*request.calibrate)},
                               {"trials", cal.trials},
                               {"discarded", cal.discarded},
                               {"mean", cal.mean},
                               {"sd", cal.sd}};
  }
  const auto json_path = out_dir / "calibration.json";
  write_json(json_path, doc);
  return {matrix_path, json_path};
}

// ---------------------------------------------------------------------------
// Pipeline

bool RunManifest::ok() const {
  return std::none_of(phases.begin(), phases.end(),
                      [](const PhaseRecord& p) { return p.status == "failed"; });
}

std::string RunManifest::to_json() const {
  json phase_list = json::array();
  for (const auto& p : phases) {
    json outputs = json::array();
    for (const auto& o : p.outputs)
      outputs.push_back({{"path", o.path.generic_string()},
                         {"sha256", o.sha256},
                         {"content_sha256", o.content_sha256}});
    json entry{{"name", p.name}, {"status", p.status}, {"outputs", outputs}};
    if (!p.error.empty()) entry["error"] = p.error;
    phase_list.push_back(entry);
  }
  return json{{"tool_version", tool_version},
              {"config_path", config_path.generic_string()},
              {"dataset_path", dataset_path.generic_string()},
              {"output_dir", output_dir.generic_string()},
              {"seed", seed},
              {"phases", phase_list}}
             .dump(2);
}

RunManifest pipeline(const Config& config, const fs::path& out_dir, std::uint64_t seed) {
  if (config.experiment.virtual_clock) {
    VirtualClock clock;
    return pipeline(config, out_dir, seed, clock);
  }
  SystemClock clock;
  return pipeline(config, out_dir, seed, clock);
}

RunManifest pipeline(const Config& config, const fs::path& out_dir, std::uint64_t seed,
                     Clock& clock) {
  if (config.experiment.dataset.empty()) throw ConfigError("experiment.dataset is required");
  if (config.models.empty()) throw ConfigError("config lists no models");
  // Credentials and templates are checked before any phase touches the network.
  for (const auto& m : config.models) m.validate();
  validate_template(config.experiment.prompt);

  fs::create_directories(out_dir);
  RunManifest manifest;
  manifest.tool_version = std::string(tool_version());
  manifest.config_path = config.path;
  manifest.dataset_path = config.experiment.dataset;
  manifest.output_dir = out_dir;
  manifest.seed = seed;

  auto record = [&](const std::string& name, auto&& body) {
    PhaseRecord phase{name, "completed", {}, {}};
    try {
      for (const auto& p : body()) {
        phase.outputs.push_back({fs::relative(p, out_dir), sha256_file(p), content_digest(p)});
      }
    } catch (const std::exception& e) {
      phase.status = "failed";
      phase.error = e.what();
    }
    manifest.phases.push_back(std::move(phase));
    return manifest.phases.back().status == "completed";
  };

  fs::path dataset = config.experiment.dataset;
  bool ok = true;
  if (config.planning) {
    std::ostringstream table;
    ok = record("planning", [&] { return plan_phase(*config.planning, out_dir, table); });
  } else {
    manifest.phases.push_back({"planning", "skipped", {}, "no planning section in config"});
  }
  if (ok) {
    ok = record("data_collection", [&] {
      std::vector<fs::path> produced;
      if (config.experiment.target_n > 0) {
        produced = curate_phase(dataset, config.experiment.target_n, seed, out_dir);
        dataset = produced.front();
      }
      const auto run = run_phase(config, dataset, out_dir, seed, clock);
      produced.insert(produced.end(), run.begin(), run.end());
      return produced;
    });
  }
  if (ok) {
    ok = record("reliability", [&] {
      return reliability_phase(out_dir / "records.csv", config.models, config.reliability, seed,
                               out_dir);
    });
  }
  if (ok) {
    record("validity", [&] {
      return validity_phase(out_dir / "records.csv", dataset, config.validity, seed, out_dir);
    });
  }

  std::ofstream out(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
  out << manifest.to_json() << '\n';
  if (!out) throw std::runtime_error("cannot write manifest");
  return manifest;
}

}  // namespace llmrel
