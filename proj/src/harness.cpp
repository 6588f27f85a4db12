#include "llmrel/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <variant>

#include "llmrel/csv.hpp"
#include "llmrel/errors.hpp"

namespace llmrel {

// ---------------------------------------------------------------------------
// Dataset

std::vector<std::string> split_tickers(std::string_view field) {
  std::vector<std::string> out;
  std::string current;
  auto push = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : field) {
    if (c == ',' || c == ';' || c == '|' || std::isspace(static_cast<unsigned char>(c))) {
      push();
    } else {
      current.push_back(c);
    }
  }
  push();
  return out;
}

bool is_iso_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) return false;
  const int y = std::stoi(std::string(text.substr(0, 4)));
  const unsigned m = static_cast<unsigned>(std::stoi(std::string(text.substr(5, 2))));
  const unsigned d = static_cast<unsigned>(std::stoi(std::string(text.substr(8, 2))));
  return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                     std::chrono::day{d}}
      .ok();
}

std::vector<Article> read_dataset_csv(std::istream& in) {
  const auto table = csv::read(in);
  const auto c_id = table.column("article_id"), c_date = table.column("date"),
             c_ticker = table.column("ticker"), c_title = table.column("title"),
             c_text = table.column("text"), c_label = table.column("benchmark_label"),
             c_source = table.column("source");
  std::vector<Article> out;
  std::set<std::string> ids;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = "dataset row " + std::to_string(r + 2) + ": ";
    Article a;
    a.article_id = row[c_id];
    a.date = row[c_date];
    a.ticker = row[c_ticker];
    a.title = row[c_title];
    a.body = row[c_text];
    a.source = row[c_source];
    if (a.article_id.empty()) throw InputError(where + "empty article_id");
    if (!ids.insert(a.article_id).second) throw InputError(where + "duplicate article_id " + a.article_id);
    if (!is_iso_date(a.date)) throw InputError(where + "date '" + a.date + "' is not YYYY-MM-DD");
    if (split_tickers(a.ticker).empty()) throw InputError(where + "empty ticker");
    if (a.title.empty() && a.body.empty()) throw InputError(where + "title and text both empty");
    const auto label = parse_label(row[c_label]);
    if (!label || *label == Label::Invalid)
      throw InputError(where + "benchmark_label must be positive or negative, got '" +
                       row[c_label] + "'");
    a.benchmark_label = *label;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Article> read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset " + path.string());
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, std::span<const Article> articles) {
  out << "article_id,date,ticker,title,text,benchmark_label,source\n";
  for (const auto& a : articles)
    csv::write_row(out, {a.article_id, a.date, a.ticker, a.title, a.body,
                         to_string(a.benchmark_label), a.source});
}

std::vector<Article> curate_dataset(std::vector<Article> raw, std::size_t target_n, Rng& rng) {
  if (raw.empty()) throw PreconditionError("curation needs a non-empty dataset");
  if (target_n == 0 || target_n % 2 != 0)
    throw PreconditionError("target_n must be a positive even number");

  std::map<Label, std::vector<Article>> by_class;
  for (auto& a : raw) {
    const auto tickers = split_tickers(a.ticker);
    if (tickers.size() != 1) continue;
    if (a.benchmark_label == Label::Invalid) continue;
    a.ticker = tickers.front();
    by_class[a.benchmark_label].push_back(std::move(a));
  }

  const std::size_t per_class = target_n / 2;
  std::string shortfall;
  for (Label cls : {Label::Positive, Label::Negative}) {
    auto& items = by_class[cls];
    std::sort(items.begin(), items.end(), [](const Article& x, const Article& y) {
      return std::tie(x.date, x.article_id) < std::tie(y.date, y.article_id);
    });
    std::set<std::string> tickers;
    std::erase_if(items, [&](const Article& a) { return !tickers.insert(a.ticker).second; });
    if (items.size() < per_class)
      shortfall += std::string(shortfall.empty() ? "" : "; ") + std::string(to_string(cls)) +
                   " class has " + std::to_string(items.size()) + " eligible articles, " +
                   std::to_string(per_class) + " required";
  }
  if (!shortfall.empty()) throw InputError("curation shortfall: " + shortfall);

  std::vector<Article> out;
  out.reserve(target_n);
  for (Label cls : {Label::Positive, Label::Negative}) {
    auto& items = by_class[cls];
    std::sort(items.begin(), items.end(),
              [](const Article& x, const Article& y) { return x.article_id < y.article_id; });
    rng.shuffle(items.begin(), items.end());
    std::move(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(per_class),
              std::back_inserter(out));
  }
  rng.shuffle(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Prompting

PromptTemplate PromptTemplate::default_template() {
  PromptTemplate t;
  t.system =
      "You are a financial news analyst. Classify the sentiment of a news article with "
      "respect to the stock ticker it is about.\n"
      "\n"
      "Label definitions:\n"
      "- positive: the article suggests news that is favorable for the company's stock "
      "price (for example strong earnings, upgrades, new contracts, growth).\n"
      "- negative: the article suggests news that is unfavorable for the company's stock "
      "price (for example missed estimates, downgrades, lawsuits, losses).\n"
      "\n"
      "You must choose exactly one of the two labels. Do not answer neutral, mixed or "
      "unsure. Reason briefly, then finish with a final line of the form\n"
      "Sentiment: <positive|negative>\n"
      "\n"
      "Example 1\n"
      "Title: Acme Corp beats quarterly revenue estimates and raises guidance\n"
      "Text: Acme Corp reported revenue 8% above consensus and lifted its full-year "
      "outlook, citing demand for its cloud products.\n"
      "Ticker: ACME\n"
      "Reasoning: Revenue above expectations and a raised outlook are favorable for ACME.\n"
      "Sentiment: positive\n"
      "\n"
      "Example 2\n"
      "Title: Globex shares slide after regulator opens probe into accounting\n"
      "Text: Globex disclosed that the regulator opened an investigation into its revenue "
      "recognition, and two analysts cut their price targets.\n"
      "Ticker: GBX\n"
      "Reasoning: A regulatory probe and price-target cuts are unfavorable for GBX.\n"
      "Sentiment: negative\n";
  t.user = "Title: {title}\nText: {text}\nTicker: {ticker}";
  return t;
}

namespace {

const std::set<std::string, std::less<>> kPlaceholders{"title", "text", "ticker"};

struct Placeholder {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past '}'
  std::string name;
};

std::vector<Placeholder> find_placeholders(std::string_view text) {
  std::vector<Placeholder> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < text.size() && (std::islower(static_cast<unsigned char>(text[j])) || text[j] == '_'))
      ++j;
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      out.push_back({i, j + 1, std::string(text.substr(i + 1, j - i - 1))});
      i = j;
    }
  }
  return out;
}

}  // namespace

void validate_template(const PromptTemplate& prompt) {
  if (prompt.system.empty()) throw ConfigError("prompt template has an empty system part");
  if (!find_placeholders(prompt.system).empty())
    throw ConfigError("system prompt must be fixed text without placeholders");
  std::set<std::string> seen;
  for (const auto& p : find_placeholders(prompt.user)) {
    if (!kPlaceholders.contains(p.name))
      throw ConfigError("unresolved placeholder {" + p.name + "} in user template");
    seen.insert(p.name);
  }
  for (const auto& name : kPlaceholders)
    if (!seen.contains(name))
      throw ConfigError("user template is missing placeholder {" + name + "}");
}

std::vector<ChatMessage> build_prompt(const Article& article, const PromptTemplate& prompt) {
  validate_template(prompt);
  std::string user;
  std::size_t pos = 0;
  for (const auto& p : find_placeholders(prompt.user)) {
    user.append(prompt.user, pos, p.begin - pos);
    if (p.name == "title") user += article.title;
    if (p.name == "text") user += article.body;
    if (p.name == "ticker") user += article.ticker;
    pos = p.end;
  }
  user.append(prompt.user, pos);
  return {{"system", prompt.system}, {"user", std::move(user)}};
}

// ---------------------------------------------------------------------------
// Label extraction

namespace {

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      current.push_back(c);
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

bool is_hedge(std::string_view w) {
  return w == "neutral" || w == "unsure" || w == "mixed" || w == "uncertain" ||
         w == "undetermined" || w == "ambiguous";
}

/// nullopt: no judgment token at all. Invalid: hedged or both labels.
std::optional<Label> judge(std::string_view lowered) {
  bool pos = false, neg = false, hedge = false;
  for (const auto& w : words(lowered)) {
    if (w == "positive") pos = true;
    else if (w == "negative") neg = true;
    else if (is_hedge(w)) hedge = true;
  }
  if (!pos && !neg && !hedge) return std::nullopt;
  if (hedge || (pos && neg)) return Label::Invalid;
  return pos ? Label::Positive : Label::Negative;
}

bool is_marker_key(std::string_view w) {
  return w == "sentiment" || w == "label" || w == "classification" || w == "answer" ||
         w == "verdict";
}

/// Value after a "<key>:" marker at the start of a line, if the line is one.
std::optional<std::string_view> marker_value(std::string_view line) {
  std::size_t i = 0;
  auto skip_decor = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '*' ||
                               line[i] == '_' || line[i] == '#' || line[i] == '>' ||
                               line[i] == '-' || line[i] == '`'))
      ++i;
  };
  skip_decor();
  auto read_word = [&] {
    const std::size_t start = i;
    while (i < line.size() && std::isalpha(static_cast<unsigned char>(line[i]))) ++i;
    return line.substr(start, i - start);
  };
  auto key = read_word();
  if (key == "final") {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    key = read_word();
  }
  if (!is_marker_key(key)) return std::nullopt;
  skip_decor();
  if (i >= line.size() || (line[i] != ':' && line[i] != '=')) return std::nullopt;
  return line.substr(i + 1);
}

}  // namespace

Label extract_label(std::string_view raw_response) {
  const std::string text = lowercase(raw_response);

  // 1. The last explicit marker line that carries a judgment wins.
  std::optional<Label> marked;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (auto value = marker_value(std::string_view(text).substr(start, end - start)))
      if (auto verdict = judge(*value)) marked = verdict;
    start = end + 1;
  }
  if (marked) return *marked;

  // 2. Tail segment, widened back to a word boundary.
  std::size_t tail = static_cast<std::size_t>(
      std::floor(static_cast<double>(text.size()) * (1.0 - kLabelTailFraction)));
  while (tail > 0 && std::isalpha(static_cast<unsigned char>(text[tail - 1]))) --tail;
  if (auto verdict = judge(std::string_view(text).substr(tail))) return *verdict;

  // 3. Whole response.
  return judge(text).value_or(Label::Invalid);
}

// ---------------------------------------------------------------------------
// Backends

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::openai_compatible:
      return "openai_compatible";
    case BackendKind::local_server:
      return "local_server";
    case BackendKind::mock:
      return "mock";
  }
  return "mock";
}

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "openai_compatible") return BackendKind::openai_compatible;
  if (text == "local_server") return BackendKind::local_server;
  if (text == "mock") return BackendKind::mock;
  throw ConfigError("unknown backend '" + std::string(text) +
                    "' (expected openai_compatible, local_server or mock)");
}

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::transport:
      return "transport";
    case FailureKind::rate_limited:
      return "rate_limited";
    case FailureKind::malformed_payload:
      return "malformed_payload";
    case FailureKind::authentication:
      return "authentication";
    case FailureKind::rejected:
      return "rejected";
  }
  return "transport";
}

void ModelConfig::validate() const {
  const std::string where = "model '" + model_id + "': ";
  if (model_id.empty()) throw ConfigError("model entry without model_id");
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw ConfigError(where + "temperature must be >= 0");
  if (max_tokens < 1) throw ConfigError(where + "max_tokens must be >= 1");
  if (backend == BackendKind::mock) {
    for (double p : {mock.flip_rate, mock.invalid_rate, mock.failure_rate})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(where + "mock rates must lie in [0, 1]");
    if (mock.flip_rate + mock.invalid_rate > 1.0)
      throw ConfigError(where + "mock flip_rate + invalid_rate exceeds 1");
    return;
  }
  if (base_url.empty()) throw ConfigError(where + "base_url is required for remote backends");
  if (backend == BackendKind::openai_compatible && credential_env.empty())
    throw ConfigError(where + "credential_env is required for openai_compatible backends");
  if (!credential_env.empty()) {
    const char* value = std::getenv(credential_env.c_str());
    if (value == nullptr || *value == '\0')
      throw ConfigError(where + "environment variable " + credential_env + " is not set");
  }
}

namespace {

const std::set<std::string, std::less<>> kUpWords{
    "beat",     "beats",   "surge",   "surges",  "soar",    "soars",   "gain",
    "gains",    "growth",  "record",  "upgrade", "upgraded", "raise",  "raises",
    "raised",   "strong",  "profit",  "rally",   "rallies", "outperform", "bullish",
    "jump",     "jumps",   "higher",  "wins",    "expands"};
const std::set<std::string, std::less<>> kDownWords{
    "miss",      "misses",   "missed",  "plunge",   "plunges", "drop",  "drops",
    "fall",      "falls",    "decline", "declines", "downgrade", "downgraded",
    "cut",       "cuts",     "weak",    "loss",     "losses",  "lawsuit", "bearish",
    "slump",     "slumps",   "slide",   "slides",   "lower",   "probe", "recall"};

}  // namespace

MockTransport::MockTransport(ModelConfig config) : config_(std::move(config)) {}

std::string MockTransport::complete(const ChatRequest& request, const TaskContext& context) {
  ++requests_;
  if (request.temperature != config_.temperature || request.max_tokens != config_.max_tokens)
    throw TransportError(FailureKind::rejected,
                         "mock backend: request temperature/max_tokens differ from model config");
  if (request.model != config_.model_id)
    throw TransportError(FailureKind::rejected, "mock backend: unexpected model name");

  Rng rng(derive_seed(context.task_seed, context.attempt));
  if (rng.bernoulli(config_.mock.failure_rate))
    throw TransportError(FailureKind::rate_limited, "429 Too Many Requests (simulated)");
  if (!config_.mock.fixed_response.empty()) return config_.mock.fixed_response;

  std::string_view user;
  for (const auto& m : request.messages)
    if (m.role == "user") user = m.content;
  int up = 0, down = 0;
  for (const auto& w : words(lowercase(user))) {
    if (kUpWords.contains(w)) ++up;
    if (kDownWords.contains(w)) ++down;
  }
  bool favorable = up != down ? up > down : (fnv1a(user) & 1u) == 0;

  const double u = rng.uniform();
  if (u < config_.mock.invalid_rate)
    return "The article reports developments in both directions, so I would call it neutral.";
  if (u < config_.mock.invalid_rate + config_.mock.flip_rate) favorable = !favorable;
  return std::string("Reasoning: the reported developments look ") +
         (favorable ? "favorable" : "unfavorable") + " for the company's shares.\nSentiment: " +
         (favorable ? "Positive" : "Negative");
}

// ---------------------------------------------------------------------------
// Time

Clock::time_point SystemClock::now() { return std::chrono::system_clock::now(); }

void SystemClock::sleep_for(std::chrono::milliseconds duration) {
  std::this_thread::sleep_for(duration);
}

VirtualClock::VirtualClock(time_point start) : start_(start) {}

Clock::time_point VirtualClock::now() {
  return start_ + std::chrono::milliseconds(elapsed_ms_.load());
}

void VirtualClock::sleep_for(std::chrono::milliseconds duration) {
  elapsed_ms_ += duration.count();
  slept_ms_ += duration.count();
}

std::chrono::milliseconds VirtualClock::total_slept() const {
  return std::chrono::milliseconds(slept_ms_.load());
}

std::string format_utc(Clock::time_point tp) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch());
  const std::time_t secs = static_cast<std::time_t>(std::chrono::floor<std::chrono::seconds>(ms).count());
  std::tm utc{};
  gmtime_r(&secs, &utc);
  std::ostringstream out;
  out << std::put_time(&utc, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0')
      << (ms.count() % 1000 + 1000) % 1000 << 'Z';
  return out.str();
}

// ---------------------------------------------------------------------------
// Retry

CompletionResult complete_with_retry(const std::vector<ChatMessage>& messages,
                                     const ModelConfig& model, const RetryPolicy& policy,
                                     Clock& clock, Transport& transport, TaskContext context) {
  if (policy.max_attempts < 1) throw PreconditionError("retry policy needs max_attempts >= 1");
  if (policy.delay.count() < 0) throw PreconditionError("retry delay must be >= 0");
  const ChatRequest request{model.model_id, messages, model.temperature, model.max_tokens};
  context.model_id = model.model_id;

  const auto start = clock.now();
  FailureKind last = FailureKind::transport;
  std::string last_message;
  for (std::size_t attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    context.attempt = attempt;
    try {
      CompletionResult result;
      result.text = transport.complete(request, context);
      result.attempts = attempt;
      result.latency_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(clock.now() - start).count();
      return result;
    } catch (const TransportError& e) {
      if (!e.retryable())
        throw CompletionError(attempt, e.kind(), false,
                              std::string(to_string(e.kind())) + ": " + e.what());
      last = e.kind();
      last_message = e.what();
    }
    if (attempt < policy.max_attempts) clock.sleep_for(policy.delay);
  }
  throw RetryExhausted(policy.max_attempts, last,
                       "gave up after " + std::to_string(policy.max_attempts) +
                           " attempts; last failure " + std::string(to_string(last)) + ": " +
                           last_message);
}

// ---------------------------------------------------------------------------
// Records

void write_record_row(std::ostream& out, const AnnotationRecord& r) {
  csv::write_row(out, {r.article_id, r.model_id, std::to_string(r.replicate_index),
                       r.timestamp_utc, std::to_string(r.latency_ms),
                       std::to_string(r.attempt_count), to_string(r.parsed_label),
                       r.raw_response});
}

namespace {

std::size_t parse_count(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw InputError(what + " is not a count: '" + text + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<AnnotationRecord> read_records_csv(std::istream& in) {
  const auto table = csv::read(in);
  const auto c_article = table.column("article_id"), c_model = table.column("model_id"),
             c_rep = table.column("replicate_index"), c_ts = table.column("timestamp_utc"),
             c_lat = table.column("latency_ms"), c_att = table.column("attempt_count"),
             c_label = table.column("parsed_label"), c_raw = table.column("raw_response");
  std::vector<AnnotationRecord> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto where = "records row " + std::to_string(i + 2);
    AnnotationRecord r;
    r.article_id = row[c_article];
    r.model_id = row[c_model];
    r.replicate_index = parse_count(row[c_rep], where + " replicate_index");
    r.timestamp_utc = row[c_ts];
    r.latency_ms = static_cast<std::int64_t>(parse_count(row[c_lat], where + " latency_ms"));
    r.attempt_count = parse_count(row[c_att], where + " attempt_count");
    const auto label = parse_label(row[c_label]);
    if (!label) throw InputError(where + ": unknown parsed_label '" + row[c_label] + "'");
    r.parsed_label = *label;
    r.raw_response = row[c_raw];
    if (r.replicate_index < 1) throw InputError(where + ": replicate_index must be >= 1");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AnnotationRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open records " + path.string());
  return read_records_csv(in);
}

CsvRecordSink::CsvRecordSink(const std::filesystem::path& records,
                             const std::filesystem::path& failures)
    : records_(records, std::ios::binary | std::ios::trunc),
      failures_(failures, std::ios::binary | std::ios::trunc) {
  if (!records_ || !failures_)
    throw std::runtime_error("cannot open record sink under " + records.parent_path().string());
  records_ << kRecordsHeader << '\n';
  failures_ << kFailuresHeader << '\n';
}

void CsvRecordSink::write(const AnnotationRecord& record) {
  write_record_row(records_, record);
  if (!records_) throw std::runtime_error("record sink write failed");
}

void CsvRecordSink::write_failure(const FailureRecord& f) {
  csv::write_row(failures_, {f.article_id, f.model_id, std::to_string(f.replicate_index),
                             std::to_string(f.attempt_count), f.failure_kind, f.error});
  if (!failures_) throw std::runtime_error("failure log write failed");
}

void CsvRecordSink::flush() {
  records_.flush();
  failures_.flush();
  if (!records_ || !failures_) throw std::runtime_error("record sink flush failed");
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

using Outcome = std::variant<AnnotationRecord, FailureRecord>;

/// Single writer that releases outcomes to the sink in task-index order.
class OrderedWriter {
 public:
  OrderedWriter(RecordSink& sink, std::size_t total, std::span<const ModelConfig> models)
      : sink_(sink), total_(total) {
    for (const auto& m : models) {
      summary_.per_model.push_back({m.model_id, 0, 0, 0, 0});
      model_index_[m.model_id] = summary_.per_model.size() - 1;
    }
    summary_.tasks = total;
    thread_ = std::thread([this] { loop(); });
  }

  ~OrderedWriter() {
    if (thread_.joinable()) finish();
  }

  void submit(std::size_t index, Outcome outcome) {
    {
      std::lock_guard lock(mutex_);
      pending_.emplace(index, std::move(outcome));
    }
    ready_.notify_one();
  }

  bool failed() const { return failed_.load(); }

  /// Waits for every submitted outcome to reach the sink.
  ExperimentSummary finish() {
    {
      std::lock_guard lock(mutex_);
      closing_ = true;
    }
    ready_.notify_one();
    thread_.join();
    if (error_) std::rethrow_exception(error_);
    return summary_;
  }

 private:
  void loop() {
    try {
      while (next_ < total_) {
        std::vector<Outcome> batch;
        {
          std::unique_lock lock(mutex_);
          ready_.wait(lock, [&] { return closing_ || pending_.contains(next_); });
          while (pending_.contains(next_)) {
            batch.push_back(std::move(pending_.at(next_)));
            pending_.erase(next_++);
          }
          if (batch.empty() && closing_) break;
        }
        for (auto& outcome : batch) write(outcome);
      }
      sink_.flush();
    } catch (...) {
      error_ = std::current_exception();
      failed_ = true;
    }
  }

  void write(const Outcome& outcome) {
    if (const auto* record = std::get_if<AnnotationRecord>(&outcome)) {
      sink_.write(*record);
      auto& s = summary_.per_model[model_index_.at(record->model_id)];
      if (record->parsed_label == Label::Positive) ++s.positive;
      if (record->parsed_label == Label::Negative) ++s.negative;
      if (record->parsed_label == Label::Invalid) ++s.invalid;
      ++summary_.records;
    } else {
      const auto& failure = std::get<FailureRecord>(outcome);
      sink_.write_failure(failure);
      ++summary_.per_model[model_index_.at(failure.model_id)].failures;
      ++summary_.failures;
    }
  }

  RecordSink& sink_;
  std::size_t total_;
  std::size_t next_ = 0;
  std::map<std::size_t, Outcome> pending_;
  std::map<std::string, std::size_t> model_index_;
  ExperimentSummary summary_;
  std::mutex mutex_;
  std::condition_variable ready_;
  bool closing_ = false;
  std::atomic<bool> failed_{false};
  std::exception_ptr error_;
  std::thread thread_;
};

}  // namespace

ExperimentSummary run_experiment(std::span<const Article> dataset,
                                 std::span<const ModelConfig> models,
                                 const ExperimentOptions& options, Clock& clock,
                                 RecordSink& sink, const TransportFactory& factory) {
  if (dataset.empty()) throw PreconditionError("experiment needs a non-empty dataset");
  if (models.empty()) throw PreconditionError("experiment needs at least one model");
  if (options.replicates < 1) throw PreconditionError("experiment needs replicates >= 1");
  if (options.concurrency_limit < 1) throw PreconditionError("concurrency_limit must be >= 1");
  validate_template(options.prompt);
  std::set<std::string> ids;
  for (const auto& m : models) {
    m.validate();
    if (!ids.insert(m.model_id).second) throw ConfigError("duplicate model_id " + m.model_id);
  }

  // Every transport exists before the first request goes out.
  std::vector<std::unique_ptr<Transport>> transports;
  for (const auto& m : models) transports.push_back(factory(m));

  std::vector<std::vector<ChatMessage>> prompts;
  prompts.reserve(dataset.size());
  for (const auto& a : dataset) prompts.push_back(build_prompt(a, options.prompt));

  const std::size_t n = dataset.size(), m = models.size(), r = options.replicates;
  OrderedWriter writer(sink, n * m * r, models);

  std::vector<std::atomic<std::size_t>> cursors(m);
  std::vector<std::thread> workers;
  for (std::size_t mi = 0; mi < m; ++mi) {
    const std::size_t threads = std::min(options.concurrency_limit, n * r);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, mi] {
        const auto& model = models[mi];
        for (std::size_t j = cursors[mi]++; j < n * r && !writer.failed(); j = cursors[mi]++) {
          const std::size_t ai = j / r, rep = j % r + 1;
          const auto& article = dataset[ai];
          TaskContext ctx;
          ctx.article_id = article.article_id;
          ctx.model_id = model.model_id;
          ctx.replicate_index = rep;
          ctx.task_seed =
              derive_seed(options.seed, {fnv1a(model.model_id), fnv1a(article.article_id), rep});
          const std::size_t task = (ai * m + mi) * r + (rep - 1);
          try {
            const auto done = complete_with_retry(prompts[ai], model, options.retry, clock,
                                                  *transports[mi], ctx);
            AnnotationRecord rec;
            rec.article_id = article.article_id;
            rec.model_id = model.model_id;
            rec.replicate_index = rep;
            rec.timestamp_utc = format_utc(clock.now());
            rec.latency_ms = done.latency_ms;
            rec.attempt_count = done.attempts;
            rec.parsed_label = extract_label(done.text);
            rec.raw_response = done.text;
            writer.submit(task, std::move(rec));
          } catch (const CompletionError& e) {
            writer.submit(task, FailureRecord{article.article_id, model.model_id, rep,
                                              e.attempts(), std::string(to_string(e.last_failure())),
                                              e.what()});
          } catch (const std::exception& e) {
            writer.submit(task, FailureRecord{article.article_id, model.model_id, rep, 1,
                                              "internal", e.what()});
          }
        }
      });
    }
  }
  for (auto& t : workers) t.join();
  return writer.finish();
}

}  // namespace llmrel
