#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "llmrel/label.hpp"
#include "llmrel/rng.hpp"

namespace llmrel {

// ---------------------------------------------------------------------------
// Dataset

struct Article {
  std::string article_id;
  std::string date;    // YYYY-MM-DD
  std::string ticker;  // raw feeds may list several, separated by ',', ';' or '|'
  std::string title;
  std::string body;
  Label benchmark_label = Label::Invalid;
  std::string source;
};

std::vector<std::string> split_tickers(std::string_view field);
bool is_iso_date(std::string_view text);

/// Dataset CSV: article_id,date,ticker,title,text,benchmark_label,source.
/// Rows must carry a Positive/Negative benchmark label, a non-empty ticker,
/// and a title or body.
std::vector<Article> read_dataset_csv(std::istream& in);
std::vector<Article> read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(std::ostream& out, std::span<const Article> articles);

/// Drops multi-ticker articles, keeps the earliest article per ticker within
/// each benchmark class (ties by article_id), then draws target_n / 2 per
/// class and shuffles the result.
std::vector<Article> curate_dataset(std::vector<Article> raw, std::size_t target_n, Rng& rng);

// ---------------------------------------------------------------------------
// Prompting and label extraction

struct ChatMessage {
  std::string role;  // "system" or "user"
  std::string content;
};

struct PromptTemplate {
  std::string system;
  /// Must reference {title}, {text} and {ticker}; no other placeholders.
  std::string user;

  static PromptTemplate default_template();
};

/// [system, user] with placeholders substituted in a single pass, so braces
/// inside article text are never re-expanded.
std::vector<ChatMessage> build_prompt(const Article& article, const PromptTemplate& prompt);

/// Throws ConfigError when the template has unknown or missing placeholders.
void validate_template(const PromptTemplate& prompt);

/// Share of the response (by characters, widened to a word boundary) scanned
/// before falling back to the full text.
inline constexpr double kLabelTailFraction = 0.25;

/// Case-insensitive extraction. An explicit "sentiment:"-style marker line
/// wins; otherwise a lone positive/negative token in the tail, then in the
/// whole response. Hedges (neutral, unsure, mixed, ...) or both labels give
/// Invalid.
Label extract_label(std::string_view raw_response);

// ---------------------------------------------------------------------------
// Backends

enum class BackendKind { openai_compatible, local_server, mock };
std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

/// Knobs for the deterministic mock backend.
struct MockBehavior {
  double flip_rate = 0.0;     // replicate answers the opposite label
  double invalid_rate = 0.0;  // replicate answers "neutral"
  double failure_rate = 0.0;  // attempt fails with a rate-limit response
  std::string fixed_response; // when set, returned verbatim
};

struct ModelConfig {
  std::string model_id;
  BackendKind backend = BackendKind::mock;
  std::string base_url;        // e.g. http://localhost:11434/v1
  std::string credential_env;  // name of the variable holding the API key
  double temperature = 0.0;
  std::size_t max_tokens = 3000;
  std::string cost_tier = "cheap";
  double request_timeout_s = 600.0;
  MockBehavior mock;

  /// Structural checks plus credential presence for remote backends.
  void validate() const;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds delay{30'000};
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::size_t max_tokens = 0;
};

/// Coordinates of one completion task; the mock backend derives its draws
/// from task_seed and attempt, real backends ignore it.
struct TaskContext {
  std::string article_id;
  std::string model_id;
  std::size_t replicate_index = 0;
  std::uint64_t task_seed = 0;
  std::size_t attempt = 1;
};

enum class FailureKind {
  transport,          // connection failure, timeout, 5xx
  rate_limited,       // 429
  malformed_payload,  // unparseable response body
  authentication,     // 401/403, not retried
  rejected,           // other 4xx or contract violation, not retried
};
std::string_view to_string(FailureKind kind);

class TransportError : public std::runtime_error {
 public:
  TransportError(FailureKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  FailureKind kind() const { return kind_; }
  bool retryable() const {
    return kind_ == FailureKind::transport || kind_ == FailureKind::rate_limited ||
           kind_ == FailureKind::malformed_payload;
  }

 private:
  FailureKind kind_;
};

/// Chat-completion contract: role-tagged messages in, one text completion out.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string complete(const ChatRequest& request, const TaskContext& context) = 0;
};

/// Deterministic offline backend. The verdict leans on a small finance
/// lexicon over the user message; noise is drawn from the task seed.
/// Rejects requests whose temperature or max_tokens differ from its config.
class MockTransport : public Transport {
 public:
  explicit MockTransport(ModelConfig config);
  std::string complete(const ChatRequest& request, const TaskContext& context) override;
  std::size_t requests() const { return requests_.load(); }

 private:
  ModelConfig config_;
  std::atomic<std::size_t> requests_{0};
};

/// Mock for mock configs, HTTP for the rest. Throws ConfigError (before any
/// network traffic) when a remote backend's credential variable is unset.
std::unique_ptr<Transport> make_transport(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Time

class Clock {
 public:
  using time_point = std::chrono::system_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds duration) = 0;
};

class SystemClock : public Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::milliseconds duration) override;
};

/// Sleeping advances virtual time instantly.
class VirtualClock : public Clock {
 public:
  explicit VirtualClock(time_point start = time_point{});
  time_point now() override;
  void sleep_for(std::chrono::milliseconds duration) override;
  std::chrono::milliseconds total_slept() const;

 private:
  time_point start_;
  std::atomic<std::int64_t> elapsed_ms_{0};
  std::atomic<std::int64_t> slept_ms_{0};
};

std::string format_utc(Clock::time_point tp);

// ---------------------------------------------------------------------------
// Retry

struct CompletionResult {
  std::string text;
  std::size_t attempts = 0;
  std::int64_t latency_ms = 0;
};

/// A completion that produced no text: either retries ran out or the
/// backend returned a non-retryable failure.
class CompletionError : public std::runtime_error {
 public:
  CompletionError(std::size_t attempts, FailureKind last, bool exhausted, const std::string& what)
      : std::runtime_error(what), attempts_(attempts), last_(last), exhausted_(exhausted) {}
  std::size_t attempts() const { return attempts_; }
  FailureKind last_failure() const { return last_; }
  bool exhausted() const { return exhausted_; }

 private:
  std::size_t attempts_;
  FailureKind last_;
  bool exhausted_;
};

class RetryExhausted : public CompletionError {
 public:
  RetryExhausted(std::size_t attempts, FailureKind last, const std::string& what)
      : CompletionError(attempts, last, true, what) {}
};

/// Tries up to policy.max_attempts times, sleeping policy.delay on the clock
/// between retryable failures; throws RetryExhausted after the last one. A
/// non-retryable failure throws CompletionError at once. latency_ms spans
/// first request to final response, delays included.
CompletionResult complete_with_retry(const std::vector<ChatMessage>& messages,
                                     const ModelConfig& model, const RetryPolicy& policy,
                                     Clock& clock, Transport& transport,
                                     TaskContext context = {});

// ---------------------------------------------------------------------------
// Records

struct AnnotationRecord {
  std::string article_id;
  std::string model_id;
  std::size_t replicate_index = 0;
  std::string timestamp_utc;
  std::int64_t latency_ms = 0;
  std::size_t attempt_count = 0;
  Label parsed_label = Label::Invalid;
  std::string raw_response;
};

struct FailureRecord {
  std::string article_id;
  std::string model_id;
  std::size_t replicate_index = 0;
  std::size_t attempt_count = 0;
  std::string failure_kind;
  std::string error;
};

inline constexpr std::string_view kRecordsHeader =
    "article_id,model_id,replicate_index,timestamp_utc,latency_ms,attempt_count,parsed_label,"
    "raw_response";
inline constexpr std::string_view kFailuresHeader =
    "article_id,model_id,replicate_index,attempt_count,failure_kind,error";

void write_record_row(std::ostream& out, const AnnotationRecord& record);
std::vector<AnnotationRecord> read_records_csv(std::istream& in);
std::vector<AnnotationRecord> read_records_csv(const std::filesystem::path& path);

class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void write(const AnnotationRecord& record) = 0;
  virtual void write_failure(const FailureRecord& failure) = 0;
  virtual void flush() {}
};

class CsvRecordSink : public RecordSink {
 public:
  CsvRecordSink(const std::filesystem::path& records, const std::filesystem::path& failures);
  void write(const AnnotationRecord& record) override;
  void write_failure(const FailureRecord& failure) override;
  void flush() override;

 private:
  std::ofstream records_;
  std::ofstream failures_;
};

class MemorySink : public RecordSink {
 public:
  void write(const AnnotationRecord& record) override { records.push_back(record); }
  void write_failure(const FailureRecord& failure) override { failures.push_back(failure); }

  std::vector<AnnotationRecord> records;
  std::vector<FailureRecord> failures;
};

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentOptions {
  std::size_t replicates = 5;
  std::size_t concurrency_limit = 4;  // per backend
  std::uint64_t seed = 0;
  PromptTemplate prompt = PromptTemplate::default_template();
  RetryPolicy retry;
};

struct ModelSummary {
  std::string model_id;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t invalid = 0;
  std::size_t failures = 0;
};

struct ExperimentSummary {
  std::size_t tasks = 0;
  std::size_t records = 0;
  std::size_t failures = 0;
  std::vector<ModelSummary> per_model;
};

using TransportFactory = std::function<std::unique_ptr<Transport>(const ModelConfig&)>;

/// Issues |dataset| x replicates x |models| completions. Each model gets its
/// own transport and worker pool of concurrency_limit threads. A single
/// writer hands records to the sink in canonical (article, model, replicate)
/// order regardless of completion order. Only sink failures abort the run.
ExperimentSummary run_experiment(std::span<const Article> dataset,
                                 std::span<const ModelConfig> models,
                                 const ExperimentOptions& options, Clock& clock,
                                 RecordSink& sink,
                                 const TransportFactory& factory = make_transport);

}  // namespace llmrel
