#include <doctest.h>

#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "llmrel/errors.hpp"
#include "llmrel/harness.hpp"

using namespace llmrel;
using namespace std::chrono_literals;

namespace {

Article article(std::string id, std::string date, std::string ticker, Label label,
                std::string body = "Quarterly update.") {
  return {std::move(id), std::move(date), std::move(ticker), "Title", std::move(body), label, "wire"};
}

std::vector<Article> balanced(std::size_t per_class) {
  std::vector<Article> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    out.push_back(article("p" + std::to_string(i), "2024-01-0" + std::to_string(1 + i % 9),
                          "UP" + std::to_string(i), Label::Positive,
                          "Profit beats estimates, growth strong, shares rally."));
    out.push_back(article("n" + std::to_string(i), "2024-01-0" + std::to_string(1 + i % 9),
                          "DN" + std::to_string(i), Label::Negative,
                          "Revenue misses, shares plunge on weak outlook."));
  }
  return out;
}

ModelConfig mock_model(std::string id, MockBehavior behavior = {}) {
  ModelConfig m;
  m.model_id = std::move(id);
  m.mock = std::move(behavior);
  return m;
}

/// Fails a fixed number of times with a given kind, then answers.
class ScriptedTransport : public Transport {
 public:
  ScriptedTransport(std::size_t failures, FailureKind kind) : failures_(failures), kind_(kind) {}
  std::string complete(const ChatRequest&, const TaskContext& ctx) override {
    attempts_seen.push_back(ctx.attempt);
    if (calls++ < failures_) throw TransportError(kind_, "scripted failure");
    return "Sentiment: positive";
  }
  std::size_t calls = 0;
  std::vector<std::size_t> attempts_seen;

 private:
  std::size_t failures_;
  FailureKind kind_;
};

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("ticker splitting and date checks") {
    CHECK(split_tickers("AAPL") == std::vector<std::string>{"AAPL"});
    CHECK(split_tickers(" AAPL, MSFT ").size() == 2);
    CHECK(split_tickers("BA;F|GE").size() == 3);
    CHECK(split_tickers("").empty());
    CHECK(is_iso_date("2024-02-29"));
    CHECK_FALSE(is_iso_date("2024-13-01"));
    CHECK_FALSE(is_iso_date("2024/01/01"));
    CHECK_FALSE(is_iso_date("24-01-01"));
  }

  TEST_CASE("dataset CSV validation") {
    const std::string header = "article_id,date,ticker,title,text,benchmark_label,source\n";
    std::istringstream ok(header + "a1,2024-01-02,AAPL,Up,\"Body, with comma\",positive,x\n");
    const auto rows = read_dataset_csv(ok);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].body == "Body, with comma");
    CHECK(rows[0].benchmark_label == Label::Positive);

    std::istringstream dup(header + "a1,2024-01-02,AAPL,Up,b,positive,x\na1,2024-01-03,MSFT,Up,b,negative,x\n");
    CHECK_THROWS_AS(read_dataset_csv(dup), InputError);
    std::istringstream bad_date(header + "a1,01/02/2024,AAPL,Up,b,positive,x\n");
    CHECK_THROWS_AS(read_dataset_csv(bad_date), InputError);
    std::istringstream bad_label(header + "a1,2024-01-02,AAPL,Up,b,neutral,x\n");
    CHECK_THROWS_AS(read_dataset_csv(bad_label), InputError);
    std::istringstream no_ticker(header + "a1,2024-01-02,,Up,b,positive,x\n");
    CHECK_THROWS_AS(read_dataset_csv(no_ticker), InputError);
    std::istringstream missing_col("article_id,date,ticker\na1,2024-01-02,AAPL\n");
    CHECK_THROWS_AS(read_dataset_csv(missing_col), InputError);
  }

  TEST_CASE("curation filters, balances and is seeded") {
    auto raw = balanced(5);
    raw.push_back(article("multi", "2024-01-01", "UP0,DN0", Label::Positive));
    raw.push_back(article("late", "2024-02-01", "UP1", Label::Positive));
    raw.push_back(article("early", "2023-12-31", "UP2", Label::Positive));
    Rng a(4), b(4);
    const auto out = curate_dataset(raw, 8, a);
    CHECK(out.size() == 8);
    std::map<Label, int> per_class;
    std::set<std::pair<Label, std::string>> tickers;
    for (const auto& x : out) {
      ++per_class[x.benchmark_label];
      CHECK(tickers.insert({x.benchmark_label, x.ticker}).second);
      CHECK(x.article_id != "multi");
      CHECK(x.article_id != "late");
      CHECK(x.article_id != "p2");  // "early" is the first UP2 article
    }
    CHECK(per_class[Label::Positive] == 4);
    CHECK(per_class[Label::Negative] == 4);

    const auto again = curate_dataset(raw, 8, b);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].article_id == again[i].article_id);
  }

  TEST_CASE("curation reports the shortfall of both classes") {
    auto raw = balanced(3);
    Rng rng(1);
    try {
      curate_dataset(raw, 10, rng);
      FAIL("expected a shortfall");
    } catch (const InputError& e) {
      const std::string what = e.what();
      CHECK(what.find("positive class has 3") != std::string::npos);
      CHECK(what.find("negative class has 3") != std::string::npos);
    }
    CHECK_THROWS_AS(curate_dataset(raw, 3, rng), PreconditionError);
  }
}

TEST_SUITE("prompting") {
  TEST_CASE("placeholders are substituted once") {
    Article a = article("a", "2024-01-01", "ACME", Label::Positive, "Mentions {ticker} and {title}.");
    a.title = "Acme {text}";
    const auto messages = build_prompt(a, PromptTemplate::default_template());
    REQUIRE(messages.size() == 2);
    CHECK(messages[0].role == "system");
    CHECK(messages[1].content == "Title: Acme {text}\nText: Mentions {ticker} and {title}.\nTicker: ACME");
  }

  TEST_CASE("template validation") {
    auto t = PromptTemplate::default_template();
    CHECK_NOTHROW(validate_template(t));
    t.user = "Title: {title}\nText: {text}";
    CHECK_THROWS_AS(validate_template(t), ConfigError);
    t.user = "Title: {title}\nText: {text}\nTicker: {ticker}\nDate: {date}";
    CHECK_THROWS_AS(validate_template(t), ConfigError);
    t = PromptTemplate::default_template();
    t.system += "{ticker}";
    CHECK_THROWS_AS(validate_template(t), ConfigError);
  }
}

TEST_SUITE("extraction") {
  TEST_CASE("plain answers") {
    CHECK(extract_label("positive") == Label::Positive);
    CHECK(extract_label("NEGATIVE.") == Label::Negative);
    CHECK(extract_label("") == Label::Invalid);
    CHECK(extract_label("I cannot tell.") == Label::Invalid);
  }

  TEST_CASE("marker lines win over surrounding prose") {
    CHECK(extract_label("Some negative signals exist, but overall the quarter was good.\n"
                        "Sentiment: Positive") == Label::Positive);
    CHECK(extract_label("**Final answer:** negative\nThanks! Positive vibes.") == Label::Negative);
    CHECK(extract_label("Label = positive") == Label::Positive);
    CHECK(extract_label("Sentiment: positive\nOn reflection...\nSentiment: negative") ==
          Label::Negative);
  }

  TEST_CASE("hedges and double answers are invalid") {
    CHECK(extract_label("Sentiment: neutral") == Label::Invalid);
    CHECK(extract_label("It is mixed.") == Label::Invalid);
    CHECK(extract_label("positive or negative, hard to say") == Label::Invalid);
    CHECK(extract_label("Sentiment: Positive/Negative") == Label::Invalid);
  }

  TEST_CASE("tail is preferred when no marker exists") {
    const std::string reasoning(200, 'x');
    CHECK(extract_label("A negative start. " + reasoning + " In the end: positive") ==
          Label::Positive);
  }

  TEST_CASE("substrings of other words do not count") {
    CHECK(extract_label("The outlook is nonpositive") == Label::Invalid);
    CHECK(extract_label("positively surprising") == Label::Invalid);
  }
}

TEST_SUITE("retry") {
  TEST_CASE("transient failures are retried with fixed spacing") {
    VirtualClock clock;
    ScriptedTransport transport(2, FailureKind::rate_limited);
    const auto model = mock_model("m");
    const auto result = complete_with_retry({}, model, RetryPolicy{3, 30s}, clock, transport);
    CHECK(result.attempts == 3);
    CHECK(result.text == "Sentiment: positive");
    CHECK(clock.total_slept() == 60s);
    CHECK(result.latency_ms == 60000);
    CHECK(transport.attempts_seen == std::vector<std::size_t>{1, 2, 3});
  }

  TEST_CASE("exhaustion after the configured attempts") {
    VirtualClock clock;
    ScriptedTransport transport(10, FailureKind::transport);
    try {
      complete_with_retry({}, mock_model("m"), RetryPolicy{3, 30s}, clock, transport);
      FAIL("expected RetryExhausted");
    } catch (const RetryExhausted& e) {
      CHECK(e.attempts() == 3);
      CHECK(e.exhausted());
      CHECK(e.last_failure() == FailureKind::transport);
    }
    CHECK(transport.calls == 3);
    CHECK(clock.total_slept() == 60s);
  }

  TEST_CASE("non-retryable failures stop at once") {
    VirtualClock clock;
    ScriptedTransport transport(1, FailureKind::authentication);
    try {
      complete_with_retry({}, mock_model("m"), RetryPolicy{3, 30s}, clock, transport);
      FAIL("expected CompletionError");
    } catch (const CompletionError& e) {
      CHECK_FALSE(e.exhausted());
      CHECK(e.attempts() == 1);
    }
    CHECK(clock.total_slept() == 0ms);
  }

  TEST_CASE("format_utc") {
    CHECK(format_utc(Clock::time_point{}) == "1970-01-01T00:00:00.000Z");
    CHECK(format_utc(Clock::time_point{} + 86'400'123ms) == "1970-01-02T00:00:00.123Z");
  }
}

TEST_SUITE("backends") {
  TEST_CASE("mock rejects parameter drift") {
    MockTransport mock(mock_model("m"));
    ChatRequest request{"m", {{"user", "x"}}, 0.7, 3000};
    CHECK_THROWS_AS(mock.complete(request, {}), TransportError);
    request.temperature = 0.0;
    request.max_tokens = 10;
    CHECK_THROWS_AS(mock.complete(request, {}), TransportError);
    request.max_tokens = 3000;
    request.model = "other";
    CHECK_THROWS_AS(mock.complete(request, {}), TransportError);
    request.model = "m";
    CHECK_NOTHROW(mock.complete(request, {}));
    CHECK(mock.requests() == 4);
  }

  TEST_CASE("mock answers are deterministic and follow the lexicon") {
    MockTransport mock(mock_model("m"));
    ChatRequest up{"m", {{"user", "Profit beats estimates and shares rally"}}, 0.0, 3000};
    ChatRequest down{"m", {{"user", "Revenue misses and shares plunge"}}, 0.0, 3000};
    TaskContext ctx;
    ctx.task_seed = 5;
    CHECK(extract_label(mock.complete(up, ctx)) == Label::Positive);
    CHECK(extract_label(mock.complete(down, ctx)) == Label::Negative);
    CHECK(mock.complete(up, ctx) == mock.complete(up, ctx));
  }

  TEST_CASE("model config validation") {
    ModelConfig remote;
    remote.model_id = "gpt";
    remote.backend = BackendKind::openai_compatible;
    CHECK_THROWS_AS(remote.validate(), ConfigError);  // no base_url
    remote.base_url = "https://example.invalid/v1";
    CHECK_THROWS_AS(remote.validate(), ConfigError);  // no credential_env
    remote.credential_env = "LLMREL_UNIT_TEST_SURELY_UNSET";
    ::unsetenv("LLMREL_UNIT_TEST_SURELY_UNSET");
    CHECK_THROWS_AS(remote.validate(), ConfigError);
    CHECK_THROWS_AS(make_transport(remote), ConfigError);
    ::setenv("LLMREL_UNIT_TEST_SURELY_UNSET", "k", 1);
    CHECK_NOTHROW(remote.validate());
    ::unsetenv("LLMREL_UNIT_TEST_SURELY_UNSET");

    ModelConfig local;
    local.model_id = "llama";
    local.backend = BackendKind::local_server;
    local.base_url = "http://localhost:11434/v1";
    CHECK_NOTHROW(local.validate());

    auto mock = mock_model("m", MockBehavior{0.6, 0.6, 0.0, ""});
    CHECK_THROWS_AS(mock.validate(), ConfigError);
    CHECK(parse_backend_kind("local_server") == BackendKind::local_server);
    CHECK_THROWS_AS(parse_backend_kind("carrier_pigeon"), ConfigError);
  }

  TEST_CASE("unreachable local server is a retryable transport failure") {
    ModelConfig local;
    local.model_id = "llama";
    local.backend = BackendKind::local_server;
    local.base_url = "http://127.0.0.1:9/v1";
    local.request_timeout_s = 2;
    auto transport = make_transport(local);
    try {
      transport->complete({"llama", {{"user", "hi"}}, 0.0, 3000}, {});
      FAIL("expected a transport error");
    } catch (const TransportError& e) {
      CHECK(e.kind() == FailureKind::transport);
      CHECK(e.retryable());
    }
  }
}

TEST_SUITE("records") {
  TEST_CASE("raw responses survive the CSV round trip byte for byte") {
    AnnotationRecord r;
    r.article_id = "a1";
    r.model_id = "m,1";
    r.replicate_index = 2;
    r.timestamp_utc = "2024-01-01T00:00:00.000Z";
    r.latency_ms = 1234;
    r.attempt_count = 1;
    r.parsed_label = Label::Invalid;
    r.raw_response = "Line one, \"quoted\"\r\nLine two\n  trailing space ";
    std::stringstream s;
    s << kRecordsHeader << '\n';
    write_record_row(s, r);
    const auto back = read_records_csv(s);
    REQUIRE(back.size() == 1);
    CHECK(back[0].raw_response == r.raw_response);
    CHECK(back[0].model_id == r.model_id);
    CHECK(back[0].latency_ms == 1234);
    CHECK(back[0].parsed_label == Label::Invalid);
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("one record per task in canonical order") {
    const auto data = balanced(6);
    const std::vector<ModelConfig> models{mock_model("b-model", {0.1, 0.05, 0.1, ""}),
                                          mock_model("a-model", {0.0, 0.0, 0.0, ""})};
    ExperimentOptions options;
    options.seed = 7;
    VirtualClock clock;
    MemorySink sink;
    const auto summary = run_experiment(data, models, options, clock, sink);
    CHECK(summary.tasks == 120);
    CHECK(summary.records + summary.failures == 120);
    CHECK(sink.records.size() == summary.records);

    std::size_t last = 0;
    std::map<std::string, std::size_t> model_pos{{"b-model", 0}, {"a-model", 1}};
    std::map<std::string, std::size_t> article_pos;
    for (std::size_t i = 0; i < data.size(); ++i) article_pos[data[i].article_id] = i;
    for (const auto& r : sink.records) {
      const std::size_t key =
          (article_pos[r.article_id] * 2 + model_pos[r.model_id]) * 5 + r.replicate_index - 1;
      CHECK(key >= last);
      last = key;
      CHECK(r.attempt_count >= 1);
      CHECK(r.attempt_count <= 3);
    }
    for (const auto& s : summary.per_model) {
      if (s.model_id == "a-model") {
        CHECK(s.invalid == 0);
        CHECK(s.positive == 30);
        CHECK(s.negative == 30);
      }
    }
  }

  TEST_CASE("results do not depend on concurrency") {
    const auto data = balanced(4);
    const std::vector<ModelConfig> models{mock_model("m", {0.2, 0.1, 0.2, ""})};
    auto run = [&](std::size_t limit) {
      ExperimentOptions options;
      options.seed = 3;
      options.concurrency_limit = limit;
      VirtualClock clock;
      MemorySink sink;
      run_experiment(data, models, options, clock, sink);
      std::vector<std::string> rows;
      for (const auto& r : sink.records)
        rows.push_back(r.article_id + "|" + std::to_string(r.replicate_index) + "|" +
                       r.raw_response + "|" + std::to_string(r.attempt_count));
      for (const auto& f : sink.failures) rows.push_back("fail|" + f.article_id);
      return rows;
    };
    CHECK(run(1) == run(8));
  }

  TEST_CASE("always-neutral model yields only invalid labels") {
    const auto data = balanced(2);
    const std::vector<ModelConfig> models{mock_model("m", {0.0, 0.0, 0.0, "I'd say neutral."})};
    VirtualClock clock;
    MemorySink sink;
    const auto summary = run_experiment(data, models, ExperimentOptions{}, clock, sink);
    CHECK(summary.per_model[0].invalid == 20);
    CHECK(summary.per_model[0].positive + summary.per_model[0].negative == 0);
  }

  TEST_CASE("exhausted tasks go to the failure log") {
    const auto data = balanced(1);
    const std::vector<ModelConfig> models{mock_model("m", {0.0, 0.0, 1.0, ""})};
    VirtualClock clock;
    MemorySink sink;
    const auto summary = run_experiment(data, models, ExperimentOptions{}, clock, sink);
    CHECK(summary.records == 0);
    CHECK(summary.failures == 10);
    REQUIRE(sink.failures.size() == 10);
    CHECK(sink.failures[0].attempt_count == 3);
    CHECK(sink.failures[0].failure_kind == "rate_limited");
  }

  TEST_CASE("configuration errors surface before any request") {
    const auto data = balanced(1);
    std::vector<ModelConfig> models{mock_model("ok")};
    ModelConfig remote;
    remote.model_id = "remote";
    remote.backend = BackendKind::openai_compatible;
    remote.base_url = "https://example.invalid/v1";
    remote.credential_env = "LLMREL_UNIT_TEST_SURELY_UNSET";
    models.push_back(remote);
    std::size_t created = 0;
    auto factory = [&](const ModelConfig& m) {
      ++created;
      return make_transport(m);
    };
    VirtualClock clock;
    MemorySink sink;
    CHECK_THROWS_AS(run_experiment(data, models, ExperimentOptions{}, clock, sink, factory),
                    ConfigError);
    CHECK(created == 0);
    CHECK(sink.records.empty());
  }
}
