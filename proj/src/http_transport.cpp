// OpenAI-style chat-completion client used for remote APIs and local model
// servers (Ollama, vLLM, llama.cpp server all expose the same route).

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "llmrel/errors.hpp"
#include "llmrel/harness.hpp"

namespace llmrel {

namespace {

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // e.g. /v1
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url '" + url + "' lacks a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.path_prefix.empty() && e.path_prefix.back() == '/') e.path_prefix.pop_back();
  return e;
}

class HttpChatTransport : public Transport {
 public:
  HttpChatTransport(const ModelConfig& config, std::string api_key)
      : endpoint_(split_url(config.base_url)),
        api_key_(std::move(api_key)),
        timeout_s_(config.request_timeout_s) {}

  std::string complete(const ChatRequest& request, const TaskContext&) override {
    nlohmann::json body;
    body["model"] = request.model;
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_tokens;
    body["stream"] = false;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages)
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});

    // One client per call: httplib clients are not safe to share across the
    // worker threads of a model's pool.
    httplib::Client client(endpoint_.origin);
    const auto seconds = static_cast<time_t>(timeout_s_);
    client.set_connection_timeout(30, 0);
    client.set_read_timeout(seconds, 0);
    client.set_write_timeout(60, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(endpoint_.path_prefix + "/chat/completions", headers, body.dump(),
                           "application/json");
    if (!res) throw TransportError(FailureKind::transport, httplib::to_string(res.error()));

    const int status = res->status;
    if (status == 429) throw TransportError(FailureKind::rate_limited, "HTTP 429");
    if (status == 401 || status == 403)
      throw TransportError(FailureKind::authentication, "HTTP " + std::to_string(status));
    if (status == 408 || status >= 500)
      throw TransportError(FailureKind::transport, "HTTP " + std::to_string(status));
    if (status < 200 || status >= 300)
      throw TransportError(FailureKind::rejected,
                           "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));

    try {
      const auto reply = nlohmann::json::parse(res->body);
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      if (content.is_null()) return {};
      return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(FailureKind::malformed_payload,
                           std::string("unexpected completion payload: ") + e.what());
    }
  }

 private:
  Endpoint endpoint_;
  std::string api_key_;
  double timeout_s_;
};

}  // namespace

std::unique_ptr<Transport> make_transport(const ModelConfig& config) {
  config.validate();
  if (config.backend == BackendKind::mock) return std::make_unique<MockTransport>(config);
  std::string key;
  if (!config.credential_env.empty()) key = std::getenv(config.credential_env.c_str());
  return std::make_unique<HttpChatTransport>(config, std::move(key));
}

}  // namespace llmrel
