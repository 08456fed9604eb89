#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace reltree {

/// Deterministic token estimate used wherever a backend does not report
/// counts itself: each punctuation mark is one token and each alphanumeric
/// run costs one token per started six characters.
[[nodiscard]] std::int64_t estimate_tokens(std::string_view text);

struct ChatRequest {
  std::string prompt;
  std::string purpose;  // free-form tag recorded in the usage ledger
  bool want_token_probabilities = false;
  std::optional<std::uint64_t> seed;
};

struct Completion {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  /// Probabilities of candidate first tokens, when the backend exposes them.
  std::map<std::string, double> first_token_probabilities;
};

struct UsageRecord {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::string backend;
  std::string purpose;
  std::chrono::system_clock::time_point timestamp;
};

struct UsageTotals {
  std::int64_t calls = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  [[nodiscard]] std::int64_t total_tokens() const noexcept { return input_tokens + output_tokens; }
  UsageTotals& operator+=(const UsageTotals& other) noexcept {
    calls += other.calls;
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    return *this;
  }
};

/// USD per million tokens.
struct TokenPricing {
  double input_per_million = 2.50;
  double output_per_million = 10.00;
};

/// Thread-safe append-only record of every backend call.
class UsageLedger {
 public:
  void record(UsageRecord rec);
  [[nodiscard]] std::vector<UsageRecord> records() const;
  [[nodiscard]] UsageTotals totals() const;
  [[nodiscard]] nlohmann::json to_json() const;

  /// Token and cost table: input/output/total rows.
  [[nodiscard]] std::string cost_table(const TokenPricing& pricing = {}) const;

 private:
  mutable std::mutex mutex_;
  std::vector<UsageRecord> records_;
};

[[nodiscard]] std::string format_cost_table(const UsageTotals& totals, const TokenPricing& pricing);

class LlmGateway {
 public:
  virtual ~LlmGateway() = default;
  virtual Completion complete(const ChatRequest& request) = 0;
  [[nodiscard]] virtual std::string backend_id() const = 0;
  [[nodiscard]] virtual bool supports_token_probabilities() const { return false; }
};

/// Forwards to another gateway and records each call in a ledger.
class MeteredGateway final : public LlmGateway {
 public:
  MeteredGateway(LlmGateway& inner, UsageLedger& ledger) : inner_(inner), ledger_(ledger) {}
  Completion complete(const ChatRequest& request) override;
  [[nodiscard]] std::string backend_id() const override { return inner_.backend_id(); }
  [[nodiscard]] bool supports_token_probabilities() const override { return inner_.supports_token_probabilities(); }

 private:
  LlmGateway& inner_;
  UsageLedger& ledger_;
};

/// Gateway backed by a callable; token counts are estimated when the callable leaves them at zero.
class FunctionGateway final : public LlmGateway {
 public:
  using Handler = std::function<Completion(const ChatRequest&)>;
  explicit FunctionGateway(Handler handler, bool token_probabilities = false, std::string id = "function")
      : handler_(std::move(handler)), token_probabilities_(token_probabilities), id_(std::move(id)) {}

  Completion complete(const ChatRequest& request) override;
  [[nodiscard]] std::string backend_id() const override { return id_; }
  [[nodiscard]] bool supports_token_probabilities() const override { return token_probabilities_; }

 private:
  Handler handler_;
  bool token_probabilities_;
  std::string id_;
};

/// Replays canned responses. A rule matches when every `contains` substring
/// occurs in the prompt; rules are tried in file order. Each rule returns its
/// responses in sequence and then keeps repeating the last one.
///
/// File format:
///   {"rules": [{"contains": ["..."], "responses": ["..."], "yes_probability": 0.8}]}
class ScriptedGateway final : public LlmGateway {
 public:
  struct Rule {
    std::vector<std::string> contains;
    std::vector<std::string> responses;
    std::optional<double> yes_probability;
  };

  explicit ScriptedGateway(std::vector<Rule> rules) : rules_(std::move(rules)), cursor_(rules_.size(), 0) {}
  ScriptedGateway(ScriptedGateway&& other) noexcept
      : rules_(std::move(other.rules_)), cursor_(std::move(other.cursor_)) {}
  static ScriptedGateway from_json(const nlohmann::json& doc);
  static ScriptedGateway from_file(const std::string& path);

  Completion complete(const ChatRequest& request) override;
  [[nodiscard]] std::string backend_id() const override { return "scripted"; }
  [[nodiscard]] bool supports_token_probabilities() const override;

 private:
  std::vector<Rule> rules_;
  std::vector<std::size_t> cursor_;
  std::mutex mutex_;
};

/// Settings for a chat-completion style HTTP endpoint.
struct RemoteConfig {
  std::string endpoint = "https://api.openai.com/v1";  // base URL; "/chat/completions" is appended
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_tokens = 1024;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
  double backoff_seconds = 1.0;  // doubled per retry
  bool request_logprobs = false;

  static RemoteConfig from_json(const nlohmann::json& doc);
  [[nodiscard]] nlohmann::json to_json() const;
};

class HttpGateway final : public LlmGateway {
 public:
  explicit HttpGateway(RemoteConfig config);
  ~HttpGateway() override;

  Completion complete(const ChatRequest& request) override;
  [[nodiscard]] std::string backend_id() const override { return "remote:" + config_.model; }
  [[nodiscard]] bool supports_token_probabilities() const override { return config_.request_logprobs; }

  [[nodiscard]] const RemoteConfig& config() const noexcept { return config_; }

 private:
  struct Impl;
  RemoteConfig config_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace reltree
