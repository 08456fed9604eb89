#include "reltree/gateway.hpp"

#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include "reltree/error.hpp"
#include "reltree/io.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

namespace reltree {

using nlohmann::json;

std::int64_t estimate_tokens(std::string_view text) {
  std::int64_t tokens = 0;
  std::size_t run = 0;
  auto flush = [&] {
    if (run > 0) tokens += static_cast<std::int64_t>((run + 5) / 6);
    run = 0;
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      ++run;
    } else {
      flush();
      if (!std::isspace(c)) ++tokens;
    }
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------

void UsageLedger::record(UsageRecord rec) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(rec));
}

std::vector<UsageRecord> UsageLedger::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

UsageTotals UsageLedger::totals() const {
  std::lock_guard lock(mutex_);
  UsageTotals t;
  for (const auto& r : records_) {
    ++t.calls;
    t.input_tokens += r.input_tokens;
    t.output_tokens += r.output_tokens;
  }
  return t;
}

json UsageLedger::to_json() const {
  const UsageTotals t = totals();
  json calls = json::array();
  for (const auto& r : records()) {
    calls.push_back({{"input_tokens", r.input_tokens},
                     {"output_tokens", r.output_tokens},
                     {"backend", r.backend},
                     {"purpose", r.purpose},
                     {"timestamp_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                                          r.timestamp.time_since_epoch())
                                          .count()}});
  }
  return {{"calls", std::move(calls)},
          {"totals",
           {{"calls", t.calls},
            {"input_tokens", t.input_tokens},
            {"output_tokens", t.output_tokens},
            {"total_tokens", t.total_tokens()}}}};
}

std::string UsageLedger::cost_table(const TokenPricing& pricing) const {
  return format_cost_table(totals(), pricing);
}

namespace {

std::string with_commas(std::int64_t value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return value < 0 ? "-" + out : out;
}

std::string dollars(double value) {
  std::ostringstream out;
  out << '$' << std::fixed << std::setprecision(4) << value;
  return out.str();
}

}  // namespace

std::string format_cost_table(const UsageTotals& totals, const TokenPricing& pricing) {
  const double in_cost = static_cast<double>(totals.input_tokens) * pricing.input_per_million / 1e6;
  const double out_cost = static_cast<double>(totals.output_tokens) * pricing.output_per_million / 1e6;
  std::ostringstream out;
  out << std::left << std::setw(18) << "#Input Tokens" << std::setw(18) << "#Output Tokens" << "Total\n"
      << std::setw(18) << with_commas(totals.input_tokens) << std::setw(18) << with_commas(totals.output_tokens)
      << with_commas(totals.total_tokens()) << '\n'
      << std::setw(18) << "Input Cost" << std::setw(18) << "Output Cost" << "Total\n"
      << std::setw(18) << dollars(in_cost) << std::setw(18) << dollars(out_cost) << dollars(in_cost + out_cost)
      << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

Completion MeteredGateway::complete(const ChatRequest& request) {
  Completion c = inner_.complete(request);
  ledger_.record({c.input_tokens, c.output_tokens, inner_.backend_id(), request.purpose,
                  std::chrono::system_clock::now()});
  return c;
}

Completion FunctionGateway::complete(const ChatRequest& request) {
  Completion c = handler_(request);
  if (c.input_tokens == 0) c.input_tokens = estimate_tokens(request.prompt);
  if (c.output_tokens == 0) c.output_tokens = estimate_tokens(c.text);
  return c;
}

// ---------------------------------------------------------------------------

ScriptedGateway ScriptedGateway::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array()) {
    throw ValidationError("gateway script needs a 'rules' array");
  }
  std::vector<Rule> rules;
  for (const auto& r : doc["rules"]) {
    Rule rule;
    if (r.contains("contains")) {
      if (r["contains"].is_string()) {
        rule.contains.push_back(r["contains"].get<std::string>());
      } else {
        rule.contains = r["contains"].get<std::vector<std::string>>();
      }
    }
    if (r.contains("response")) rule.responses.push_back(r["response"].get<std::string>());
    if (r.contains("responses")) {
      for (const auto& resp : r["responses"]) {
        rule.responses.push_back(resp.is_string() ? resp.get<std::string>() : resp.dump());
      }
    }
    if (r.contains("yes_probability")) rule.yes_probability = r["yes_probability"].get<double>();
    if (rule.responses.empty() && !rule.yes_probability) {
      throw ValidationError("gateway script rule without responses");
    }
    rules.push_back(std::move(rule));
  }
  return ScriptedGateway(std::move(rules));
}

ScriptedGateway ScriptedGateway::from_file(const std::string& path) {
  try {
    return from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw ValidationError("gateway script '" + path + "': " + e.what());
  }
}

Completion ScriptedGateway::complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const Rule& rule = rules_[i];
    bool match = true;
    for (const auto& needle : rule.contains) {
      if (request.prompt.find(needle) == std::string::npos) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    Completion c;
    if (!rule.responses.empty()) {
      const std::size_t at = std::min(cursor_[i], rule.responses.size() - 1);
      c.text = rule.responses[at];
      ++cursor_[i];
    } else {
      c.text = "Yes";
    }
    if (rule.yes_probability) {
      c.first_token_probabilities["Yes"] = *rule.yes_probability;
      c.first_token_probabilities["No"] = 1.0 - *rule.yes_probability;
    }
    c.input_tokens = estimate_tokens(request.prompt);
    c.output_tokens = estimate_tokens(c.text);
    return c;
  }
  throw BackendError("scripted gateway: no rule matches prompt starting with '" +
                     request.prompt.substr(0, 80) + "'");
}

bool ScriptedGateway::supports_token_probabilities() const {
  for (const auto& r : rules_) {
    if (r.yes_probability) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

RemoteConfig RemoteConfig::from_json(const json& doc) {
  RemoteConfig c;
  c.endpoint = doc.value("endpoint", c.endpoint);
  c.model = doc.value("model", c.model);
  c.api_key_env = doc.value("api_key_env", c.api_key_env);
  c.temperature = doc.value("temperature", c.temperature);
  c.max_tokens = doc.value("max_tokens", c.max_tokens);
  c.timeout_seconds = doc.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = doc.value("max_retries", c.max_retries);
  c.max_in_flight = doc.value("max_in_flight", c.max_in_flight);
  c.backoff_seconds = doc.value("backoff_seconds", c.backoff_seconds);
  c.request_logprobs = doc.value("request_logprobs", c.request_logprobs);
  if (c.max_in_flight < 1) throw ValidationError("max_in_flight must be at least 1");
  if (c.max_retries < 0) throw ValidationError("max_retries must be non-negative");
  return c;
}

json RemoteConfig::to_json() const {
  return {{"endpoint", endpoint},           {"model", model},
          {"api_key_env", api_key_env},     {"temperature", temperature},
          {"max_tokens", max_tokens},       {"timeout_seconds", timeout_seconds},
          {"max_retries", max_retries},     {"max_in_flight", max_in_flight},
          {"backoff_seconds", backoff_seconds}, {"request_logprobs", request_logprobs}};
}

struct HttpGateway::Impl {
  std::string scheme_host_port;
  std::string base_path;
  std::mutex mutex;
  std::condition_variable slot_freed;
  int in_flight = 0;
};

HttpGateway::HttpGateway(RemoteConfig config) : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
  const std::string& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  impl_->scheme_host_port = url.substr(0, path_start);
  impl_->base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!impl_->base_path.empty() && impl_->base_path.back() == '/') impl_->base_path.pop_back();
}

HttpGateway::~HttpGateway() = default;

Completion HttpGateway::complete(const ChatRequest& request) {
  {
    std::unique_lock lock(impl_->mutex);
    impl_->slot_freed.wait(lock, [&] { return impl_->in_flight < config_.max_in_flight; });
    ++impl_->in_flight;
  }
  struct Release {
    Impl& impl;
    ~Release() {
      {
        std::lock_guard lock(impl.mutex);
        --impl.in_flight;
      }
      impl.slot_freed.notify_one();
    }
  } release{*impl_};

  json body = {{"model", config_.model},
               {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
               {"temperature", config_.temperature},
               {"max_tokens", config_.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  const bool want_probs = request.want_token_probabilities && config_.request_logprobs;
  if (want_probs) {
    body["logprobs"] = true;
    body["top_logprobs"] = 5;
  }

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  httplib::Client client(impl_->scheme_host_port);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0 && config_.backoff_seconds > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(config_.backoff_seconds * std::pow(2.0, attempt - 1)));
    }
    auto res = client.Post(impl_->base_path + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw BackendError("remote backend returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw BackendError(std::string("remote backend sent invalid JSON: ") + e.what());
    }
    Completion c;
    try {
      const auto& choice = reply.at("choices").at(0);
      c.text = choice.at("message").at("content").get<std::string>();
      if (want_probs && choice.contains("logprobs") && choice["logprobs"].is_object()) {
        const auto& content = choice["logprobs"].value("content", json::array());
        if (!content.empty()) {
          for (const auto& alt : content[0].value("top_logprobs", json::array())) {
            c.first_token_probabilities[alt.at("token").get<std::string>()] = std::exp(alt.at("logprob").get<double>());
          }
        }
      }
    } catch (const json::exception& e) {
      throw BackendError(std::string("remote backend reply lacks a message: ") + e.what());
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      c.input_tokens = reply["usage"].value("prompt_tokens", std::int64_t{0});
      c.output_tokens = reply["usage"].value("completion_tokens", std::int64_t{0});
    }
    if (c.input_tokens == 0) c.input_tokens = estimate_tokens(request.prompt);
    if (c.output_tokens == 0) c.output_tokens = estimate_tokens(c.text);
    return c;
  }
  throw BackendError("remote backend failed after " + std::to_string(config_.max_retries + 1) +
                     " attempts: " + last_error);
}

}  // namespace reltree
