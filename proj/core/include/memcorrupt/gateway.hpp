// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/error.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace memcorrupt::llm {

// ---------------------------------------------------------------------------
// Errors

class GatewayError : public Error {
public:
    using Error::Error;
};

/// Network or server-side failure. Retryable failures are retried by the
/// backend up to `BackendConfig::retry_limit` times before surfacing.
class TransportError : public GatewayError {
public:
    explicit TransportError(const std::string& what, bool retryable = true)
        : GatewayError(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

/// The request does not fit the model context. Never truncated silently.
class ContextOverflow : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class MalformedResponse : public GatewayError {
public:
    using GatewayError::GatewayError;
};

/// The backend cannot return per-token log-probabilities for a given text.
class LogprobsUnsupported : public GatewayError {
public:
    using GatewayError::GatewayError;
};

// ---------------------------------------------------------------------------
// Configuration

enum class BackendRole { victim, surrogate, auxiliary };

std::string_view to_string(BackendRole role);
BackendRole parse_backend_role(std::string_view name);

class BackendConfig {
public:
    explicit BackendConfig(BackendRole role) : role_(role) {}

    BackendRole role() const noexcept { return role_; }

    /// Base URL of an OpenAI-compatible server, or "mock".
    std::string endpoint = "mock";
    std::string model_name = "mock";
    double temperature = 0.0;
    int max_tokens = 512;
    std::chrono::milliseconds request_timeout{60'000};
    int retry_limit = 2;
    std::uint64_t seed = 2024;
    /// Prompt budget in tokens (bytes for the mock).
    std::size_t context_window = 32'768;
    /// Server exposes chat only; teacher-forced scoring is unavailable.
    bool chat_only = false;
    std::string api_key;
    /// Optional JSON Lines request log. Keys are never written.
    std::optional<std::filesystem::path> log_path;
    /// Rule table for the mock backend (see mock_backend.hpp).
    nlohmann::json mock = nlohmann::json::object();

    bool is_mock() const noexcept { return endpoint == "mock"; }

    /// Throws PreconditionError on inconsistent settings (victims must run
    /// at temperature 0, budgets must be positive).
    void validate() const;

private:
    BackendRole role_;
};

// ---------------------------------------------------------------------------
// Requests and results

enum class Speaker { system, user, assistant };

std::string_view to_string(Speaker speaker);

struct ChatMessage {
    Speaker speaker;
    std::string content;
};

struct SamplingParams {
    std::optional<double> temperature;
    std::optional<int> max_tokens;
};

struct ChatExchange {
    std::vector<ChatMessage> messages;
    SamplingParams params;

    static ChatExchange single_user(std::string content);
    static ChatExchange system_prompt(std::string content);

    /// Non-empty, every message non-empty.
    void validate() const;
    /// Canonical text form; mock outputs are a function of this and the seed.
    std::string serialize() const;
    nlohmann::json to_json() const;
    /// Content of the last user (or, failing that, last) message.
    const std::string& last_user_content() const;
};

struct SequenceScore {
    double total_nll = 0.0;
    std::vector<double> per_token_nll;

    std::size_t token_count() const noexcept { return per_token_nll.size(); }
};

// ---------------------------------------------------------------------------
// Backend

class RequestLog;

/// Common front for every model call. Handles validation, retries and
/// request logging; concrete backends implement the `do_*` hooks.
/// Backends are stateless per call and safe to share across threads.
class Backend {
public:
    explicit Backend(BackendConfig config);
    virtual ~Backend();

    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    const BackendConfig& config() const noexcept { return config_; }

    std::string generate(const ChatExchange& exchange);

    /// Teacher-forced negative log-likelihood (nats) of `target` given
    /// `prompt`, summed over target tokens.
    SequenceScore score_sequence(std::string_view prompt, std::string_view target);

    /// Token estimate used for pre-flight budget checks.
    virtual std::size_t estimate_tokens(std::string_view text) const { return text.size() / 4; }
    bool fits(const ChatExchange& exchange) const
    {
        return estimate_tokens(exchange.serialize()) <= config_.context_window;
    }

    /// Number of physical attempts made so far (including retries).
    std::uint64_t attempts() const noexcept { return attempts_.load(); }

protected:
    virtual std::string do_generate(const ChatExchange& exchange) = 0;
    virtual SequenceScore do_score(std::string_view prompt, std::string_view target) = 0;

private:
    template <typename Fn>
    auto with_retries(Fn&& fn) -> decltype(fn());

    BackendConfig config_;
    std::shared_ptr<RequestLog> log_;
    std::atomic<std::uint64_t> attempts_{0};
};

using BackendPtr = std::shared_ptr<Backend>;

/// Mock when `endpoint == "mock"`, HTTP otherwise.
BackendPtr make_backend(BackendConfig config);

/// exp(mean per-token NLL) of `text` scored with an empty prompt.
double perplexity(Backend& backend, std::string_view text);

} // namespace memcorrupt::llm
