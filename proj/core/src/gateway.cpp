// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/gateway.hpp"

#include "memcorrupt/http_backend.hpp"
#include "memcorrupt/mock_backend.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <thread>

namespace memcorrupt::llm {

std::string_view to_string(BackendRole role)
{
    switch (role) {
    case BackendRole::victim: return "victim";
    case BackendRole::surrogate: return "surrogate";
    case BackendRole::auxiliary: return "auxiliary";
    }
    return "unknown";
}

BackendRole parse_backend_role(std::string_view name)
{
    if (name == "victim")
        return BackendRole::victim;
    if (name == "surrogate")
        return BackendRole::surrogate;
    if (name == "auxiliary")
        return BackendRole::auxiliary;
    throw PreconditionError("unknown backend role: " + std::string(name));
}

std::string_view to_string(Speaker speaker)
{
    switch (speaker) {
    case Speaker::system: return "system";
    case Speaker::user: return "user";
    case Speaker::assistant: return "assistant";
    }
    return "user";
}

void BackendConfig::validate() const
{
    if (role_ == BackendRole::victim && temperature != 0.0)
        throw PreconditionError("victim backends must run at temperature 0");
    if (temperature < 0.0)
        throw PreconditionError("temperature must be non-negative");
    if (max_tokens <= 0)
        throw PreconditionError("max_tokens must be positive");
    if (retry_limit < 0)
        throw PreconditionError("retry_limit must be non-negative");
    if (context_window == 0)
        throw PreconditionError("context_window must be positive");
    if (endpoint.empty())
        throw PreconditionError("backend endpoint is empty");
}

ChatExchange ChatExchange::single_user(std::string content)
{
    ChatExchange exchange;
    exchange.messages.push_back({Speaker::user, std::move(content)});
    return exchange;
}

ChatExchange ChatExchange::system_prompt(std::string content)
{
    ChatExchange exchange;
    exchange.messages.push_back({Speaker::system, std::move(content)});
    return exchange;
}

void ChatExchange::validate() const
{
    if (messages.empty())
        throw PreconditionError("chat exchange has no messages");
    for (const auto& message : messages) {
        if (message.content.empty())
            throw PreconditionError("chat message content is empty");
    }
}

std::string ChatExchange::serialize() const
{
    std::string out;
    for (const auto& message : messages) {
        out += '<';
        out += to_string(message.speaker);
        out += ">\n";
        out += message.content;
        out += '\n';
    }
    return out;
}

nlohmann::json ChatExchange::to_json() const
{
    auto list = nlohmann::json::array();
    for (const auto& message : messages)
        list.push_back({{"role", to_string(message.speaker)}, {"content", message.content}});
    return list;
}

const std::string& ChatExchange::last_user_content() const
{
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->speaker == Speaker::user)
            return it->content;
    }
    return messages.back().content;
}

// ---------------------------------------------------------------------------

class RequestLog {
public:
    explicit RequestLog(const std::filesystem::path& path) : out_(path, std::ios::app)
    {
        if (!out_)
            throw IoError("cannot open request log: " + path.string());
    }

    void write(const nlohmann::json& record)
    {
        std::lock_guard lock(mutex_);
        out_ << record.dump() << '\n';
        out_.flush();
    }

    static std::shared_ptr<RequestLog> open(const std::filesystem::path& path)
    {
        static std::mutex registry_mutex;
        static std::map<std::string, std::weak_ptr<RequestLog>> registry;
        std::lock_guard lock(registry_mutex);
        auto key = std::filesystem::absolute(path).lexically_normal().string();
        if (auto existing = registry[key].lock())
            return existing;
        auto log = std::make_shared<RequestLog>(path);
        registry[key] = log;
        return log;
    }

private:
    std::mutex mutex_;
    std::ofstream out_;
};

Backend::Backend(BackendConfig config) : config_(std::move(config))
{
    config_.validate();
    if (config_.log_path)
        log_ = RequestLog::open(*config_.log_path);
}

Backend::~Backend() = default;

template <typename Fn>
auto Backend::with_retries(Fn&& fn) -> decltype(fn())
{
    for (int attempt = 0;; ++attempt) {
        ++attempts_;
        try {
            return fn();
        } catch (const TransportError& e) {
            if (!e.retryable() || attempt >= config_.retry_limit)
                throw;
            if (!config_.is_mock())
                std::this_thread::sleep_for(std::chrono::milliseconds(250) * (1 << attempt));
        }
    }
}

std::string Backend::generate(const ChatExchange& exchange)
{
    exchange.validate();
    nlohmann::json record;
    if (log_) {
        record = {{"role", to_string(config_.role())},
                  {"model", config_.model_name},
                  {"kind", "generate"},
                  {"messages", exchange.to_json()},
                  {"api_key_redacted", !config_.api_key.empty()}};
    }
    try {
        auto text = with_retries([&] { return do_generate(exchange); });
        if (log_) {
            record["response"] = text;
            log_->write(record);
        }
        return text;
    } catch (const std::exception& e) {
        if (log_) {
            record["error"] = e.what();
            log_->write(record);
        }
        throw;
    }
}

SequenceScore Backend::score_sequence(std::string_view prompt, std::string_view target)
{
    if (target.empty())
        throw PreconditionError("score_sequence target is empty");
    nlohmann::json record;
    if (log_) {
        record = {{"role", to_string(config_.role())},
                  {"model", config_.model_name},
                  {"kind", "score"},
                  {"prompt", prompt},
                  {"target", target},
                  {"api_key_redacted", !config_.api_key.empty()}};
    }
    try {
        auto score = with_retries([&] { return do_score(prompt, target); });
        if (log_) {
            record["total_nll"] = score.total_nll;
            record["tokens"] = score.token_count();
            log_->write(record);
        }
        return score;
    } catch (const std::exception& e) {
        if (log_) {
            record["error"] = e.what();
            log_->write(record);
        }
        throw;
    }
}

BackendPtr make_backend(BackendConfig config)
{
    if (config.is_mock())
        return std::make_shared<MockBackend>(std::move(config));
    return std::make_shared<HttpBackend>(std::move(config));
}

double perplexity(Backend& backend, std::string_view text)
{
    if (text.empty())
        throw PreconditionError("perplexity of empty text");
    auto score = backend.score_sequence("", text);
    if (score.token_count() == 0)
        throw LogprobsUnsupported("backend returned no scored tokens");
    return std::exp(score.total_nll / static_cast<double>(score.token_count()));
}

} // namespace memcorrupt::llm
