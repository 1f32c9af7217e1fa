// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/http_backend.hpp"

#include "memcorrupt/text.hpp"

#ifdef MEMCORRUPT_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace memcorrupt::llm {

using nlohmann::json;

HttpBackend::HttpBackend(BackendConfig config) : Backend(std::move(config)), url_(parse_url(this->config().endpoint))
{
}

HttpBackend::Url HttpBackend::parse_url(const std::string& endpoint)
{
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw PreconditionError("endpoint must be a URL or \"mock\": " + endpoint);
    auto path_start = endpoint.find('/', scheme_end + 3);
    Url url;
    url.origin = endpoint.substr(0, path_start);
    url.prefix = path_start == std::string::npos ? std::string() : endpoint.substr(path_start);
    while (!url.prefix.empty() && url.prefix.back() == '/')
        url.prefix.pop_back();
    if (url.prefix.empty())
        url.prefix = "/v1";
    return url;
}

json HttpBackend::chat_payload(const ChatExchange& exchange) const
{
    const auto& c = config();
    return {{"model", c.model_name},
            {"messages", exchange.to_json()},
            {"temperature", exchange.params.temperature.value_or(c.temperature)},
            {"max_tokens", exchange.params.max_tokens.value_or(c.max_tokens)},
            {"seed", c.seed}};
}

json HttpBackend::score_payload(std::string_view prompt, std::string_view target) const
{
    std::string full(prompt);
    full += target;
    return {{"model", config().model_name},
            {"prompt", full},
            {"temperature", 0.0},
            {"max_tokens", 1},
            {"echo", true},
            {"logprobs", 1},
            {"seed", config().seed}};
}

json HttpBackend::post(const std::string& path, const json& payload) const
{
    httplib::Client client(url_.origin);
    auto timeout = config().request_timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count());
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count());
    httplib::Headers headers;
    if (!config().api_key.empty())
        headers.emplace("Authorization", "Bearer " + config().api_key);

    auto result = client.Post(url_.prefix + path, headers, payload.dump(), "application/json");
    if (!result)
        throw TransportError("request to " + url_.origin + url_.prefix + path +
                             " failed: " + httplib::to_string(result.error()));

    const auto& body = result->body;
    auto status = result->status;
    if (status == 429 || status >= 500)
        throw TransportError("server returned HTTP " + std::to_string(status));
    if (status >= 400) {
        auto lowered = text::to_lower(body);
        if (lowered.find("context length") != std::string::npos ||
            lowered.find("context_length") != std::string::npos ||
            lowered.find("maximum context") != std::string::npos)
            throw ContextOverflow("server rejected prompt length: " + body.substr(0, 300));
        if (path == "/completions" && (status == 404 || lowered.find("echo") != std::string::npos ||
                                       lowered.find("logprobs") != std::string::npos))
            throw LogprobsUnsupported("server cannot echo prompt logprobs: HTTP " + std::to_string(status));
        throw TransportError("server returned HTTP " + std::to_string(status) + ": " + body.substr(0, 300),
                             false);
    }
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw MalformedResponse(std::string("response is not JSON: ") + e.what());
    }
}

namespace {

// Rough token estimate for the pre-flight budget check; the server remains
// the authority and its own overflow errors map to ContextOverflow as well.
void check_budget(std::size_t bytes, const BackendConfig& config)
{
    if (bytes / 4 > config.context_window)
        throw ContextOverflow("request of ~" + std::to_string(bytes / 4) + " tokens exceeds context window of " +
                              std::to_string(config.context_window));
}

} // namespace

std::string HttpBackend::do_generate(const ChatExchange& exchange)
{
    check_budget(exchange.serialize().size(), config());
    auto response = post("/chat/completions", chat_payload(exchange));
    try {
        const auto& choice = response.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        if (!content.is_string())
            throw MalformedResponse("chat completion content is not a string");
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw MalformedResponse(std::string("unexpected chat completion shape: ") + e.what());
    }
}

SequenceScore HttpBackend::parse_echo_logprobs(const json& response, std::size_t prompt_bytes,
                                               std::size_t total_bytes)
{
    const json* logprobs = nullptr;
    try {
        const auto& choice = response.at("choices").at(0);
        if (!choice.contains("logprobs") || choice.at("logprobs").is_null())
            throw LogprobsUnsupported("completion response carries no logprobs");
        logprobs = &choice.at("logprobs");
    } catch (const json::exception& e) {
        throw MalformedResponse(std::string("unexpected completion shape: ") + e.what());
    }

    if (!logprobs->contains("token_logprobs") || !logprobs->contains("text_offset"))
        throw LogprobsUnsupported("completion logprobs lack token_logprobs/text_offset (echo unsupported)");

    const auto& values = logprobs->at("token_logprobs");
    const auto& offsets = logprobs->at("text_offset");
    if (!values.is_array() || !offsets.is_array() || values.size() != offsets.size())
        throw MalformedResponse("token_logprobs and text_offset disagree in length");

    // Offsets are compared as byte offsets, which matches character offsets
    // for ASCII text.
    SequenceScore score;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto offset = offsets[i].get<std::size_t>();
        if (offset >= total_bytes)
            break; // generated continuation, not part of the echo
        // A token straddling the boundary belongs to the target.
        std::size_t next = i + 1 < offsets.size() ? offsets[i + 1].get<std::size_t>() : total_bytes;
        if (next <= prompt_bytes && offset < prompt_bytes)
            continue;
        if (values[i].is_null()) {
            if (i == 0 && prompt_bytes == 0)
                continue; // no conditional probability for the very first token
            throw MalformedResponse("null logprob inside the target span");
        }
        double nll = -values[i].get<double>();
        score.per_token_nll.push_back(nll < 0.0 ? 0.0 : nll);
        score.total_nll += score.per_token_nll.back();
    }
    if (score.per_token_nll.empty())
        throw LogprobsUnsupported("no target tokens were echoed back");
    return score;
}

SequenceScore HttpBackend::do_score(std::string_view prompt, std::string_view target)
{
    if (config().chat_only)
        throw LogprobsUnsupported("backend " + config().model_name + " is chat-only");
    check_budget(prompt.size() + target.size(), config());
    auto response = post("/completions", score_payload(prompt, target));
    return parse_echo_logprobs(response, prompt.size(), prompt.size() + target.size());
}

} // namespace memcorrupt::llm
