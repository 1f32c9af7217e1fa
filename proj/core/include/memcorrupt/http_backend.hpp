// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/gateway.hpp"

#include <string>

namespace memcorrupt::llm {

/// OpenAI-compatible HTTP backend.
///
/// Generation posts to `<base>/chat/completions`. Teacher-forced scoring
/// posts prompt+target to `<base>/completions` with `echo: true` and
/// `logprobs`, then sums the log-probabilities of the tokens whose text
/// offsets fall inside the target. Servers without echo support (or configs
/// flagged `chat_only`) raise LogprobsUnsupported; nothing is approximated.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendConfig config);

    /// Endpoint split into "scheme://host:port" and path prefix ("/v1").
    struct Url {
        std::string origin;
        std::string prefix;
    };
    static Url parse_url(const std::string& endpoint);

    nlohmann::json chat_payload(const ChatExchange& exchange) const;
    nlohmann::json score_payload(std::string_view prompt, std::string_view target) const;

    /// Extracts the target's per-token NLL from a completions response.
    static SequenceScore parse_echo_logprobs(const nlohmann::json& response, std::size_t prompt_bytes,
                                             std::size_t total_bytes);

protected:
    std::string do_generate(const ChatExchange& exchange) override;
    SequenceScore do_score(std::string_view prompt, std::string_view target) override;

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& payload) const;

    Url url_;
};

} // namespace memcorrupt::llm
