// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/gateway.hpp"

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace memcorrupt::llm {

/// Programmatic generation rule. Returning nullopt passes to the next rule.
using GenerateRule = std::function<std::optional<std::string>(const ChatExchange&)>;

/// Byte-level next-token model used by the mock for scoring.
///
/// The vocabulary is the 256 byte values. A base distribution is refined by
/// an ordered list of modifiers, each of which moves probability `p` onto a
/// single predicted byte and rescales the rest. Every probability is a pure
/// function of the full context string, so scores are additive across any
/// split of prompt and target.
///
/// JSON form (`BackendConfig::mock["scoring"]`):
///   { "base": "uniform" | "bigram" | "hashed",
///     "bigram_corpus": "...",          // optional, bigram base only
///     "sharpness": 3.0,                // hashed base logit scale
///     "modifiers": [
///       {"type": "boost", "byte": "*", "prob": 0.5},
///       {"type": "continuation", "text": "ab", "probs": [0.5, 0.25]},
///       {"type": "copy", "prob": 0.6, "min_match": 3,
///        "when_context_contains": "prime choice"} ] }
class ScoringModel {
public:
    using Distribution = std::array<double, 256>;

    ScoringModel(const nlohmann::json& def, std::uint64_t seed);

    Distribution distribution(std::string_view context) const;
    double probability(std::string_view context, unsigned char next) const;

private:
    struct Modifier {
        enum class Kind { boost, continuation, copy } kind;
        unsigned char byte = 0;
        std::string text;
        std::vector<double> probs;
        double prob = 0.5;
        std::size_t min_match = 3;
        std::string when_contains;
    };

    Distribution base_distribution(std::string_view context) const;
    std::optional<std::pair<unsigned char, double>> prediction(const Modifier& m,
                                                               std::string_view context) const;

    enum class Base { uniform, bigram, hashed } base_ = Base::hashed;
    std::uint64_t seed_;
    double sharpness_ = 3.0;
    std::vector<std::array<double, 256>> bigram_; // row = previous byte, 256 = start
    std::vector<Modifier> modifiers_;
};

/// Deterministic offline backend. Output is a pure function of
/// (seed, serialized exchange); scores are a pure function of the text.
///
/// Generation rules come from `BackendConfig::mock["rules"]`, checked in
/// order, first match wins. Each rule may carry conditions over the
/// concatenated message contents:
///   "when_contains": [..], "unless_contains": [..],
///   "when_ordered": [first, second]   (both present, first occurs earlier)
/// and one action:
///   "echo_last_user_line"
///   "fixed"           {"text"}
///   "transform"       {"ops": [...]} over the subject text
///   "regex_template"  {"pattern", "template"}  ($1.., $subject)
///   "rank"            {"order": presented|reverse|memory_length_desc|cue_first,
///                      "cue", "noun"}
///   "seed_fragments"  {"fragments": [...], "count"}
///   "enrich"          {"fragments": [...], "probability", "keep", "max_sentences"}
/// The subject is the last """-delimited block of the last user message,
/// or the whole message when there is none. Unmatched exchanges get a
/// pseudo-random sentence.
class MockBackend : public Backend {
public:
    explicit MockBackend(BackendConfig config);
    ~MockBackend() override;

    /// Rules added here run before the JSON table. Not thread-safe; call
    /// before sharing the backend.
    void add_rule(GenerateRule rule);

    const ScoringModel& scoring_model() const noexcept { return *scoring_; }

    /// One token per byte.
    std::size_t estimate_tokens(std::string_view text) const override { return text.size(); }

protected:
    std::string do_generate(const ChatExchange& exchange) override;
    SequenceScore do_score(std::string_view prompt, std::string_view target) override;

private:
    struct JsonRule;

    std::optional<std::string> apply(const JsonRule& rule, const ChatExchange& exchange) const;

    std::unique_ptr<ScoringModel> scoring_;
    std::vector<GenerateRule> custom_rules_;
    std::vector<JsonRule> rules_;
};

namespace mock {

struct CandidateBlock {
    std::string title;
    std::string memory;
};

/// Candidate lines of a ranking prompt: "... title: T, where its features: M".
/// The memory runs until the next candidate line or a blank line.
std::vector<CandidateBlock> extract_candidates(std::string_view prompt);

/// Content of the last """-delimited block, or the whole text.
std::string extract_subject(std::string_view text);

/// A small English sample used to train the bigram base by default.
std::string_view default_bigram_corpus();

} // namespace mock

} // namespace memcorrupt::llm
