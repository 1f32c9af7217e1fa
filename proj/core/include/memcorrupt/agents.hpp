// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/corpus.hpp"
#include "memcorrupt/error.hpp"
#include "memcorrupt/gateway.hpp"
#include "memcorrupt/template.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace memcorrupt::agents {

class MissingMetadata : public Error {
public:
    using Error::Error;
};

/// The model output could not be mapped onto the candidate list.
class ParseFailure : public Error {
public:
    ParseFailure(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw_text() const noexcept { return raw_; }

private:
    std::string raw_;
};

// ---------------------------------------------------------------------------
// Memory

enum class AgentKind { user, item };

struct MemoryUpdateRecord {
    int timestep = 0;
    std::string old_hash;
    std::string new_hash;
};

/// Versioned textual memory of one agent. Every committed change is logged
/// with the hashes of the text before and after, so the final state can be
/// audited by replaying the log from the initial hash.
class AgentMemory {
public:
    AgentMemory(AgentKind owner, std::string agent_id, std::string initial);

    AgentKind owner() const noexcept { return owner_; }
    const std::string& agent_id() const noexcept { return agent_id_; }
    const std::string& short_term() const noexcept { return short_term_; }
    const std::vector<std::string>& long_term() const noexcept { return long_term_; }
    std::size_t version() const noexcept { return log_.size(); }
    const std::vector<MemoryUpdateRecord>& update_log() const noexcept { return log_; }
    const std::string& initial_hash() const noexcept { return initial_hash_; }

    void commit(int timestep, std::string text);
    void remember(std::string entry);

    /// True when the log chains from the initial hash to the current text.
    bool verify_audit() const;

    nlohmann::json to_json() const;
    static AgentMemory from_json(const nlohmann::json& j);

private:
    AgentMemory() = default;

    AgentKind owner_ = AgentKind::user;
    std::string agent_id_;
    std::string short_term_;
    std::vector<std::string> long_term_;
    std::string initial_hash_;
    std::vector<MemoryUpdateRecord> log_;
};

struct MemoryStore {
    std::map<UserId, AgentMemory> users;
    std::map<ItemId, AgentMemory> items;

    nlohmann::json to_json() const;
    static MemoryStore from_json(const nlohmann::json& j);
};

/// Domain wording shared by every prompt ("CD" gives "CD title", "CDs").
struct PromptVocabulary {
    std::string item_noun = "CD";
};

/// Identity-based memory for an item: title plus categories.
std::string render_item_memory(const corpus::ItemMeta& meta, const TemplateStore& templates,
                               const PromptVocabulary& vocabulary);

/// Item agents from metadata, user agents from the generic self-introduction.
/// Throws MissingMetadata when an interacted item has no catalog entry.
MemoryStore init_memories(const corpus::InteractionMatrix& matrix, const corpus::ItemCatalog& catalog,
                          const TemplateStore& templates, const PromptVocabulary& vocabulary);

// ---------------------------------------------------------------------------
// Memory updates

struct MemoryUpdateOutcome {
    std::string agent_id;
    AgentKind owner = AgentKind::item;
    bool committed = false;
    int rounds_used = 0;
    std::string resulting_memory;
    /// The agent failed to perform the update (refused, claimed completion,
    /// or returned its old memory) in every round.
    bool drunk = false;
};

/// Classifies one update response. Case-insensitive marker match, or a
/// response that normalizes to the pre-update memory, counts as drunk.
class DrunkDetector {
public:
    DrunkDetector();
    explicit DrunkDetector(std::vector<std::string> markers);

    bool is_drunk(std::string_view previous_memory, std::string_view response) const;
    const std::vector<std::string>& markers() const noexcept { return markers_; }

private:
    std::vector<std::string> markers_;
};

struct UpdateSettings {
    int max_rounds = 2;
    DrunkDetector detector;
    PromptVocabulary vocabulary;
};

/// Runs one collaborative update for an interaction: every listed item agent
/// first, then the user agent (who sees the items' post-update memories).
/// New memories are committed only after every call succeeded; a transport
/// failure leaves all agents untouched.
std::vector<MemoryUpdateOutcome> update_memories(AgentMemory& user, std::span<AgentMemory* const> items,
                                                 const std::map<ItemId, std::string>& item_titles,
                                                 llm::Backend& backend, const TemplateStore& templates,
                                                 const UpdateSettings& settings, int timestep);

/// Single-agent form used by the strategy trials: one item agent updated
/// against a fixed user self-introduction. Nothing is committed to `item`;
/// the outcome carries the would-be memory.
MemoryUpdateOutcome simulate_item_update(const AgentMemory& item, const std::string& item_title,
                                         const std::string& user_memory, llm::Backend& backend,
                                         const TemplateStore& templates, const UpdateSettings& settings);

// ---------------------------------------------------------------------------
// Recommendation

enum class Flavor { cf, rag, seq };

std::string_view to_string(Flavor flavor);
Flavor parse_flavor(std::string_view name);

struct CandidateEntry {
    std::string title;
    std::string memory;
};

struct HistoryEntry {
    std::string title;
    std::string memory;
    std::int64_t timestamp = 0;
};

struct RecommendationRequest {
    std::string user_memory;
    /// Long-term entries the RAG flavor retrieves from.
    std::vector<std::string> user_long_term;
    /// Filled by the RAG flavor (or by the caller).
    std::optional<std::string> retrieved_memory;
    /// Chronological, SEQ flavor only.
    std::vector<HistoryEntry> history;
    std::vector<CandidateEntry> candidates;
    std::string target_title;

    /// Exact candidate count, unique titles, target present exactly once.
    void validate(std::size_t expected_candidates = 10) const;
};

struct RankedList {
    std::vector<std::string> ordered_titles;
    std::string raw_text;

    /// 1-based rank, or 0 when absent.
    std::size_t rank_of(std::string_view title) const;
};

struct RecommendationResult {
    RankedList ranking;
    std::size_t target_rank = 0;
    bool reprompted = false;
    std::size_t history_dropped = 0;
    std::string prompt;
};

/// Picks the long-term entry most similar to a query; ties go to the lower
/// index. Implementations must be thread-safe.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual std::optional<std::size_t> retrieve(std::span<const std::string> entries,
                                                std::string_view query) const = 0;
};

/// Cosine similarity over term-frequency vectors of lower-cased word tokens.
class TermFrequencyRetriever final : public Retriever {
public:
    std::optional<std::size_t> retrieve(std::span<const std::string> entries,
                                        std::string_view query) const override;

    static double cosine(std::string_view a, std::string_view b);
};

struct RecommenderSettings {
    PromptVocabulary vocabulary;
    std::size_t candidate_count = 10;
    double fuzzy_threshold = 0.8;
};

class Recommender {
public:
    Recommender(Flavor flavor, const TemplateStore& templates, RecommenderSettings settings = {});

    Flavor flavor() const noexcept { return flavor_; }
    const RecommenderSettings& settings() const noexcept { return settings_; }

    /// The system prompt for a request, exactly as sent.
    std::string render_prompt(const RecommendationRequest& request) const;

    /// Renders, queries, parses; one reprompt on ParseFailure. For RAG the
    /// retriever fills `retrieved_memory` (CF behaviour when nothing to
    /// retrieve). For SEQ the oldest history entries are dropped until the
    /// prompt fits the backend context window.
    RecommendationResult recommend(RecommendationRequest request, llm::Backend& backend,
                                   const Retriever* retriever = nullptr) const;

private:
    Flavor flavor_;
    const TemplateStore* templates_;
    RecommenderSettings settings_;
    std::string template_;
};

RecommendationResult recommend_cf(const RecommendationRequest& request, llm::Backend& backend,
                                  const TemplateStore& templates, const RecommenderSettings& settings = {});
RecommendationResult recommend_rag(const RecommendationRequest& request, llm::Backend& backend,
                                   const Retriever& retriever, const TemplateStore& templates,
                                   const RecommenderSettings& settings = {});
RecommendationResult recommend_seq(const RecommendationRequest& request, llm::Backend& backend,
                                   const TemplateStore& templates, const RecommenderSettings& settings = {});

/// Title-recall overlap: share of the title's word tokens present in `line`.
double title_overlap(std::string_view line, std::string_view title);

/// Extracts the numbered list and maps every line onto a distinct candidate
/// title: normalized exact match first, then the best fuzzy overlap at or
/// above `threshold`. Throws ParseFailure otherwise.
RankedList parse_ranking(std::string_view raw_text, std::span<const std::string> candidate_titles,
                         double threshold = 0.8);

/// One JSON Lines trace object per recommendation.
nlohmann::json trace_record(std::string_view user, const RecommendationRequest& request,
                            const RecommendationResult& result);

} // namespace memcorrupt::agents
