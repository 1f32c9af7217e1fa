// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/agents.hpp"
#include "memcorrupt/corpus.hpp"
#include "memcorrupt/error.hpp"
#include "memcorrupt/gateway.hpp"
#include "memcorrupt/template.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace memcorrupt::search {

class TooFewPopularItems : public Error {
public:
    using Error::Error;
};

class AllDisqualified : public Error {
public:
    using Error::Error;
};

/// Thrown by a checkpoint hook to stop a search after a durable checkpoint.
class SearchInterrupted : public Error {
public:
    using Error::Error;
};

inline constexpr double kDisqualified = -std::numeric_limits<double>::infinity();
inline constexpr std::size_t kPopularCount = 9;

// ---------------------------------------------------------------------------
// Context

struct PromptSections {
    std::string style;
    std::string goal;
    std::string instruction;
    std::string format;
};

struct PopularItem {
    std::string title;
    std::string memory;
};

/// The ranking prompt the trigger is optimized against. The target block is
/// always rendered last, after the nine popular candidates.
struct AdversarialContext {
    PromptSections sections;
    std::string general_user_memory;
    std::vector<PopularItem> popular;
    std::string target_title;
    std::string target_meta;
    /// Additional general-user memories; each adds one probe context.
    std::vector<std::string> probe_user_memories;
    std::string item_noun = "CD";

    /// Ranking prompt with `candidate_text` as the target's memory.
    std::string render(const TemplateStore& templates, std::string_view candidate_text) const;
    std::string render_with_user(const TemplateStore& templates, std::string_view user_memory,
                                 std::string_view candidate_text) const;

    void validate() const;
    nlohmann::json to_json() const;
    static AdversarialContext from_json(const nlohmann::json& j);
};

struct ContextInputs {
    /// Ordered by popularity; the target is skipped if present.
    std::vector<corpus::ItemMeta> popular_items;
    corpus::ItemMeta target;
    std::size_t length_limit_words = 60;
    agents::PromptVocabulary vocabulary;
    std::vector<std::string> probe_user_memories;
};

/// Refines popular-item descriptions through the auxiliary model and
/// assembles the context. Throws TooFewPopularItems below nine.
AdversarialContext build_context(const ContextInputs& inputs, llm::Backend& aux, const TemplateStore& templates);

// ---------------------------------------------------------------------------
// Candidates

enum class Lineage { seed, elite, offspring };

std::string_view to_string(Lineage lineage);
Lineage parse_lineage(std::string_view name);

struct TriggerCandidate {
    std::uint64_t id = 0;
    std::string text;
    std::optional<double> score;
    int epoch_created = 0;
    Lineage lineage = Lineage::seed;
    std::vector<std::uint64_t> parent_ids;

    bool disqualified() const noexcept { return score && *score == kDisqualified; }
    nlohmann::json to_json() const;
    static TriggerCandidate from_json(const nlohmann::json& j);
};

struct SearchConfig {
    int epochs = 20;
    std::size_t pool_size = 10;
    std::size_t elite_count = 5;
    std::uint64_t rng_seed = 2024;
    std::size_t length_limit_words = 60;
    int convergence_patience = 3;
    /// Seeds regenerated at most this many times before suffix disambiguation.
    int seed_retry_limit = 3;
    std::string target_output;
    /// Worker threads for candidate scoring; 0 picks the hardware count.
    std::size_t concurrency = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

/// "The sorted CDs are:\n1. <title>\n"
std::string target_output_for(std::string_view title, std::string_view item_noun = "CD");

/// Distinct seed candidates generated by the auxiliary model.
std::vector<TriggerCandidate> init_candidates(const AdversarialContext& context, llm::Backend& aux,
                                              const TemplateStore& templates, const SearchConfig& config);

/// Negative teacher-forced NLL of the target output given the rendered
/// context. Returns kDisqualified when the input overflows the surrogate.
double score_candidate(const AdversarialContext& context, std::string_view candidate, llm::Backend& surrogate,
                       const TemplateStore& templates, std::string_view target_output);

/// Top-n by score; ties go to the lower pool index.
std::vector<TriggerCandidate> select_elites(const std::vector<TriggerCandidate>& pool, std::size_t n);

/// Softmax probabilities (temperature 1) of the pool scores.
std::vector<double> softmax_probabilities(const std::vector<double>& scores);

/// `count` draws without replacement, each proportional to softmax(score)
/// over the remaining candidates. Once every finite candidate is drawn,
/// further draws restart over the full finite set.
std::vector<TriggerCandidate> softmax_sample(const std::vector<TriggerCandidate>& pool, std::size_t count,
                                             std::mt19937_64& rng);

/// Exchanges suffixes at one slice boundary per text. Texts without a
/// boundary come back unchanged.
std::pair<std::string, std::string> crossover(std::string_view a, std::string_view b, std::mt19937_64& rng);

/// Auxiliary rewrite bounded to `length_limit` words. Transport failures
/// fall back to the unpolished text; `fell_back` reports it.
std::string polish(std::string_view combined, llm::Backend& aux, const TemplateStore& templates,
                   std::size_t length_limit, std::string_view item_noun = "CD", bool* fell_back = nullptr);

// ---------------------------------------------------------------------------
// Search loop

struct EpochTrace {
    int epoch = 0;
    double max_score = 0.0;
    std::string best_text;
    bool probes_ranked_first = false;
    std::size_t disqualified = 0;
    std::size_t polish_fallbacks = 0;
};

struct SearchCheckpoint {
    int completed_epoch = 0;
    std::uint64_t rng_seed = 0;
    std::uint64_t next_id = 0;
    int converged_streak = 0;
    bool finished = false;
    /// Pool for the next epoch (unscored), or the final scored pool.
    std::vector<TriggerCandidate> pool;
    std::vector<EpochTrace> trace;

    nlohmann::json to_json() const;
    static SearchCheckpoint from_json(const nlohmann::json& j);
};

struct SearchResult {
    TriggerCandidate best;
    std::vector<TriggerCandidate> final_pool;
    std::vector<EpochTrace> trace;
    int epochs_run = 0;
    bool converged = false;

    nlohmann::json to_json() const;
};

struct SearchHooks {
    /// Directory for epoch_<k>.json checkpoints; empty disables them.
    std::filesystem::path checkpoint_dir;
    /// Called after each checkpoint is written; may throw SearchInterrupted.
    std::function<void(const SearchCheckpoint&)> on_checkpoint;
    /// Resume from this state instead of seeding a fresh pool.
    std::optional<SearchCheckpoint> resume_from;
    /// Replaces seeding; the pool size must match the config.
    std::optional<std::vector<TriggerCandidate>> initial_pool;
};

/// Per-epoch generator; independent of how many draws earlier epochs made.
std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch);

/// True when the surrogate ranks the target first on every probe context.
bool probes_rank_first(const AdversarialContext& context, std::string_view candidate, llm::Backend& surrogate,
                       const TemplateStore& templates);

SearchResult run_search(const AdversarialContext& context, const SearchConfig& config, llm::Backend& surrogate,
                        llm::Backend& aux, const TemplateStore& templates, const SearchHooks& hooks = {});

/// Latest epoch checkpoint in a directory, if any.
std::optional<SearchCheckpoint> latest_checkpoint(const std::filesystem::path& dir);

} // namespace memcorrupt::search
