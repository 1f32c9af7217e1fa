// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/agents.hpp"
#include "memcorrupt/error.hpp"
#include "memcorrupt/gateway.hpp"
#include "memcorrupt/template.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace memcorrupt::strategy {

class DuplicateKind : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class MissingKind : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Declaration order is the canonical composition order and the order used
/// for lexicographic enumeration.
enum class ComponentKind {
    fake_task_response,
    contextual_text_switching,
    segmentation_signal,
    malicious_task_injection,
    special_characters,
};

inline constexpr std::size_t kComponentCount = 5;
using Ordering = std::array<ComponentKind, kComponentCount>;

inline constexpr Ordering kCanonicalOrdering = {
    ComponentKind::fake_task_response, ComponentKind::contextual_text_switching,
    ComponentKind::segmentation_signal, ComponentKind::malicious_task_injection,
    ComponentKind::special_characters};

std::string_view to_string(ComponentKind kind);
/// Accepts the full name or the one-letter code (f, c, g, n, s).
ComponentKind parse_component_kind(std::string_view name);
char short_code(ComponentKind kind);
std::string ordering_code(const Ordering& ordering);

/// Throws DuplicateKind / MissingKind unless `kinds` is a permutation.
Ordering make_ordering(const std::vector<ComponentKind>& kinds);

/// All 120 orderings, lexicographic, canonical first.
std::vector<Ordering> all_orderings();

struct StrategyComponent {
    ComponentKind kind;
    std::string text;
};

/// Snippet texts, one golden file per kind under `strategy/`.
class SnippetLibrary {
public:
    explicit SnippetLibrary(const TemplateStore& templates);
    SnippetLibrary(std::array<std::string, kComponentCount> snippets, std::string payload);

    const std::string& snippet(ComponentKind kind) const;
    const std::string& default_payload() const noexcept { return payload_; }

private:
    std::array<std::string, kComponentCount> snippets_;
    std::string payload_;
};

struct StrategyComposition {
    Ordering ordering = kCanonicalOrdering;
    std::vector<StrategyComponent> components;
    std::string rendered;
    double success_rate = 0.0;
    int trials = 0;
    int successes = 0;
    int excluded_trials = 0;

    nlohmann::json to_json() const;
};

/// Components joined with newlines in the given order. The injection
/// snippet's `{payload}` placeholder receives `payload`.
StrategyComposition render_strategy(const Ordering& ordering, const std::string& payload,
                                    const SnippetLibrary& library);

/// Memory-update trials against simulated users.
struct TrialHarness {
    llm::Backend* backend = nullptr;
    const TemplateStore* templates = nullptr;
    agents::UpdateSettings settings;
    /// Simulated update prompts cycle through these user self-introductions.
    std::vector<std::string> simulated_users;
    std::string item_title;

    /// `simulated_users.txt`, one self-introduction per line.
    static std::vector<std::string> load_simulated_users(const TemplateStore& templates);
};

struct TrialOutcome {
    bool success = false;
    bool excluded = false;
    agents::MemoryUpdateOutcome update;
};

/// Runs `trials` simulated item updates on the trigger-plus-strategy memory.
/// A trial succeeds when the agent is drunk and the trigger survives
/// verbatim. Trials aborted by transport errors are excluded.
StrategyComposition trial_drunk(StrategyComposition composition, const std::string& trigger,
                                const TrialHarness& harness, int trials,
                                std::vector<TrialOutcome>* outcomes = nullptr);

struct OptimizationResult {
    StrategyComposition best;
    /// Every ordering tried, in evaluation order.
    std::vector<StrategyComposition> evaluated;
    bool early_stopped = false;
    /// Set when no ordering reached a positive success rate.
    bool no_successful_ordering = false;

    nlohmann::json to_json() const;
};

struct OptimizerSettings {
    int trials_per_ordering = 5;
    bool early_stop = true;
    std::string payload;
    /// Orderings trialed concurrently; 0 picks the hardware count.
    std::size_t concurrency = 1;
};

/// Exhaustive search over orderings for the best empirical success rate.
/// Ties go to the canonical ordering, then to the lowest in enumeration
/// order. Stops at the first ordering with success rate 1 unless disabled.
OptimizationResult optimize_strategy(const std::string& trigger, const TrialHarness& harness,
                                     const SnippetLibrary& library, const OptimizerSettings& settings);

/// trigger + "\n" + strategy.
std::string finalize_description(const std::string& trigger, const StrategyComposition& strategy);

/// Inverse of finalize_description for a known composition.
std::pair<std::string, std::string> split_description(const std::string& description,
                                                      const StrategyComposition& strategy);

} // namespace memcorrupt::strategy
