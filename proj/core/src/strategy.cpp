// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/strategy.hpp"

#include "memcorrupt/parallel.hpp"
#include "memcorrupt/text.hpp"

#include <algorithm>
#include <set>

namespace memcorrupt::strategy {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kComponentCount> kNames = {
    "fake_task_response", "contextual_text_switching", "segmentation_signal", "malicious_task_injection",
    "special_characters"};
constexpr std::array<char, kComponentCount> kCodes = {'f', 'c', 'g', 'n', 's'};

std::size_t index_of(ComponentKind kind)
{
    return static_cast<std::size_t>(kind);
}

} // namespace

std::string_view to_string(ComponentKind kind)
{
    return kNames[index_of(kind)];
}

char short_code(ComponentKind kind)
{
    return kCodes[index_of(kind)];
}

ComponentKind parse_component_kind(std::string_view name)
{
    for (std::size_t i = 0; i < kComponentCount; ++i) {
        if (name == kNames[i] || (name.size() == 1 && name[0] == kCodes[i]))
            return static_cast<ComponentKind>(i);
    }
    throw PreconditionError("unknown strategy component: " + std::string(name));
}

std::string ordering_code(const Ordering& ordering)
{
    std::string out;
    for (auto k : ordering)
        out.push_back(short_code(k));
    return out;
}

Ordering make_ordering(const std::vector<ComponentKind>& kinds)
{
    std::set<ComponentKind> seen;
    for (auto k : kinds) {
        if (!seen.insert(k).second)
            throw DuplicateKind("component " + std::string(to_string(k)) + " appears more than once");
    }
    if (kinds.size() != kComponentCount) {
        for (std::size_t i = 0; i < kComponentCount; ++i) {
            if (!seen.count(static_cast<ComponentKind>(i)))
                throw MissingKind("component " + std::string(kNames[i]) + " is missing");
        }
    }
    Ordering ordering{};
    std::copy(kinds.begin(), kinds.end(), ordering.begin());
    return ordering;
}

std::vector<Ordering> all_orderings()
{
    std::vector<Ordering> out;
    Ordering o = kCanonicalOrdering;
    do {
        out.push_back(o);
    } while (std::next_permutation(o.begin(), o.end()));
    return out;
}

// ---------------------------------------------------------------------------

SnippetLibrary::SnippetLibrary(const TemplateStore& templates)
{
    for (std::size_t i = 0; i < kComponentCount; ++i)
        snippets_[i] = templates.load("strategy/" + std::string(kNames[i]) + ".txt");
    payload_ = templates.load("strategy/payload.txt");
    if (snippets_[index_of(ComponentKind::segmentation_signal)].find("###") == std::string::npos)
        throw PreconditionError("segmentation snippet must contain ###");
    if (snippets_[index_of(ComponentKind::malicious_task_injection)].find("{payload}") == std::string::npos)
        throw PreconditionError("injection snippet must contain {payload}");
}

SnippetLibrary::SnippetLibrary(std::array<std::string, kComponentCount> snippets, std::string payload)
    : snippets_(std::move(snippets)), payload_(std::move(payload))
{
}

const std::string& SnippetLibrary::snippet(ComponentKind kind) const
{
    return snippets_[index_of(kind)];
}

json StrategyComposition::to_json() const
{
    return {{"ordering", ordering_code(ordering)},
            {"success_rate", success_rate},
            {"trials", trials},
            {"successes", successes},
            {"excluded_trials", excluded_trials},
            {"rendered", rendered}};
}

StrategyComposition render_strategy(const Ordering& ordering, const std::string& payload,
                                    const SnippetLibrary& library)
{
    make_ordering({ordering.begin(), ordering.end()});
    if (text::trim(payload).empty())
        throw PreconditionError("strategy payload must be non-empty");

    StrategyComposition composition;
    composition.ordering = ordering;
    std::vector<std::string> parts;
    for (auto kind : ordering) {
        TemplateContext ctx;
        ctx.scalars["payload"] = payload;
        auto snippet = render_template(library.snippet(kind), ctx);
        composition.components.push_back({kind, snippet});
        parts.push_back(std::move(snippet));
    }
    composition.rendered = text::join(parts, "\n");
    return composition;
}

std::vector<std::string> TrialHarness::load_simulated_users(const TemplateStore& templates)
{
    std::vector<std::string> users;
    auto content = templates.load("simulated_users.txt");
    std::size_t start = 0;
    while (start <= content.size()) {
        auto end = content.find('\n', start);
        auto line = text::trim(std::string_view(content).substr(start, end == std::string::npos ? end : end - start));
        if (!line.empty())
            users.emplace_back(line);
        if (end == std::string::npos)
            break;
        start = end + 1;
    }
    return users;
}

StrategyComposition trial_drunk(StrategyComposition composition, const std::string& trigger,
                                const TrialHarness& harness, int trials, std::vector<TrialOutcome>* outcomes)
{
    if (trials < 1)
        throw PreconditionError("trials must be at least 1");
    if (harness.backend == nullptr || harness.templates == nullptr || harness.simulated_users.empty())
        throw PreconditionError("trial harness is incomplete");

    const agents::AgentMemory item(agents::AgentKind::item, "target", finalize_description(trigger, composition));
    composition.trials = 0;
    composition.successes = 0;
    composition.excluded_trials = 0;
    for (int t = 0; t < trials; ++t) {
        TrialOutcome outcome;
        const auto& user = harness.simulated_users[static_cast<std::size_t>(t) % harness.simulated_users.size()];
        try {
            outcome.update = agents::simulate_item_update(item, harness.item_title, user, *harness.backend,
                                                          *harness.templates, harness.settings);
            outcome.success =
                outcome.update.drunk && outcome.update.resulting_memory.find(trigger) != std::string::npos;
            ++composition.trials;
            composition.successes += outcome.success ? 1 : 0;
        } catch (const llm::TransportError&) {
            outcome.excluded = true;
            ++composition.excluded_trials;
        }
        if (outcomes != nullptr)
            outcomes->push_back(std::move(outcome));
    }
    composition.success_rate =
        composition.trials == 0 ? 0.0 : static_cast<double>(composition.successes) / composition.trials;
    return composition;
}

json OptimizationResult::to_json() const
{
    auto tried = json::array();
    for (const auto& c : evaluated)
        tried.push_back({{"ordering", ordering_code(c.ordering)},
                         {"success_rate", c.success_rate},
                         {"trials", c.trials},
                         {"excluded_trials", c.excluded_trials}});
    auto j = best.to_json();
    j["evaluated"] = tried;
    j["early_stopped"] = early_stopped;
    j["no_successful_ordering"] = no_successful_ordering;
    return j;
}

OptimizationResult optimize_strategy(const std::string& trigger, const TrialHarness& harness,
                                     const SnippetLibrary& library, const OptimizerSettings& settings)
{
    if (text::trim(trigger).empty())
        throw PreconditionError("trigger must be non-empty");
    const auto payload = settings.payload.empty() ? library.default_payload() : settings.payload;
    const auto orderings = all_orderings();
    const std::size_t batch = std::max<std::size_t>(1, settings.concurrency);

    OptimizationResult result;
    for (std::size_t start = 0; start < orderings.size() && !result.early_stopped; start += batch) {
        const std::size_t count = std::min(batch, orderings.size() - start);
        std::vector<StrategyComposition> tried(count);
        parallel_for(count, count, [&](std::size_t k) {
            tried[k] = trial_drunk(render_strategy(orderings[start + k], payload, library), trigger, harness,
                                   settings.trials_per_ordering);
        });
        for (auto& c : tried) {
            result.evaluated.push_back(std::move(c));
            if (settings.early_stop && result.evaluated.back().success_rate >= 1.0) {
                result.early_stopped = true;
                break;
            }
        }
    }
    // Enumeration starts at the canonical ordering, so the first maximum
    // already honours the tie rule.
    const auto* best = &result.evaluated.front();
    for (const auto& c : result.evaluated) {
        if (c.success_rate > best->success_rate)
            best = &c;
    }
    result.best = *best;
    result.no_successful_ordering = best->success_rate <= 0.0;
    return result;
}

std::string finalize_description(const std::string& trigger, const StrategyComposition& strategy)
{
    if (text::trim(trigger).empty())
        throw PreconditionError("trigger must be non-empty");
    if (text::trim(strategy.rendered).empty())
        throw PreconditionError("strategy must be non-empty");
    return trigger + "\n" + strategy.rendered;
}

std::pair<std::string, std::string> split_description(const std::string& description,
                                                      const StrategyComposition& strategy)
{
    const auto marker = "\n" + strategy.rendered;
    auto pos = description.rfind(marker);
    if (pos == std::string::npos || pos + marker.size() != description.size())
        throw PreconditionError("description does not end with the given strategy block");
    return {description.substr(0, pos), strategy.rendered};
}

} // namespace memcorrupt::strategy
