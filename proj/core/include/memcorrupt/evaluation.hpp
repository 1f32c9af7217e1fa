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
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace memcorrupt::eval {

class EmptyEvaluation : public Error {
public:
    using Error::Error;
};

inline constexpr int kReportSchemaVersion = 1;

/// user -> 1-based rank, or nullopt when the user's output could not be parsed.
using RankMap = std::map<std::string, std::optional<std::size_t>>;

struct ExposureReport {
    RankMap per_user_rank;
    std::vector<int> k_set;
    std::map<int, double> hr;
    std::map<int, double> ndcg;
    std::size_t num_users = 0;
    std::size_t dropped = 0;

    nlohmann::json to_json() const;
    static ExposureReport from_json(const nlohmann::json& j);
};

/// Gain of a single relevant item at `rank`: 1 / log2(rank + 1).
double ndcg_gain(std::size_t rank);

/// HR@K and single-item NDCG@K over the parsed users. Dropped users count in
/// neither numerator nor denominator. Throws EmptyEvaluation when nothing
/// remains.
ExposureReport exposure_metrics(const RankMap& ranks, const std::vector<int>& k_set = {1, 2, 3});
ExposureReport exposure_metrics(const std::vector<std::size_t>& ranks, const std::vector<int>& k_set = {1, 2, 3});

struct StealthReport {
    double benign_overall_hr3 = 0.0;
    double attacked_overall_hr3 = 0.0;
    double delta = 0.0;
    double trigger_perplexity = 0.0;
    double baseline_perplexity = 0.0;

    static StealthReport make(double benign_hr3, double attacked_hr3, double trigger_ppl, double baseline_ppl);
    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Reference attack and defense

/// Appends the positive phrase ("amazing !!!" for {"amazing"}) on a new line.
std::string trivial_insertion(const std::string& description, const std::vector<std::string>& positive_words = {"amazing"});

struct DefenseOutcome {
    std::string text;
    bool applied = false;
};

/// Auxiliary paraphrase of a description; a transport failure returns the
/// original text with `applied == false`.
DefenseOutcome paraphrase_defense(const std::string& description, llm::Backend& aux, const TemplateStore& templates,
                                  const std::string& item_noun = "CD");

// ---------------------------------------------------------------------------
// Candidate sets

enum class Placement { shuffled, first, last };

std::string_view to_string(Placement placement);
Placement parse_placement(std::string_view name);

/// `positive` plus `negatives` items drawn without replacement from
/// `universe` minus `exclude`, skipping duplicate titles.
std::vector<ItemId> candidate_set(const ItemId& positive, const std::vector<ItemId>& universe,
                                  const std::set<ItemId>& exclude, const std::map<ItemId, std::string>& titles,
                                  std::size_t negatives, Placement placement, std::mt19937_64& rng);

/// Generator for one user's candidate draw, independent of evaluation order.
std::mt19937_64 user_rng(std::uint64_t seed, std::string_view user, std::string_view purpose);

// ---------------------------------------------------------------------------
// Simulation of one experimental condition

struct EvalSettings {
    agents::Flavor flavor = agents::Flavor::cf;
    std::vector<int> k_set{1, 2, 3};
    std::size_t negatives = 9;
    Placement placement = Placement::shuffled;
    std::uint64_t seed = 2024;
    agents::UpdateSettings update;
    agents::RecommenderSettings recommender;
    /// Memory-update rounds to simulate; nullopt runs the whole train split.
    std::optional<int> max_timesteps;
    std::size_t concurrency = 0;
};

struct ConditionInputs {
    const corpus::InteractionMatrix* matrix = nullptr;
    const corpus::DatasetSplit* split = nullptr;
    const corpus::ItemCatalog* catalog = nullptr;
    ItemId target;
    /// Description injected as the target's memory before the first update.
    std::optional<std::string> target_description;
};

struct ConditionHooks {
    /// timestep_<k>.json after every simulated round; empty disables.
    std::filesystem::path checkpoint_dir;
    bool resume = false;
};

struct ConditionResult {
    ExposureReport exposure;
    ExposureReport overall;
    int timesteps = 0;
    std::size_t target_updates = 0;
    std::size_t target_drunk = 0;
    std::string target_final_memory;
    std::vector<nlohmann::json> traces;

    nlohmann::json to_json() const;
};

ConditionResult run_condition(const ConditionInputs& inputs, llm::Backend& victim, const TemplateStore& templates,
                              const EvalSettings& settings, const ConditionHooks& hooks = {});

// ---------------------------------------------------------------------------
// Reports

struct ArmReport {
    std::string attack;
    ExposureReport exposure;
};

struct RunReport {
    std::string dataset;
    std::string victim;
    std::vector<ArmReport> arms;
    std::optional<StealthReport> stealth;
    /// Per-run extras (overall per-user ranks, defense notes, ...).
    nlohmann::json details = nlohmann::json::object();

    nlohmann::json to_json() const;
};

struct ReportRow {
    std::string attack;
    std::string victim;
    std::string dataset;
    int k = 0;
    double hr = 0.0;
    double ndcg = 0.0;
    std::size_t users = 0;
    std::size_t dropped = 0;
};

inline constexpr std::string_view kCsvHeader = "attack,victim,dataset,K,hr,ndcg,users,dropped";

std::vector<ReportRow> report_rows(const RunReport& report);
std::string render_csv(const RunReport& report);
std::vector<ReportRow> parse_csv(const std::string& csv);

struct ReportFiles {
    std::filesystem::path csv;
    std::filesystem::path json;
};

/// Writes report.csv and report.json into `directory`.
ReportFiles emit_report(const RunReport& report, const std::filesystem::path& directory);

/// Structural check of a report JSON document; returns problems found.
std::vector<std::string> validate_report_json(const nlohmann::json& j);

} // namespace memcorrupt::eval
