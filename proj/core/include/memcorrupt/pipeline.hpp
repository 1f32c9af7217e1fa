// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/agents.hpp"
#include "memcorrupt/corpus.hpp"
#include "memcorrupt/error.hpp"
#include "memcorrupt/evaluation.hpp"
#include "memcorrupt/gateway.hpp"
#include "memcorrupt/trigger_search.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace memcorrupt::pipeline {

class ConfigError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class EvaluationFailure : public Error {
public:
    using Error::Error;
};

std::string_view library_version();

/// Replaces `${NAME}` in every string of the document with the environment
/// value. Unset variables throw ConfigError.
nlohmann::json interpolate_env(const nlohmann::json& document);

struct DatasetConfig {
    std::filesystem::path path;
    corpus::DatasetFormat format = corpus::DatasetFormat::amazon_jsonl;
    std::optional<std::filesystem::path> metadata;
    std::string name;
    /// Users sampled after ingestion; 0 keeps everyone.
    std::size_t subset_users = 0;
    std::size_t min_profile = 2;
};

struct EvaluationConfig {
    std::vector<int> k_set{1, 2, 3};
    std::size_t negatives = 9;
    eval::Placement placement = eval::Placement::shuffled;
    std::optional<int> max_timesteps;
    bool trivial_insertion = false;
    bool paraphrase_defense = false;
    std::vector<std::string> positive_words{"amazing"};
};

struct RunConfig {
    DatasetConfig dataset;
    agents::Flavor victim = agents::Flavor::cf;
    llm::BackendConfig victim_backend{llm::BackendRole::victim};
    llm::BackendConfig surrogate_backend{llm::BackendRole::surrogate};
    llm::BackendConfig auxiliary_backend{llm::BackendRole::auxiliary};
    /// Scores perplexity; defaults to the surrogate.
    std::optional<llm::BackendConfig> perplexity_backend;
    search::SearchConfig search;
    std::vector<std::string> probe_user_memories;
    int strategy_trials = 5;
    int max_rounds = 2;
    bool strategy_early_stop = true;
    EvaluationConfig evaluation;
    std::optional<std::string> target_item;
    /// Leaves the target description unchanged (stealth baseline).
    bool noop_attack = false;
    std::string item_noun = "CD";
    std::uint64_t seed = 2024;
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> template_dir;
    std::size_t concurrency = 0;

    /// The interpolated document the run was built from.
    nlohmann::json document;
    std::filesystem::path base_dir;

    /// Relative paths resolve against `base_dir`.
    static RunConfig from_json(const nlohmann::json& document, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    /// Seed for every RNG consumer, backends included.
    void set_seed(std::uint64_t seed);
    /// Routes all backends to the offline mock with the shipped rule tables
    /// unless a table is configured.
    void force_mock();

    /// sha256 of the canonical document plus overrides.
    std::string hash() const;
    void validate() const;

private:
    bool forced_mock_ = false;
};

struct StageRecord {
    std::string status = "pending";
    double wall_seconds = 0.0;
    std::vector<std::string> outputs;
    std::string error;
};

struct RunManifest {
    std::string config_hash;
    std::string version;
    std::map<std::string, StageRecord> stages;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

inline const std::vector<std::string> kStages = {"ingest", "attack", "evaluate", "report"};

struct RunOptions {
    bool resume = false;
    /// Stops the attack stage after this search epoch's checkpoint.
    std::optional<int> halt_after_epoch;
};

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& directory);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

class Pipeline {
public:
    Pipeline(RunConfig config, RunOptions options = {});
    ~Pipeline();

    void ingest();
    void attack();
    void evaluate();
    void report();
    void all();

    const RunConfig& config() const noexcept { return config_; }
    const RunManifest& manifest() const noexcept { return manifest_; }
    std::filesystem::path path(std::string_view relative) const;

private:
    template <typename Fn>
    void run_stage(const std::string& name, Fn&& body);
    void write_manifest();
    llm::Backend& backend(llm::BackendRole role);
    llm::Backend& perplexity_backend();

    RunConfig config_;
    RunOptions options_;
    std::unique_ptr<RunLock> lock_;
    std::unique_ptr<TemplateStore> templates_;
    RunManifest manifest_;
    std::map<std::string, llm::BackendPtr> backends_;
};

enum ExitCode : int {
    kExitOk = 0,
    kExitInterrupted = 1,
    kExitConfig = 2,
    kExitBackend = 3,
    kExitEvaluation = 4,
};

/// Maps an exception escaping a stage onto the CLI exit code.
int exit_code_for(const std::exception& error);

} // namespace memcorrupt::pipeline
