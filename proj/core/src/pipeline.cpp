// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/pipeline.hpp"

#include "memcorrupt/io.hpp"
#include "memcorrupt/strategy.hpp"
#include "memcorrupt/text.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>

#include <fcntl.h>
#include <unistd.h>

namespace memcorrupt::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

#ifndef MEMCORRUPT_VERSION
#define MEMCORRUPT_VERSION "0.0.0"
#endif

std::string_view library_version()
{
    return MEMCORRUPT_VERSION;
}

// ---------------------------------------------------------------------------
// Configuration

json interpolate_env(const json& document)
{
    if (document.is_string()) {
        const auto& s = document.get_ref<const std::string&>();
        std::string out;
        std::size_t i = 0;
        while (i < s.size()) {
            if (s.compare(i, 2, "${") == 0) {
                auto close = s.find('}', i + 2);
                if (close == std::string::npos)
                    throw ConfigError("unterminated ${ in configuration value: " + s);
                auto name = s.substr(i + 2, close - i - 2);
                const char* value = std::getenv(name.c_str());
                if (value == nullptr)
                    throw ConfigError("environment variable " + name + " is not set");
                out += value;
                i = close + 1;
            } else {
                out.push_back(s[i++]);
            }
        }
        return out;
    }
    if (document.is_object()) {
        json out = json::object();
        for (const auto& [k, v] : document.items())
            out[k] = interpolate_env(v);
        return out;
    }
    if (document.is_array()) {
        json out = json::array();
        for (const auto& v : document)
            out.push_back(interpolate_env(v));
        return out;
    }
    return document;
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback)
{
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null())
        return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("configuration field '") + key + "': " + e.what());
    }
}

fs::path resolve(const fs::path& base, const fs::path& p)
{
    return p.is_absolute() ? p : base / p;
}

void read_backend(const json& j, llm::BackendConfig& cfg)
{
    if (j.is_null())
        return;
    if (!j.is_object())
        throw ConfigError("backend configuration must be an object");
    cfg.endpoint = get_or<std::string>(j, "endpoint", cfg.endpoint);
    cfg.model_name = get_or<std::string>(j, "model", cfg.model_name);
    cfg.temperature = get_or<double>(j, "temperature", cfg.temperature);
    cfg.max_tokens = get_or<int>(j, "max_tokens", cfg.max_tokens);
    cfg.request_timeout = std::chrono::milliseconds(get_or<long>(j, "timeout_ms", cfg.request_timeout.count()));
    cfg.retry_limit = get_or<int>(j, "retry_limit", cfg.retry_limit);
    cfg.context_window = get_or<std::size_t>(j, "context_window", cfg.context_window);
    cfg.chat_only = get_or<bool>(j, "chat_only", cfg.chat_only);
    cfg.api_key = get_or<std::string>(j, "api_key", cfg.api_key);
    if (j.contains("log") && !j.at("log").is_null())
        cfg.log_path = j.at("log").get<std::string>();
    if (j.contains("mock"))
        cfg.mock = j.at("mock");
}

} // namespace

namespace {

RunConfig parse_run_config(const json& raw, const fs::path& base_dir);

} // namespace

RunConfig RunConfig::from_json(const json& raw, const fs::path& base_dir)
{
    try {
        return parse_run_config(raw, base_dir);
    } catch (const ConfigError&) {
        throw;
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
    }
}

namespace {

RunConfig parse_run_config(const json& raw, const fs::path& base_dir)
{
    if (!raw.is_object())
        throw ConfigError("configuration must be a JSON object");
    RunConfig c;
    c.document = interpolate_env(raw);
    c.base_dir = base_dir;
    const auto& d = c.document;

    try {
        const auto& ds = d.at("dataset");
        c.dataset.path = resolve(base_dir, ds.at("path").get<std::string>());
        c.dataset.format = corpus::parse_dataset_format(get_or<std::string>(ds, "format", "amazon-jsonl"));
        if (ds.contains("metadata") && !ds.at("metadata").is_null())
            c.dataset.metadata = resolve(base_dir, ds.at("metadata").get<std::string>());
        c.dataset.name = get_or<std::string>(ds, "name", c.dataset.path.stem().string());
        c.dataset.subset_users = get_or<std::size_t>(ds, "subset_users", 0);
        c.dataset.min_profile = get_or<std::size_t>(ds, "min_profile", 2);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset section: ") + e.what());
    }

    c.victim = agents::parse_flavor(get_or<std::string>(d, "victim", "cf"));
    const auto backends = get_or<json>(d, "backends", json::object());
    read_backend(get_or<json>(backends, "victim", nullptr), c.victim_backend);
    read_backend(get_or<json>(backends, "surrogate", nullptr), c.surrogate_backend);
    read_backend(get_or<json>(backends, "auxiliary", nullptr), c.auxiliary_backend);
    if (backends.contains("perplexity") && !backends.at("perplexity").is_null()) {
        c.perplexity_backend.emplace(llm::BackendRole::surrogate);
        read_backend(backends.at("perplexity"), *c.perplexity_backend);
    }

    const auto s = get_or<json>(d, "search", json::object());
    c.search.epochs = get_or<int>(s, "epochs", 20);
    c.search.pool_size = get_or<std::size_t>(s, "pool_size", 10);
    c.search.elite_count = get_or<std::size_t>(s, "elites", 5);
    c.search.length_limit_words = get_or<std::size_t>(s, "length_limit", 60);
    c.search.convergence_patience = get_or<int>(s, "patience", 3);
    c.probe_user_memories = get_or<std::vector<std::string>>(s, "probe_user_memories", {});

    const auto st = get_or<json>(d, "strategy", json::object());
    c.strategy_trials = get_or<int>(st, "trials", 5);
    c.max_rounds = get_or<int>(st, "max_rounds", 2);
    c.strategy_early_stop = get_or<bool>(st, "early_stop", true);

    const auto ev = get_or<json>(d, "evaluation", json::object());
    c.evaluation.k_set = get_or<std::vector<int>>(ev, "k", {1, 2, 3});
    c.evaluation.negatives = get_or<std::size_t>(ev, "negatives", 9);
    c.evaluation.placement = eval::parse_placement(get_or<std::string>(ev, "placement", "shuffled"));
    if (ev.contains("max_timesteps") && !ev.at("max_timesteps").is_null())
        c.evaluation.max_timesteps = ev.at("max_timesteps").get<int>();
    c.evaluation.trivial_insertion = get_or<bool>(ev, "trivial_insertion", false);
    c.evaluation.paraphrase_defense = get_or<bool>(ev, "paraphrase_defense", false);
    c.evaluation.positive_words = get_or<std::vector<std::string>>(ev, "positive_words", {"amazing"});

    if (d.contains("target_item") && !d.at("target_item").is_null())
        c.target_item = d.at("target_item").get<std::string>();
    c.noop_attack = get_or<bool>(d, "noop_attack", false);
    c.item_noun = get_or<std::string>(d, "item_noun", "CD");
    c.output_dir = resolve(base_dir, get_or<std::string>(d, "output_dir", "run"));
    if (d.contains("template_dir") && !d.at("template_dir").is_null())
        c.template_dir = resolve(base_dir, d.at("template_dir").get<std::string>());
    c.concurrency = get_or<std::size_t>(d, "concurrency", 0);
    c.set_seed(get_or<std::uint64_t>(d, "seed", 2024));
    return c;
}

} // namespace

RunConfig RunConfig::load(const fs::path& path)
{
    if (!fs::is_regular_file(path))
        throw ConfigError("configuration file not found: " + path.string());
    json raw;
    try {
        raw = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("configuration is not valid JSON: " + std::string(e.what()));
    }
    auto base = fs::absolute(path).parent_path();
    return from_json(raw, base);
}

void RunConfig::set_seed(std::uint64_t value)
{
    seed = value;
    search.rng_seed = value;
    victim_backend.seed = value;
    surrogate_backend.seed = value;
    auxiliary_backend.seed = value;
    if (perplexity_backend)
        perplexity_backend->seed = value;
}

void RunConfig::force_mock()
{
    forced_mock_ = true;
    for (auto* b : {&victim_backend, &surrogate_backend, &auxiliary_backend}) {
        if (!b->is_mock()) {
            b->endpoint = "mock";
            b->mock = json::object();
        }
    }
    if (perplexity_backend && !perplexity_backend->is_mock()) {
        perplexity_backend->endpoint = "mock";
        perplexity_backend->mock = json::object();
    }
}

std::string RunConfig::hash() const
{
    json effective = document;
    effective["__effective"] = {{"seed", seed}, {"victim", agents::to_string(victim)}, {"forced_mock", forced_mock_}};
    return text::sha256_hex(effective.dump());
}

void RunConfig::validate() const
{
    try {
        victim_backend.validate();
        surrogate_backend.validate();
        auxiliary_backend.validate();
        if (perplexity_backend)
            perplexity_backend->validate();
        if (strategy_trials < 1 || max_rounds < 1)
            throw ConfigError("strategy trials and max_rounds must be at least 1");
        if (evaluation.k_set.empty())
            throw ConfigError("evaluation K set must not be empty");
        for (int k : evaluation.k_set) {
            if (k < 1 || static_cast<std::size_t>(k) > evaluation.negatives + 1)
                throw ConfigError("K must lie in [1, candidate count]");
        }
        if (evaluation.positive_words.empty())
            throw ConfigError("positive_words must not be empty");
        auto s = search;
        s.target_output = search::target_output_for("x", item_noun);
        s.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifest and lock

json RunManifest::to_json() const
{
    json stages_j = json::object();
    for (const auto& [name, s] : stages)
        stages_j[name] = {{"status", s.status}, {"wall_seconds", s.wall_seconds}, {"outputs", s.outputs},
                          {"error", s.error}};
    return {{"config_hash", config_hash}, {"version", version}, {"stages", stages_j}};
}

RunManifest RunManifest::from_json(const json& j)
{
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.version = j.at("version").get<std::string>();
    for (const auto& [name, s] : j.at("stages").items()) {
        StageRecord r;
        r.status = s.at("status").get<std::string>();
        r.wall_seconds = s.at("wall_seconds").get<double>();
        r.outputs = s.at("outputs").get<std::vector<std::string>>();
        r.error = s.value("error", std::string());
        m.stages[name] = r;
    }
    return m;
}

RunLock::RunLock(const fs::path& directory) : path_(directory / ".lock")
{
    fs::create_directories(directory);
    int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd < 0)
        throw ConfigError("run directory is locked by another process: " + path_.string());
    auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock()
{
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

json load_mock_table(const json& def, const llm::BackendConfig& cfg, const fs::path& base_dir,
                     const TemplateStore& templates)
{
    if (def.is_object() && !def.empty())
        return def;
    fs::path file;
    if (def.is_string()) {
        file = def.get<std::string>();
    } else {
        auto role = llm::to_string(cfg.role());
        file = fs::path("mock") / (std::string(role) + ".json");
    }
    for (const auto& candidate : {resolve(base_dir, file), templates.directory() / file}) {
        if (fs::is_regular_file(candidate))
            return io::read_json(candidate);
    }
    throw ConfigError("mock rule table not found: " + file.string());
}

std::vector<fs::path> files_under(const fs::path& dir)
{
    std::vector<fs::path> out;
    if (!fs::is_directory(dir))
        return out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file())
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct LoadedCorpus {
    corpus::InteractionMatrix matrix;
    corpus::ItemCatalog catalog;
};

} // namespace

Pipeline::Pipeline(RunConfig config, RunOptions options) : config_(std::move(config)), options_(options)
{
    config_.validate();
    templates_ = std::make_unique<TemplateStore>(config_.template_dir.value_or(TemplateStore::default_directory()));
    for (auto* b : {&config_.victim_backend, &config_.surrogate_backend, &config_.auxiliary_backend}) {
        if (b->is_mock())
            b->mock = load_mock_table(b->mock, *b, config_.base_dir, *templates_);
    }
    if (config_.perplexity_backend && config_.perplexity_backend->is_mock())
        config_.perplexity_backend->mock =
            load_mock_table(config_.perplexity_backend->mock, config_.surrogate_backend, config_.base_dir, *templates_);

    lock_ = std::make_unique<RunLock>(config_.output_dir);

    const auto manifest_path = path("manifest.json");
    if (options_.resume && fs::is_regular_file(manifest_path)) {
        manifest_ = RunManifest::from_json(io::read_json(manifest_path));
        if (manifest_.config_hash != config_.hash())
            throw ConfigError("cannot resume: configuration differs from the recorded run");
    } else {
        manifest_.config_hash = config_.hash();
        manifest_.version = std::string(library_version());
        for (const auto& s : kStages)
            manifest_.stages[s] = StageRecord{};
    }
    write_manifest();
}

Pipeline::~Pipeline() = default;

fs::path Pipeline::path(std::string_view relative) const
{
    return config_.output_dir / fs::path(std::string(relative));
}

void Pipeline::write_manifest()
{
    io::write_json_atomic(path("manifest.json"), manifest_.to_json());
}

llm::Backend& Pipeline::backend(llm::BackendRole role)
{
    auto key = std::string(llm::to_string(role));
    auto it = backends_.find(key);
    if (it != backends_.end())
        return *it->second;
    const auto& cfg = role == llm::BackendRole::victim      ? config_.victim_backend
                      : role == llm::BackendRole::surrogate ? config_.surrogate_backend
                                                            : config_.auxiliary_backend;
    return *backends_.emplace(key, llm::make_backend(cfg)).first->second;
}

llm::Backend& Pipeline::perplexity_backend()
{
    if (!config_.perplexity_backend)
        return backend(llm::BackendRole::surrogate);
    auto it = backends_.find("perplexity");
    if (it == backends_.end())
        it = backends_.emplace("perplexity", llm::make_backend(*config_.perplexity_backend)).first;
    return *it->second;
}

template <typename Fn>
void Pipeline::run_stage(const std::string& name, Fn&& body)
{
    auto& record = manifest_.stages[name];
    if (options_.resume && record.status == "complete")
        return;
    const auto stage_dir = path(name);
    if (!options_.resume && fs::exists(stage_dir))
        fs::remove_all(stage_dir);
    fs::create_directories(stage_dir);

    record.status = "running";
    record.error.clear();
    write_manifest();
    const auto start = std::chrono::steady_clock::now();
    try {
        body(stage_dir);
    } catch (const search::SearchInterrupted& e) {
        record.status = "interrupted";
        record.error = e.what();
        record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_manifest();
        throw;
    } catch (const std::exception& e) {
        record.status = "failed";
        record.error = e.what();
        record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_manifest();
        throw;
    }
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    record.outputs.clear();
    for (const auto& f : files_under(stage_dir))
        record.outputs.push_back(fs::relative(f, config_.output_dir).generic_string());
    record.status = "complete";
    write_manifest();
}

namespace {

LoadedCorpus load_snapshot(const fs::path& output_dir)
{
    auto interactions = output_dir / "ingest" / "interactions.jsonl";
    auto items = output_dir / "ingest" / "items.jsonl";
    if (!fs::is_regular_file(interactions) || !fs::is_regular_file(items))
        throw PreconditionError("corpus snapshot missing in " + (output_dir / "ingest").string() +
                                "; run the ingest stage first");
    auto loaded = corpus::ingest(interactions, corpus::DatasetFormat::amazon_jsonl, items);
    return {std::move(loaded.matrix), std::move(loaded.items)};
}

ItemId choose_target(const RunConfig& config, const corpus::InteractionMatrix& matrix,
                     const corpus::DatasetSplit& split, const corpus::ItemCatalog& catalog)
{
    if (config.target_item) {
        ItemId id(*config.target_item);
        if (!matrix.items().count(id) || !catalog.count(id))
            throw ConfigError("target item " + *config.target_item + " is not in the corpus");
        return id;
    }
    std::set<ItemId> trained;
    for (const auto& r : split.train)
        trained.insert(r.item);
    std::vector<ItemId> eligible;
    for (const auto& id : trained) {
        if (catalog.count(id))
            eligible.push_back(id);
    }
    if (eligible.empty())
        throw PreconditionError("no item with train interactions and metadata to target");
    auto rng = eval::user_rng(config.seed, "target", "choice");
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    return eligible[pick(rng)];
}

} // namespace

void Pipeline::ingest()
{
    run_stage("ingest", [&](const fs::path& dir) {
        if (!fs::is_regular_file(config_.dataset.path))
            throw corpus::FileNotFound("dataset file not found: " + config_.dataset.path.string());
        auto loaded = corpus::ingest(config_.dataset.path, config_.dataset.format, config_.dataset.metadata);
        auto matrix = std::move(loaded.matrix);
        if (config_.dataset.subset_users > 0)
            matrix = corpus::sample_subset(matrix, config_.dataset.subset_users, config_.seed);
        corpus::ItemCatalog items;
        for (const auto& id : matrix.items()) {
            auto it = loaded.items.find(id);
            if (it == loaded.items.end())
                throw agents::MissingMetadata("no metadata for item " + id.str());
            items.emplace(id, it->second);
        }
        corpus::write_snapshot(matrix, dir / "interactions.jsonl");
        corpus::write_metadata(items, dir / "items.jsonl");
        auto stats = corpus::compute_stats(matrix).to_json();
        stats["dataset"] = config_.dataset.name;
        io::write_json_atomic(dir / "stats.json", stats);
        io::write_json_atomic(dir / "ingest_report.json", loaded.report.to_json());
    });
}

void Pipeline::attack()
{
    run_stage("attack", [&](const fs::path& dir) {
        auto corpus_data = load_snapshot(config_.output_dir);
        auto split = corpus::leave_one_out(corpus_data.matrix, config_.dataset.min_profile);
        auto target = choose_target(config_, corpus_data.matrix, split, corpus_data.catalog);
        const auto& target_meta = corpus_data.catalog.at(target);
        agents::PromptVocabulary vocabulary{config_.item_noun};
        const auto benign_memory = agents::render_item_memory(target_meta, *templates_, vocabulary);

        json artifact = {{"target_item", target.str()},
                         {"target_title", target_meta.title},
                         {"benign_memory", benign_memory},
                         {"noop", config_.noop_attack}};
        if (config_.noop_attack) {
            artifact["trigger"] = benign_memory;
            artifact["strategy"] = nullptr;
            artifact["adversarial_description"] = benign_memory;
            io::write_json_atomic(dir / "artifact.json", artifact);
            return;
        }

        auto& aux = backend(llm::BackendRole::auxiliary);
        auto& surrogate = backend(llm::BackendRole::surrogate);

        search::AdversarialContext context;
        const auto context_path = dir / "context.json";
        if (options_.resume && fs::is_regular_file(context_path)) {
            context = search::AdversarialContext::from_json(io::read_json(context_path));
        } else {
            search::ContextInputs inputs;
            for (const auto& id : corpus::popularity_ranking(corpus_data.matrix)) {
                if (auto it = corpus_data.catalog.find(id); it != corpus_data.catalog.end())
                    inputs.popular_items.push_back(it->second);
            }
            inputs.target = target_meta;
            inputs.length_limit_words = config_.search.length_limit_words;
            inputs.vocabulary = vocabulary;
            inputs.probe_user_memories = config_.probe_user_memories;
            context = search::build_context(inputs, aux, *templates_);
            io::write_json_atomic(context_path, context.to_json());
        }

        auto search_config = config_.search;
        search_config.target_output = search::target_output_for(target_meta.title, config_.item_noun);
        search_config.concurrency = config_.concurrency;

        search::SearchHooks hooks;
        hooks.checkpoint_dir = dir / "checkpoints";
        if (options_.resume)
            hooks.resume_from = search::latest_checkpoint(hooks.checkpoint_dir);
        if (options_.halt_after_epoch) {
            const int halt = *options_.halt_after_epoch;
            hooks.on_checkpoint = [halt](const search::SearchCheckpoint& cp) {
                if (!cp.finished && cp.completed_epoch >= halt)
                    throw search::SearchInterrupted("search halted after epoch " + std::to_string(cp.completed_epoch));
            };
        }
        auto result = search::run_search(context, search_config, surrogate, aux, *templates_, hooks);
        auto search_json = result.to_json();
        search_json["config"] = search_config.to_json();
        io::write_json_atomic(dir / "search.json", search_json);

        strategy::SnippetLibrary library(*templates_);
        strategy::TrialHarness harness;
        harness.backend = &surrogate;
        harness.templates = templates_.get();
        harness.settings.max_rounds = config_.max_rounds;
        harness.settings.vocabulary = vocabulary;
        harness.simulated_users = strategy::TrialHarness::load_simulated_users(*templates_);
        harness.item_title = target_meta.title;
        strategy::OptimizerSettings optimizer;
        optimizer.trials_per_ordering = config_.strategy_trials;
        optimizer.early_stop = config_.strategy_early_stop;
        auto optimized = strategy::optimize_strategy(result.best.text, harness, library, optimizer);
        io::write_json_atomic(dir / "strategy.json", optimized.to_json());

        artifact["trigger"] = result.best.text;
        artifact["strategy"] = optimized.best.to_json();
        artifact["no_successful_ordering"] = optimized.no_successful_ordering;
        artifact["adversarial_description"] = strategy::finalize_description(result.best.text, optimized.best);
        io::write_json_atomic(dir / "artifact.json", artifact);
    });
}

void Pipeline::evaluate()
{
    run_stage("evaluate", [&](const fs::path& dir) {
        const auto artifact_path = path("attack/artifact.json");
        if (!fs::is_regular_file(artifact_path))
            throw PreconditionError("attack artifact missing; run the attack stage first");
        const auto artifact = io::read_json(artifact_path);
        auto corpus_data = load_snapshot(config_.output_dir);
        auto split = corpus::leave_one_out(corpus_data.matrix, config_.dataset.min_profile);
        const ItemId target(artifact.at("target_item").get<std::string>());
        const auto adversarial = artifact.at("adversarial_description").get<std::string>();
        const auto benign_memory = artifact.at("benign_memory").get<std::string>();

        eval::EvalSettings settings;
        settings.flavor = config_.victim;
        settings.k_set = config_.evaluation.k_set;
        settings.negatives = config_.evaluation.negatives;
        settings.placement = config_.evaluation.placement;
        settings.seed = config_.seed;
        settings.update.max_rounds = config_.max_rounds;
        settings.update.vocabulary = {config_.item_noun};
        settings.recommender.vocabulary = {config_.item_noun};
        settings.recommender.candidate_count = config_.evaluation.negatives + 1;
        settings.max_timesteps = config_.evaluation.max_timesteps;
        settings.concurrency = config_.concurrency;

        auto& victim = backend(llm::BackendRole::victim);
        eval::ConditionInputs inputs{&corpus_data.matrix, &split, &corpus_data.catalog, target, std::nullopt};

        std::vector<std::pair<std::string, std::optional<std::string>>> arms{{"benign", std::nullopt},
                                                                            {"attacked", adversarial}};
        json notes = json::object();
        if (config_.evaluation.trivial_insertion)
            arms.emplace_back("trivial_insertion",
                              eval::trivial_insertion(benign_memory, config_.evaluation.positive_words));
        if (config_.evaluation.paraphrase_defense) {
            auto defended = eval::paraphrase_defense(adversarial, backend(llm::BackendRole::auxiliary), *templates_,
                                                     config_.item_noun);
            notes["paraphrase_defense"] = {{"applied", defended.applied},
                                           {"original", adversarial},
                                           {"paraphrased", defended.text}};
            arms.emplace_back("paraphrase_defense", defended.text);
        }

        json arms_json = json::object();
        std::map<std::string, eval::ConditionResult> results;
        for (const auto& [name, description] : arms) {
            inputs.target_description = description;
            eval::ConditionHooks hooks{dir / name / "checkpoints", options_.resume};
            auto result = eval::run_condition(inputs, victim, *templates_, settings, hooks);
            std::string traces;
            for (const auto& t : result.traces)
                traces += t.dump() + "\n";
            io::write_file_atomic(dir / name / "traces.jsonl", traces);
            arms_json[name] = result.to_json();
            results.emplace(name, std::move(result));
        }

        auto ppl = [&](const std::string& t) {
            try {
                return llm::perplexity(perplexity_backend(), t);
            } catch (const llm::LogprobsUnsupported&) {
                return std::nan("");
            }
        };
        const auto stealth = eval::StealthReport::make(results.at("benign").overall.hr.at(3),
                                                       results.at("attacked").overall.hr.at(3),
                                                       ppl(artifact.at("trigger").get<std::string>()),
                                                       ppl(benign_memory));
        json evaluation = {{"schema_version", eval::kReportSchemaVersion},
                           {"dataset", config_.dataset.name},
                           {"victim", agents::to_string(config_.victim)},
                           {"target_item", target.str()},
                           {"arms", arms_json},
                           {"stealth", stealth.to_json()},
                           {"notes", notes}};
        io::write_json_atomic(dir / "evaluation.json", evaluation);
    });
}

void Pipeline::report()
{
    run_stage("report", [&](const fs::path& dir) {
        const auto evaluation_path = path("evaluate/evaluation.json");
        if (!fs::is_regular_file(evaluation_path))
            throw PreconditionError("evaluation results missing; run the evaluate stage first");
        const auto evaluation = io::read_json(evaluation_path);
        eval::RunReport report;
        report.dataset = evaluation.at("dataset").get<std::string>();
        report.victim = evaluation.at("victim").get<std::string>();
        json overall = json::object();
        for (const auto& [name, arm] : evaluation.at("arms").items()) {
            report.arms.push_back({name, eval::ExposureReport::from_json(arm.at("exposure"))});
            overall[name] = arm.at("overall");
        }
        const auto& s = evaluation.at("stealth");
        auto number = [](const json& v) { return v.is_number() ? v.get<double>() : std::nan(""); };
        report.stealth = eval::StealthReport{number(s.at("benign_overall_hr3")), number(s.at("attacked_overall_hr3")),
                                             number(s.at("delta")), number(s.at("trigger_perplexity")),
                                             number(s.at("baseline_perplexity"))};
        report.details = {{"target_item", evaluation.at("target_item")},
                          {"overall_performance", overall},
                          {"notes", evaluation.at("notes")}};
        eval::emit_report(report, dir);
    });
}

void Pipeline::all()
{
    ingest();
    attack();
    evaluate();
    report();
}

int exit_code_for(const std::exception& error)
{
    if (dynamic_cast<const search::SearchInterrupted*>(&error) != nullptr)
        return kExitInterrupted;
    if (dynamic_cast<const llm::GatewayError*>(&error) != nullptr)
        return kExitBackend;
    if (dynamic_cast<const eval::EmptyEvaluation*>(&error) != nullptr ||
        dynamic_cast<const EvaluationFailure*>(&error) != nullptr ||
        dynamic_cast<const agents::ParseFailure*>(&error) != nullptr)
        return kExitEvaluation;
    return kExitConfig;
}

} // namespace memcorrupt::pipeline
