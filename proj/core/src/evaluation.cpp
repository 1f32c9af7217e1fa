// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/evaluation.hpp"

#include "memcorrupt/io.hpp"
#include "memcorrupt/parallel.hpp"
#include "memcorrupt/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace memcorrupt::eval {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

double ndcg_gain(std::size_t rank)
{
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

ExposureReport exposure_metrics(const RankMap& ranks, const std::vector<int>& k_set)
{
    if (k_set.empty())
        throw PreconditionError("K set must not be empty");
    ExposureReport report;
    report.per_user_rank = ranks;
    report.k_set = k_set;
    std::sort(report.k_set.begin(), report.k_set.end());
    report.k_set.erase(std::unique(report.k_set.begin(), report.k_set.end()), report.k_set.end());
    if (report.k_set.front() < 1)
        throw PreconditionError("K must be positive");

    std::vector<std::size_t> parsed;
    for (const auto& [user, rank] : ranks) {
        if (rank) {
            if (*rank == 0)
                throw PreconditionError("rank of user " + user + " is zero");
            parsed.push_back(*rank);
        } else {
            ++report.dropped;
        }
    }
    if (parsed.empty())
        throw EmptyEvaluation("no user produced a parseable ranking");
    report.num_users = parsed.size();
    const auto n = static_cast<double>(parsed.size());
    for (int k : report.k_set) {
        double hits = 0.0;
        double gain = 0.0;
        for (auto r : parsed) {
            if (r <= static_cast<std::size_t>(k)) {
                hits += 1.0;
                gain += ndcg_gain(r);
            }
        }
        report.hr[k] = hits / n;
        report.ndcg[k] = gain / n;
    }
    return report;
}

ExposureReport exposure_metrics(const std::vector<std::size_t>& ranks, const std::vector<int>& k_set)
{
    RankMap map;
    const int width = static_cast<int>(std::to_string(ranks.size()).size());
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        auto id = std::to_string(i);
        map["u" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id] = ranks[i];
    }
    return exposure_metrics(map, k_set);
}

json ExposureReport::to_json() const
{
    json hr_j = json::object();
    json ndcg_j = json::object();
    for (int k : k_set) {
        hr_j[std::to_string(k)] = hr.at(k);
        ndcg_j[std::to_string(k)] = ndcg.at(k);
    }
    json ranks = json::object();
    for (const auto& [user, rank] : per_user_rank)
        ranks[user] = rank ? json(*rank) : json("dropped(ParseFailure)");
    return {{"k_set", k_set},  {"hr", hr_j},           {"ndcg", ndcg_j},
            {"users", num_users}, {"dropped", dropped}, {"per_user_rank", ranks}};
}

ExposureReport ExposureReport::from_json(const json& j)
{
    ExposureReport r;
    r.k_set = j.at("k_set").get<std::vector<int>>();
    for (int k : r.k_set) {
        r.hr[k] = j.at("hr").at(std::to_string(k)).get<double>();
        r.ndcg[k] = j.at("ndcg").at(std::to_string(k)).get<double>();
    }
    r.num_users = j.at("users").get<std::size_t>();
    r.dropped = j.at("dropped").get<std::size_t>();
    for (const auto& [user, rank] : j.at("per_user_rank").items())
        r.per_user_rank[user] = rank.is_number() ? std::optional<std::size_t>(rank.get<std::size_t>()) : std::nullopt;
    return r;
}

StealthReport StealthReport::make(double benign_hr3, double attacked_hr3, double trigger_ppl, double baseline_ppl)
{
    return {benign_hr3, attacked_hr3, attacked_hr3 - benign_hr3, trigger_ppl, baseline_ppl};
}

json StealthReport::to_json() const
{
    return {{"benign_overall_hr3", benign_overall_hr3},
            {"attacked_overall_hr3", attacked_overall_hr3},
            {"delta", delta},
            {"trigger_perplexity", trigger_perplexity},
            {"baseline_perplexity", baseline_perplexity}};
}

// ---------------------------------------------------------------------------
// Reference attack and defense

std::string trivial_insertion(const std::string& description, const std::vector<std::string>& positive_words)
{
    if (positive_words.empty())
        throw PreconditionError("positive lexicon must not be empty");
    auto phrase = text::join(positive_words, " ") + " !!!";
    if (description.empty())
        return phrase;
    return description + "\n" + phrase;
}

DefenseOutcome paraphrase_defense(const std::string& description, llm::Backend& aux, const TemplateStore& templates,
                                  const std::string& item_noun)
{
    if (text::trim(description).empty())
        throw PreconditionError("paraphrase_defense needs a non-empty description");
    TemplateContext ctx;
    ctx.scalars["item"] = item_noun;
    ctx.scalars["text"] = description;
    try {
        auto out = aux.generate(
            llm::ChatExchange::single_user(render_template(templates.load("paraphrase.txt"), ctx)));
        auto trimmed = text::trim(out);
        if (trimmed.empty())
            return {description, false};
        return {std::string(trimmed), true};
    } catch (const llm::TransportError&) {
        return {description, false};
    }
}

// ---------------------------------------------------------------------------
// Candidate sets

std::string_view to_string(Placement placement)
{
    switch (placement) {
    case Placement::shuffled: return "shuffled";
    case Placement::first: return "first";
    case Placement::last: return "last";
    }
    return "shuffled";
}

Placement parse_placement(std::string_view name)
{
    if (name == "shuffled")
        return Placement::shuffled;
    if (name == "first")
        return Placement::first;
    if (name == "last")
        return Placement::last;
    throw PreconditionError("unknown placement: " + std::string(name));
}

std::mt19937_64 user_rng(std::uint64_t seed, std::string_view user, std::string_view purpose)
{
    auto h = text::mix64(text::fnv1a64(purpose, text::fnv1a64(user, text::mix64(seed))));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

std::vector<ItemId> candidate_set(const ItemId& positive, const std::vector<ItemId>& universe,
                                  const std::set<ItemId>& exclude, const std::map<ItemId, std::string>& titles,
                                  std::size_t negatives, Placement placement, std::mt19937_64& rng)
{
    auto title_of = [&](const ItemId& id) -> std::string {
        auto it = titles.find(id);
        return it == titles.end() ? id.str() : it->second;
    };
    std::vector<ItemId> pool;
    for (const auto& id : universe) {
        if (id != positive && !exclude.count(id))
            pool.push_back(id);
    }
    std::set<std::string> used_titles{title_of(positive)};
    std::vector<ItemId> chosen;
    // Partial Fisher-Yates; rejected duplicates are simply skipped.
    for (std::size_t i = 0; i < pool.size() && chosen.size() < negatives; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        if (used_titles.insert(title_of(pool[i])).second)
            chosen.push_back(pool[i]);
    }
    if (chosen.size() < negatives)
        throw PreconditionError("not enough items to draw " + std::to_string(negatives) + " negatives");

    std::size_t slot = 0;
    switch (placement) {
    case Placement::first: slot = 0; break;
    case Placement::last: slot = chosen.size(); break;
    case Placement::shuffled: {
        std::uniform_int_distribution<std::size_t> pos(0, chosen.size());
        slot = pos(rng);
        break;
    }
    }
    chosen.insert(chosen.begin() + static_cast<std::ptrdiff_t>(slot), positive);
    return chosen;
}

// ---------------------------------------------------------------------------
// Condition simulation

json ConditionResult::to_json() const
{
    return {{"exposure", exposure.to_json()},
            {"overall", overall.to_json()},
            {"timesteps", timesteps},
            {"target_updates", target_updates},
            {"target_drunk", target_drunk},
            {"target_final_memory", target_final_memory}};
}

namespace {

struct SimulationState {
    int completed_round = 0;
    agents::MemoryStore store;
    std::size_t target_updates = 0;
    std::size_t target_drunk = 0;

    json to_json() const
    {
        return {{"completed_round", completed_round},
                {"target_updates", target_updates},
                {"target_drunk", target_drunk},
                {"memories", store.to_json()}};
    }
    static SimulationState from_json(const json& j)
    {
        SimulationState s;
        s.completed_round = j.at("completed_round").get<int>();
        s.target_updates = j.at("target_updates").get<std::size_t>();
        s.target_drunk = j.at("target_drunk").get<std::size_t>();
        s.store = agents::MemoryStore::from_json(j.at("memories"));
        return s;
    }
};

std::optional<SimulationState> latest_timestep(const std::filesystem::path& dir)
{
    if (dir.empty() || !std::filesystem::is_directory(dir))
        return std::nullopt;
    int best = -1;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto stem = entry.path().stem().string();
        if (stem.rfind("timestep_", 0) != 0 || entry.path().extension() != ".json")
            continue;
        auto digits = stem.substr(9);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit))
            continue;
        best = std::max(best, std::stoi(digits));
    }
    if (best < 0)
        return std::nullopt;
    return SimulationState::from_json(io::read_json(dir / ("timestep_" + std::to_string(best) + ".json")));
}

} // namespace

ConditionResult run_condition(const ConditionInputs& inputs, llm::Backend& victim, const TemplateStore& templates,
                              const EvalSettings& settings, const ConditionHooks& hooks)
{
    if (inputs.matrix == nullptr || inputs.split == nullptr || inputs.catalog == nullptr)
        throw PreconditionError("condition inputs are incomplete");
    const auto& matrix = *inputs.matrix;
    const auto& split = *inputs.split;
    const auto& catalog = *inputs.catalog;
    if (!matrix.items().count(inputs.target))
        throw PreconditionError("target item " + inputs.target.str() + " is not in the corpus");

    std::map<ItemId, std::string> titles;
    for (const auto& id : matrix.items()) {
        auto it = catalog.find(id);
        titles[id] = it == catalog.end() ? id.str() : it->second.title;
    }

    // Train profiles in chronological order.
    std::map<UserId, std::vector<corpus::Interaction>> train;
    for (const auto& r : split.train)
        train[r.user].push_back(r);
    int rounds = 0;
    for (auto& [user, records] : train) {
        std::stable_sort(records.begin(), records.end(),
                         [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        rounds = std::max(rounds, static_cast<int>(records.size()));
    }
    if (settings.max_timesteps)
        rounds = std::min(rounds, *settings.max_timesteps);

    SimulationState state;
    std::optional<SimulationState> resumed;
    if (hooks.resume)
        resumed = latest_timestep(hooks.checkpoint_dir);
    if (resumed) {
        state = std::move(*resumed);
    } else {
        state.store = agents::init_memories(matrix, catalog, templates, settings.update.vocabulary);
        if (inputs.target_description) {
            state.store.items.erase(inputs.target);
            state.store.items.emplace(inputs.target, agents::AgentMemory(agents::AgentKind::item, inputs.target.str(),
                                                                         *inputs.target_description));
        }
    }

    // Memory-update rounds: round r applies every user's r-th train record.
    for (int round = state.completed_round; round < rounds; ++round) {
        for (const auto& [user, records] : train) {
            if (static_cast<std::size_t>(round) >= records.size())
                continue;
            const auto& record = records[static_cast<std::size_t>(round)];
            auto& user_memory = state.store.users.at(user);
            auto& item_memory = state.store.items.at(record.item);
            std::array<agents::AgentMemory*, 1> items{&item_memory};
            std::map<ItemId, std::string> item_titles{{record.item, titles.at(record.item)}};
            auto outcomes = agents::update_memories(user_memory, items, item_titles, victim, templates,
                                                    settings.update, round + 1);
            if (record.item == inputs.target) {
                ++state.target_updates;
                state.target_drunk += outcomes.front().drunk ? 1 : 0;
            }
        }
        state.completed_round = round + 1;
        if (!hooks.checkpoint_dir.empty())
            io::write_json_atomic(hooks.checkpoint_dir / ("timestep_" + std::to_string(state.completed_round) + ".json"),
                                  state.to_json());
    }

    const std::vector<ItemId> universe(matrix.items().begin(), matrix.items().end());
    const agents::Recommender recommender(settings.flavor, templates, settings.recommender);
    const agents::TermFrequencyRetriever retriever;
    const auto& store = state.store;

    std::vector<UserId> users;
    for (const auto& [user, record] : split.test)
        users.push_back(user);

    auto build_request = [&](const UserId& user, const std::vector<ItemId>& candidates, const ItemId& positive) {
        agents::RecommendationRequest request;
        const auto& memory = store.users.at(user);
        request.user_memory = memory.short_term();
        request.user_long_term = memory.long_term();
        for (const auto& id : candidates)
            request.candidates.push_back({titles.at(id), store.items.at(id).short_term()});
        request.target_title = titles.at(positive);
        if (settings.flavor == agents::Flavor::seq) {
            if (auto it = train.find(user); it != train.end()) {
                for (const auto& r : it->second)
                    request.history.push_back({titles.at(r.item), store.items.at(r.item).short_term(), r.timestamp});
            }
        }
        return request;
    };

    std::vector<std::optional<std::size_t>> exposure_ranks(users.size());
    std::vector<std::optional<std::size_t>> overall_ranks(users.size());
    std::vector<json> traces(users.size() * 2);
    parallel_for(users.size(), settings.concurrency, [&](std::size_t i) {
        const auto& user = users[i];
        const auto interacted = matrix.interacted_items(user);
        const auto* rag = settings.flavor == agents::Flavor::rag ? &retriever : nullptr;

        auto rng = user_rng(settings.seed, user.str(), "exposure");
        auto candidates = candidate_set(inputs.target, universe, interacted, titles, settings.negatives,
                                        settings.placement, rng);
        auto request = build_request(user, candidates, inputs.target);
        try {
            auto result = recommender.recommend(request, victim, rag);
            exposure_ranks[i] = result.target_rank;
            traces[2 * i] = agents::trace_record(user.str(), request, result);
        } catch (const agents::ParseFailure& e) {
            traces[2 * i] = {{"user", user.str()}, {"target", request.target_title}, {"parse_failure", e.what()}};
        }
        traces[2 * i]["purpose"] = "exposure";

        const auto& held_out = split.test.at(user).item;
        auto rng_overall = user_rng(settings.seed, user.str(), "overall");
        auto exclude = interacted;
        exclude.erase(held_out);
        auto overall_candidates = candidate_set(held_out, universe, exclude, titles, settings.negatives,
                                                settings.placement, rng_overall);
        auto overall_request = build_request(user, overall_candidates, held_out);
        try {
            auto result = recommender.recommend(overall_request, victim, rag);
            overall_ranks[i] = result.target_rank;
            traces[2 * i + 1] = agents::trace_record(user.str(), overall_request, result);
        } catch (const agents::ParseFailure& e) {
            traces[2 * i + 1] = {{"user", user.str()}, {"target", overall_request.target_title},
                                 {"parse_failure", e.what()}};
        }
        traces[2 * i + 1]["purpose"] = "overall";
    });

    RankMap exposure_map;
    RankMap overall_map;
    for (std::size_t i = 0; i < users.size(); ++i) {
        exposure_map[users[i].str()] = exposure_ranks[i];
        overall_map[users[i].str()] = overall_ranks[i];
    }

    ConditionResult result;
    result.exposure = exposure_metrics(exposure_map, settings.k_set);
    result.overall = exposure_metrics(overall_map, {3});
    result.timesteps = state.completed_round;
    result.target_updates = state.target_updates;
    result.target_drunk = state.target_drunk;
    result.target_final_memory = store.items.at(inputs.target).short_term();
    result.traces = std::move(traces);
    return result;
}

// ---------------------------------------------------------------------------
// Reports

json RunReport::to_json() const
{
    json arms_j = json::object();
    for (const auto& arm : arms)
        arms_j[arm.attack] = arm.exposure.to_json();
    json j = {{"schema_version", kReportSchemaVersion},
              {"dataset", dataset},
              {"victim", victim},
              {"arms", arms_j},
              {"details", details}};
    j["stealth"] = stealth ? stealth->to_json() : json(nullptr);
    return j;
}

std::vector<ReportRow> report_rows(const RunReport& report)
{
    std::vector<ReportRow> rows;
    for (const auto& arm : report.arms) {
        for (int k : arm.exposure.k_set)
            rows.push_back({arm.attack, report.victim, report.dataset, k, arm.exposure.hr.at(k),
                            arm.exposure.ndcg.at(k), arm.exposure.num_users, arm.exposure.dropped});
    }
    return rows;
}

namespace {

std::string fixed6(double v)
{
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.6f", v);
    return buffer;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                current.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

} // namespace

std::string render_csv(const RunReport& report)
{
    std::string out(kCsvHeader);
    out.push_back('\n');
    for (const auto& r : report_rows(report)) {
        out += csv_field(r.attack) + "," + csv_field(r.victim) + "," + csv_field(r.dataset) + "," +
               std::to_string(r.k) + "," + fixed6(r.hr) + "," + fixed6(r.ndcg) + "," + std::to_string(r.users) +
               "," + std::to_string(r.dropped) + "\n";
    }
    return out;
}

std::vector<ReportRow> parse_csv(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader)
        throw PreconditionError("report CSV has an unexpected header");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        auto f = split_csv_line(line);
        if (f.size() != 8)
            throw PreconditionError("report CSV row has " + std::to_string(f.size()) + " fields");
        rows.push_back({f[0], f[1], f[2], std::stoi(f[3]), std::stod(f[4]), std::stod(f[5]),
                        static_cast<std::size_t>(std::stoull(f[6])), static_cast<std::size_t>(std::stoull(f[7]))});
    }
    return rows;
}

ReportFiles emit_report(const RunReport& report, const std::filesystem::path& directory)
{
    ReportFiles files{directory / "report.csv", directory / "report.json"};
    io::write_file_atomic(files.csv, render_csv(report));
    io::write_json_atomic(files.json, report.to_json());
    return files;
}

std::vector<std::string> validate_report_json(const json& j)
{
    std::vector<std::string> problems;
    auto require = [&](const json& obj, const char* key, auto check, const char* what) {
        if (!obj.is_object() || !obj.contains(key) || !check(obj.at(key)))
            problems.push_back(std::string(key) + " must be " + what);
    };
    auto is_number = [](const json& v) { return v.is_number(); };
    auto is_string = [](const json& v) { return v.is_string(); };
    auto is_object = [](const json& v) { return v.is_object(); };
    auto is_unsigned = [](const json& v) { return v.is_number_unsigned(); };

    require(j, "schema_version", [](const json& v) { return v.is_number_integer() && v.get<int>() == kReportSchemaVersion; },
            "the current schema version");
    require(j, "dataset", is_string, "a string");
    require(j, "victim", is_string, "a string");
    require(j, "arms", is_object, "an object");
    if (j.contains("arms") && j.at("arms").is_object()) {
        for (const auto& [name, arm] : j.at("arms").items()) {
            require(arm, "hr", is_object, "an object");
            require(arm, "ndcg", is_object, "an object");
            require(arm, "users", is_unsigned, "a count");
            require(arm, "dropped", is_unsigned, "a count");
            require(arm, "per_user_rank", is_object, "an object");
            if (!arm.contains("hr") || !arm.contains("ndcg") || !arm.at("hr").is_object())
                continue;
            for (const auto& [k, hr] : arm.at("hr").items()) {
                if (!hr.is_number() || !arm.at("ndcg").contains(k) || !arm.at("ndcg").at(k).is_number()) {
                    problems.push_back("arm " + name + " has an incomplete K=" + k);
                    continue;
                }
                double h = hr.get<double>();
                double n = arm.at("ndcg").at(k).get<double>();
                if (h < 0.0 || h > 1.0 || n < 0.0 || n > h + 1e-12)
                    problems.push_back("arm " + name + " violates 0 <= ndcg <= hr <= 1 at K=" + k);
            }
        }
    }
    if (j.contains("stealth") && !j.at("stealth").is_null()) {
        const auto& s = j.at("stealth");
        for (const char* key : {"benign_overall_hr3", "attacked_overall_hr3", "delta"})
            require(s, key, is_number, "a number");
        // Perplexity is null when the scoring backend exposes no logprobs.
        auto number_or_null = [](const json& v) { return v.is_number() || v.is_null(); };
        for (const char* key : {"trigger_perplexity", "baseline_perplexity"})
            require(s, key, number_or_null, "a number or null");
    }
    return problems;
}

} // namespace memcorrupt::eval
