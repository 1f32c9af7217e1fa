// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/agents.hpp"

#include "memcorrupt/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace memcorrupt::agents {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Memory

AgentMemory::AgentMemory(AgentKind owner, std::string agent_id, std::string initial)
    : owner_(owner), agent_id_(std::move(agent_id)), short_term_(std::move(initial))
{
    if (text::trim(short_term_).empty())
        throw PreconditionError("agent " + agent_id_ + " initialized with empty memory");
    initial_hash_ = text::sha256_hex(short_term_);
}

void AgentMemory::commit(int timestep, std::string text)
{
    if (text::trim(text).empty())
        throw PreconditionError("refusing to commit empty memory for agent " + agent_id_);
    log_.push_back({timestep, text::sha256_hex(short_term_), text::sha256_hex(text)});
    short_term_ = std::move(text);
}

void AgentMemory::remember(std::string entry)
{
    long_term_.push_back(std::move(entry));
}

bool AgentMemory::verify_audit() const
{
    std::string hash = initial_hash_;
    for (const auto& record : log_) {
        if (record.old_hash != hash)
            return false;
        hash = record.new_hash;
    }
    return hash == text::sha256_hex(short_term_);
}

json AgentMemory::to_json() const
{
    auto log = json::array();
    for (const auto& r : log_)
        log.push_back({{"timestep", r.timestep}, {"old", r.old_hash}, {"new", r.new_hash}});
    return {{"owner", owner_ == AgentKind::user ? "user" : "item"},
            {"id", agent_id_},
            {"short_term", short_term_},
            {"long_term", long_term_},
            {"initial_hash", initial_hash_},
            {"update_log", log}};
}

AgentMemory AgentMemory::from_json(const json& j)
{
    AgentMemory m;
    m.owner_ = j.at("owner").get<std::string>() == "user" ? AgentKind::user : AgentKind::item;
    m.agent_id_ = j.at("id").get<std::string>();
    m.short_term_ = j.at("short_term").get<std::string>();
    m.long_term_ = j.at("long_term").get<std::vector<std::string>>();
    m.initial_hash_ = j.at("initial_hash").get<std::string>();
    for (const auto& r : j.at("update_log"))
        m.log_.push_back({r.at("timestep").get<int>(), r.at("old").get<std::string>(), r.at("new").get<std::string>()});
    return m;
}

json MemoryStore::to_json() const
{
    json j = {{"users", json::array()}, {"items", json::array()}};
    for (const auto& [id, m] : users)
        j["users"].push_back(m.to_json());
    for (const auto& [id, m] : items)
        j["items"].push_back(m.to_json());
    return j;
}

MemoryStore MemoryStore::from_json(const json& j)
{
    MemoryStore store;
    for (const auto& m : j.at("users")) {
        auto memory = AgentMemory::from_json(m);
        store.users.emplace(UserId(memory.agent_id()), std::move(memory));
    }
    for (const auto& m : j.at("items")) {
        auto memory = AgentMemory::from_json(m);
        store.items.emplace(ItemId(memory.agent_id()), std::move(memory));
    }
    return store;
}

std::string render_item_memory(const corpus::ItemMeta& meta, const TemplateStore& templates,
                               const PromptVocabulary& vocabulary)
{
    TemplateContext ctx;
    ctx.scalars["item"] = vocabulary.item_noun;
    ctx.scalars["title"] = meta.title;
    ctx.scalars["categories"] = text::join(meta.categories, "; ");
    return render_template(templates.load("item_memory_init.txt"), ctx);
}

MemoryStore init_memories(const corpus::InteractionMatrix& matrix, const corpus::ItemCatalog& catalog,
                          const TemplateStore& templates, const PromptVocabulary& vocabulary)
{
    MemoryStore store;
    for (const auto& item : matrix.items()) {
        auto it = catalog.find(item);
        if (it == catalog.end())
            throw MissingMetadata("no metadata for item " + item.str());
        store.items.emplace(item, AgentMemory(AgentKind::item, item.str(),
                                              render_item_memory(it->second, templates, vocabulary)));
    }
    TemplateContext ctx;
    ctx.scalars["item"] = vocabulary.item_noun;
    auto intro = render_template(templates.load("user_memory_init.txt"), ctx);
    for (const auto& user : matrix.users())
        store.users.emplace(user, AgentMemory(AgentKind::user, user.str(), intro));
    return store;
}

// ---------------------------------------------------------------------------
// Memory updates

DrunkDetector::DrunkDetector()
    : DrunkDetector({"i cannot", "i can't", "i can not", "i'm sorry", "i am sorry", "unable to",
                     "memory update completed", "memory update is complete", "memory has been updated",
                     "memory has already been updated", "task completed", "task is complete",
                     "no update is needed", "no update needed"})
{
}

DrunkDetector::DrunkDetector(std::vector<std::string> markers) : markers_(std::move(markers))
{
    for (auto& m : markers_)
        m = text::to_lower(m);
}

bool DrunkDetector::is_drunk(std::string_view previous_memory, std::string_view response) const
{
    auto trimmed = text::trim(response);
    if (trimmed.empty())
        return true;
    auto lowered = text::to_lower(trimmed);
    for (const auto& marker : markers_) {
        if (lowered.find(marker) != std::string::npos)
            return true;
    }
    return text::normalize(trimmed) == text::normalize(previous_memory);
}

namespace {

MemoryUpdateOutcome run_update_rounds(AgentKind owner, const std::string& agent_id, const std::string& previous,
                                      const std::string& prompt, llm::Backend& backend,
                                      const TemplateStore& templates, const UpdateSettings& settings)
{
    if (settings.max_rounds < 1)
        throw PreconditionError("max_rounds must be at least 1");

    MemoryUpdateOutcome outcome;
    outcome.agent_id = agent_id;
    outcome.owner = owner;
    outcome.resulting_memory = previous;

    auto exchange = llm::ChatExchange::single_user(prompt);
    for (int round = 1; round <= settings.max_rounds; ++round) {
        outcome.rounds_used = round;
        auto response = backend.generate(exchange);
        if (!settings.detector.is_drunk(previous, response)) {
            outcome.committed = true;
            outcome.resulting_memory = std::string(text::trim(response));
            return outcome;
        }
        exchange.messages.push_back({llm::Speaker::assistant, response.empty() ? std::string("(no output)") : response});
        exchange.messages.push_back({llm::Speaker::user, templates.load("memory_update_retry.txt")});
    }
    outcome.drunk = true;
    return outcome;
}

std::string item_update_prompt(const std::string& title, const std::string& item_memory,
                               const std::string& user_memory, const TemplateStore& templates,
                               const PromptVocabulary& vocabulary)
{
    TemplateContext ctx;
    ctx.scalars = {{"item", vocabulary.item_noun},
                   {"item_title", title},
                   {"item_memory", item_memory},
                   {"user_memory", user_memory}};
    return render_template(templates.load("memory_update_item.txt"), ctx);
}

} // namespace

std::vector<MemoryUpdateOutcome> update_memories(AgentMemory& user, std::span<AgentMemory* const> items,
                                                 const std::map<ItemId, std::string>& item_titles,
                                                 llm::Backend& backend, const TemplateStore& templates,
                                                 const UpdateSettings& settings, int timestep)
{
    std::vector<MemoryUpdateOutcome> outcomes;
    std::vector<std::string> chosen_titles;
    std::vector<std::string> chosen_memories;

    for (AgentMemory* item : items) {
        auto title_it = item_titles.find(ItemId(item->agent_id()));
        const std::string& title = title_it != item_titles.end() ? title_it->second : item->agent_id();
        auto prompt = item_update_prompt(title, item->short_term(), user.short_term(), templates,
                                         settings.vocabulary);
        outcomes.push_back(run_update_rounds(AgentKind::item, item->agent_id(), item->short_term(), prompt,
                                             backend, templates, settings));
        chosen_titles.push_back(title);
        chosen_memories.push_back(outcomes.back().resulting_memory);
    }

    TemplateContext ctx;
    ctx.scalars = {{"item", settings.vocabulary.item_noun},
                   {"item_title", text::join(chosen_titles, "; ")},
                   {"item_memory", text::join(chosen_memories, " ")},
                   {"user_memory", user.short_term()}};
    auto user_prompt = render_template(templates.load("memory_update_user.txt"), ctx);
    outcomes.push_back(run_update_rounds(AgentKind::user, user.agent_id(), user.short_term(), user_prompt, backend,
                                         templates, settings));

    // Every call succeeded: commit as one unit.
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (outcomes[i].committed)
            items[i]->commit(timestep, outcomes[i].resulting_memory);
    }
    if (outcomes.back().committed) {
        user.commit(timestep, outcomes.back().resulting_memory);
        user.remember(outcomes.back().resulting_memory);
    }
    return outcomes;
}

MemoryUpdateOutcome simulate_item_update(const AgentMemory& item, const std::string& item_title,
                                         const std::string& user_memory, llm::Backend& backend,
                                         const TemplateStore& templates, const UpdateSettings& settings)
{
    auto prompt = item_update_prompt(item_title, item.short_term(), user_memory, templates, settings.vocabulary);
    return run_update_rounds(AgentKind::item, item.agent_id(), item.short_term(), prompt, backend, templates,
                             settings);
}

// ---------------------------------------------------------------------------
// Recommendation

std::string_view to_string(Flavor flavor)
{
    switch (flavor) {
    case Flavor::cf: return "cf";
    case Flavor::rag: return "rag";
    case Flavor::seq: return "seq";
    }
    return "cf";
}

Flavor parse_flavor(std::string_view name)
{
    if (name == "cf")
        return Flavor::cf;
    if (name == "rag")
        return Flavor::rag;
    if (name == "seq")
        return Flavor::seq;
    throw PreconditionError("unknown victim flavor: " + std::string(name));
}

void RecommendationRequest::validate(std::size_t expected_candidates) const
{
    if (candidates.size() != expected_candidates)
        throw PreconditionError("expected " + std::to_string(expected_candidates) + " candidates, got " +
                                std::to_string(candidates.size()));
    std::set<std::string> titles;
    std::size_t target_hits = 0;
    for (const auto& c : candidates) {
        if (!titles.insert(c.title).second)
            throw PreconditionError("duplicate candidate title: " + c.title);
        if (c.title == target_title)
            ++target_hits;
    }
    if (target_hits != 1)
        throw PreconditionError("target title must appear exactly once among candidates");
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i].timestamp < history[i - 1].timestamp)
            throw PreconditionError("history is not chronological");
    }
}

std::size_t RankedList::rank_of(std::string_view title) const
{
    for (std::size_t i = 0; i < ordered_titles.size(); ++i) {
        if (ordered_titles[i] == title)
            return i + 1;
    }
    return 0;
}

double TermFrequencyRetriever::cosine(std::string_view a, std::string_view b)
{
    std::map<std::string, double> va;
    std::map<std::string, double> vb;
    for (auto& t : text::word_tokens(a))
        va[t] += 1.0;
    for (auto& t : text::word_tokens(b))
        vb[t] += 1.0;
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (const auto& [t, c] : va) {
        na += c * c;
        if (auto it = vb.find(t); it != vb.end())
            dot += c * it->second;
    }
    for (const auto& [t, c] : vb)
        nb += c * c;
    if (na == 0.0 || nb == 0.0)
        return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::optional<std::size_t> TermFrequencyRetriever::retrieve(std::span<const std::string> entries,
                                                            std::string_view query) const
{
    if (entries.empty())
        return std::nullopt;
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double s = cosine(entries[i], query);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

namespace {

std::string template_file(Flavor flavor)
{
    switch (flavor) {
    case Flavor::cf: return "recommend_cf.txt";
    case Flavor::rag: return "recommend_rag.txt";
    case Flavor::seq: return "recommend_seq.txt";
    }
    return "recommend_cf.txt";
}

} // namespace

Recommender::Recommender(Flavor flavor, const TemplateStore& templates, RecommenderSettings settings)
    : flavor_(flavor), templates_(&templates), settings_(std::move(settings)),
      template_(templates.load(template_file(flavor)))
{
    if (settings_.candidate_count < 2)
        throw PreconditionError("candidate_count must be at least 2");
}

std::string Recommender::render_prompt(const RecommendationRequest& request) const
{
    TemplateContext ctx;
    ctx.scalars["item"] = settings_.vocabulary.item_noun;
    ctx.scalars["num_candidates"] = text::number_word(request.candidates.size());
    ctx.scalars["last_rank"] = std::to_string(request.candidates.size());
    ctx.scalars["user_agent_memory"] = request.user_memory;
    ctx.scalars["retrieval_user_agent_memory"] = request.retrieved_memory.value_or("");
    ctx.scalars["has_history"] = request.history.empty() ? "" : "yes";
    auto& candidates = ctx.lists["candidates"];
    for (const auto& c : request.candidates)
        candidates.push_back({{"candidate_item_title", c.title}, {"candidate_item_memory", c.memory}});
    auto& history = ctx.lists["history"];
    for (const auto& h : request.history)
        history.push_back({{"interacted_item_title", h.title}, {"interacted_item_memory", h.memory}});
    return render_template(template_, ctx);
}

RecommendationResult Recommender::recommend(RecommendationRequest request, llm::Backend& backend,
                                            const Retriever* retriever) const
{
    request.validate(settings_.candidate_count);
    RecommendationResult result;

    if (flavor_ == Flavor::rag) {
        if (retriever != nullptr && !request.user_long_term.empty()) {
            std::vector<std::string> memories;
            for (const auto& c : request.candidates)
                memories.push_back(c.memory);
            if (auto idx = retriever->retrieve(request.user_long_term, text::join(memories, " ")))
                request.retrieved_memory = request.user_long_term[*idx];
        }
    } else {
        request.retrieved_memory.reset();
    }
    if (flavor_ != Flavor::seq)
        request.history.clear();

    auto exchange = llm::ChatExchange::system_prompt(render_prompt(request));
    while (flavor_ == Flavor::seq && !request.history.empty() && !backend.fits(exchange)) {
        request.history.erase(request.history.begin());
        ++result.history_dropped;
        exchange = llm::ChatExchange::system_prompt(render_prompt(request));
    }
    result.prompt = exchange.messages.front().content;

    std::vector<std::string> titles;
    for (const auto& c : request.candidates)
        titles.push_back(c.title);

    auto raw = backend.generate(exchange);
    try {
        result.ranking = parse_ranking(raw, titles, settings_.fuzzy_threshold);
    } catch (const ParseFailure&) {
        result.reprompted = true;
        exchange.messages.push_back({llm::Speaker::assistant, raw.empty() ? std::string("(no output)") : raw});
        TemplateContext ctx;
        ctx.scalars["item"] = settings_.vocabulary.item_noun;
        ctx.scalars["last_rank"] = std::to_string(titles.size());
        exchange.messages.push_back({llm::Speaker::user, render_template(templates_->load("ranking_reprompt.txt"), ctx)});
        raw = backend.generate(exchange);
        result.ranking = parse_ranking(raw, titles, settings_.fuzzy_threshold);
    }
    result.target_rank = result.ranking.rank_of(request.target_title);
    return result;
}

RecommendationResult recommend_cf(const RecommendationRequest& request, llm::Backend& backend,
                                  const TemplateStore& templates, const RecommenderSettings& settings)
{
    if (!request.history.empty() || request.retrieved_memory)
        throw PreconditionError("CF requests carry neither history nor retrieved memory");
    return Recommender(Flavor::cf, templates, settings).recommend(request, backend);
}

RecommendationResult recommend_rag(const RecommendationRequest& request, llm::Backend& backend,
                                   const Retriever& retriever, const TemplateStore& templates,
                                   const RecommenderSettings& settings)
{
    return Recommender(Flavor::rag, templates, settings).recommend(request, backend, &retriever);
}

RecommendationResult recommend_seq(const RecommendationRequest& request, llm::Backend& backend,
                                   const TemplateStore& templates, const RecommenderSettings& settings)
{
    return Recommender(Flavor::seq, templates, settings).recommend(request, backend);
}

// ---------------------------------------------------------------------------
// Parsing

double title_overlap(std::string_view line, std::string_view title)
{
    auto title_tokens = text::word_tokens(title);
    std::set<std::string> wanted(title_tokens.begin(), title_tokens.end());
    if (wanted.empty())
        return text::trim(line) == text::trim(title) ? 1.0 : 0.0;
    auto line_tokens = text::word_tokens(line);
    std::set<std::string> have(line_tokens.begin(), line_tokens.end());
    std::size_t hit = 0;
    for (const auto& t : wanted)
        hit += have.count(t);
    return static_cast<double>(hit) / static_cast<double>(wanted.size());
}

namespace {

double jaccard(std::string_view a, std::string_view b)
{
    auto ta = text::word_tokens(a);
    auto tb = text::word_tokens(b);
    std::set<std::string> sa(ta.begin(), ta.end());
    std::set<std::string> sb(tb.begin(), tb.end());
    std::size_t inter = 0;
    for (const auto& t : sa)
        inter += sb.count(t);
    auto uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// "12. Title" / "12) Title" / "12: Title" -> Title
std::optional<std::string> numbered_entry(std::string_view line)
{
    auto t = text::trim(line);
    // Tolerate markdown emphasis around the number.
    while (!t.empty() && (t.front() == '*' || t.front() == '#'))
        t.remove_prefix(1);
    std::size_t i = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i])))
        ++i;
    if (i == 0 || i >= t.size())
        return std::nullopt;
    if (t[i] != '.' && t[i] != ')' && t[i] != ':' && t[i] != '-')
        return std::nullopt;
    auto rest = text::trim(t.substr(i + 1));
    if (rest.empty())
        return std::nullopt;
    return std::string(rest);
}

} // namespace

RankedList parse_ranking(std::string_view raw_text, std::span<const std::string> candidate_titles, double threshold)
{
    const std::string raw(raw_text);
    std::string_view body = raw;
    auto lowered = text::to_lower(raw);
    if (auto header = lowered.find("the sorted"); header != std::string::npos)
        body = std::string_view(raw).substr(header);

    std::vector<std::string> entries;
    std::size_t start = 0;
    while (start < body.size() && entries.size() < candidate_titles.size()) {
        auto end = body.find('\n', start);
        auto line = body.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        if (auto entry = numbered_entry(line))
            entries.push_back(std::move(*entry));
        if (end == std::string_view::npos)
            break;
        start = end + 1;
    }
    if (entries.size() < candidate_titles.size())
        throw ParseFailure("found " + std::to_string(entries.size()) + " ranked lines, expected " +
                           std::to_string(candidate_titles.size()),
                           raw);

    std::vector<std::string> normalized_titles;
    for (const auto& t : candidate_titles)
        normalized_titles.push_back(text::normalize(t));

    RankedList ranked;
    ranked.raw_text = raw;
    std::vector<bool> used(candidate_titles.size(), false);
    for (const auto& entry : entries) {
        std::optional<std::size_t> match;
        auto normalized = text::normalize(entry);
        for (std::size_t i = 0; i < candidate_titles.size(); ++i) {
            if (normalized == normalized_titles[i]) {
                match = i;
                break;
            }
        }
        if (!match) {
            double best = -1.0;
            double best_tiebreak = -1.0;
            bool ambiguous = false;
            for (std::size_t i = 0; i < candidate_titles.size(); ++i) {
                double score = title_overlap(entry, candidate_titles[i]);
                double tiebreak = jaccard(entry, candidate_titles[i]);
                if (score > best || (score == best && tiebreak > best_tiebreak)) {
                    best = score;
                    best_tiebreak = tiebreak;
                    match = i;
                    ambiguous = false;
                } else if (score == best && tiebreak == best_tiebreak) {
                    ambiguous = true;
                }
            }
            if (best < threshold)
                throw ParseFailure("no candidate matches \"" + entry + "\"", raw);
            if (ambiguous)
                throw ParseFailure("ambiguous match for \"" + entry + "\"", raw);
        }
        if (used[*match])
            throw ParseFailure("candidate \"" + candidate_titles[*match] + "\" ranked twice", raw);
        used[*match] = true;
        ranked.ordered_titles.push_back(candidate_titles[*match]);
    }
    return ranked;
}

json trace_record(std::string_view user, const RecommendationRequest& request, const RecommendationResult& result)
{
    auto candidates = json::array();
    for (const auto& c : request.candidates)
        candidates.push_back(c.title);
    return {{"user", user},
            {"candidates", candidates},
            {"target", request.target_title},
            {"target_rank", result.target_rank},
            {"reprompted", result.reprompted},
            {"history_dropped", result.history_dropped},
            {"raw_output_sha256", text::sha256_hex(result.ranking.raw_text)}};
}

} // namespace memcorrupt::agents
