// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/trigger_search.hpp"

#include "memcorrupt/io.hpp"
#include "memcorrupt/parallel.hpp"
#include "memcorrupt/text.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <set>

namespace memcorrupt::search {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Context

namespace {

TemplateContext base_context(std::string_view noun, std::size_t candidate_count)
{
    TemplateContext ctx;
    ctx.scalars["item"] = std::string(noun);
    ctx.scalars["num_candidates"] = text::number_word(candidate_count);
    ctx.scalars["last_rank"] = std::to_string(candidate_count);
    return ctx;
}

std::string render_file(const TemplateStore& templates, std::string_view name, const TemplateContext& ctx)
{
    return render_template(templates.load(name), ctx);
}

} // namespace

std::string AdversarialContext::render(const TemplateStore& templates, std::string_view candidate_text) const
{
    return render_with_user(templates, general_user_memory, candidate_text);
}

std::string AdversarialContext::render_with_user(const TemplateStore& templates, std::string_view user_memory,
                                                 std::string_view candidate_text) const
{
    auto ctx = base_context(item_noun, popular.size() + 1);
    ctx.scalars["style"] = render_template(sections.style, ctx);
    ctx.scalars["goal"] = render_template(sections.goal, ctx);
    ctx.scalars["instruction"] = render_template(sections.instruction, ctx);
    ctx.scalars["format"] = render_template(sections.format, ctx);
    ctx.scalars["user_memory"] = std::string(user_memory);
    auto& rows = ctx.lists["candidates"];
    for (const auto& p : popular)
        rows.push_back({{"candidate_item_title", p.title}, {"candidate_item_memory", p.memory}});
    rows.push_back({{"candidate_item_title", target_title}, {"candidate_item_memory", std::string(candidate_text)}});
    return render_file(templates, "adversarial_prompt.txt", ctx);
}

void AdversarialContext::validate() const
{
    if (popular.size() != kPopularCount)
        throw PreconditionError("adversarial context needs exactly " + std::to_string(kPopularCount) +
                                " popular candidates");
    for (const auto* s : {&sections.style, &sections.goal, &sections.instruction, &sections.format,
                          &general_user_memory, &target_title, &target_meta}) {
        if (text::trim(*s).empty())
            throw PreconditionError("adversarial context has an empty section");
    }
    for (const auto& p : popular) {
        if (text::trim(p.title).empty() || text::trim(p.memory).empty())
            throw PreconditionError("popular candidate with empty title or memory");
    }
}

json AdversarialContext::to_json() const
{
    auto items = json::array();
    for (const auto& p : popular)
        items.push_back({{"title", p.title}, {"memory", p.memory}});
    return {{"sections",
             {{"style", sections.style},
              {"goal", sections.goal},
              {"instruction", sections.instruction},
              {"format", sections.format}}},
            {"general_user_memory", general_user_memory},
            {"popular", items},
            {"target_title", target_title},
            {"target_meta", target_meta},
            {"probe_user_memories", probe_user_memories},
            {"item_noun", item_noun}};
}

AdversarialContext AdversarialContext::from_json(const json& j)
{
    AdversarialContext c;
    const auto& s = j.at("sections");
    c.sections = {s.at("style").get<std::string>(), s.at("goal").get<std::string>(),
                  s.at("instruction").get<std::string>(), s.at("format").get<std::string>()};
    c.general_user_memory = j.at("general_user_memory").get<std::string>();
    for (const auto& p : j.at("popular"))
        c.popular.push_back({p.at("title").get<std::string>(), p.at("memory").get<std::string>()});
    c.target_title = j.at("target_title").get<std::string>();
    c.target_meta = j.at("target_meta").get<std::string>();
    c.probe_user_memories = j.value("probe_user_memories", std::vector<std::string>{});
    c.item_noun = j.value("item_noun", std::string("CD"));
    return c;
}

AdversarialContext build_context(const ContextInputs& inputs, llm::Backend& aux, const TemplateStore& templates)
{
    std::vector<const corpus::ItemMeta*> chosen;
    for (const auto& meta : inputs.popular_items) {
        if (meta.id == inputs.target.id)
            continue;
        chosen.push_back(&meta);
        if (chosen.size() == kPopularCount)
            break;
    }
    if (chosen.size() < kPopularCount)
        throw TooFewPopularItems("need " + std::to_string(kPopularCount) + " popular items besides the target, have " +
                                 std::to_string(chosen.size()));

    const auto& noun = inputs.vocabulary.item_noun;
    AdversarialContext context;
    context.item_noun = noun;
    context.sections = {templates.load("adversarial_style.txt"), templates.load("adversarial_goal.txt"),
                        templates.load("adversarial_instruction.txt"), templates.load("adversarial_format.txt")};
    TemplateContext noun_ctx;
    noun_ctx.scalars["item"] = noun;
    context.general_user_memory = render_file(templates, "general_user_memory.txt", noun_ctx);
    context.probe_user_memories = inputs.probe_user_memories;
    context.target_title = inputs.target.title;
    context.target_meta = agents::render_item_memory(inputs.target, templates, inputs.vocabulary);

    for (const auto* meta : chosen) {
        std::string memory;
        if (!text::trim(meta->raw_description).empty()) {
            TemplateContext ctx = noun_ctx;
            ctx.scalars["title"] = meta->title;
            ctx.scalars["description"] = meta->raw_description;
            auto refined = aux.generate(llm::ChatExchange::single_user(render_file(templates, "refine_item.txt", ctx)));
            memory = text::truncate_words(text::trim(refined), inputs.length_limit_words);
        }
        if (text::trim(memory).empty())
            memory = agents::render_item_memory(*meta, templates, inputs.vocabulary);
        context.popular.push_back({meta->title, memory});
    }
    context.validate();
    return context;
}

// ---------------------------------------------------------------------------
// Candidates

std::string_view to_string(Lineage lineage)
{
    switch (lineage) {
    case Lineage::seed: return "seed";
    case Lineage::elite: return "elite";
    case Lineage::offspring: return "crossover+polish";
    }
    return "seed";
}

Lineage parse_lineage(std::string_view name)
{
    if (name == "seed")
        return Lineage::seed;
    if (name == "elite")
        return Lineage::elite;
    if (name == "crossover+polish")
        return Lineage::offspring;
    throw PreconditionError("unknown lineage: " + std::string(name));
}

namespace {

json score_to_json(const std::optional<double>& score)
{
    if (!score)
        return nullptr;
    if (std::isinf(*score))
        return *score < 0 ? "-inf" : "inf";
    return *score;
}

std::optional<double> score_from_json(const json& j)
{
    if (j.is_null())
        return std::nullopt;
    if (j.is_string())
        return j.get<std::string>() == "-inf" ? kDisqualified : std::numeric_limits<double>::infinity();
    return j.get<double>();
}

} // namespace

json TriggerCandidate::to_json() const
{
    return {{"id", id},
            {"text", text},
            {"score", score_to_json(score)},
            {"epoch_created", epoch_created},
            {"lineage", to_string(lineage)},
            {"parent_ids", parent_ids}};
}

TriggerCandidate TriggerCandidate::from_json(const json& j)
{
    TriggerCandidate c;
    c.id = j.at("id").get<std::uint64_t>();
    c.text = j.at("text").get<std::string>();
    c.score = score_from_json(j.at("score"));
    c.epoch_created = j.at("epoch_created").get<int>();
    c.lineage = parse_lineage(j.at("lineage").get<std::string>());
    c.parent_ids = j.at("parent_ids").get<std::vector<std::uint64_t>>();
    return c;
}

void SearchConfig::validate() const
{
    if (epochs < 1)
        throw PreconditionError("epochs must be at least 1");
    if (pool_size < 2)
        throw PreconditionError("pool_size must be at least 2");
    if (elite_count < 1 || elite_count >= pool_size)
        throw PreconditionError("elite_count must satisfy 1 <= n < pool_size");
    if (length_limit_words < 1)
        throw PreconditionError("length_limit_words must be positive");
    if (convergence_patience < 1)
        throw PreconditionError("convergence_patience must be at least 1");
    if (target_output.rfind("The sorted ", 0) != 0 || target_output.find("\n1. ") == std::string::npos ||
        target_output.back() != '\n')
        throw PreconditionError("target_output must read \"The sorted <items> are:\\n1. <title>\\n\"");
}

json SearchConfig::to_json() const
{
    return {{"epochs", epochs},
            {"pool_size", pool_size},
            {"elite_count", elite_count},
            {"rng_seed", rng_seed},
            {"length_limit_words", length_limit_words},
            {"convergence_patience", convergence_patience},
            {"target_output", target_output}};
}

std::string target_output_for(std::string_view title, std::string_view item_noun)
{
    return "The sorted " + std::string(item_noun) + "s are:\n1. " + std::string(title) + "\n";
}

std::vector<TriggerCandidate> init_candidates(const AdversarialContext& context, llm::Backend& aux,
                                              const TemplateStore& templates, const SearchConfig& config)
{
    if (config.pool_size < 2)
        throw PreconditionError("pool_size must be at least 2");
    std::vector<TriggerCandidate> pool;
    std::set<std::string> seen;
    for (std::size_t index = 0; index < config.pool_size; ++index) {
        std::string text;
        bool accepted = false;
        for (int attempt = 0; attempt <= config.seed_retry_limit && !accepted; ++attempt) {
            auto ctx = base_context(context.item_noun, context.popular.size() + 1);
            ctx.scalars["index"] = std::to_string(index + 1 + static_cast<std::size_t>(attempt) * config.pool_size);
            ctx.scalars["title"] = context.target_title;
            ctx.scalars["memory"] = context.target_meta;
            auto raw = aux.generate(llm::ChatExchange::single_user(render_file(templates, "seed_trigger.txt", ctx)));
            text = text::truncate_words(text::trim(raw), config.length_limit_words);
            accepted = !text.empty() && !seen.count(text);
        }
        if (!accepted) {
            if (text.empty())
                text = context.target_meta;
            std::string base = text;
            for (std::size_t k = 2; seen.count(text); ++k)
                text = base + " (" + std::to_string(k) + ")";
        }
        seen.insert(text);
        TriggerCandidate c;
        c.id = index;
        c.text = std::move(text);
        c.lineage = Lineage::seed;
        pool.push_back(std::move(c));
    }
    return pool;
}

double score_candidate(const AdversarialContext& context, std::string_view candidate, llm::Backend& surrogate,
                       const TemplateStore& templates, std::string_view target_output)
{
    auto prompt = context.render(templates, candidate) + "\n";
    try {
        return -surrogate.score_sequence(prompt, target_output).total_nll;
    } catch (const llm::ContextOverflow&) {
        return kDisqualified;
    }
}

std::vector<TriggerCandidate> select_elites(const std::vector<TriggerCandidate>& pool, std::size_t n)
{
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!pool[i].score)
            throw PreconditionError("select_elites on an unscored pool");
        if (!pool[i].disqualified())
            order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return *pool[a].score > *pool[b].score; });
    order.resize(std::min(n, order.size()));
    std::vector<TriggerCandidate> elites;
    for (auto i : order)
        elites.push_back(pool[i]);
    return elites;
}

std::vector<double> softmax_probabilities(const std::vector<double>& scores)
{
    double max_score = kDisqualified;
    for (double s : scores)
        max_score = std::max(max_score, s);
    std::vector<double> p(scores.size(), 0.0);
    if (max_score == kDisqualified)
        return p;
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = scores[i] == kDisqualified ? 0.0 : std::exp(scores[i] - max_score);
        total += p[i];
    }
    for (double& v : p)
        v /= total;
    return p;
}

namespace {

double uniform01(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace

std::vector<TriggerCandidate> softmax_sample(const std::vector<TriggerCandidate>& pool, std::size_t count,
                                             std::mt19937_64& rng)
{
    std::vector<double> scores;
    std::size_t finite = 0;
    for (const auto& c : pool) {
        if (!c.score)
            throw PreconditionError("softmax_sample on an unscored pool");
        scores.push_back(*c.score);
        finite += c.disqualified() ? 0 : 1;
    }
    if (finite == 0)
        throw AllDisqualified("every candidate in the pool is disqualified");

    std::vector<TriggerCandidate> drawn;
    std::vector<bool> taken(pool.size(), false);
    std::size_t taken_count = 0;
    while (drawn.size() < count) {
        if (taken_count == finite) {
            std::fill(taken.begin(), taken.end(), false);
            taken_count = 0;
        }
        std::vector<double> remaining(scores.size(), kDisqualified);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (!taken[i])
                remaining[i] = scores[i];
        }
        auto p = softmax_probabilities(remaining);
        double u = uniform01(rng);
        std::size_t pick = 0;
        std::size_t last_positive = 0;
        double acc = 0.0;
        bool picked = false;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] <= 0.0)
                continue;
            last_positive = i;
            acc += p[i];
            if (u < acc) {
                pick = i;
                picked = true;
                break;
            }
        }
        if (!picked)
            pick = last_positive;
        taken[pick] = true;
        ++taken_count;
        drawn.push_back(pool[pick]);
    }
    return drawn;
}

namespace {

// Number of leading slices that end in a boundary character.
std::size_t closed_slices(const std::vector<std::string>& slices)
{
    if (slices.empty())
        return 0;
    bool last_closed = text::has_slice_boundary(std::string_view(slices.back()).substr(slices.back().size() - 1));
    return last_closed ? slices.size() : slices.size() - 1;
}

std::string concat(const std::vector<std::string>& slices, std::size_t from, std::size_t to)
{
    std::string out;
    for (std::size_t i = from; i < to; ++i)
        out += slices[i];
    return out;
}

} // namespace

std::pair<std::string, std::string> crossover(std::string_view a, std::string_view b, std::mt19937_64& rng)
{
    if (!text::has_slice_boundary(a) || !text::has_slice_boundary(b))
        return {std::string(a), std::string(b)};
    auto sa = text::split_slices(a);
    auto sb = text::split_slices(b);
    // Cuts only after closed slices, so re-splitting the children yields
    // exactly the exchanged slices.
    auto ka = closed_slices(sa);
    auto kb = closed_slices(sb);
    std::size_t ca = 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(ka));
    std::size_t cb = 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(kb));
    ca = std::min(ca, ka);
    cb = std::min(cb, kb);
    return {concat(sa, 0, ca) + concat(sb, cb, sb.size()), concat(sb, 0, cb) + concat(sa, ca, sa.size())};
}

std::string polish(std::string_view combined, llm::Backend& aux, const TemplateStore& templates,
                   std::size_t length_limit, std::string_view item_noun, bool* fell_back)
{
    if (text::trim(combined).empty())
        throw PreconditionError("polish needs non-empty text");
    if (fell_back != nullptr)
        *fell_back = false;
    TemplateContext ctx;
    ctx.scalars["item"] = std::string(item_noun);
    ctx.scalars["limit"] = std::to_string(length_limit);
    ctx.scalars["text"] = std::string(combined);
    std::string out;
    try {
        out = std::string(text::trim(aux.generate(
            llm::ChatExchange::single_user(render_template(templates.load("polish_trigger.txt"), ctx)))));
    } catch (const llm::TransportError&) {
        if (fell_back != nullptr)
            *fell_back = true;
    }
    if (out.empty())
        out = std::string(text::trim(combined));
    return text::truncate_words(out, length_limit);
}

// ---------------------------------------------------------------------------
// Search loop

json SearchCheckpoint::to_json() const
{
    auto candidates = json::array();
    for (const auto& c : pool)
        candidates.push_back(c.to_json());
    auto epochs = json::array();
    for (const auto& t : trace)
        epochs.push_back({{"epoch", t.epoch},
                          {"max_score", score_to_json(t.max_score)},
                          {"best_text", t.best_text},
                          {"probes_ranked_first", t.probes_ranked_first},
                          {"disqualified", t.disqualified},
                          {"polish_fallbacks", t.polish_fallbacks}});
    return {{"completed_epoch", completed_epoch},
            {"rng", {{"seed", rng_seed}, {"next_epoch", completed_epoch + 1}}},
            {"next_id", next_id},
            {"converged_streak", converged_streak},
            {"finished", finished},
            {"candidates", candidates},
            {"trace", epochs}};
}

SearchCheckpoint SearchCheckpoint::from_json(const json& j)
{
    SearchCheckpoint cp;
    cp.completed_epoch = j.at("completed_epoch").get<int>();
    cp.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
    cp.next_id = j.at("next_id").get<std::uint64_t>();
    cp.converged_streak = j.at("converged_streak").get<int>();
    cp.finished = j.at("finished").get<bool>();
    for (const auto& c : j.at("candidates"))
        cp.pool.push_back(TriggerCandidate::from_json(c));
    for (const auto& t : j.at("trace"))
        cp.trace.push_back({t.at("epoch").get<int>(), *score_from_json(t.at("max_score")),
                            t.at("best_text").get<std::string>(), t.at("probes_ranked_first").get<bool>(),
                            t.at("disqualified").get<std::size_t>(), t.at("polish_fallbacks").get<std::size_t>()});
    return cp;
}

json SearchResult::to_json() const
{
    auto pool = json::array();
    for (const auto& c : final_pool)
        pool.push_back(c.to_json());
    auto epochs = json::array();
    for (const auto& t : trace)
        epochs.push_back({{"epoch", t.epoch},
                          {"max_score", score_to_json(t.max_score)},
                          {"best_text", t.best_text},
                          {"probes_ranked_first", t.probes_ranked_first}});
    return {{"trigger", best.text},
            {"best", best.to_json()},
            {"final_pool", pool},
            {"score_trace", epochs},
            {"epochs_run", epochs_run},
            {"converged", converged}};
}

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x7f4a7c15u};
    return std::mt19937_64(seq);
}

bool probes_rank_first(const AdversarialContext& context, std::string_view candidate, llm::Backend& surrogate,
                       const TemplateStore& templates)
{
    std::vector<std::string> users{context.general_user_memory};
    users.insert(users.end(), context.probe_user_memories.begin(), context.probe_user_memories.end());
    std::vector<std::string> titles;
    for (const auto& p : context.popular)
        titles.push_back(p.title);
    titles.push_back(context.target_title);

    for (const auto& user : users) {
        auto prompt = context.render_with_user(templates, user, candidate);
        try {
            auto raw = surrogate.generate(llm::ChatExchange::system_prompt(prompt));
            auto ranked = agents::parse_ranking(raw, titles);
            if (ranked.rank_of(context.target_title) != 1)
                return false;
        } catch (const agents::ParseFailure&) {
            return false;
        } catch (const llm::ContextOverflow&) {
            return false;
        }
    }
    return true;
}

namespace {

std::size_t argmax(const std::vector<TriggerCandidate>& pool)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
        if (*pool[i].score > *pool[best].score)
            best = i;
    }
    return best;
}

void write_checkpoint(const SearchHooks& hooks, const SearchCheckpoint& cp)
{
    if (!hooks.checkpoint_dir.empty())
        io::write_json_atomic(hooks.checkpoint_dir / ("epoch_" + std::to_string(cp.completed_epoch) + ".json"),
                              cp.to_json());
    if (hooks.on_checkpoint)
        hooks.on_checkpoint(cp);
}

SearchResult finish(SearchCheckpoint& state, bool converged)
{
    SearchResult result;
    result.final_pool = state.pool;
    result.best = state.pool[argmax(state.pool)];
    result.trace = state.trace;
    result.epochs_run = state.completed_epoch;
    result.converged = converged;
    return result;
}

} // namespace

SearchResult run_search(const AdversarialContext& context, const SearchConfig& config, llm::Backend& surrogate,
                        llm::Backend& aux, const TemplateStore& templates, const SearchHooks& hooks)
{
    config.validate();
    context.validate();

    SearchCheckpoint state;
    state.rng_seed = config.rng_seed;
    if (hooks.resume_from) {
        state = *hooks.resume_from;
        if (state.rng_seed != config.rng_seed)
            throw PreconditionError("checkpoint was written with a different seed");
        if (state.finished)
            return finish(state, state.converged_streak >= config.convergence_patience);
    } else if (hooks.initial_pool) {
        state.pool = *hooks.initial_pool;
        for (const auto& c : state.pool)
            state.next_id = std::max(state.next_id, c.id + 1);
    } else {
        state.pool = init_candidates(context, aux, templates, config);
        state.next_id = state.pool.size();
    }
    if (state.pool.size() != config.pool_size)
        throw PreconditionError("pool holds " + std::to_string(state.pool.size()) + " candidates, expected " +
                                std::to_string(config.pool_size));

    std::map<std::string, double> cache;
    std::mutex cache_mutex;

    for (int epoch = state.completed_epoch + 1; epoch <= config.epochs; ++epoch) {
        auto& pool = state.pool;

        // Score (concurrently; results land by index).
        std::vector<std::size_t> pending;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (pool[i].score)
                continue;
            std::lock_guard lock(cache_mutex);
            if (auto it = cache.find(pool[i].text); it != cache.end())
                pool[i].score = it->second;
            else
                pending.push_back(i);
        }
        parallel_for(pending.size(), config.concurrency, [&](std::size_t k) {
            auto& c = pool[pending[k]];
            c.score = score_candidate(context, c.text, surrogate, templates, config.target_output);
            std::lock_guard lock(cache_mutex);
            cache.emplace(c.text, *c.score);
        });

        EpochTrace trace;
        trace.epoch = epoch;
        auto best = argmax(pool);
        trace.max_score = *pool[best].score;
        trace.best_text = pool[best].text;
        trace.disqualified = static_cast<std::size_t>(
            std::count_if(pool.begin(), pool.end(), [](const auto& c) { return c.disqualified(); }));
        trace.probes_ranked_first =
            !pool[best].disqualified() && probes_rank_first(context, pool[best].text, surrogate, templates);
        state.converged_streak = trace.probes_ranked_first ? state.converged_streak + 1 : 0;

        bool converged = state.converged_streak >= config.convergence_patience;
        if (converged || epoch == config.epochs) {
            state.trace.push_back(trace);
            state.completed_epoch = epoch;
            state.finished = true;
            write_checkpoint(hooks, state);
            return finish(state, converged);
        }

        auto rng = epoch_rng(config.rng_seed, epoch);
        auto elites = select_elites(pool, config.elite_count);
        auto sampled = softmax_sample(pool, config.pool_size - elites.size(), rng);

        std::vector<TriggerCandidate> next;
        for (auto& e : elites) {
            e.lineage = Lineage::elite;
            next.push_back(std::move(e));
        }
        const std::size_t wanted = sampled.size();
        std::vector<std::pair<std::string, std::vector<std::uint64_t>>> children;
        for (std::size_t i = 0; i < wanted; i += 2) {
            const auto& a = sampled[i];
            const auto& b = sampled[(i + 1) % wanted];
            auto [ca, cb] = crossover(a.text, b.text, rng);
            children.push_back({std::move(ca), {a.id, b.id}});
            if (children.size() < wanted)
                children.push_back({std::move(cb), {b.id, a.id}});
        }
        for (auto& [combined, parents] : children) {
            bool fell_back = false;
            TriggerCandidate child;
            child.id = state.next_id++;
            child.text = polish(combined, aux, templates, config.length_limit_words, context.item_noun, &fell_back);
            child.epoch_created = epoch;
            child.lineage = Lineage::offspring;
            child.parent_ids = parents;
            trace.polish_fallbacks += fell_back ? 1 : 0;
            next.push_back(std::move(child));
        }

        state.trace.push_back(trace);
        state.pool = std::move(next);
        state.completed_epoch = epoch;
        write_checkpoint(hooks, state);
    }
    // Resumed past the final epoch without a finishing checkpoint.
    for (auto& c : state.pool) {
        if (!c.score)
            c.score = score_candidate(context, c.text, surrogate, templates, config.target_output);
    }
    state.finished = true;
    return finish(state, false);
}

std::optional<SearchCheckpoint> latest_checkpoint(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        return std::nullopt;
    int best = -1;
    std::filesystem::path best_path;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto name = entry.path().filename().string();
        if (name.rfind("epoch_", 0) != 0 || entry.path().extension() != ".json")
            continue;
        auto stem = entry.path().stem().string().substr(6);
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit))
            continue;
        int epoch = std::stoi(stem);
        if (epoch > best) {
            best = epoch;
            best_path = entry.path();
        }
    }
    if (best < 0)
        return std::nullopt;
    return SearchCheckpoint::from_json(io::read_json(best_path));
}

} // namespace memcorrupt::search
