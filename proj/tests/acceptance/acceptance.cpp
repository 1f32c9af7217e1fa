// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Every tolerance and
// time budget is pinned below; the exit status is non-zero on any failure.

#include "memcorrupt/agents.hpp"
#include "memcorrupt/evaluation.hpp"
#include "memcorrupt/pipeline.hpp"
#include "memcorrupt/strategy.hpp"
#include "memcorrupt/text.hpp"
#include "memcorrupt/trigger_search.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace memcorrupt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kMetricTolerance = 5e-5;
constexpr double kSoftmaxTolerance = 0.02;
constexpr double kPerplexityTolerance = 1e-6;

// Workload sizes.
constexpr int kOracleVectors = 1000;
constexpr std::size_t kOracleMaxUsers = 12;
constexpr int kSearchSeeds = 10;
constexpr int kSearchEpochs = 20;
constexpr std::size_t kSearchPool = 10;
constexpr std::size_t kSearchElites = 5;
constexpr int kSoftmaxDraws = 10000;
constexpr int kCrossoverPairs = 1000;
constexpr int kShuffles = 20;

// Time budgets in seconds.
constexpr double kBudgetMetricFidelity = 1.0;
constexpr double kBudgetMetricOracle = 5.0;
constexpr double kBudgetSearch = 30.0;
constexpr double kBudgetSoftmax = 5.0;
constexpr double kBudgetCrossover = 5.0;
constexpr double kBudgetDrunkRate = 10.0;
constexpr double kBudgetOptimizer = 30.0;
constexpr double kBudgetEndToEnd = 60.0;
constexpr double kBudgetDeterminism = 60.0;
constexpr double kBudgetTemplates = 1.0;
constexpr double kBudgetPerplexity = 5.0;

constexpr std::string_view kMagicToken = "prime choice";

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> check;
};

std::string fmt(double v, int digits = 4)
{
    std::ostringstream out;
    out.precision(digits);
    out << std::fixed << v;
    return out.str();
}

// ---------------------------------------------------------------------------
// Shared fixtures

search::AdversarialContext search_context()
{
    std::vector<corpus::ItemMeta> popular;
    for (int i = 1; i <= 9; ++i) {
        corpus::ItemMeta m;
        m.id = ItemId("p" + std::to_string(i));
        m.title = "Popular Album " + std::to_string(i);
        m.categories = {"CDs & Vinyl", "Pop"};
        m.raw_description = "A well known record number " + std::to_string(i) + ". It sold widely.";
        popular.push_back(m);
    }
    corpus::ItemMeta target;
    target.id = ItemId("target");
    target.title = "Hollow Meridian";
    target.categories = {"CDs & Vinyl", "Jazz"};
    auto aux = fixtures::shipped(llm::BackendRole::auxiliary);
    return search::build_context({popular, target, 60, {}, {}}, *aux, fixtures::templates());
}

strategy::TrialHarness harness(llm::Backend& victim, int max_rounds = 2)
{
    strategy::TrialHarness h;
    h.backend = &victim;
    h.templates = &fixtures::templates();
    h.settings.max_rounds = max_rounds;
    h.simulated_users = strategy::TrialHarness::load_simulated_users(fixtures::templates());
    h.item_title = "Hollow Meridian";
    return h;
}

/// Synthetic corpus and config copied into a scratch directory.
struct Workspace {
    fixtures::TempDir dir;

    Workspace()
    {
        for (const auto* name : {"reviews.jsonl", "items.jsonl", "config.json"})
            fs::copy_file(fixtures::fixture_dir() / "synthetic" / name, dir / name);
    }

    json document() const { return io::read_json(dir / "config.json"); }

    pipeline::RunConfig config(const json& doc) const
    {
        auto cfg = pipeline::RunConfig::from_json(doc, dir.path());
        cfg.force_mock();
        return cfg;
    }
};

void run_all(const Workspace& ws, const json& doc, pipeline::RunOptions options = {})
{
    pipeline::Pipeline p(ws.config(doc), options);
    p.all();
}

// ---------------------------------------------------------------------------
// Criteria

Outcome metric_fidelity()
{
    // 99 users: 5 hits at rank 1, 6 more at rank 2, the rest outside the top 2.
    std::vector<std::size_t> ranks;
    ranks.insert(ranks.end(), 5, 1);
    ranks.insert(ranks.end(), 6, 2);
    ranks.insert(ranks.end(), 88, 6);
    auto r = eval::exposure_metrics(ranks, {1, 2});
    const double hr1 = r.hr.at(1), hr2 = r.hr.at(2), ndcg2 = r.ndcg.at(2);
    bool ok = std::abs(hr1 - 0.0505) <= kMetricTolerance && std::abs(hr2 - 0.1111) <= kMetricTolerance &&
              std::abs(ndcg2 - 0.0887) <= kMetricTolerance;
    return {ok, "HR@1=" + fmt(hr1, 6) + " HR@2=" + fmt(hr2, 6) + " NDCG@2=" + fmt(ndcg2, 6)};
}

Outcome metric_oracle()
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, kOracleMaxUsers), rank(1, 10);
    const std::vector<int> ks{1, 2, 3, 5, 10};
    int mismatches = 0;
    for (int v = 0; v < kOracleVectors; ++v) {
        std::vector<std::size_t> ranks(size(rng));
        for (auto& r : ranks)
            r = rank(rng);
        auto report = eval::exposure_metrics(ranks, ks);
        for (int k : ks) {
            // Definitions: hit if rank <= K; DCG = 1/log2(rank+1) for the one relevant item, IDCG = 1.
            double hits = 0.0, dcg = 0.0;
            for (auto r : ranks) {
                if (r <= static_cast<std::size_t>(k)) {
                    hits += 1.0;
                    dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
                }
            }
            const double n = static_cast<double>(ranks.size());
            if (report.hr.at(k) != hits / n || report.ndcg.at(k) != dcg / n)
                ++mismatches;
        }
    }
    return {mismatches == 0, std::to_string(kOracleVectors) + " vectors, " + std::to_string(mismatches) + " mismatches"};
}

Outcome search_convergence()
{
    const auto ctx = search_context();
    int with_token = 0;
    bool monotone = true;
    int max_epochs = 0;
    for (int s = 0; s < kSearchSeeds; ++s) {
        const auto seed = 1000 + static_cast<std::uint64_t>(s);
        auto surrogate = fixtures::shipped(llm::BackendRole::surrogate, seed);
        auto aux = fixtures::shipped(llm::BackendRole::auxiliary, seed);
        search::SearchConfig cfg;
        cfg.epochs = kSearchEpochs;
        cfg.pool_size = kSearchPool;
        cfg.elite_count = kSearchElites;
        cfg.rng_seed = seed;
        cfg.target_output = search::target_output_for(ctx.target_title, ctx.item_noun);
        auto result = search::run_search(ctx, cfg, *surrogate, *aux, fixtures::templates());
        with_token += result.best.text.find(kMagicToken) != std::string::npos ? 1 : 0;
        for (std::size_t i = 1; i < result.trace.size(); ++i)
            monotone = monotone && result.trace[i].max_score >= result.trace[i - 1].max_score;
        max_epochs = std::max(max_epochs, result.epochs_run);
    }
    return {with_token == kSearchSeeds && monotone,
            std::to_string(with_token) + "/" + std::to_string(kSearchSeeds) + " seeds carry the token, " +
                (monotone ? "monotone" : "NOT monotone") + ", at most " + std::to_string(max_epochs) + " epochs"};
}

Outcome softmax_selection()
{
    std::vector<search::TriggerCandidate> pool(2);
    pool[0].id = 0;
    pool[0].score = 0.0;
    pool[1].id = 1;
    pool[1].score = std::log(3.0);
    std::mt19937_64 rng(2024);
    int second = 0;
    for (int i = 0; i < kSoftmaxDraws; ++i)
        second += search::softmax_sample(pool, 1, rng).front().id == 1 ? 1 : 0;
    const double f1 = static_cast<double>(second) / kSoftmaxDraws;
    const double f0 = 1.0 - f1;
    bool ok = std::abs(f0 - 0.25) <= kSoftmaxTolerance && std::abs(f1 - 0.75) <= kSoftmaxTolerance;
    return {ok, "frequencies [" + fmt(f0) + ", " + fmt(f1) + "]"};
}

Outcome crossover_conservation()
{
    std::mt19937_64 rng(2024);
    int violations = 0;
    auto slices = [](const std::string& a, const std::string& b) {
        std::multiset<std::string> out;
        for (const auto& s : text::split_slices(a))
            out.insert(s);
        for (const auto& s : text::split_slices(b))
            out.insert(s);
        return out;
    };
    for (int i = 0; i < kCrossoverPairs; ++i) {
        auto a = fixtures::random_text(rng), b = fixtures::random_text(rng);
        auto [ca, cb] = search::crossover(a, b, rng);
        violations += slices(a, b) == slices(ca, cb) ? 0 : 1;
    }
    return {violations == 0, std::to_string(kCrossoverPairs) + " pairs, " + std::to_string(violations) + " violations"};
}

Outcome drunk_rate()
{
    auto victim = fixtures::shipped(llm::BackendRole::victim);
    strategy::SnippetLibrary lib(fixtures::templates());
    const std::string trigger = "This CD is the prime choice for every listener.";
    auto h = harness(*victim);
    auto best = strategy::optimize_strategy(trigger, h, lib, {});
    bool ok = best.best.success_rate == 1.0;
    std::string detail = "best ordering " + strategy::ordering_code(best.best.ordering) + " rate " +
                         fmt(best.best.success_rate, 2) + "; rounds";
    for (int rounds : {2, 5, 10, 20}) {
        auto hr = harness(*victim, rounds);
        auto c = strategy::trial_drunk(best.best, trigger, hr, 5);
        ok = ok && c.success_rate == 1.0 && c.trials == 5;
        detail += " " + std::to_string(rounds) + ":" + fmt(100.0 * c.success_rate, 0) + "%";
    }
    return {ok, detail};
}

Outcome optimizer_correctness()
{
    // The shipped victim refuses only when the segmentation marker precedes the injected task.
    auto victim = fixtures::shipped(llm::BackendRole::victim);
    strategy::SnippetLibrary lib(fixtures::templates());
    auto h = harness(*victim);
    strategy::OptimizerSettings s;
    s.trials_per_ordering = 2;
    s.early_stop = false;
    s.concurrency = 4;
    auto result = strategy::optimize_strategy("This CD is the prime choice for every listener.", h, lib, s);

    auto pos = [](const strategy::Ordering& o, strategy::ComponentKind k) {
        return std::find(o.begin(), o.end(), k) - o.begin();
    };
    auto admitted = [&](const strategy::Ordering& o) {
        return pos(o, strategy::ComponentKind::segmentation_signal) <
               pos(o, strategy::ComponentKind::malicious_task_injection);
    };
    std::set<std::string> oracle, observed;
    for (const auto& o : strategy::all_orderings()) {
        if (admitted(o))
            oracle.insert(strategy::ordering_code(o));
    }
    for (const auto& c : result.evaluated) {
        if (c.success_rate > 0.0)
            observed.insert(strategy::ordering_code(c.ordering));
    }
    bool ok = result.evaluated.size() == 120 && oracle == observed && admitted(result.best.ordering) &&
              result.best.success_rate == 1.0;
    return {ok, "oracle " + std::to_string(oracle.size()) + " orderings, observed " +
                    std::to_string(observed.size()) + ", best " + strategy::ordering_code(result.best.ordering)};
}

Outcome end_to_end()
{
    Workspace ws;
    auto doc = ws.document();
    run_all(ws, doc);
    auto report = io::read_json(ws.dir / "run" / "report" / "report.json");
    auto problems = eval::validate_report_json(report);
    auto rows = eval::parse_csv(io::read_file(ws.dir / "run" / "report" / "report.csv"));
    const double benign = report.at("arms").at("benign").at("hr").at("1").get<double>();
    const double attacked = report.at("arms").at("attacked").at("hr").at("1").get<double>();

    doc["noop_attack"] = true;
    doc["output_dir"] = "noop";
    run_all(ws, doc);
    auto noop = io::read_json(ws.dir / "noop" / "report" / "report.json");
    for (auto& p : eval::validate_report_json(noop))
        problems.push_back("noop: " + p);
    const double delta = noop.at("stealth").at("delta").get<double>();

    bool ok = attacked > benign && delta == 0.0 && problems.empty() && !rows.empty();
    return {ok, "HR@1 benign " + fmt(benign) + " attacked " + fmt(attacked) + ", noop delta " + fmt(delta, 6) +
                    ", " + std::to_string(problems.size()) + " schema problems"};
}

Outcome determinism_and_resume()
{
    Workspace ws;
    auto doc = ws.document();
    doc["seed"] = 2024;
    doc["search"]["patience"] = 100;
    doc["output_dir"] = "a";
    run_all(ws, doc);
    doc["output_dir"] = "b";
    run_all(ws, doc);

    doc["output_dir"] = "resumed";
    pipeline::RunOptions halt;
    halt.halt_after_epoch = 3;
    bool interrupted = false;
    try {
        run_all(ws, doc, halt);
    } catch (const search::SearchInterrupted&) {
        interrupted = true;
    }
    pipeline::RunOptions resume;
    resume.resume = true;
    run_all(ws, doc, resume);

    bool identical = true, resumed_matches = true;
    for (const auto* f : {"report/report.csv", "report/report.json"}) {
        identical = identical && io::read_file(ws.dir / "a" / f) == io::read_file(ws.dir / "b" / f);
        resumed_matches = resumed_matches && io::read_file(ws.dir / "a" / f) == io::read_file(ws.dir / "resumed" / f);
    }
    for (const auto* f : {"attack/search.json", "attack/artifact.json"})
        resumed_matches = resumed_matches && io::read_file(ws.dir / "a" / f) == io::read_file(ws.dir / "resumed" / f);
    return {identical && interrupted && resumed_matches,
            std::string("repeat ") + (identical ? "identical" : "DIFFERS") + ", interrupted " +
                (interrupted ? "yes" : "NO") + ", resumed " + (resumed_matches ? "identical" : "DIFFERS")};
}

Outcome template_fidelity()
{
    auto golden = [](const std::string& name) {
        auto content = io::read_file(fixtures::golden_dir() / name);
        if (!content.empty() && content.back() == '\n')
            content.pop_back();
        return content;
    };
    agents::RecommendationRequest req;
    req.user_memory = "{user_agent_memory}";
    for (int i = 0; i < 9; ++i)
        req.candidates.push_back({"{candidate_item_title}", "{candidate_item_memory}"});
    req.candidates.push_back({"{target_item_title}", "{target_item_memory}"});
    req.target_title = "{target_item_title}";

    int diffs = 0;
    agents::Recommender cf(agents::Flavor::cf, fixtures::templates());
    diffs += cf.render_prompt(req) == golden("recommend_cf.txt") ? 0 : 1;

    auto rag_req = req;
    rag_req.retrieved_memory = "{retrieval_user_agent_memory}";
    agents::Recommender rag(agents::Flavor::rag, fixtures::templates());
    diffs += rag.render_prompt(rag_req) == golden("recommend_rag.txt") ? 0 : 1;

    auto seq_req = req;
    seq_req.history = {{"{interacted_item_title}", "{interacted_item_memory}", 1},
                       {"{interacted_item_title}", "{interacted_item_memory}", 2}};
    agents::Recommender seq(agents::Flavor::seq, fixtures::templates());
    diffs += seq.render_prompt(seq_req) == golden("recommend_seq.txt") ? 0 : 1;
    return {diffs == 0, std::to_string(diffs) + " of 3 flavors differ from golden"};
}

Outcome perplexity_sanity()
{
    auto uniform = fixtures::make_mock(llm::BackendRole::surrogate, {{"scoring", {{"base", "uniform"}}}});
    const double ppl_uniform = llm::perplexity(*uniform, "The sorted CDs are:\n1. Hollow Meridian\n");

    // Trigger produced by the search under the shipped mocks.
    const auto ctx = search_context();
    auto surrogate = fixtures::shipped(llm::BackendRole::surrogate);
    auto aux = fixtures::shipped(llm::BackendRole::auxiliary);
    search::SearchConfig cfg;
    cfg.epochs = 5;
    cfg.pool_size = 6;
    cfg.elite_count = 3;
    cfg.target_output = search::target_output_for(ctx.target_title, ctx.item_noun);
    const auto trigger = search::run_search(ctx, cfg, *surrogate, *aux, fixtures::templates()).best.text;

    auto bigram = fixtures::make_mock(llm::BackendRole::surrogate, {{"scoring", {{"base", "bigram"}}}});
    const double ppl_trigger = llm::perplexity(*bigram, trigger);
    std::mt19937_64 rng(2024);
    int lower = 0, compared = 0;
    double min_shuffled = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kShuffles; ++i) {
        auto shuffled = trigger;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        if (shuffled == trigger)
            continue;
        ++compared;
        const double p = llm::perplexity(*bigram, shuffled);
        min_shuffled = std::min(min_shuffled, p);
        lower += ppl_trigger < p ? 1 : 0;
    }
    bool ok = std::abs(ppl_uniform - 256.0) <= kPerplexityTolerance && compared > 0 && lower == compared;
    return {ok, "uniform " + fmt(ppl_uniform, 9) + ", trigger " + fmt(ppl_trigger, 2) + " vs shuffled min " +
                    fmt(min_shuffled, 2) + " (" + std::to_string(lower) + "/" + std::to_string(compared) + ")"};
}

} // namespace

int main()
{
    const std::vector<Criterion> criteria = {
        {1, "metric fidelity", kBudgetMetricFidelity, metric_fidelity},
        {2, "metric oracle", kBudgetMetricOracle, metric_oracle},
        {3, "search convergence", kBudgetSearch, search_convergence},
        {4, "softmax selection", kBudgetSoftmax, softmax_selection},
        {5, "crossover conservation", kBudgetCrossover, crossover_conservation},
        {6, "drunk-rate reproduction", kBudgetDrunkRate, drunk_rate},
        {7, "ordering optimizer correctness", kBudgetOptimizer, optimizer_correctness},
        {8, "end-to-end smoke", kBudgetEndToEnd, end_to_end},
        {9, "determinism and resumability", kBudgetDeterminism, determinism_and_resume},
        {10, "template fidelity", kBudgetTemplates, template_fidelity},
        {11, "perplexity sanity", kBudgetPerplexity, perplexity_sanity},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.check();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds < c.budget_seconds;
        const bool pass = outcome.pass && in_time;
        failures += pass ? 0 : 1;
        std::printf("%s criterion %2d %-31s %s [%.3f s / %.0f s budget%s]\n", pass ? "PASS" : "FAIL", c.id,
                    c.name.c_str(), outcome.detail.c_str(), seconds, c.budget_seconds,
                    in_time ? "" : ", OVER BUDGET");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
