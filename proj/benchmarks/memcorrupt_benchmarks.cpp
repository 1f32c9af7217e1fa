// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/agents.hpp"
#include "memcorrupt/evaluation.hpp"
#include "memcorrupt/io.hpp"
#include "memcorrupt/mock_backend.hpp"
#include "memcorrupt/trigger_search.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace memcorrupt;

namespace {

std::shared_ptr<llm::MockBackend> surrogate()
{
    llm::BackendConfig cfg(llm::BackendRole::surrogate);
    cfg.mock = io::read_json(std::filesystem::path(MEMCORRUPT_BENCH_TEMPLATE_DIR) / "mock" / "surrogate.json");
    return std::make_shared<llm::MockBackend>(std::move(cfg));
}

std::string sentence_text(std::size_t sentences)
{
    std::string out;
    for (std::size_t i = 0; i < sentences; ++i)
        out += "The record number " + std::to_string(i) + " is a prime choice for listeners. ";
    return out;
}

} // namespace

static void BM_ScoreSequence(benchmark::State& state)
{
    auto model = surrogate();
    const auto prompt = sentence_text(static_cast<std::size_t>(state.range(0)));
    const auto target = search::target_output_for("Hollow Meridian");
    for (auto _ : state)
        benchmark::DoNotOptimize(model->score_sequence(prompt, target));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * (prompt.size() + target.size())));
}
BENCHMARK(BM_ScoreSequence)->Arg(4)->Arg(32)->Arg(128);

static void BM_Crossover(benchmark::State& state)
{
    const auto a = sentence_text(static_cast<std::size_t>(state.range(0)));
    const auto b = sentence_text(static_cast<std::size_t>(state.range(0)) + 1);
    std::mt19937_64 rng(2024);
    for (auto _ : state)
        benchmark::DoNotOptimize(search::crossover(a, b, rng));
}
BENCHMARK(BM_Crossover)->Arg(3)->Arg(20);

static void BM_ParseRanking(benchmark::State& state)
{
    std::vector<std::string> titles;
    std::string raw = "The sorted CDs are:\n";
    for (int i = 0; i < 10; ++i) {
        titles.push_back("Album Title Number " + std::to_string(i));
        raw += std::to_string(i + 1) + ". " + titles.back() + (i % 3 == 0 ? " (Remastered)" : "") + "\n";
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(agents::parse_ranking(raw, titles));
}
BENCHMARK(BM_ParseRanking);

static void BM_ExposureMetrics(benchmark::State& state)
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> rank(1, 10);
    std::vector<std::size_t> ranks(static_cast<std::size_t>(state.range(0)));
    for (auto& r : ranks)
        r = rank(rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(eval::exposure_metrics(ranks, {1, 2, 3}));
}
BENCHMARK(BM_ExposureMetrics)->Arg(100)->Arg(10000);
BENCHMARK_MAIN();
