// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace mp = memcorrupt::pipeline;

namespace {

struct Flags {
    std::string config;
    bool resume = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> victim;
    bool mock = false;
    std::optional<int> halt_after_epoch;
};

void add_common(CLI::App& cmd, Flags& flags)
{
    cmd.add_option("--config", flags.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd.add_flag("--resume", flags.resume, "Skip completed stages and continue from checkpoints");
    cmd.add_option("--seed", flags.seed, "Global seed for every random consumer");
    cmd.add_option("--victim", flags.victim, "Victim recommender flavor")
        ->check(CLI::IsMember({"cf", "rag", "seq"}));
    cmd.add_flag("--mock", flags.mock, "Route every backend to the offline mock");
    cmd.add_option("--halt-after-epoch", flags.halt_after_epoch)->group("");
}

int run(const std::string& command, const Flags& flags)
{
    auto config = mp::RunConfig::load(flags.config);
    if (flags.seed)
        config.set_seed(*flags.seed);
    if (flags.victim)
        config.victim = memcorrupt::agents::parse_flavor(*flags.victim);
    if (flags.mock)
        config.force_mock();

    mp::RunOptions options;
    options.resume = flags.resume;
    options.halt_after_epoch = flags.halt_after_epoch;
    mp::Pipeline pipeline(std::move(config), options);

    if (command == "ingest")
        pipeline.ingest();
    else if (command == "attack")
        pipeline.attack();
    else if (command == "evaluate")
        pipeline.evaluate();
    else if (command == "report")
        pipeline.report();
    else
        pipeline.all();

    const auto& stages = pipeline.manifest().stages;
    for (const auto& stage : mp::kStages) {
        if (auto it = stages.find(stage); it != stages.end())
            std::cout << stage << ": " << it->second.status << "\n";
    }
    std::cout << "output: " << pipeline.config().output_dir.string() << "\n";
    return mp::kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Memory-corruption attack toolkit for agentic recommenders"};
    app.set_version_flag("--version", std::string(mp::library_version()));
    app.require_subcommand(1);

    Flags flags;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"ingest", "Load the dataset and write a corpus snapshot"},
        {"attack", "Search a trigger and a drunk strategy for the target item"},
        {"evaluate", "Simulate benign and attacked conditions on the victim"},
        {"report", "Write report.csv and report.json"},
        {"all", "Run every stage in order"},
    };
    for (const auto& [name, help] : commands)
        add_common(*app.add_subcommand(name, help), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? mp::kExitOk : mp::kExitConfig;
    }

    const auto* chosen = app.get_subcommands().front();
    try {
        return run(chosen->get_name(), flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mp::exit_code_for(e);
    }
}
