// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/gateway.hpp"
#include "memcorrupt/io.hpp"
#include "memcorrupt/mock_backend.hpp"
#include "memcorrupt/template.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

namespace memcorrupt::fixtures {

inline std::filesystem::path template_dir()
{
    return MEMCORRUPT_TEST_TEMPLATE_DIR;
}

inline std::filesystem::path fixture_dir()
{
    return MEMCORRUPT_TEST_FIXTURE_DIR;
}

inline std::filesystem::path golden_dir()
{
    return MEMCORRUPT_TEST_GOLDEN_DIR;
}

inline const TemplateStore& templates()
{
    static const TemplateStore store(template_dir());
    return store;
}

inline nlohmann::json shipped_mock(const std::string& role)
{
    return io::read_json(template_dir() / "mock" / (role + ".json"));
}

inline std::shared_ptr<llm::MockBackend> make_mock(llm::BackendRole role, nlohmann::json table,
                                                   std::uint64_t seed = 2024)
{
    llm::BackendConfig cfg(role);
    cfg.mock = std::move(table);
    cfg.seed = seed;
    return std::make_shared<llm::MockBackend>(std::move(cfg));
}

inline std::shared_ptr<llm::MockBackend> shipped(llm::BackendRole role, std::uint64_t seed = 2024)
{
    return make_mock(role, shipped_mock(std::string(llm::to_string(role))), seed);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("memcorrupt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Backend whose calls fail with a transport error a fixed number of times.
class FlakyBackend : public llm::Backend {
public:
    FlakyBackend(llm::BackendConfig cfg, int failures, std::string reply = "ok")
        : llm::Backend(std::move(cfg)), failures_(failures), reply_(std::move(reply))
    {
    }
    std::atomic<int> calls{0};

protected:
    std::string do_generate(const llm::ChatExchange&) override
    {
        if (calls++ < failures_)
            throw llm::TransportError("simulated outage");
        return reply_;
    }
    llm::SequenceScore do_score(std::string_view, std::string_view target) override
    {
        if (calls++ < failures_)
            throw llm::TransportError("simulated outage");
        llm::SequenceScore s;
        s.per_token_nll.assign(target.size(), 1.0);
        s.total_nll = static_cast<double>(target.size());
        return s;
    }

private:
    int failures_;
    std::string reply_;
};

inline std::string random_word(std::mt19937_64& rng)
{
    static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ra", "ten", "vo", "su", "ne", "pi", "dar"};
    std::uniform_int_distribution<int> len(1, 3), pick(0, 9);
    std::string w;
    for (int i = len(rng); i > 0; --i)
        w += kSyllables[pick(rng)];
    return w;
}

/// Prose-like text: words, spaces, commas and sentence punctuation.
inline std::string random_text(std::mt19937_64& rng, int max_sentences = 5)
{
    static constexpr char kEnds[] = {'.', '!', '?', ';'};
    std::uniform_int_distribution<int> sentences(0, max_sentences), words(1, 8), end(0, 3), coin(0, 5);
    std::string out;
    int n = sentences(rng);
    for (int s = 0; s < n; ++s) {
        if (!out.empty())
            out += coin(rng) == 0 ? "  " : " ";
        for (int w = words(rng); w > 0; --w) {
            out += random_word(rng);
            if (w > 1)
                out += coin(rng) == 0 ? ", " : " ";
        }
        out.push_back(kEnds[end(rng)]);
        if (coin(rng) == 0)
            out.push_back(kEnds[end(rng)]);
    }
    if (coin(rng) < 2) {
        if (!out.empty())
            out.push_back(' ');
        out += random_word(rng);
    }
    return out;
}

} // namespace memcorrupt::fixtures
