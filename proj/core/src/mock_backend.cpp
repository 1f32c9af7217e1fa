// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/mock_backend.hpp"

#include "memcorrupt/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>
#include <set>

namespace memcorrupt::llm {

using nlohmann::json;

namespace mock {

std::string_view default_bigram_corpus()
{
    static constexpr std::string_view kCorpus =
        "The album opens with a warm and steady groove that carries the listener through every track. "
        "Critics praised the record for its honest songwriting, rich production and memorable melodies. "
        "This collection brings together the best songs of the decade in one beautiful package. "
        "Fans of classic rock and modern pop will find something to enjoy here. "
        "The band recorded the songs live in the studio, and the energy of the performance shines through. "
        "It is a timeless choice for anyone who loves great music and wants a reliable favorite on the shelf. "
        "The sound is clear, the vocals are strong, and the arrangements are thoughtful from start to finish. "
        "Many listeners say that this is the record they return to most often when they want to relax. "
        "The office chair is comfortable and sturdy, with a simple design that fits any room. "
        "These pens write smoothly and the ink dries quickly on most kinds of paper. "
        "The guitar strings stay in tune for a long time and give a bright and balanced tone. "
        "Users who enjoy this item often recommend it to their friends and family. "
        "Overall, it is a popular and well loved product with excellent reviews from customers.";
    return kCorpus;
}

std::string extract_subject(std::string_view text)
{
    constexpr std::string_view kFence = "\"\"\"";
    auto close = text.rfind(kFence);
    if (close == std::string_view::npos || close < kFence.size())
        return std::string(text);
    auto open = text.rfind(kFence, close - 1);
    if (open == std::string_view::npos)
        return std::string(text);
    return std::string(text.substr(open + kFence.size(), close - open - kFence.size()));
}

std::vector<CandidateBlock> extract_candidates(std::string_view prompt)
{
    constexpr std::string_view kTitle = "title: ";
    constexpr std::string_view kFeatures = ", where its features: ";

    struct Header {
        std::size_t line_start;
        std::size_t memory_start;
        std::string title;
    };
    std::vector<Header> headers;
    std::size_t line_start = 0;
    while (line_start <= prompt.size()) {
        auto line_end = prompt.find('\n', line_start);
        if (line_end == std::string_view::npos)
            line_end = prompt.size();
        auto line = prompt.substr(line_start, line_end - line_start);
        auto t = line.find(kTitle);
        auto f = t == std::string_view::npos ? t : line.find(kFeatures, t);
        if (t != std::string_view::npos && f != std::string_view::npos) {
            headers.push_back({line_start, line_start + f + kFeatures.size(),
                               std::string(line.substr(t + kTitle.size(), f - t - kTitle.size()))});
        }
        if (line_end == prompt.size())
            break;
        line_start = line_end + 1;
    }

    std::vector<CandidateBlock> blocks;
    for (std::size_t i = 0; i < headers.size(); ++i) {
        std::size_t end = i + 1 < headers.size() ? headers[i + 1].line_start : prompt.size();
        auto blank = prompt.find("\n\n", headers[i].memory_start);
        if (blank != std::string_view::npos && blank < end)
            end = blank;
        auto memory = prompt.substr(headers[i].memory_start, end - headers[i].memory_start);
        blocks.push_back({headers[i].title, std::string(text::trim(memory))});
    }
    return blocks;
}

} // namespace mock

// ---------------------------------------------------------------------------
// Scoring model

ScoringModel::ScoringModel(const json& def, std::uint64_t seed) : seed_(seed)
{
    auto base = def.value("base", std::string("hashed"));
    if (base == "uniform") {
        base_ = Base::uniform;
    } else if (base == "bigram") {
        base_ = Base::bigram;
        auto corpus = def.value("bigram_corpus", std::string(mock::default_bigram_corpus()));
        // 257 rows: one per previous byte plus a start-of-text row.
        std::vector<std::array<double, 256>> counts(257);
        for (auto& row : counts)
            row.fill(1.0);
        unsigned prev = 256;
        for (unsigned char c : corpus) {
            counts[prev][c] += 1.0;
            prev = c;
        }
        for (auto& row : counts) {
            double total = 0.0;
            for (double v : row)
                total += v;
            for (double& v : row)
                v /= total;
        }
        bigram_ = std::move(counts);
    } else if (base == "hashed") {
        base_ = Base::hashed;
        sharpness_ = def.value("sharpness", 3.0);
    } else {
        throw PreconditionError("unknown mock scoring base: " + base);
    }

    for (const auto& m : def.value("modifiers", json::array())) {
        Modifier mod;
        auto type = m.at("type").get<std::string>();
        mod.prob = m.value("prob", 0.5);
        mod.when_contains = m.value("when_context_contains", std::string());
        if (type == "boost") {
            mod.kind = Modifier::Kind::boost;
            auto b = m.at("byte").get<std::string>();
            if (b.size() != 1)
                throw PreconditionError("boost modifier needs a single byte");
            mod.byte = static_cast<unsigned char>(b[0]);
        } else if (type == "continuation") {
            mod.kind = Modifier::Kind::continuation;
            mod.text = m.at("text").get<std::string>();
            if (mod.text.empty())
                throw PreconditionError("continuation modifier needs non-empty text");
            if (m.contains("probs"))
                mod.probs = m.at("probs").get<std::vector<double>>();
        } else if (type == "copy") {
            mod.kind = Modifier::Kind::copy;
            mod.min_match = m.value("min_match", std::size_t{3});
        } else {
            throw PreconditionError("unknown mock scoring modifier: " + type);
        }
        if (mod.prob < 0.0 || mod.prob > 1.0)
            throw PreconditionError("modifier probability outside [0, 1]");
        modifiers_.push_back(std::move(mod));
    }
}

ScoringModel::Distribution ScoringModel::base_distribution(std::string_view context) const
{
    Distribution dist{};
    switch (base_) {
    case Base::uniform:
        dist.fill(1.0 / 256.0);
        break;
    case Base::bigram: {
        unsigned prev = context.empty() ? 256u : static_cast<unsigned char>(context.back());
        dist = bigram_[prev];
        break;
    }
    case Base::hashed: {
        constexpr std::size_t kWindow = 4;
        auto window = context.substr(context.size() > kWindow ? context.size() - kWindow : 0);
        auto h = text::fnv1a64(window, text::mix64(seed_));
        double max_logit = 0.0;
        for (unsigned b = 0; b < 256; ++b) {
            auto r = text::mix64(h + b);
            dist[b] = sharpness_ * static_cast<double>(r >> 11) / static_cast<double>(1ULL << 53);
            max_logit = std::max(max_logit, dist[b]);
        }
        double total = 0.0;
        for (double& v : dist) {
            v = std::exp(v - max_logit);
            total += v;
        }
        for (double& v : dist)
            v /= total;
        break;
    }
    }
    return dist;
}

std::optional<std::pair<unsigned char, double>> ScoringModel::prediction(const Modifier& m,
                                                                         std::string_view context) const
{
    if (!m.when_contains.empty() && context.find(m.when_contains) == std::string_view::npos)
        return std::nullopt;

    switch (m.kind) {
    case Modifier::Kind::boost:
        return std::pair{m.byte, m.prob};
    case Modifier::Kind::continuation: {
        // Longest context suffix that is a proper prefix of the text.
        std::size_t longest = std::min(m.text.size() - 1, context.size());
        for (std::size_t k = longest + 1; k-- > 0;) {
            if (context.substr(context.size() - k) == std::string_view(m.text).substr(0, k)) {
                double p = k < m.probs.size() ? m.probs[k] : m.prob;
                return std::pair{static_cast<unsigned char>(m.text[k]), p};
            }
        }
        return std::nullopt;
    }
    case Modifier::Kind::copy: {
        // Induction: the byte that followed the last earlier occurrence of
        // the longest matching context suffix.
        std::optional<unsigned char> predicted;
        for (std::size_t len = m.min_match; len < context.size() && len <= 64; ++len) {
            auto suffix = context.substr(context.size() - len);
            auto pos = context.rfind(suffix, context.size() - len - 1);
            if (pos == std::string_view::npos)
                break;
            predicted = static_cast<unsigned char>(context[pos + len]);
        }
        if (!predicted)
            return std::nullopt;
        return std::pair{*predicted, m.prob};
    }
    }
    return std::nullopt;
}

ScoringModel::Distribution ScoringModel::distribution(std::string_view context) const
{
    auto dist = base_distribution(context);
    for (const auto& m : modifiers_) {
        auto pred = prediction(m, context);
        if (!pred)
            continue;
        auto [byte, p] = *pred;
        double rest = 1.0 - dist[byte];
        for (unsigned b = 0; b < 256; ++b) {
            if (b == byte)
                continue;
            dist[b] = rest > 0.0 ? dist[b] * (1.0 - p) / rest : (1.0 - p) / 255.0;
        }
        dist[byte] = p;
    }
    return dist;
}

double ScoringModel::probability(std::string_view context, unsigned char next) const
{
    return distribution(context)[next];
}

// ---------------------------------------------------------------------------
// Generation rules

struct MockBackend::JsonRule {
    std::vector<std::string> when_contains;
    std::vector<std::string> unless_contains;
    std::optional<std::pair<std::string, std::string>> when_ordered;
    std::string action;
    json params;
};

namespace {

std::string all_content(const ChatExchange& exchange)
{
    std::string out;
    for (const auto& m : exchange.messages) {
        out += m.content;
        out += "\n\n";
    }
    return out;
}

std::string collapse_whitespace(std::string_view input)
{
    std::string out;
    bool space = false;
    for (char c : text::trim(input)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty())
            out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

std::string apply_op(const json& op, std::string subject)
{
    if (op.is_string()) {
        auto name = op.get<std::string>();
        if (name == "identity")
            return subject;
        if (name == "first_sentence")
            return text::first_sentence(subject);
        if (name == "lowercase")
            return text::to_lower(subject);
        if (name == "join_whitespace")
            return collapse_whitespace(subject);
        if (name == "trim")
            return std::string(text::trim(subject));
        throw PreconditionError("unknown mock transform: " + name);
    }
    if (op.contains("synonyms")) {
        for (const auto& [from, to] : op.at("synonyms").items())
            subject = text::replace_all(std::move(subject), from, to.get<std::string>());
        return subject;
    }
    if (op.contains("strip_lines_containing")) {
        auto marker = op.at("strip_lines_containing").get<std::string>();
        std::string out;
        std::size_t start = 0;
        while (start <= subject.size()) {
            auto end = subject.find('\n', start);
            auto line = subject.substr(start, end == std::string::npos ? std::string::npos : end - start);
            if (line.find(marker) == std::string::npos) {
                if (!out.empty())
                    out.push_back('\n');
                out += line;
            }
            if (end == std::string::npos)
                break;
            start = end + 1;
        }
        return std::string(text::trim(out));
    }
    if (op.contains("strip_from"))
        return std::string(text::trim(subject.substr(0, subject.find(op.at("strip_from").get<std::string>()))));
    if (op.contains("append"))
        return subject + op.at("append").get<std::string>();
    if (op.contains("prepend"))
        return op.at("prepend").get<std::string>() + subject;
    if (op.contains("truncate_words"))
        return text::truncate_words(subject, op.at("truncate_words").get<std::size_t>());
    throw PreconditionError("unknown mock transform: " + op.dump());
}

std::string render_ranking(const std::vector<std::string>& titles, const std::string& noun)
{
    std::string out = "The sorted " + noun + "s are:\n";
    for (std::size_t i = 0; i < titles.size(); ++i)
        out += std::to_string(i + 1) + ". " + titles[i] + "\n";
    return out;
}

std::vector<std::string> sentences_of(std::string_view input)
{
    std::vector<std::string> out;
    for (const auto& slice : text::split_slices(input)) {
        auto t = text::trim(slice);
        if (!t.empty())
            out.emplace_back(t);
    }
    return out;
}

} // namespace

MockBackend::MockBackend(BackendConfig config) : Backend(std::move(config))
{
    const auto& def = this->config().mock;
    scoring_ = std::make_unique<ScoringModel>(def.value("scoring", json::object()), this->config().seed);
    for (const auto& r : def.value("rules", json::array())) {
        JsonRule rule;
        rule.when_contains = r.value("when_contains", std::vector<std::string>{});
        rule.unless_contains = r.value("unless_contains", std::vector<std::string>{});
        if (r.contains("when_ordered")) {
            auto pair = r.at("when_ordered").get<std::vector<std::string>>();
            if (pair.size() != 2)
                throw PreconditionError("when_ordered needs exactly two markers");
            rule.when_ordered = std::pair{pair[0], pair[1]};
        }
        rule.action = r.at("action").get<std::string>();
        rule.params = r;
        rules_.push_back(std::move(rule));
    }
}

MockBackend::~MockBackend() = default;

void MockBackend::add_rule(GenerateRule rule)
{
    custom_rules_.push_back(std::move(rule));
}

std::optional<std::string> MockBackend::apply(const JsonRule& rule, const ChatExchange& exchange) const
{
    auto content = all_content(exchange);
    for (const auto& needle : rule.when_contains) {
        if (content.find(needle) == std::string::npos)
            return std::nullopt;
    }
    for (const auto& needle : rule.unless_contains) {
        if (content.find(needle) != std::string::npos)
            return std::nullopt;
    }
    if (rule.when_ordered) {
        auto a = content.find(rule.when_ordered->first);
        auto b = content.find(rule.when_ordered->second);
        if (a == std::string::npos || b == std::string::npos || a >= b)
            return std::nullopt;
    }

    const auto& p = rule.params;
    const auto& action = rule.action;
    const auto& last = exchange.last_user_content();
    auto stream = text::fnv1a64(exchange.serialize(), text::mix64(config().seed));

    if (action == "echo_last_user_line") {
        auto trimmed = text::trim(last);
        auto nl = trimmed.rfind('\n');
        return std::string(nl == std::string_view::npos ? trimmed : trimmed.substr(nl + 1));
    }
    if (action == "fixed")
        return p.at("text").get<std::string>();
    if (action == "transform") {
        auto subject = mock::extract_subject(last);
        for (const auto& op : p.value("ops", json::array({"identity"})))
            subject = apply_op(op, std::move(subject));
        return subject;
    }
    if (action == "regex_template") {
        std::regex pattern(p.at("pattern").get<std::string>());
        std::smatch match;
        if (!std::regex_search(content, match, pattern))
            return std::nullopt;
        auto out = p.at("template").get<std::string>();
        out = text::replace_all(std::move(out), "$subject", mock::extract_subject(last));
        for (std::size_t i = match.size(); i-- > 1;)
            out = text::replace_all(std::move(out), "$" + std::to_string(i), match[i].str());
        return out;
    }
    if (action == "rank") {
        std::vector<mock::CandidateBlock> candidates;
        for (const auto& m : exchange.messages) {
            candidates = mock::extract_candidates(m.content);
            if (!candidates.empty())
                break;
        }
        if (candidates.empty())
            return std::nullopt;
        auto order = p.value("order", std::string("presented"));
        if (order == "reverse") {
            std::reverse(candidates.begin(), candidates.end());
        } else if (order == "memory_length_desc") {
            std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
                return a.memory.size() > b.memory.size();
            });
        } else if (order == "cue_first") {
            auto cue = p.at("cue").get<std::string>();
            std::stable_partition(candidates.begin(), candidates.end(), [&](const auto& c) {
                return c.memory.find(cue) != std::string::npos;
            });
        } else if (order != "presented") {
            throw PreconditionError("unknown rank order: " + order);
        }
        std::vector<std::string> titles;
        for (const auto& c : candidates)
            titles.push_back(c.title);
        return render_ranking(titles, p.value("noun", std::string("CD")));
    }
    if (action == "seed_fragments") {
        auto fragments = p.at("fragments").get<std::vector<std::string>>();
        auto count = std::min(p.value("count", std::size_t{3}), fragments.size());
        std::vector<std::string> chosen;
        std::set<std::size_t> used;
        for (std::uint64_t i = 0; chosen.size() < count; ++i) {
            auto idx = text::mix64(stream + i) % fragments.size();
            if (used.insert(idx).second)
                chosen.push_back(fragments[idx]);
        }
        return text::join(chosen, " ");
    }
    if (action == "enrich") {
        auto fragments = p.value("fragments", std::vector<std::string>{});
        auto probability = p.value("probability", 0.0);
        auto keep = p.value("keep", std::string());
        auto max_sentences = p.value("max_sentences", std::size_t{4});

        std::vector<std::string> sentences;
        for (auto& s : sentences_of(mock::extract_subject(last))) {
            if (std::find(sentences.begin(), sentences.end(), s) == sentences.end())
                sentences.push_back(std::move(s));
        }
        double u = static_cast<double>(text::mix64(stream) >> 11) / static_cast<double>(1ULL << 53);
        if (!fragments.empty() && u < probability) {
            const auto& f = fragments[text::mix64(stream ^ 0x5bd1e995ULL) % fragments.size()];
            if (std::find(sentences.begin(), sentences.end(), f) == sentences.end())
                sentences.insert(sentences.begin(), f);
        }
        if (sentences.size() > max_sentences) {
            std::vector<bool> kept(sentences.size(), false);
            std::size_t n = 0;
            for (std::size_t i = 0; i < sentences.size() && n < max_sentences; ++i) {
                if (!keep.empty() && sentences[i].find(keep) != std::string::npos) {
                    kept[i] = true;
                    ++n;
                }
            }
            for (std::size_t i = 0; i < sentences.size() && n < max_sentences; ++i) {
                if (!kept[i]) {
                    kept[i] = true;
                    ++n;
                }
            }
            std::vector<std::string> trimmed;
            for (std::size_t i = 0; i < sentences.size(); ++i) {
                if (kept[i])
                    trimmed.push_back(sentences[i]);
            }
            sentences = std::move(trimmed);
        }
        return text::join(sentences, " ");
    }
    throw PreconditionError("unknown mock action: " + action);
}

std::string MockBackend::do_generate(const ChatExchange& exchange)
{
    auto serialized = exchange.serialize();
    if (serialized.size() > config().context_window)
        throw ContextOverflow("prompt of " + std::to_string(serialized.size()) +
                              " bytes exceeds mock context window of " +
                              std::to_string(config().context_window));

    for (const auto& rule : custom_rules_) {
        if (auto out = rule(exchange))
            return *out;
    }
    for (const auto& rule : rules_) {
        if (auto out = apply(rule, exchange))
            return *out;
    }

    static constexpr std::array<std::string_view, 16> kWords = {
        "signal", "memory", "amber", "river", "quiet", "orbit", "velvet", "harbor",
        "lantern", "meadow", "copper", "echo", "summit", "drift", "cinder", "willow"};
    auto h = text::fnv1a64(serialized, text::mix64(config().seed));
    std::string out;
    for (int i = 0; i < 12; ++i) {
        if (i > 0)
            out.push_back(' ');
        out += kWords[text::mix64(h + static_cast<std::uint64_t>(i)) % kWords.size()];
    }
    out.push_back('.');
    return out;
}

SequenceScore MockBackend::do_score(std::string_view prompt, std::string_view target)
{
    if (prompt.size() + target.size() > config().context_window)
        throw ContextOverflow("scoring input of " + std::to_string(prompt.size() + target.size()) +
                              " bytes exceeds mock context window of " +
                              std::to_string(config().context_window));

    std::string context(prompt);
    context.reserve(prompt.size() + target.size());
    SequenceScore score;
    score.per_token_nll.reserve(target.size());
    for (char c : target) {
        double p = scoring_->probability(context, static_cast<unsigned char>(c));
        double nll = p >= 1.0 ? 0.0 : p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
        score.per_token_nll.push_back(nll);
        context.push_back(c);
    }
    for (double v : score.per_token_nll)
        score.total_nll += v;
    return score;
}

} // namespace memcorrupt::llm
