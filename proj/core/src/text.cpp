// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/text.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

namespace memcorrupt::text {

namespace {

bool is_boundary(char c)
{
    return kSliceBoundaries.find(c) != std::string_view::npos;
}

bool is_space(char c)
{
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

} // namespace

std::vector<std::string> split_slices(std::string_view input)
{
    std::vector<std::string> slices;
    std::size_t start = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (!is_boundary(input[i]))
            continue;
        // Absorb runs like "!!!" or "?!" into the same slice.
        while (i + 1 < input.size() && is_boundary(input[i + 1]))
            ++i;
        slices.emplace_back(input.substr(start, i + 1 - start));
        start = i + 1;
    }
    if (start < input.size())
        slices.emplace_back(input.substr(start));
    return slices;
}

bool has_slice_boundary(std::string_view input)
{
    return std::any_of(input.begin(), input.end(), is_boundary);
}

std::string_view trim(std::string_view input)
{
    while (!input.empty() && is_space(input.front()))
        input.remove_prefix(1);
    while (!input.empty() && is_space(input.back()))
        input.remove_suffix(1);
    return input;
}

std::string to_lower(std::string_view input)
{
    std::string out(input);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> word_tokens(std::string_view input)
{
    std::vector<std::string> tokens;
    std::string current;
    for (char c : input) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty())
        tokens.push_back(std::move(current));
    return tokens;
}

std::size_t word_count(std::string_view input)
{
    std::size_t count = 0;
    bool in_word = false;
    for (char c : input) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

std::string normalize(std::string_view input)
{
    return join(word_tokens(input), " ");
}

std::string first_sentence(std::string_view input)
{
    auto slices = split_slices(trim(input));
    if (slices.empty())
        return {};
    return std::string(trim(slices.front()));
}

std::string truncate_words(std::string_view input, std::size_t limit)
{
    if (word_count(input) <= limit)
        return std::string(input);

    std::string kept;
    std::size_t words = 0;
    for (const auto& slice : split_slices(input)) {
        auto n = word_count(slice);
        if (words + n > limit)
            break;
        kept += slice;
        words += n;
    }
    if (!trim(kept).empty())
        return std::string(trim(kept));

    // First sentence alone overruns: hard cut at the word limit.
    std::istringstream in{std::string(input)};
    std::string word;
    std::vector<std::string> words_kept;
    while (words_kept.size() < limit && in >> word)
        words_kept.push_back(word);
    return join(words_kept, " ");
}

std::string replace_all(std::string input, std::string_view from, std::string_view to)
{
    if (from.empty())
        return input;
    std::size_t pos = 0;
    while ((pos = input.find(from, pos)) != std::string::npos) {
        input.replace(pos, from.size(), to);
        pos += to.size();
    }
    return input;
}

std::string join(const std::vector<std::string>& parts, std::string_view separator)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0)
            out += separator;
        out += parts[i];
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string sha256_hex(std::string_view data)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> buffer{};
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), buffer.data(), &length, EVP_sha256(), nullptr);
    std::string_view digest(reinterpret_cast<const char*>(buffer.data()), length);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(digest.size() * 2);
    for (char c : digest) {
        auto b = static_cast<unsigned char>(c);
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xf]);
    }
    return out;
}

std::string number_word(std::size_t n)
{
    static constexpr std::array<const char*, 21> kWords = {
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
        "nineteen", "twenty"};
    if (n < kWords.size())
        return kWords[n];
    return std::to_string(n);
}

} // namespace memcorrupt::text
