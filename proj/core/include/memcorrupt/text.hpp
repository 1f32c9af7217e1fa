// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace memcorrupt::text {

/// Characters that end a slice (and a sentence) for crossover and truncation.
inline constexpr std::string_view kSliceBoundaries = ".;!?";

/// Splits text into slices, each ending right after a boundary character.
/// Whitespace before a slice stays attached to it so that concatenating the
/// slices reproduces the input byte-for-byte. Trailing text without a
/// boundary becomes the last slice.
std::vector<std::string> split_slices(std::string_view input);

/// True if the text contains at least one boundary character.
bool has_slice_boundary(std::string_view input);

std::string_view trim(std::string_view input);
std::string to_lower(std::string_view input);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> word_tokens(std::string_view input);

/// Whitespace-separated word count.
std::size_t word_count(std::string_view input);

/// Lower-case, drop punctuation, collapse whitespace.
std::string normalize(std::string_view input);

std::string first_sentence(std::string_view input);

/// Keeps whole sentences while the running word count stays within `limit`.
/// Falls back to a hard word cut when even the first sentence is too long.
std::string truncate_words(std::string_view input, std::size_t limit);

std::string replace_all(std::string input, std::string_view from, std::string_view to);

std::string join(const std::vector<std::string>& parts, std::string_view separator);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer; used to derive independent streams from one hash.
std::uint64_t mix64(std::uint64_t x);

std::string sha256_hex(std::string_view data);

std::string number_word(std::size_t n);

} // namespace memcorrupt::text
