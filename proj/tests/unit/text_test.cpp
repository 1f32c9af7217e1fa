// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/text.hpp"

#include <gtest/gtest.h>

using namespace memcorrupt;

TEST(SplitSlices, KeepsLeadingWhitespaceWithFollowingSlice)
{
    auto slices = text::split_slices("One. Two! Three");
    ASSERT_EQ(slices.size(), 3u);
    EXPECT_EQ(slices[0], "One.");
    EXPECT_EQ(slices[1], " Two!");
    EXPECT_EQ(slices[2], " Three");
}

TEST(SplitSlices, AbsorbsPunctuationRuns)
{
    auto slices = text::split_slices("Wow!!! Really?! ok;");
    ASSERT_EQ(slices.size(), 3u);
    EXPECT_EQ(slices[0], "Wow!!!");
    EXPECT_EQ(slices[1], " Really?!");
    EXPECT_EQ(slices[2], " ok;");
}

TEST(SplitSlices, EmptyInputHasNoSlices)
{
    EXPECT_TRUE(text::split_slices("").empty());
    EXPECT_FALSE(text::has_slice_boundary("no boundary here"));
    EXPECT_TRUE(text::has_slice_boundary("one; two"));
}

TEST(Normalize, LowercasesAndDropsPunctuation)
{
    EXPECT_EQ(text::normalize("  Hello,   World!  "), "hello world");
    EXPECT_EQ(text::word_count("a  b\tc\n"), 3u);
    EXPECT_EQ(text::word_tokens("Rock'n'Roll 2"), (std::vector<std::string>{"rock", "n", "roll", "2"}));
}

TEST(FirstSentence, StopsAtFirstBoundary)
{
    EXPECT_EQ(text::first_sentence("  Alpha beta. Gamma."), "Alpha beta.");
    EXPECT_EQ(text::first_sentence("no boundary"), "no boundary");
    EXPECT_EQ(text::first_sentence(""), "");
}

TEST(TruncateWords, KeepsWholeSentencesWithinLimit)
{
    EXPECT_EQ(text::truncate_words("One two. Three four five. Six.", 4), "One two.");
    EXPECT_EQ(text::truncate_words("One two.", 4), "One two.");
}

TEST(TruncateWords, HardCutWhenFirstSentenceOverruns)
{
    EXPECT_EQ(text::truncate_words("one two three four five six.", 3), "one two three");
}

TEST(ReplaceAll, ReplacesEveryOccurrenceWithoutRescanning)
{
    EXPECT_EQ(text::replace_all("aXbXc", "X", "XX"), "aXXbXXc");
    EXPECT_EQ(text::replace_all("abc", "", "z"), "abc");
}

TEST(Sha256, MatchesPublishedTestVectors)
{
    EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(text::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Fnv1a, MatchesReferenceValues)
{
    EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(NumberWord, SpellsSmallNumbers)
{
    EXPECT_EQ(text::number_word(10), "ten");
    EXPECT_EQ(text::number_word(0), "zero");
    EXPECT_EQ(text::number_word(21), "21");
}
