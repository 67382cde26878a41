#include <gtest/gtest.h>

#include "medrag/text.hpp"

namespace {

using namespace medrag::text;

TEST(Text, NfcComposesDecomposedAccent) {
  // "e" + combining acute -> precomposed U+00E9.
  EXPECT_EQ(nfc("caf\x65\xcc\x81"), "caf\xc3\xa9");
  EXPECT_EQ(nfc("plain"), "plain");
}

TEST(Text, InvalidBytesBecomeReplacementCharacter) {
  const auto scalars = decode_utf8("a\xff" "b");
  ASSERT_EQ(scalars.size(), 3u);
  EXPECT_EQ(scalars[1], U'�');
}

TEST(Text, ScalarLengthAndHeadCountCodePoints) {
  const std::string s = "\xe4\xbd\xa0\xe5\xa5\xbd!";  // two CJK characters and '!'
  EXPECT_EQ(scalar_length(s), 3u);
  EXPECT_EQ(head(s, 1), "\xe4\xbd\xa0");
  EXPECT_EQ(head(s, 10), s);
  EXPECT_EQ(encode_utf8(decode_utf8(s)), s);
}

TEST(Text, TrimAndLower) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(rtrim("  a  "), "  a");
  EXPECT_EQ(to_lower_ascii("Sleep QUALITY"), "sleep quality");
}

TEST(Text, TokenizeSplitsOnNonAlphanumerics) {
  const std::vector<std::string> expected = {"sleep", "0", "6", "bad", "night"};
  EXPECT_EQ(tokenize("Sleep: 0.6 -- bad night!"), expected);
  EXPECT_TRUE(tokenize(" ,.; ").empty());
}

TEST(Text, SplitKeepsEmptyFieldsAndJoinInverts) {
  const std::vector<std::string> parts = {"a", "", "b"};
  EXPECT_EQ(split("a,,b", ','), parts);
  EXPECT_EQ(join(parts, ","), "a,,b");
}

TEST(Text, FeatureNameGrammar) {
  EXPECT_TRUE(is_feature_name("sleep_quality"));
  EXPECT_TRUE(is_feature_name("_x1"));
  EXPECT_FALSE(is_feature_name("1x"));
  EXPECT_FALSE(is_feature_name("a-b"));
  EXPECT_FALSE(is_feature_name(""));
}

}  // namespace
