#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace medrag::text {

/// NFC-normalize UTF-8 text. Invalid sequences are replaced with U+FFFD.
std::string nfc(std::string_view utf8);

/// Decode UTF-8 into Unicode scalar values (invalid bytes become U+FFFD).
std::u32string decode_utf8(std::string_view utf8);
std::string encode_utf8(std::u32string_view scalars);

/// Number of Unicode scalar values.
std::size_t scalar_length(std::string_view utf8);

/// First n scalar values of the text.
std::string head(std::string_view utf8, std::size_t n);

std::string trim(std::string_view s);
std::string rtrim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

/// Lowercased alphanumeric tokens (Unicode-aware), split on everything else.
std::vector<std::string> tokenize(std::string_view utf8);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Matches [A-Za-z_][A-Za-z0-9_]*.
bool is_feature_name(std::string_view s);

}  // namespace medrag::text
