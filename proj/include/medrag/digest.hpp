#pragma once

#include <string>
#include <string_view>

namespace medrag {

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// Incremental digest over length-prefixed fields, so ("ab","c") and
/// ("a","bc") hash differently.
class DigestBuilder {
 public:
  DigestBuilder& add(std::string_view field);
  DigestBuilder& add(double value);
  DigestBuilder& add(long long value);
  std::string hex() const;

 private:
  std::string buffer_;
};

}  // namespace medrag
