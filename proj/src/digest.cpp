#include "medrag/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>

#include <fmt/format.h>

#include "medrag/error.hpp"

namespace medrag {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    fail(ErrorCode::Config, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

DigestBuilder& DigestBuilder::add(std::string_view field) {
  buffer_ += std::to_string(field.size());
  buffer_.push_back(':');
  buffer_.append(field);
  return *this;
}

DigestBuilder& DigestBuilder::add(double value) {
  return add(std::string_view(fmt::format("{}", value)));
}

DigestBuilder& DigestBuilder::add(long long value) {
  return add(std::string_view(std::to_string(value)));
}

std::string DigestBuilder::hex() const { return sha256_hex(buffer_); }

}  // namespace medrag
