#include <gtest/gtest.h>

#include "medrag/digest.hpp"

namespace {

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(medrag::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(medrag::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, BuilderSeparatesFieldBoundaries) {
  medrag::DigestBuilder a;
  medrag::DigestBuilder b;
  a.add("ab").add("c");
  b.add("a").add("bc");
  EXPECT_NE(a.hex(), b.hex());
}

TEST(Digest, BuilderIsDeterministic) {
  auto make = [] {
    medrag::DigestBuilder d;
    d.add("x").add(0.25).add(7LL);
    return d.hex();
  };
  EXPECT_EQ(make(), make());
}

}  // namespace
