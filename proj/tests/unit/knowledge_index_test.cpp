#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "generators.hpp"
#include "medrag/error.hpp"
#include "medrag/knowledge_index.hpp"
#include "oracles.hpp"

namespace {

using namespace medrag;
using namespace medrag::rag;
namespace fs = std::filesystem;

llm::ProviderConfig mock_config() {
  llm::ProviderConfig c;
  c.seed = 7;
  c.embed_dim = 64;
  return c;
}

std::vector<std::string> texts(const std::vector<KnowledgeChunk>& chunks) {
  std::vector<std::string> out;
  for (const auto& c : chunks) out.push_back(c.text);
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Validation;
}

TEST(Chunking, SingleWindow) {
  const auto chunks = chunk_document("d", "0123456789", {10, 0});
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].text, "0123456789");
}

TEST(Chunking, SlidingWindowHandTrace) {
  const std::vector<std::string> expected = {"abcd", "defg", "ghij", "j"};
  const auto chunks = chunk_document("d", "abcdefghij", {4, 1});
  EXPECT_EQ(texts(chunks), expected);
  EXPECT_EQ(chunks[3].start, 9u);
  EXPECT_EQ(chunks[3].chunk_id, 3u);
}

TEST(Chunking, CountsUnicodeScalars) {
  // Six two-byte characters, windows of three.
  const std::string s = "\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa8\xc3\xa8\xc3\xa8";
  const auto chunks = chunk_document("d", s, {3, 0});
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1].text, "\xc3\xa8\xc3\xa8\xc3\xa8");
}

TEST(Chunking, BadPolicy) {
  EXPECT_EQ(code_of([] { chunk_document("d", "abc", {4, 4}); }), ErrorCode::BadPolicy);
  EXPECT_EQ(code_of([] { chunk_document("d", "abc", {0, 0}); }), ErrorCode::BadPolicy);
}

TEST(Chunking, WindowLengthsStayInRange) {
  gen::Source s(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int size = s.integer(1, 40);
    const int overlap = s.integer(0, size - 1);
    std::string text(static_cast<std::size_t>(s.integer(1, 300)), 'x');
    for (auto& c : text) c = static_cast<char>('a' + s.integer(0, 25));
    const auto chunks = chunk_document("d", text, {size, overlap});
    ASSERT_FALSE(chunks.empty());
    for (const auto& c : chunks) {
      EXPECT_GE(c.text.size(), 1u);
      EXPECT_LE(c.text.size(), static_cast<std::size_t>(size));
      EXPECT_EQ(text.substr(c.start, c.text.size()), c.text);
    }
    EXPECT_EQ(chunks.back().start + chunks.back().text.size(), text.size());
  }
}

TEST(Index, ThreeDocsOf1200CharsGiveNineChunks) {
  llm::Gateway g(mock_config());
  Corpus corpus;
  for (int d = 0; d < 3; ++d) {
    std::string text;
    while (text.size() < 1200) text += "word" + std::to_string(text.size() % 97) + " ";
    text.resize(1200);
    corpus.push_back({"doc" + std::to_string(d), text});
  }
  const auto index = build_index(corpus, {512, 64}, g);
  EXPECT_EQ(index.chunks().size(), 9u);
  EXPECT_EQ(index.embed_dim(), 64);
  std::set<std::uint64_t> ids;
  for (const auto& c : index.chunks()) ids.insert(c.chunk_id);
  EXPECT_EQ(ids.size(), 9u);
}

TEST(Index, BuildIsDeterministic) {
  llm::Gateway g(mock_config());
  const Corpus corpus = {{"a", "Fever is common in children."}, {"b", "Cough can follow a cold."}};
  const auto a = build_index(corpus, {}, g);
  const auto b = build_index(corpus, {}, g);
  EXPECT_EQ(a.build_digest(), b.build_digest());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(code_of([&] { build_index({}, {}, g); }), ErrorCode::EmptyCorpus);
}

TEST(Cosine, HandValues) {
  const llm::EmbeddingVector a{{1.0 / 3, 2.0 / 3, 2.0 / 3}};
  const llm::EmbeddingVector b{{2.0 / 3, 1.0 / 3, 2.0 / 3}};
  EXPECT_NEAR(cosine(a, b), 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(cosine(a, a), 1.0, 1e-9);
  EXPECT_EQ(cosine(llm::EmbeddingVector{{1, 0}}, llm::EmbeddingVector{{0, 1}}), 0.0);
  EXPECT_EQ(code_of([] { cosine(llm::EmbeddingVector{{1}}, llm::EmbeddingVector{{1, 0}}); }),
            ErrorCode::DimMismatch);
}

TEST(Retrieve, SingleChunkAndKZero) {
  llm::Gateway g(mock_config());
  const auto index = build_index({{"a", "Only one short paragraph."}}, {}, g);
  EXPECT_EQ(retrieve(index, "anything at all", 3, g).size(), 1u);
  EXPECT_TRUE(retrieve(index, "anything at all", 0, g).empty());
  EXPECT_EQ(code_of([&] { retrieve(index, "  ", 3, g); }), ErrorCode::EmptyQuery);
  EXPECT_EQ(code_of([&] { retrieve(VectorIndex{}, "q", 3, g); }), ErrorCode::EmptyIndex);
}

TEST(Retrieve, TiedTextsOrderByChunkId) {
  llm::Gateway g(mock_config());
  const auto index = build_index({{"a", "same words here"}, {"b", "same words here"}, {"c", "other"}}, {}, g);
  const auto hits = retrieve(index, "same words", 2, g);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].score, hits[1].score);
  EXPECT_LT(hits[0].chunk.chunk_id, hits[1].chunk.chunk_id);
}

TEST(Retrieve, MatchesExhaustiveScanOnRandomChunks) {
  gen::Source s(17);
  std::vector<KnowledgeChunk> chunks;
  for (std::uint64_t id = 0; id < 300; ++id) {
    KnowledgeChunk c;
    c.chunk_id = id;
    c.embedding.values = id % 7 == 6 ? chunks[id - 3].embedding.values : gen::unit_vector(s, 16);
    chunks.push_back(c);
  }
  const VectorIndex index(chunks, 16, {}, "t");
  for (int q = 0; q < 30; ++q) {
    const auto query = q % 3 == 0 ? chunks[static_cast<std::size_t>(7 * q + 6) % 300].embedding.values
                                  : gen::unit_vector(s, 16);
    const auto got = index.search({query}, 5);
    const auto want = oracle::exhaustive_topk(chunks, query, 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].chunk.chunk_id, want[i].first);
      EXPECT_NEAR(got[i].score, want[i].second, 1e-12);
    }
  }
}

TEST(Index, SaveLoadRoundTripAndChecks) {
  llm::Gateway g(mock_config());
  const auto index = build_index({{"a", "Fever and cough in toddlers."}}, {32, 4}, g);
  const auto path = (fs::temp_directory_path() / "medrag_index_test.json").string();
  index.save(path);
  const auto loaded = VectorIndex::load(path, 64);
  EXPECT_EQ(loaded.to_json().dump(), index.to_json().dump());
  EXPECT_EQ(code_of([&] { VectorIndex::load(path, 32); }), ErrorCode::DimMismatch);

  auto j = index.to_json();
  j["schema_version"] = 99;
  EXPECT_EQ(code_of([&] { VectorIndex::from_json(j); }), ErrorCode::VersionMismatch);
  fs::remove(path);
}

TEST(Corpus, DirectoryAndJsonlLoaders) {
  const auto dir = fs::temp_directory_path() / "medrag_corpus_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "b.txt") << "second";
  std::ofstream(dir / "sub" / "a.txt") << "first";
  const auto corpus = load_corpus(dir.string());
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].doc_id, "b.txt");
  EXPECT_EQ(corpus[1].doc_id, "sub/a.txt");

  const auto jsonl = (dir / "c.jsonl").string();
  save_corpus_jsonl(corpus, jsonl);
  const auto again = load_corpus(jsonl);
  ASSERT_EQ(again.size(), 2u);
  EXPECT_EQ(again[1].text, "first");
  fs::remove_all(dir);
}

}  // namespace
