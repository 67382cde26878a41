#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/gateway.hpp"

namespace medrag::rag {

struct ChunkPolicy {
  int chunk_size_chars = 512;
  int overlap_chars = 64;

  /// Throws BadPolicy unless 1 <= size and 0 <= overlap < size.
  void validate() const;
};

struct KnowledgeChunk {
  std::uint64_t chunk_id = 0;
  std::string doc_id;
  /// Offset of the chunk in its document, in Unicode scalar values.
  std::size_t start = 0;
  std::string text;
  llm::EmbeddingVector embedding;
};

struct ScoredChunk {
  KnowledgeChunk chunk;
  double score = 0.0;
};

struct Document {
  std::string doc_id;
  std::string text;
};

using Corpus = std::vector<Document>;

/// Plain-text files under a directory (doc_id = relative path, sorted).
Corpus load_corpus_dir(const std::string& dir);
/// JSONL of {doc_id, text}.
Corpus load_corpus_jsonl(const std::string& path);
/// Directory or JSONL, by what the path is.
Corpus load_corpus(const std::string& path);
void save_corpus_jsonl(const Corpus& corpus, const std::string& path);

/// Sliding windows of chunk_size_chars advancing by (size - overlap) while the
/// window start is inside the text. chunk_ids count from 0 within the document.
std::vector<KnowledgeChunk> chunk_document(const std::string& doc_id, const std::string& text,
                                           const ChunkPolicy& policy);

/// Dot product of two unit vectors; throws DimMismatch.
double cosine(const llm::EmbeddingVector& a, const llm::EmbeddingVector& b);

class VectorIndex {
 public:
  static constexpr int kSchemaVersion = 1;

  VectorIndex() = default;
  VectorIndex(std::vector<KnowledgeChunk> chunks, int embed_dim, ChunkPolicy policy,
              std::string build_digest);

  const std::vector<KnowledgeChunk>& chunks() const { return chunks_; }
  int embed_dim() const { return embed_dim_; }
  const ChunkPolicy& policy() const { return policy_; }
  const std::string& build_digest() const { return build_digest_; }
  bool empty() const { return chunks_.empty(); }

  /// Exhaustive scan; min(k, size) results ordered by (score desc, chunk_id asc).
  std::vector<ScoredChunk> search(const llm::EmbeddingVector& query, std::size_t k) const;

  nlohmann::json to_json() const;
  /// Throws VersionMismatch / DimMismatch / Parse.
  static VectorIndex from_json(const nlohmann::json& j, int expected_dim = 0);
  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path, int expected_dim = 0);

 private:
  std::vector<KnowledgeChunk> chunks_;
  int embed_dim_ = 0;
  ChunkPolicy policy_;
  std::string build_digest_;
};

VectorIndex build_index(const Corpus& corpus, const ChunkPolicy& policy, llm::Gateway& gateway);

/// Embeds the query and searches. k = 0 returns nothing.
std::vector<ScoredChunk> retrieve(const VectorIndex& index, const std::string& query,
                                  std::size_t k, llm::Gateway& gateway);

}  // namespace medrag::rag
