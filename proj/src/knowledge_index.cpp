#include "medrag/knowledge_index.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag::rag {

namespace fs = std::filesystem;

void ChunkPolicy::validate() const {
  if (chunk_size_chars < 1) fail(ErrorCode::BadPolicy, "chunk_size_chars must be >= 1");
  if (overlap_chars < 0 || overlap_chars >= chunk_size_chars) {
    fail(ErrorCode::BadPolicy, "overlap_chars must be in [0, chunk_size_chars)");
  }
}

Corpus load_corpus_dir(const std::string& dir) {
  Corpus corpus;
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "not a directory: " + dir);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    corpus.push_back({fs::relative(entry.path(), dir).generic_string(), buf.str()});
  }
  std::sort(corpus.begin(), corpus.end(),
            [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  return corpus;
}

Corpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open corpus: " + path);
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      corpus.push_back({j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  return fs::is_directory(path) ? load_corpus_dir(path) : load_corpus_jsonl(path);
}

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write corpus: " + path);
  for (const auto& doc : corpus) {
    out << nlohmann::json{{"doc_id", doc.doc_id}, {"text", doc.text}}.dump() << '\n';
  }
}

std::vector<KnowledgeChunk> chunk_document(const std::string& doc_id, const std::string& text,
                                           const ChunkPolicy& policy) {
  policy.validate();
  const std::u32string scalars = text::decode_utf8(text);
  const auto size = static_cast<std::size_t>(policy.chunk_size_chars);
  const auto step = size - static_cast<std::size_t>(policy.overlap_chars);
  std::vector<KnowledgeChunk> chunks;
  for (std::size_t start = 0; start < scalars.size(); start += step) {
    KnowledgeChunk c;
    c.chunk_id = chunks.size();
    c.doc_id = doc_id;
    c.start = start;
    c.text = text::encode_utf8(std::u32string_view(scalars).substr(start, size));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

double cosine(const llm::EmbeddingVector& a, const llm::EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    fail(ErrorCode::DimMismatch, "cosine of vectors with dimensions " + std::to_string(a.dim()) +
                                     " and " + std::to_string(b.dim()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
  return dot;
}

VectorIndex::VectorIndex(std::vector<KnowledgeChunk> chunks, int embed_dim, ChunkPolicy policy,
                         std::string build_digest)
    : chunks_(std::move(chunks)),
      embed_dim_(embed_dim),
      policy_(policy),
      build_digest_(std::move(build_digest)) {
  for (const auto& c : chunks_) {
    if (c.embedding.dim() != static_cast<std::size_t>(embed_dim_)) {
      fail(ErrorCode::DimMismatch, "chunk " + std::to_string(c.chunk_id) + " has wrong dimension");
    }
  }
}

std::vector<ScoredChunk> VectorIndex::search(const llm::EmbeddingVector& query,
                                             std::size_t k) const {
  if (query.dim() != static_cast<std::size_t>(embed_dim_)) {
    fail(ErrorCode::DimMismatch, "query dimension differs from index");
  }
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(chunks_.size());
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    scored.emplace_back(cosine(query, chunks_[i].embedding), i);
  }
  const std::size_t take = std::min(k, scored.size());
  auto before = [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return chunks_[a.second].chunk_id < chunks_[b.second].chunk_id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), before);
  std::vector<ScoredChunk> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({chunks_[scored[i].second], scored[i].first});
  }
  return out;
}

nlohmann::json VectorIndex::to_json() const {
  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& c : chunks_) {
    chunks.push_back({{"chunk_id", c.chunk_id},
                      {"doc_id", c.doc_id},
                      {"start", c.start},
                      {"text", c.text},
                      {"embedding", c.embedding.values}});
  }
  return {{"format", "medrag.index"},
          {"schema_version", kSchemaVersion},
          {"policy",
           {{"chunk_size_chars", policy_.chunk_size_chars},
            {"overlap_chars", policy_.overlap_chars}}},
          {"embed_dim", embed_dim_},
          {"build_digest", build_digest_},
          {"chunks", std::move(chunks)}};
}

VectorIndex VectorIndex::from_json(const nlohmann::json& j, int expected_dim) {
  try {
    if (j.at("format").get<std::string>() != "medrag.index") {
      fail(ErrorCode::Parse, "not an index file");
    }
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      fail(ErrorCode::VersionMismatch, "index schema version " + std::to_string(version) +
                                           ", expected " + std::to_string(kSchemaVersion));
    }
    const int dim = j.at("embed_dim").get<int>();
    if (expected_dim != 0 && dim != expected_dim) {
      fail(ErrorCode::DimMismatch, "index embed_dim " + std::to_string(dim) +
                                       " differs from provider " + std::to_string(expected_dim));
    }
    ChunkPolicy policy{j.at("policy").at("chunk_size_chars").get<int>(),
                       j.at("policy").at("overlap_chars").get<int>()};
    std::vector<KnowledgeChunk> chunks;
    for (const auto& c : j.at("chunks")) {
      KnowledgeChunk k;
      k.chunk_id = c.at("chunk_id").get<std::uint64_t>();
      k.doc_id = c.at("doc_id").get<std::string>();
      k.start = c.at("start").get<std::size_t>();
      k.text = c.at("text").get<std::string>();
      k.embedding.values = c.at("embedding").get<std::vector<double>>();
      chunks.push_back(std::move(k));
    }
    return VectorIndex(std::move(chunks), dim, policy, j.at("build_digest").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed index: ") + e.what());
  }
}

void VectorIndex::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write index: " + path);
  out << to_json().dump() << '\n';
}

VectorIndex VectorIndex::load(const std::string& path, int expected_dim) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open index: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "unreadable index " + path + ": " + e.what());
  }
  return from_json(j, expected_dim);
}

VectorIndex build_index(const Corpus& corpus, const ChunkPolicy& policy, llm::Gateway& gateway) {
  if (corpus.empty()) fail(ErrorCode::EmptyCorpus, "corpus has no documents");
  policy.validate();
  DigestBuilder digest;
  digest.add("medrag.index.v1")
      .add(static_cast<long long>(policy.chunk_size_chars))
      .add(static_cast<long long>(policy.overlap_chars))
      .add(gateway.config().embedding_digest());
  std::vector<KnowledgeChunk> chunks;
  for (const auto& doc : corpus) {
    digest.add(doc.doc_id).add(sha256_hex(doc.text));
    for (auto& c : chunk_document(doc.doc_id, doc.text, policy)) {
      c.chunk_id = chunks.size();
      c.embedding = text::trim(c.text).empty() ? llm::hashed_embedding("", gateway.config().embed_dim)
                                               : gateway.embed(c.text);
      chunks.push_back(std::move(c));
    }
  }
  return VectorIndex(std::move(chunks), gateway.config().embed_dim, policy, digest.hex());
}

std::vector<ScoredChunk> retrieve(const VectorIndex& index, const std::string& query,
                                  std::size_t k, llm::Gateway& gateway) {
  if (index.empty()) fail(ErrorCode::EmptyIndex, "index has no chunks");
  if (text::trim(query).empty()) fail(ErrorCode::EmptyQuery, "retrieval query is blank");
  if (k == 0) return {};
  return index.search(gateway.embed(query), k);
}

}  // namespace medrag::rag
