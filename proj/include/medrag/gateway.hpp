#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace medrag::llm {

struct PromptRequest {
  std::string system_text;
  std::string user_text;
  std::vector<std::string> context_blocks;
  double temperature = 0.0;
  int max_tokens = 256;
};

/// system + "\n---\n" + blocks joined by "\n---\n" + "\n---\n" + user, NFC,
/// trailing whitespace stripped on every line.
std::string canonical_prompt(const PromptRequest& request);

/// SHA-256 of canonical_prompt(request).
std::string request_digest(const PromptRequest& request);

/// Digest of an already-assembled prompt text; normalizes it the same way
/// canonical_prompt does, so script files may key on readable prompt text.
std::string prompt_text_digest(std::string_view prompt_text);

struct CompletionText {
  std::string text;
  std::string provider_id;
  std::string request_digest;
};

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

enum class ProviderKind { RemoteChat, Mock };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::Mock;
  std::string base_url;
  std::string api_key_env;
  std::string model_name = "mock-chat";
  std::string embed_model = "mock-embed";
  int embed_dim = 256;
  std::optional<std::uint64_t> seed;
  int retry_limit = 2;
  int max_in_flight = 8;
  /// Scripted answer table for the mock provider (optional).
  std::string script_path;
  double timeout_seconds = 60.0;

  /// Throws ConfigError when the kind-specific fields are missing.
  void validate() const;

  /// Identity of everything that affects embeddings.
  std::string embedding_digest() const;

  nlohmann::json to_json() const;
  static ProviderConfig from_json(const nlohmann::json& j);
};

/// Exact-match answer table for the mock provider, keyed by prompt digest.
class ScriptTable {
 public:
  void add_digest(std::string digest, std::string response);
  void add_prompt(const PromptRequest& request, std::string response);
  void add_prompt_text(std::string_view prompt_text, std::string response);

  const std::string* find(const std::string& digest) const;
  std::size_t size() const { return entries_.size(); }

  /// JSON array of {prompt_digest | prompt_text, response}.
  static ScriptTable from_json(const nlohmann::json& j);
  static ScriptTable load(const std::string& path);
  /// Entries sorted by digest so the output is byte-stable.
  nlohmann::json to_json() const;
  void save(const std::string& path) const;

 private:
  std::unordered_map<std::string, std::string> entries_;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  virtual CompletionText complete(const PromptRequest& request) = 0;
  virtual EmbeddingVector embed(std::string_view text) = 0;
};

/// Signed-hash bag-of-words embedding, L2-normalized; all-zero maps to e0.
EmbeddingVector hashed_embedding(std::string_view text, int dim);

class MockProvider final : public Provider {
 public:
  MockProvider(ProviderConfig config, std::shared_ptr<const ScriptTable> script);

  std::string id() const override;
  CompletionText complete(const PromptRequest& request) override;
  EmbeddingVector embed(std::string_view text) override;

 private:
  std::string builtin_response(const PromptRequest& request) const;

  ProviderConfig config_;
  std::shared_ptr<const ScriptTable> script_;
};

/// OpenAI-compatible chat-completion and embedding client.
class RemoteProvider final : public Provider {
 public:
  explicit RemoteProvider(ProviderConfig config);

  std::string id() const override;
  CompletionText complete(const PromptRequest& request) override;
  EmbeddingVector embed(std::string_view text) override;

 private:
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body);

  ProviderConfig config_;
  std::string api_key_;
  std::string host_;
  std::string path_prefix_;
};

std::unique_ptr<Provider> make_provider(const ProviderConfig& config);

/// Shared entry point for every provider call; caps concurrent requests.
class Gateway {
 public:
  explicit Gateway(const ProviderConfig& config);
  Gateway(ProviderConfig config, std::shared_ptr<Provider> provider);

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  CompletionText complete(const PromptRequest& request);
  /// Throws EmptyText when the text is blank.
  EmbeddingVector embed(std::string_view text);

  const ProviderConfig& config() const { return config_; }

 private:
  class Slot;

  ProviderConfig config_;
  std::shared_ptr<Provider> provider_;
  std::counting_semaphore<1024> in_flight_;
};

using SymptomList = std::vector<std::string>;

/// In-context symptom profile generation from (disease, symptoms) exemplars.
SymptomList generate_symptoms(const std::string& disease_name,
                              const std::vector<std::pair<std::string, std::string>>& exemplars,
                              Gateway& gateway);

/// Comma-split, trim, drop empties.
SymptomList parse_symptom_list(std::string_view completion);

}  // namespace medrag::llm
