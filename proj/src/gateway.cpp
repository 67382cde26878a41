#include "medrag/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"
#include "medrag/prompts.hpp"
#include "medrag/random.hpp"
#include "medrag/text.hpp"

namespace medrag::llm {

namespace {

constexpr std::string_view kSeparator = "\n---\n";

std::string normalize_prompt_text(std::string_view text) {
  const std::string normalized = text::nfc(text);
  std::string out;
  out.reserve(normalized.size());
  const auto lines = text::split(normalized, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += text::rtrim(lines[i]);
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Value after "<key>" on the first line that starts with it.
std::optional<std::string> line_value(std::string_view body, std::string_view key) {
  for (const auto& line : text::split(body, '\n')) {
    if (line.rfind(key, 0) == 0) return text::trim(std::string_view(line).substr(key.size()));
  }
  return std::nullopt;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::vector<std::string> split_trimmed(std::string_view s, char sep) {
  std::vector<std::string> out;
  for (const auto& part : text::split(s, sep)) {
    auto t = text::trim(part);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::string canonical_prompt(const PromptRequest& request) {
  std::string joined = request.system_text;
  joined += kSeparator;
  for (std::size_t i = 0; i < request.context_blocks.size(); ++i) {
    if (i) joined += kSeparator;
    joined += request.context_blocks[i];
  }
  joined += kSeparator;
  joined += request.user_text;
  return normalize_prompt_text(joined);
}

std::string request_digest(const PromptRequest& request) {
  return sha256_hex(canonical_prompt(request));
}

std::string prompt_text_digest(std::string_view prompt_text) {
  return sha256_hex(normalize_prompt_text(prompt_text));
}

// ---------------------------------------------------------------------------
// ProviderConfig

void ProviderConfig::validate() const {
  if (embed_dim <= 0) fail(ErrorCode::Config, "embed_dim must be positive");
  if (retry_limit < 0) fail(ErrorCode::Config, "retry_limit must be >= 0");
  if (max_in_flight <= 0 || max_in_flight > 1024) {
    fail(ErrorCode::Config, "max_in_flight must be in [1, 1024]");
  }
  if (kind == ProviderKind::Mock) {
    if (!seed) fail(ErrorCode::Config, "mock provider requires a seed");
  } else {
    if (base_url.empty()) fail(ErrorCode::Config, "remote provider requires base_url");
    if (api_key_env.empty()) fail(ErrorCode::Config, "remote provider requires api_key_env");
  }
}

std::string ProviderConfig::embedding_digest() const {
  DigestBuilder d;
  d.add(kind == ProviderKind::Mock ? "mock" : "remote_chat");
  d.add(embed_model).add(static_cast<long long>(embed_dim));
  if (kind == ProviderKind::RemoteChat) d.add(base_url);
  return d.hex();
}

nlohmann::json ProviderConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == ProviderKind::Mock ? "mock" : "remote_chat";
  j["base_url"] = base_url;
  j["api_key_env"] = api_key_env;
  j["model_name"] = model_name;
  j["embed_model"] = embed_model;
  j["embed_dim"] = embed_dim;
  if (seed) j["seed"] = *seed;
  j["retry_limit"] = retry_limit;
  j["max_in_flight"] = max_in_flight;
  j["script"] = script_path;
  j["timeout_seconds"] = timeout_seconds;
  return j;
}

ProviderConfig ProviderConfig::from_json(const nlohmann::json& j) {
  ProviderConfig c;
  try {
    const std::string kind = j.value("kind", std::string("mock"));
    if (kind == "mock") {
      c.kind = ProviderKind::Mock;
    } else if (kind == "remote_chat") {
      c.kind = ProviderKind::RemoteChat;
      c.model_name = "gpt-4-turbo";
      c.embed_model = "text-embedding-3-small";
    } else {
      fail(ErrorCode::Config, "unknown provider kind: " + kind);
    }
    c.base_url = j.value("base_url", c.base_url);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.model_name = j.value("model_name", c.model_name);
    c.embed_model = j.value("embed_model", c.embed_model);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    c.retry_limit = j.value("retry_limit", c.retry_limit);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.script_path = j.value("script", c.script_path);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("bad provider config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// ScriptTable

void ScriptTable::add_digest(std::string digest, std::string response) {
  entries_.insert_or_assign(std::move(digest), std::move(response));
}

void ScriptTable::add_prompt(const PromptRequest& request, std::string response) {
  add_digest(request_digest(request), std::move(response));
}

void ScriptTable::add_prompt_text(std::string_view prompt_text, std::string response) {
  add_digest(prompt_text_digest(prompt_text), std::move(response));
}

const std::string* ScriptTable::find(const std::string& digest) const {
  const auto it = entries_.find(digest);
  return it == entries_.end() ? nullptr : &it->second;
}

ScriptTable ScriptTable::from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorCode::Parse, "script table must be a JSON array");
  ScriptTable table;
  for (const auto& entry : j) {
    if (!entry.is_object() || !entry.contains("response")) {
      fail(ErrorCode::Parse, "script entry needs a response");
    }
    auto response = entry["response"].get<std::string>();
    if (entry.contains("prompt_digest")) {
      table.add_digest(entry["prompt_digest"].get<std::string>(), std::move(response));
    } else if (entry.contains("prompt_text")) {
      table.add_prompt_text(entry["prompt_text"].get<std::string>(), std::move(response));
    } else {
      fail(ErrorCode::Parse, "script entry needs prompt_digest or prompt_text");
    }
  }
  return table;
}

ScriptTable ScriptTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open script table: " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, "script table " + path + ": " + e.what());
  }
}

nlohmann::json ScriptTable::to_json() const {
  std::vector<std::pair<std::string, std::string>> sorted(entries_.begin(), entries_.end());
  std::sort(sorted.begin(), sorted.end());
  nlohmann::json out = nlohmann::json::array();
  for (auto& [digest, response] : sorted) {
    out.push_back({{"prompt_digest", digest}, {"response", response}});
  }
  return out;
}

void ScriptTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write script table: " + path);
  out << to_json().dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Mock provider

EmbeddingVector hashed_embedding(std::string_view text, int dim) {
  if (dim <= 0) fail(ErrorCode::Config, "embed_dim must be positive");
  EmbeddingVector v;
  v.values.assign(static_cast<std::size_t>(dim), 0.0);
  for (const auto& token : text::tokenize(text)) {
    const std::uint64_t h = fnv1a(token);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v.values[h % static_cast<std::uint64_t>(dim)] += sign;
  }
  double norm2 = 0.0;
  for (double x : v.values) norm2 += x * x;
  if (norm2 == 0.0) {
    v.values[0] = 1.0;
    return v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v.values) x *= inv;
  return v;
}

MockProvider::MockProvider(ProviderConfig config, std::shared_ptr<const ScriptTable> script)
    : config_(std::move(config)), script_(std::move(script)) {
  config_.validate();
}

std::string MockProvider::id() const { return "mock:" + config_.model_name; }

CompletionText MockProvider::complete(const PromptRequest& request) {
  CompletionText out;
  out.provider_id = id();
  out.request_digest = request_digest(request);
  if (script_) {
    if (const auto* hit = script_->find(out.request_digest)) {
      out.text = *hit;
      return out;
    }
  }
  out.text = builtin_response(request);
  return out;
}

std::string MockProvider::builtin_response(const PromptRequest& request) const {
  const std::string_view system = request.system_text;
  if (system == prompts::kFollowUpSystem) return std::string(prompts::kMockFollowUp);

  if (system == prompts::kReadinessSystem) {
    const auto turns = line_value(request.user_text, "User turns:");
    const auto needed = line_value(request.user_text, "Minimum user turns:");
    if (turns && needed && std::atoi(turns->c_str()) >= std::atoi(needed->c_str())) {
      return "ready";
    }
    return "not ready";
  }

  if (system == prompts::kAdviceSystem) {
    const auto line = line_value(request.user_text, "Predicted conditions:");
    std::vector<std::string> labels = line ? split_trimmed(*line, ';') : std::vector<std::string>{};
    if (labels.empty()) return "No specific condition identified. Rest and monitor your symptoms.";
    std::string named = capitalize(labels[0]);
    for (std::size_t i = 1; i < labels.size(); ++i) {
      named += (i + 1 == labels.size()) ? " and " : ", ";
      named += capitalize(labels[i]);
    }
    return named +
           ". Choose light meals and avoid stimulating foods. Seek in-person care if "
           "symptoms persist or worsen.";
  }

  if (system == prompts::kProposalSystem) {
    const auto features_line = line_value(request.user_text, "Features:");
    const auto tried_line = line_value(request.user_text, "Tried:");
    const auto features = features_line ? split_trimmed(*features_line, ',') : std::vector<std::string>{};
    std::set<std::string> tried;
    if (tried_line) {
      for (auto& t : split_trimmed(*tried_line, ';')) tried.insert(std::move(t));
    }
    const std::set<std::string> names(features.begin(), features.end());
    struct Option {
      std::string name, expr, rationale;
    };
    std::vector<Option> options;
    for (std::size_t i = 0; i < features.size(); ++i) {
      for (std::size_t j = i + 1; j < features.size(); ++j) {
        const auto& a = features[i];
        const auto& b = features[j];
        options.push_back({"min_" + a + "_" + b, "min(" + a + ", " + b + ")",
                           "Both " + a + " and " + b + " must be elevated together."});
        options.push_back({"max_" + a + "_" + b, "max(" + a + ", " + b + ")",
                           "Either of " + a + " or " + b + " signals the same issue."});
        options.push_back({"diff_" + a + "_" + b, a + " - " + b,
                           "The balance between " + a + " and " + b + " matters."});
        options.push_back({"prod_" + a + "_" + b, a + " * " + b,
                           "Joint intensity of " + a + " and " + b + "."});
      }
    }
    Rng rng(config_.seed.value_or(0) ^ fnv1a(features_line.value_or("")));
    rng.shuffle(options.begin(), options.end());
    for (const auto& o : options) {
      if (tried.count(o.expr) || names.count(o.name)) continue;
      return "name: " + o.name + "\nexpression: " + o.expr + "\nrationale: " + o.rationale;
    }
    return "none";
  }

  return std::string(prompts::kMockFallback);
}

EmbeddingVector MockProvider::embed(std::string_view text) {
  return hashed_embedding(text, config_.embed_dim);
}

// ---------------------------------------------------------------------------
// Remote provider

RemoteProvider::RemoteProvider(ProviderConfig config) : config_(std::move(config)) {
  config_.validate();
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    fail(ErrorCode::Config, "environment variable " + config_.api_key_env + " is not set");
  }
  api_key_ = key;
  const auto scheme = config_.base_url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::Config, "base_url needs a scheme: " + config_.base_url);
  const auto slash = config_.base_url.find('/', scheme + 3);
  host_ = config_.base_url.substr(0, slash);
  path_prefix_ = slash == std::string::npos ? "" : config_.base_url.substr(slash);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string RemoteProvider::id() const { return "remote:" + config_.model_name; }

nlohmann::json RemoteProvider::post_json(const std::string& path, const nlohmann::json& body) {
  httplib::Client client(host_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
    auto res = client.Post(path_prefix_ + path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorCode::Transport, "HTTP " + std::to_string(res->status) + " from " + path);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Transport, std::string("malformed provider response: ") + e.what());
    }
  }
  fail(ErrorCode::Transport, "provider unreachable after retries: " + last_error);
}

CompletionText RemoteProvider::complete(const PromptRequest& request) {
  std::string user;
  if (!request.context_blocks.empty()) {
    user = "Reference knowledge:\n";
    for (const auto& block : request.context_blocks) user += block + "\n---\n";
  }
  user += request.user_text;
  const nlohmann::json body = {
      {"model", config_.model_name},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", request.system_text}},
                              {{"role", "user"}, {"content", user}}})}};
  const auto response = post_json("/chat/completions", body);
  CompletionText out;
  out.provider_id = id();
  out.request_digest = request_digest(request);
  try {
    out.text = response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Transport, std::string("unexpected completion payload: ") + e.what());
  }
  return out;
}

EmbeddingVector RemoteProvider::embed(std::string_view text) {
  const nlohmann::json body = {{"model", config_.embed_model}, {"input", std::string(text)}};
  const auto response = post_json("/embeddings", body);
  EmbeddingVector v;
  try {
    v.values = response.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Transport, std::string("unexpected embedding payload: ") + e.what());
  }
  if (v.dim() != static_cast<std::size_t>(config_.embed_dim)) {
    fail(ErrorCode::DimMismatch, "provider returned dimension " + std::to_string(v.dim()) +
                                     ", configured " + std::to_string(config_.embed_dim));
  }
  double norm2 = 0.0;
  for (double x : v.values) norm2 += x * x;
  if (norm2 == 0.0) {
    v.values.assign(v.values.size(), 0.0);
    v.values[0] = 1.0;
    return v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v.values) x *= inv;
  return v;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config) {
  config.validate();
  if (config.kind == ProviderKind::Mock) {
    std::shared_ptr<const ScriptTable> script;
    if (!config.script_path.empty()) {
      script = std::make_shared<const ScriptTable>(ScriptTable::load(config.script_path));
    }
    return std::make_unique<MockProvider>(config, std::move(script));
  }
  return std::make_unique<RemoteProvider>(config);
}

// ---------------------------------------------------------------------------
// Gateway

class Gateway::Slot {
 public:
  explicit Slot(std::counting_semaphore<1024>& sem) : sem_(sem) { sem_.acquire(); }
  ~Slot() { sem_.release(); }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  std::counting_semaphore<1024>& sem_;
};

Gateway::Gateway(const ProviderConfig& config)
    : config_(config), provider_(make_provider(config)), in_flight_(config.max_in_flight) {}

Gateway::Gateway(ProviderConfig config, std::shared_ptr<Provider> provider)
    : config_(std::move(config)), provider_(std::move(provider)), in_flight_(config_.max_in_flight) {
  config_.validate();
}

CompletionText Gateway::complete(const PromptRequest& request) {
  if (text::trim(request.user_text).empty()) fail(ErrorCode::EmptyText, "prompt has no user text");
  Slot slot(in_flight_);
  return provider_->complete(request);
}

EmbeddingVector Gateway::embed(std::string_view text) {
  if (text::trim(text).empty()) fail(ErrorCode::EmptyText, "cannot embed blank text");
  Slot slot(in_flight_);
  auto v = provider_->embed(text);
  if (v.dim() != static_cast<std::size_t>(config_.embed_dim)) {
    fail(ErrorCode::DimMismatch, "embedding dimension differs from configuration");
  }
  return v;
}

// ---------------------------------------------------------------------------

SymptomList parse_symptom_list(std::string_view completion) {
  return split_trimmed(completion, ',');
}

SymptomList generate_symptoms(const std::string& disease_name,
                              const std::vector<std::pair<std::string, std::string>>& exemplars,
                              Gateway& gateway) {
  if (exemplars.empty()) fail(ErrorCode::Config, "symptom generation needs at least one exemplar");
  PromptRequest request;
  request.system_text = std::string(prompts::kSymptomSystem);
  for (const auto& [disease, symptoms] : exemplars) {
    request.user_text += "disease: " + disease + ", symptoms: " + symptoms + "\n";
  }
  request.user_text += "disease: " + disease_name + ", symptoms:";
  auto symptoms = parse_symptom_list(gateway.complete(request).text);
  if (symptoms.empty()) {
    fail(ErrorCode::EmptyGeneration, "no symptoms generated for " + disease_name);
  }
  return symptoms;
}

}  // namespace medrag::llm
