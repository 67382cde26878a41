#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/gateway.hpp"
#include "medrag/pipeline.hpp"

namespace medrag::consult {

inline constexpr std::string_view kDisclaimer =
    "Note: this is an automated assessment, not a medical diagnosis. Please consult a clinician.";

enum class SessionState { Gathering, Predicted, Closed };
enum class Role { User, Assistant };

std::string to_string(SessionState s);
std::string to_string(Role r);

struct Turn {
  Role role = Role::User;
  std::string text;
  /// Milliseconds since the Unix epoch.
  std::int64_t timestamp = 0;
};

struct ConsultSession {
  std::string session_id;
  SessionState state = SessionState::Gathering;
  std::vector<Turn> turns;
  std::optional<pipeline::DiagnosisResult> result;
  std::int64_t last_active = 0;

  int user_turns() const;
  nlohmann::json to_json() const;
  static ConsultSession from_json(const nlohmann::json& j);
};

enum class ReplyKind { FollowUp, Prediction };

struct AssistantReply {
  ReplyKind kind = ReplyKind::FollowUp;
  std::string text;
  SessionState state = SessionState::Gathering;
  std::optional<pipeline::DiagnosisResult> result;

  nlohmann::json to_json() const;
};

struct ConsultPolicy {
  int min_user_turns = 2;
  int max_user_turns = 8;

  void validate() const;
};

/// 24 URL-safe characters from the system entropy source.
std::string new_session_id();

std::int64_t now_ms();

class SessionStore {
 public:
  virtual ~SessionStore() = default;
  virtual void put(const ConsultSession& session) = 0;
  virtual std::optional<ConsultSession> get(const std::string& id) = 0;
  virtual void erase(const std::string& id) = 0;
  /// Drops sessions idle since before cutoff (ms); returns how many.
  virtual std::size_t sweep(std::int64_t cutoff) = 0;
};

class MemorySessionStore : public SessionStore {
 public:
  void put(const ConsultSession& session) override;
  std::optional<ConsultSession> get(const std::string& id) override;
  void erase(const std::string& id) override;
  std::size_t sweep(std::int64_t cutoff) override;

 protected:
  std::mutex mutex_;
  std::unordered_map<std::string, ConsultSession> sessions_;
};

/// Appends JSONL snapshots; the last snapshot of an id wins on reload.
class FileSessionStore final : public MemorySessionStore {
 public:
  explicit FileSessionStore(std::string path);
  void put(const ConsultSession& session) override;
  void erase(const std::string& id) override;
  std::size_t sweep(std::int64_t cutoff) override;

 private:
  void append(const nlohmann::json& line);
  std::string path_;
};

/// Prepends the fixed disclaimer to advice.
std::string with_disclaimer(std::string_view advice);

/// Reply text for a finished prediction.
std::string prediction_text(const pipeline::DiagnosisResult& result);

/// Turn list as dialogue utterances: user turns are patient lines.
std::vector<pipeline::Utterance> utterances(const ConsultSession& session);

struct ConsultOptions {
  ConsultPolicy policy;
  std::chrono::seconds ttl{3600};
  bool advice = true;
  std::size_t advice_k = 3;
};

class ConsultService {
 public:
  ConsultService(std::shared_ptr<const pipeline::TrainedPipeline> tp, std::shared_ptr<llm::Gateway> gateway,
                 ConsultOptions options = {}, std::shared_ptr<SessionStore> store = nullptr);

  ConsultSession open_session();
  /// Throws NotFound, EmptyMessage, SessionClosed or Busy.
  AssistantReply post_message(const std::string& session_id, const std::string& text);
  /// Throws NotFound or NotPredicted.
  pipeline::DiagnosisResult finalize(const std::string& session_id);
  /// Throws NotFound.
  ConsultSession get(const std::string& session_id);

  /// The EPR the session's turns produce.
  pipeline::EPR session_epr(const ConsultSession& session) const;

  const ConsultOptions& options() const { return options_; }

 private:
  ConsultSession load(const std::string& session_id);
  std::string follow_up(const ConsultSession& session);
  bool ready(const ConsultSession& session);

  std::shared_ptr<const pipeline::TrainedPipeline> tp_;
  std::shared_ptr<llm::Gateway> gateway_;
  ConsultOptions options_;
  std::shared_ptr<SessionStore> store_;
  std::mutex busy_mutex_;
  std::set<std::string> busy_;
};

}  // namespace medrag::consult
