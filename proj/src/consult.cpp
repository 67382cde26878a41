#include "medrag/consult.hpp"

#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "medrag/error.hpp"
#include "medrag/prompts.hpp"
#include "medrag/text.hpp"

namespace medrag::consult {

namespace {

SessionState parse_state(const std::string& s) {
  if (s == "gathering") return SessionState::Gathering;
  if (s == "predicted") return SessionState::Predicted;
  if (s == "closed") return SessionState::Closed;
  fail(ErrorCode::Parse, "unknown session state '" + s + "'");
}

std::string transcript(const ConsultSession& s) {
  std::string out;
  for (const auto& t : s.turns) out += (t.role == Role::User ? "Patient: " : "Doctor: ") + t.text + "\n";
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace

std::string to_string(SessionState s) {
  switch (s) {
    case SessionState::Gathering: return "gathering";
    case SessionState::Predicted: return "predicted";
    case SessionState::Closed: return "closed";
  }
  return "gathering";
}

std::string to_string(Role r) { return r == Role::User ? "user" : "assistant"; }

int ConsultSession::user_turns() const {
  int n = 0;
  for (const auto& t : turns) n += t.role == Role::User ? 1 : 0;
  return n;
}

nlohmann::json ConsultSession::to_json() const {
  nlohmann::json ts = nlohmann::json::array();
  for (const auto& t : turns) ts.push_back({{"role", to_string(t.role)}, {"text", t.text}, {"timestamp", t.timestamp}});
  return {{"session_id", session_id},
          {"state", to_string(state)},
          {"turns", ts},
          {"result", result ? result->to_json() : nlohmann::json(nullptr)},
          {"last_active", last_active}};
}

ConsultSession ConsultSession::from_json(const nlohmann::json& j) {
  ConsultSession s;
  try {
    s.session_id = j.at("session_id").get<std::string>();
    s.state = parse_state(j.at("state").get<std::string>());
    for (const auto& t : j.at("turns")) {
      const auto role = t.at("role").get<std::string>();
      if (role != "user" && role != "assistant") fail(ErrorCode::Parse, "unknown role '" + role + "'");
      s.turns.push_back({role == "user" ? Role::User : Role::Assistant, t.at("text").get<std::string>(),
                         t.value("timestamp", std::int64_t{0})});
    }
    if (j.contains("result") && !j["result"].is_null()) s.result = pipeline::DiagnosisResult::from_json(j["result"]);
    s.last_active = j.value("last_active", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed session: ") + e.what());
  }
  if (s.result.has_value() == (s.state == SessionState::Gathering)) {
    fail(ErrorCode::Parse, "session result does not match its state");
  }
  return s;
}

nlohmann::json AssistantReply::to_json() const {
  return {{"kind", kind == ReplyKind::FollowUp ? "follow_up" : "prediction"},
          {"text", text},
          {"state", to_string(state)},
          {"result", result ? result->to_json() : nlohmann::json(nullptr)}};
}

void ConsultPolicy::validate() const {
  if (min_user_turns < 1 || max_user_turns < min_user_turns) {
    fail(ErrorCode::Config, "consult policy needs 1 <= min_user_turns <= max_user_turns");
  }
}

std::string new_session_id() {
  static constexpr std::string_view kAlphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  thread_local std::random_device device;
  std::string id(24, ' ');
  for (auto& c : id) c = kAlphabet[device() % kAlphabet.size()];
  return id;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// Stores

void MemorySessionStore::put(const ConsultSession& session) {
  std::lock_guard lock(mutex_);
  sessions_.insert_or_assign(session.session_id, session);
}

std::optional<ConsultSession> MemorySessionStore::get(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

void MemorySessionStore::erase(const std::string& id) {
  std::lock_guard lock(mutex_);
  sessions_.erase(id);
}

std::size_t MemorySessionStore::sweep(std::int64_t cutoff) {
  std::lock_guard lock(mutex_);
  return std::erase_if(sessions_, [&](const auto& kv) { return kv.second.last_active < cutoff; });
}

FileSessionStore::FileSessionStore(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.value("deleted", false)) {
        sessions_.erase(j.at("session_id").get<std::string>());
      } else {
        auto s = ConsultSession::from_json(j);
        sessions_.insert_or_assign(s.session_id, std::move(s));
      }
    } catch (const std::exception& e) {
      spdlog::warn("session store {}: skipping unreadable line: {}", path_, e.what());
    }
  }
}

void FileSessionStore::append(const nlohmann::json& line) {
  std::ofstream out(path_, std::ios::app);
  if (!out) fail(ErrorCode::Io, "cannot append to session store " + path_);
  out << line.dump() << '\n';
}

void FileSessionStore::put(const ConsultSession& session) {
  MemorySessionStore::put(session);
  std::lock_guard lock(mutex_);
  append(session.to_json());
}

void FileSessionStore::erase(const std::string& id) {
  MemorySessionStore::erase(id);
  std::lock_guard lock(mutex_);
  append({{"session_id", id}, {"deleted", true}});
}

std::size_t FileSessionStore::sweep(std::int64_t cutoff) {
  std::vector<std::string> expired;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, s] : sessions_) {
      if (s.last_active < cutoff) expired.push_back(id);
    }
  }
  for (const auto& id : expired) erase(id);
  return expired.size();
}

// ---------------------------------------------------------------------------
// Service

std::string with_disclaimer(std::string_view advice) { return std::string(kDisclaimer) + "\n" + std::string(advice); }

std::string prediction_text(const pipeline::DiagnosisResult& result) {
  if (result.advice) return *result.advice;
  if (result.predicted.empty()) return "No condition reached the decision threshold. " + std::string(kDisclaimer);
  std::vector<std::string> names;
  for (const auto& p : result.predicted) names.push_back(capitalize(p));
  return "Predicted: " + text::join(names, ", ") + ". " + std::string(kDisclaimer);
}

std::vector<pipeline::Utterance> utterances(const ConsultSession& session) {
  std::vector<pipeline::Utterance> out;
  for (const auto& t : session.turns) out.push_back({t.role == Role::User ? "patient" : "doctor", t.text});
  return out;
}

ConsultService::ConsultService(std::shared_ptr<const pipeline::TrainedPipeline> tp,
                               std::shared_ptr<llm::Gateway> gateway, ConsultOptions options,
                               std::shared_ptr<SessionStore> store)
    : tp_(std::move(tp)), gateway_(std::move(gateway)), options_(options), store_(std::move(store)) {
  options_.policy.validate();
  if (!store_) store_ = std::make_shared<MemorySessionStore>();
}

ConsultSession ConsultService::open_session() {
  store_->sweep(now_ms() - std::chrono::duration_cast<std::chrono::milliseconds>(options_.ttl).count());
  ConsultSession s;
  s.session_id = new_session_id();
  s.last_active = now_ms();
  store_->put(s);
  return s;
}

ConsultSession ConsultService::load(const std::string& session_id) {
  auto s = store_->get(session_id);
  if (!s) fail(ErrorCode::NotFound, "unknown session '" + session_id + "'");
  const auto ttl = std::chrono::duration_cast<std::chrono::milliseconds>(options_.ttl).count();
  if (s->last_active + ttl < now_ms()) {
    store_->erase(session_id);
    fail(ErrorCode::NotFound, "session '" + session_id + "' expired");
  }
  return *s;
}

ConsultSession ConsultService::get(const std::string& session_id) { return load(session_id); }

pipeline::EPR ConsultService::session_epr(const ConsultSession& session) const {
  return pipeline::ingest_dialog(session.session_id, utterances(session), tp_->label_names(),
                                 pipeline::EprSource::Session);
}

std::string ConsultService::follow_up(const ConsultSession& session) {
  llm::PromptRequest req;
  req.system_text = std::string(prompts::kFollowUpSystem);
  req.user_text = "Conversation so far:\n" + transcript(session);
  try {
    auto t = text::trim(gateway_->complete(req).text);
    if (!t.empty()) return t;
    spdlog::warn("session {}: empty follow-up from provider", session.session_id);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Transport) throw;
    spdlog::warn("session {}: follow-up generation failed: {}", session.session_id, e.what());
  }
  return std::string(prompts::kMockFollowUp);
}

bool ConsultService::ready(const ConsultSession& session) {
  const int n = session.user_turns();
  if (n >= options_.policy.max_user_turns) return true;
  if (n < options_.policy.min_user_turns) return false;
  llm::PromptRequest req;
  req.system_text = std::string(prompts::kReadinessSystem);
  req.user_text = "Conversation so far:\n" + transcript(session) + fmt::format(
      "User turns: {}\nMinimum user turns: {}\nMaximum user turns: {}", n, options_.policy.min_user_turns,
      options_.policy.max_user_turns);
  try {
    const auto answer = text::to_lower_ascii(text::trim(gateway_->complete(req).text));
    return answer.starts_with("ready");
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Transport) throw;
    spdlog::warn("session {}: readiness check failed: {}", session.session_id, e.what());
    return false;
  }
}

AssistantReply ConsultService::post_message(const std::string& session_id, const std::string& text) {
  auto session = load(session_id);
  if (text::trim(text).empty()) fail(ErrorCode::EmptyMessage, "message is empty");
  if (session.state != SessionState::Gathering) {
    fail(ErrorCode::SessionClosed, "session '" + session_id + "' is no longer gathering");
  }
  {
    std::lock_guard lock(busy_mutex_);
    if (!busy_.insert(session_id).second) fail(ErrorCode::Busy, "session '" + session_id + "' is busy");
  }
  struct Release {
    ConsultService* self;
    const std::string& id;
    ~Release() {
      std::lock_guard lock(self->busy_mutex_);
      self->busy_.erase(id);
    }
  } release{this, session_id};

  // Re-read under the busy mark so a concurrent finalize cannot be lost.
  session = load(session_id);
  if (session.state != SessionState::Gathering) {
    fail(ErrorCode::SessionClosed, "session '" + session_id + "' is no longer gathering");
  }
  session.turns.push_back({Role::User, text::trim(text), now_ms()});

  AssistantReply reply;
  if (!ready(session)) {
    reply.kind = ReplyKind::FollowUp;
    reply.text = follow_up(session);
  } else {
    const auto epr = session_epr(session);
    auto result = pipeline::predict_report(*tp_, epr, *gateway_);
    if (options_.advice) {
      pipeline::attach_advice(result, epr, tp_->index, *gateway_, options_.advice_k);
      if (result.advice) result.advice = with_disclaimer(*result.advice);
    }
    reply.kind = ReplyKind::Prediction;
    reply.text = prediction_text(result);
    session.state = SessionState::Predicted;
    session.result = result;
    reply.result = std::move(result);
  }
  session.turns.push_back({Role::Assistant, reply.text, now_ms()});
  session.last_active = now_ms();
  reply.state = session.state;
  store_->put(session);
  return reply;
}

pipeline::DiagnosisResult ConsultService::finalize(const std::string& session_id) {
  {
    std::lock_guard lock(busy_mutex_);
    if (busy_.count(session_id)) fail(ErrorCode::Busy, "session '" + session_id + "' is busy");
  }
  auto session = load(session_id);
  if (session.state == SessionState::Gathering) {
    fail(ErrorCode::NotPredicted, "session '" + session_id + "' has no prediction yet");
  }
  if (session.state == SessionState::Predicted) {
    session.state = SessionState::Closed;
    session.last_active = now_ms();
    store_->put(session);
  }
  return *session.result;
}

}  // namespace medrag::consult
