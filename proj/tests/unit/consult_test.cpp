#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <thread>

#include "case_study.hpp"
#include "medrag/consult.hpp"
#include "medrag/error.hpp"

namespace {

using namespace medrag;
using namespace medrag::consult;
namespace fs = std::filesystem;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Validation;
}

class ConsultTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { cs_ = new fixture::CaseStudy(fixture::make_case_study()); }
  static void TearDownTestSuite() {
    delete cs_;
    cs_ = nullptr;
  }

  ConsultService service(ConsultOptions options = {}, std::shared_ptr<SessionStore> store = nullptr) {
    return ConsultService(cs_->tp, cs_->sg.gateway, options, std::move(store));
  }

  static fixture::CaseStudy* cs_;
};

fixture::CaseStudy* ConsultTest::cs_ = nullptr;

TEST(SessionIds, DistinctAndUrlSafe) {
  std::set<std::string> ids;
  for (int i = 0; i < 200; ++i) {
    const auto id = new_session_id();
    EXPECT_EQ(id.size(), 24u);
    EXPECT_EQ(id.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"),
              std::string::npos);
    ids.insert(id);
  }
  EXPECT_EQ(ids.size(), 200u);
}

TEST(Policy, Validation) {
  ConsultPolicy p;
  p.min_user_turns = 0;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::Config);
  p.min_user_turns = 3;
  p.max_user_turns = 2;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::Config);
}

TEST_F(ConsultTest, NewSessionIsGathering) {
  auto svc = service();
  const auto s = svc.open_session();
  EXPECT_EQ(s.state, SessionState::Gathering);
  EXPECT_FALSE(s.result.has_value());
  EXPECT_TRUE(svc.get(s.session_id).turns.empty());
}

TEST_F(ConsultTest, FirstMessageGetsFollowUp) {
  auto svc = service();
  const auto id = svc.open_session().session_id;
  const auto reply = svc.post_message(id, cs_->patient_messages[0]);
  EXPECT_EQ(reply.kind, ReplyKind::FollowUp);
  EXPECT_EQ(reply.text, "How long has this lasted? Any other symptoms?");
  EXPECT_EQ(reply.state, SessionState::Gathering);
  const auto s = svc.get(id);
  ASSERT_EQ(s.turns.size(), 2u);
  EXPECT_EQ(s.turns[0].role, Role::User);
  EXPECT_EQ(s.turns[1].role, Role::Assistant);
}

TEST_F(ConsultTest, WalkthroughPredictsBothGutConditions) {
  auto svc = service();
  std::string id;
  const auto replies = fixture::run_walkthrough(*cs_, svc, &id);
  ASSERT_EQ(replies.size(), 2u);
  EXPECT_EQ(replies[0].kind, ReplyKind::FollowUp);
  const auto& last = replies[1];
  EXPECT_EQ(last.kind, ReplyKind::Prediction);
  EXPECT_EQ(last.state, SessionState::Predicted);
  ASSERT_TRUE(last.result.has_value());
  const std::set<std::string> predicted(last.result->predicted.begin(), last.result->predicted.end());
  EXPECT_EQ(predicted, (std::set<std::string>{"diarrhea", "gastrointestinal dysfunction"}));
  EXPECT_EQ(last.text.find(kDisclaimer), 0u);
  EXPECT_NE(last.text.find("Gastrointestinal dysfunction"), std::string::npos);
  EXPECT_NE(last.text.find("Diarrhea"), std::string::npos);

  EXPECT_EQ(code_of([&] { svc.post_message(id, "one more thing"); }), ErrorCode::SessionClosed);
  const auto a = svc.finalize(id);
  const auto b = svc.finalize(id);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, *last.result);
  EXPECT_EQ(svc.get(id).state, SessionState::Closed);
}

TEST_F(ConsultTest, MaxTurnsForcesPrediction) {
  ConsultOptions o;
  o.policy.min_user_turns = 1;
  o.policy.max_user_turns = 1;
  o.advice = false;
  auto svc = service(o);
  const auto id = svc.open_session().session_id;
  const auto reply = svc.post_message(id, "Runny nose since yesterday.");
  EXPECT_EQ(reply.kind, ReplyKind::Prediction);
  EXPECT_EQ(reply.text.find("Predicted: ") == 0 || reply.text.find("No condition") == 0, true);
}

TEST_F(ConsultTest, ErrorCases) {
  auto svc = service();
  const auto id = svc.open_session().session_id;
  EXPECT_EQ(code_of([&] { svc.finalize(id); }), ErrorCode::NotPredicted);
  EXPECT_EQ(code_of([&] { svc.post_message(id, "  \n"); }), ErrorCode::EmptyMessage);
  EXPECT_EQ(code_of([&] { svc.post_message("nope", "hello"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { svc.get("nope"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { svc.finalize("nope"); }), ErrorCode::NotFound);
}

TEST_F(ConsultTest, ExpiredSessionsAreGone) {
  ConsultOptions o;
  o.ttl = std::chrono::seconds(0);
  auto svc = service(o);
  const auto id = svc.open_session().session_id;
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_EQ(code_of([&] { svc.get(id); }), ErrorCode::NotFound);
}

TEST(Stores, SweepDropsIdleSessions) {
  MemorySessionStore store;
  ConsultSession old_s, new_s;
  old_s.session_id = "old";
  old_s.last_active = 100;
  new_s.session_id = "new";
  new_s.last_active = 1000;
  store.put(old_s);
  store.put(new_s);
  EXPECT_EQ(store.sweep(500), 1u);
  EXPECT_FALSE(store.get("old"));
  EXPECT_TRUE(store.get("new"));
}

TEST(Stores, FileStoreReloadsLastSnapshot) {
  const auto path = (fs::temp_directory_path() / "medrag_sessions_test.jsonl").string();
  fs::remove(path);
  {
    FileSessionStore store(path);
    ConsultSession s;
    s.session_id = "a";
    s.last_active = 5;
    store.put(s);
    s.turns.push_back({Role::User, "hello", 6});
    s.last_active = 6;
    store.put(s);
    ConsultSession gone;
    gone.session_id = "b";
    store.put(gone);
    store.erase("b");
  }
  FileSessionStore reloaded(path);
  const auto a = reloaded.get("a");
  ASSERT_TRUE(a);
  ASSERT_EQ(a->turns.size(), 1u);
  EXPECT_EQ(a->turns[0].text, "hello");
  EXPECT_FALSE(reloaded.get("b"));
  EXPECT_EQ(reloaded.sweep(100), 1u);
  EXPECT_FALSE(FileSessionStore(path).get("a"));
  fs::remove(path);
}

TEST(Sessions, JsonRoundTrip) {
  ConsultSession s;
  s.session_id = "x";
  s.state = SessionState::Predicted;
  s.turns = {{Role::User, "hi", 1}, {Role::Assistant, "hello", 2}};
  pipeline::DiagnosisResult r;
  r.report_id = "x";
  r.probabilities = {{"a", 0.7}};
  r.predicted = {"a"};
  s.result = r;
  s.last_active = 2;
  const auto back = ConsultSession::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.user_turns(), 1);
}

}  // namespace
