#include <gtest/gtest.h>

#include <httplib.h>

#include <cctype>
#include <fstream>
#include <thread>

#include "case_study.hpp"
#include "medrag/server.hpp"

namespace {

using namespace medrag;
using nlohmann::json;

class ServerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { cs_ = new fixture::CaseStudy(fixture::make_case_study()); }
  static void TearDownTestSuite() {
    delete cs_;
    cs_ = nullptr;
  }

  void SetUp() override {
    server::ServiceConfig cfg;
    cfg.port = 0;
    service_ = std::make_unique<server::Service>(cs_->tp, cs_->sg.gateway, cfg);
    port_ = service_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override { service_->stop(); }

  std::pair<int, json> post(const std::string& path, const json& body) {
    const auto res = client_->Post(path, body.dump(), "application/json");
    if (!res) return {0, {}};
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    const auto res = client_->Get(path);
    if (!res) return {0, {}};
    return {res->status, json::parse(res->body)};
  }

  static fixture::CaseStudy* cs_;
  std::unique_ptr<server::Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

fixture::CaseStudy* ServerTest::cs_ = nullptr;

TEST(HttpStatus, ErrorCodeMapping) {
  EXPECT_EQ(server::http_status(ErrorCode::Validation), 400);
  EXPECT_EQ(server::http_status(ErrorCode::EmptyMessage), 400);
  EXPECT_EQ(server::http_status(ErrorCode::NotFound), 404);
  EXPECT_EQ(server::http_status(ErrorCode::SessionClosed), 409);
  EXPECT_EQ(server::http_status(ErrorCode::NotPredicted), 409);
  EXPECT_EQ(server::http_status(ErrorCode::Busy), 409);
  EXPECT_EQ(server::http_status(ErrorCode::Transport), 500);
}

TEST(ListenAddr, Forms) {
  server::ServiceConfig c;
  c.apply_listen_addr("0.0.0.0:9000");
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_EQ(c.port, 9000);
  c.apply_listen_addr(":9001");
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_EQ(c.port, 9001);
  c.apply_listen_addr("9002");
  EXPECT_EQ(c.port, 9002);
  EXPECT_THROW(c.apply_listen_addr("host:http"), Error);
}

TEST_F(ServerTest, Healthz) {
  const auto [status, body] = get("/healthz");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body, json({{"status", "ok"}}));
}

TEST_F(ServerTest, ModelInfo) {
  const auto [status, body] = get("/v1/model/info");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["labels"].size(), 3u);
  EXPECT_EQ(body["manifest"]["bank_digest"], cs_->tp->bank.bank_digest);
  EXPECT_EQ(body["mode"], "multilabel");
}

TEST_F(ServerTest, PredictValidation) {
  EXPECT_EQ(post("/v1/predict", {{"narrative", ""}}).first, 400);
  EXPECT_EQ(post("/v1/predict", {{"narrative", 3}}).first, 400);
  EXPECT_EQ(post("/v1/predict", json::object()).first, 400);
  const auto res = client_->Post("/v1/predict", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"], "ValidationError");
}

TEST_F(ServerTest, PredictReturnsProbabilities) {
  const auto [status, body] = post("/v1/predict", {{"narrative", "Runny nose and sneezing."}});
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["probabilities"].size(), 3u);
  EXPECT_TRUE(body.contains("predicted"));
}

TEST_F(ServerTest, ConcurrentIdenticalPredictionsMatch) {
  const std::string body = json({{"narrative", "Loose stools after antibiotics (male, 30 years old)."}}).dump();
  std::vector<std::string> bodies(8);
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      threads.emplace_back([&, i] {
        httplib::Client c("127.0.0.1", port_);
        if (auto res = c.Post("/v1/predict", body, "application/json"); res && res->status == 200) {
          bodies[i] = res->body;
        }
      });
    }
  }
  ASSERT_FALSE(bodies[0].empty());
  for (const auto& b : bodies) EXPECT_EQ(b, bodies[0]);
}

TEST_F(ServerTest, SessionWalkthroughOverHttp) {
  auto [s0, opened] = post("/v1/sessions", json::object());
  ASSERT_EQ(s0, 200);
  const std::string id = opened["session_id"];
  EXPECT_EQ(opened["state"], "gathering");

  auto [s1, first] = post("/v1/sessions/" + id + "/messages", {{"text", cs_->patient_messages[0]}});
  ASSERT_EQ(s1, 200);
  EXPECT_EQ(first["kind"], "follow_up");
  EXPECT_EQ(post("/v1/sessions/" + id + "/finalize", json::object()).first, 409);

  auto preview = service_->consult().get(id);
  preview.turns.push_back({consult::Role::User, cs_->patient_messages[1], 0});
  fixture::script_scores(cs_->sg, cs_->tp->index, cs_->tp->bank, cs_->tp->score,
                         pipeline::report_text(service_->consult().session_epr(preview)), cs_->session_answers);

  auto [s2, last] = post("/v1/sessions/" + id + "/messages", {{"text", cs_->patient_messages[1]}});
  ASSERT_EQ(s2, 200);
  EXPECT_EQ(last["kind"], "prediction");
  const std::string text = last["text"];
  EXPECT_NE(text.find("Gastrointestinal dysfunction"), std::string::npos);
  EXPECT_NE(text.find("Diarrhea"), std::string::npos);

  EXPECT_EQ(post("/v1/sessions/" + id + "/messages", {{"text", "more"}}).first, 409);
  auto [s3, fin] = post("/v1/sessions/" + id + "/finalize", json::object());
  EXPECT_EQ(s3, 200);
  EXPECT_EQ(fin, last["result"]);
  auto [s4, session] = get("/v1/sessions/" + id);
  EXPECT_EQ(s4, 200);
  EXPECT_EQ(session["state"], "closed");
  EXPECT_EQ(session["turns"].size(), 4u);
}

TEST_F(ServerTest, NotFoundAndBadRequests) {
  EXPECT_EQ(get("/v1/sessions/unknownid").first, 404);
  EXPECT_EQ(post("/v1/sessions/unknownid/messages", {{"text", "hi"}}).first, 404);
  EXPECT_EQ(get("/nowhere").first, 404);
  const std::string id = post("/v1/sessions", json::object()).second["session_id"];
  EXPECT_EQ(post("/v1/sessions/" + id + "/messages", {{"text", "   "}}).first, 400);
  EXPECT_EQ(post("/v1/sessions/" + id + "/messages", json::object()).first, 400);
}

TEST_F(ServerTest, CorsAllowlist) {
  httplib::Headers allowed = {{"Origin", "http://localhost:5173"}};
  auto res = client_->Get("/healthz", allowed);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");

  httplib::Headers other = {{"Origin", "http://evil.example"}};
  res = client_->Get("/healthz", other);
  ASSERT_TRUE(res);
  EXPECT_FALSE(res->has_header("Access-Control-Allow-Origin"));

  res = client_->Options("/v1/predict", allowed);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Methods"), "GET, POST, OPTIONS");
}

TEST_F(ServerTest, EveryDocumentedRouteIsServed) {
  std::ifstream in(std::string(MEDRAG_SOURCE_DIR) + "/api/openapi.json");
  ASSERT_TRUE(in);
  const auto doc = json::parse(in);
  const std::string id = post("/v1/sessions", json::object()).second["session_id"];
  std::size_t routes = 0;
  for (const auto& [path, ops] : doc["paths"].items()) {
    std::string concrete = path;
    if (const auto at = concrete.find("{id}"); at != std::string::npos) concrete.replace(at, 4, id);
    for (const auto& [method, op] : ops.items()) {
      std::string upper = method;
      for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      const auto r = service_->handle(upper, concrete, R"({"text": "hello", "narrative": "hello"})");
      EXPECT_TRUE(op["responses"].contains(std::to_string(r.status))) << upper << " " << path << " -> " << r.status;
      if (r.status == 404) EXPECT_EQ(r.body["message"].get<std::string>().find("no route"), std::string::npos);
      ++routes;
    }
  }
  EXPECT_EQ(routes, 7u);
}

TEST_F(ServerTest, HandleWithoutTransport) {
  const auto r = service_->handle("GET", "/healthz", "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(service_->handle("DELETE", "/healthz", "").status, 400);
}

}  // namespace
