#include "medrag/server.hpp"

#include <algorithm>
#include <filesystem>
#include <regex>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag::server {

namespace {

HttpResponse error_response(ErrorCode code, const std::string& message) {
  return {http_status(code), {{"error", std::string(to_string(code))}, {"message", message}}};
}

nlohmann::json parse_body(const std::string& body) {
  if (text::trim(body).empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(body);
    if (!j.is_object()) fail(ErrorCode::Validation, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed JSON body: ") + e.what());
  }
}

std::string string_field(const nlohmann::json& body, const char* key) {
  if (!body.contains(key) || !body[key].is_string()) {
    fail(ErrorCode::Validation, std::string("field '") + key + "' must be a string");
  }
  return body[key].get<std::string>();
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation:
    case ErrorCode::EmptyText:
    case ErrorCode::EmptyMessage:
    case ErrorCode::EmptyDialogue:
    case ErrorCode::NoPrediction:
      return 400;
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::Busy:
    case ErrorCode::SessionClosed:
    case ErrorCode::NotPredicted:
      return 409;
    default:
      return 500;
  }
}

void ServiceConfig::apply_listen_addr(std::string_view addr) {
  const std::string a = text::trim(addr);
  if (a.empty()) return;
  const auto colon = a.rfind(':');
  const std::string port_part = colon == std::string::npos ? a : a.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port_part, &used);
    if (used != port_part.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    port = p;
  } catch (const std::exception&) {
    fail(ErrorCode::Config, "bad listen address '" + a + "'");
  }
  if (colon != std::string::npos && colon > 0) host = a.substr(0, colon);
}

nlohmann::json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"cors_allowlist", cors_allowlist},
          {"session_ttl_seconds", consult.ttl.count()},
          {"session_store", session_store_path},
          {"min_user_turns", consult.policy.min_user_turns},
          {"max_user_turns", consult.policy.max_user_turns},
          {"advice", consult.advice},
          {"advice_k", consult.advice_k}};
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.cors_allowlist = j.value("cors_allowlist", c.cors_allowlist);
    c.consult.ttl = std::chrono::seconds(j.value("session_ttl_seconds", c.consult.ttl.count()));
    c.session_store_path = j.value("session_store", c.session_store_path);
    if (!c.session_store_path.empty() && !base_dir.empty() &&
        !std::filesystem::path(c.session_store_path).is_absolute()) {
      c.session_store_path = (std::filesystem::path(base_dir) / c.session_store_path).string();
    }
    c.consult.policy.min_user_turns = j.value("min_user_turns", c.consult.policy.min_user_turns);
    c.consult.policy.max_user_turns = j.value("max_user_turns", c.consult.policy.max_user_turns);
    c.consult.advice = j.value("advice", c.consult.advice);
    c.consult.advice_k = j.value("advice_k", c.consult.advice_k);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("bad service config: ") + e.what());
  }
  c.consult.policy.validate();
  return c;
}

Service::Service(std::shared_ptr<const pipeline::TrainedPipeline> tp, std::shared_ptr<llm::Gateway> gateway,
                 ServiceConfig config)
    : tp_(std::move(tp)),
      gateway_(std::move(gateway)),
      config_(std::move(config)),
      consult_(tp_, gateway_, config_.consult,
               config_.session_store_path.empty()
                   ? std::shared_ptr<consult::SessionStore>(std::make_shared<consult::MemorySessionStore>())
                   : std::make_shared<consult::FileSessionStore>(config_.session_store_path)) {
  tp_->check_manifest();
}

Service::~Service() { stop(); }

HttpResponse Service::predict(const nlohmann::json& body) {
  const auto narrative = string_field(body, "narrative");
  if (text::trim(narrative).empty()) fail(ErrorCode::Validation, "narrative is empty");
  const std::string report_id = body.contains("report_id") ? string_field(body, "report_id") : "request";
  auto epr = pipeline::ingest_report(report_id, narrative, tp_->label_names());
  if (body.contains("demographics") && body["demographics"].is_object()) {
    const auto& d = body["demographics"];
    if (d.contains("age") && d["age"].is_number_integer()) epr.demographics.age = d["age"].get<int>();
    if (d.contains("sex") && d["sex"].is_string()) {
      const auto s = text::to_lower_ascii(d["sex"].get<std::string>());
      if (s == "female") epr.demographics.sex = pipeline::Sex::Female;
      else if (s == "male") epr.demographics.sex = pipeline::Sex::Male;
      else fail(ErrorCode::Validation, "sex must be 'female' or 'male'");
    }
  }
  auto result = pipeline::predict_report(*tp_, epr, *gateway_);
  if (config_.consult.advice) {
    pipeline::attach_advice(result, epr, tp_->index, *gateway_, config_.consult.advice_k);
    if (result.advice) result.advice = consult::with_disclaimer(*result.advice);
  }
  return {200, result.to_json()};
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex session_re(R"(^/v1/sessions/([A-Za-z0-9_-]+)(/messages|/finalize)?$)");
  try {
    if (path == "/healthz") {
      if (method != "GET") return error_response(ErrorCode::Validation, "method not allowed");
      return {200, {{"status", "ok"}}};
    }
    if (path == "/v1/model/info") {
      if (method != "GET") return error_response(ErrorCode::Validation, "method not allowed");
      const auto& m = tp_->model.manifest;
      return {200,
              {{"manifest",
                {{"bank_digest", m.bank_digest},
                 {"revision_digest", m.revision_digest},
                 {"index_digest", m.index_digest},
                 {"build", m.build}}},
               {"model_digest", tp_->model.digest()},
               {"labels", tp_->label_names()},
               {"features", tp_->model.feature_names.size()},
               {"mode", pipeline::mode_name(tp_->mode)},
               {"threshold", tp_->threshold}}};
    }
    if (path == "/v1/predict") {
      if (method != "POST") return error_response(ErrorCode::Validation, "method not allowed");
      return predict(parse_body(body));
    }
    if (path == "/v1/sessions") {
      if (method != "POST") return error_response(ErrorCode::Validation, "method not allowed");
      const auto s = consult_.open_session();
      return {200, {{"session_id", s.session_id}, {"state", consult::to_string(s.state)}}};
    }
    std::smatch m;
    if (std::regex_match(path, m, session_re)) {
      const std::string id = m[1].str();
      const std::string action = m[2].str();
      if (action.empty()) {
        if (method != "GET") return error_response(ErrorCode::Validation, "method not allowed");
        auto j = consult_.get(id).to_json();
        j.erase("last_active");
        return {200, j};
      }
      if (method != "POST") return error_response(ErrorCode::Validation, "method not allowed");
      if (action == "/messages") {
        const auto j = parse_body(body);
        return {200, consult_.post_message(id, string_field(j, "text")).to_json()};
      }
      return {200, consult_.finalize(id).to_json()};
    }
    return error_response(ErrorCode::NotFound, "no route for " + method + " " + path);
  } catch (const Error& e) {
    if (http_status(e.code()) == 500) spdlog::error("{} {}: {}", method, path, e.what());
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    spdlog::error("{} {}: {}", method, path, e.what());
    return {500, {{"error", "Internal"}, {"message", e.what()}}};
  }
}

void Service::install_routes() {
  http_ = std::make_unique<httplib::Server>();
  auto cors = [this](const httplib::Request& req, httplib::Response& res) {
    const auto origin = req.get_header_value("Origin");
    if (!origin.empty() && std::find(config_.cors_allowlist.begin(), config_.cors_allowlist.end(), origin) !=
                               config_.cors_allowlist.end()) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
  };
  auto dispatch = [this, cors](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    cors(req, res);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const std::string any = R"(/.*)";
  http_->Get(any, dispatch);
  http_->Post(any, dispatch);
  http_->Options(any, [cors](const httplib::Request& req, httplib::Response& res) {
    cors(req, res);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

int Service::start() {
  install_routes();
  int port = config_.port;
  if (port == 0) {
    port = http_->bind_to_any_port(config_.host);
  } else if (!http_->bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) fail(ErrorCode::Io, fmt::format("cannot bind {}:{}", config_.host, config_.port));
  thread_ = std::jthread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  spdlog::info("listening on {}:{}", config_.host, port);
  return port;
}

void Service::run() {
  install_routes();
  if (!http_->bind_to_port(config_.host, config_.port)) {
    fail(ErrorCode::Io, fmt::format("cannot bind {}:{}", config_.host, config_.port));
  }
  spdlog::info("listening on {}:{}", config_.host, config_.port);
  http_->listen_after_bind();
}

void Service::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace medrag::server
