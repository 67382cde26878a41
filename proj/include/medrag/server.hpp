#pragma once

#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/consult.hpp"
#include "medrag/error.hpp"
#include "medrag/gateway.hpp"
#include "medrag/pipeline.hpp"

namespace httplib {
class Server;
}

namespace medrag::server {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> cors_allowlist = {"http://localhost:5173", "http://127.0.0.1:5173",
                                             "http://localhost:3000", "http://127.0.0.1:3000"};
  consult::ConsultOptions consult;
  /// Empty keeps sessions in memory.
  std::string session_store_path;

  /// "host:port", ":port" or "port".
  void apply_listen_addr(std::string_view addr);

  nlohmann::json to_json() const;
  static ServiceConfig from_json(const nlohmann::json& j, const std::string& base_dir = {});
};

int http_status(ErrorCode code);

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  Service(std::shared_ptr<const pipeline::TrainedPipeline> tp, std::shared_ptr<llm::Gateway> gateway,
          ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request without any network transport.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Binds (port 0 picks a free port) and serves on a background thread;
  /// returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  /// Stops accepting and drains in-flight requests.
  void stop();

  const ServiceConfig& config() const { return config_; }
  consult::ConsultService& consult() { return consult_; }

 private:
  void install_routes();
  HttpResponse predict(const nlohmann::json& body);

  std::shared_ptr<const pipeline::TrainedPipeline> tp_;
  std::shared_ptr<llm::Gateway> gateway_;
  ServiceConfig config_;
  consult::ConsultService consult_;
  std::unique_ptr<httplib::Server> http_;
  std::jthread thread_;
};

}  // namespace medrag::server
