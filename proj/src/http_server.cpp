#include "scribeid/http_server.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>

#include "httplib.h"

namespace scribeid {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxBody = 16u << 20;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Parses the body, runs `fn`, and maps any exception to an error response.
template <typename Fn>
void json_endpoint(const httplib::Request& req, httplib::Response& res, Fn fn) {
  try {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw ServiceError(400, "bad_request", std::string("body is not valid JSON: ") + e.what());
    }
    send_json(res, 200, fn(body));
  } catch (const std::exception& e) {
    auto [status, err] = IdentificationService::error_response(e);
    if (status >= 500) spdlog::error("{} {}: {}", req.method, req.path, e.what());
    send_json(res, status, err);
  }
}

}  // namespace

void configure_logging() {
  const char* env = std::getenv("SCRIBEID_LOG");
  if (env == nullptr || *env == '\0') {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const auto level = spdlog::level::from_str(env);
  // from_str maps unknown names to off; only accept "off" when asked for.
  if (level == spdlog::level::off && std::string(env) != "off") {
    spdlog::set_level(spdlog::level::info);
    spdlog::warn("unknown SCRIBEID_LOG level '{}', using info", env);
    return;
  }
  spdlog::set_level(level);
}

std::unique_ptr<httplib::Server> make_server(IdentificationService& service, bool dev) {
  auto server = std::make_unique<httplib::Server>();
  server->set_payload_max_length(kMaxBody);
  server->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                               {"Access-Control-Allow-Headers", "Content-Type"},
                               {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  server->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server->Get("/health", [&service](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}, {"checkpoint_hash", service.model_info()["checkpoint_hash"]}});
  });

  server->Get("/model/info", [&service](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, service.model_info());
  });

  server->Post("/enroll", [&service](const httplib::Request& req, httplib::Response& res) {
    json_endpoint(req, res, [&](const json& body) {
      json out = service.enroll(body);
      spdlog::info("enrolled writer {} ({} templates)", out["writer_id"].get<std::string>(),
                   out["templates"].get<std::size_t>());
      return out;
    });
  });

  server->Post("/identify", [&service](const httplib::Request& req, httplib::Response& res) {
    json_endpoint(req, res, [&](const json& body) { return service.identify(body); });
  });

  if (dev) {
    server->Post("/dev/echo", [](const httplib::Request& req, httplib::Response& res) {
      const std::string type = req.get_header_value("Content-Type");
      res.set_content(req.body, type.empty() ? "application/octet-stream" : type);
    });
  }

  server->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : res.status == 413 ? "payload_too_large" : "http_error";
    send_json(res, res.status, json{{"error", {{"code", code}, {"message", req.method + " " + req.path}}}});
  });

  server->set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
  return server;
}

}  // namespace scribeid
