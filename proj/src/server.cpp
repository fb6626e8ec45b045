#include "hvsobs/server.hpp"

#include <httplib.h>

#include <filesystem>

#include "hvsobs/error.hpp"

namespace hvsobs {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::out_of_order: return 409;
    case ErrorCode::validation:
    case ErrorCode::invalid_argument:
    case ErrorCode::out_of_range: return 400;
    default: return 500;
  }
}

namespace {

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><title>Reading study</title></head><body>"
    "<p>Study server is running. No viewer bundle is configured (set static_dir).</p>"
    "<p>Recommended setup: view from about 40 cm so that one degree spans the configured pixels/degree.</p>"
    "</body></html>";

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  res.status = http_status(e.code());
  res.set_content(e.to_json(), "application/json");
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, Error(ErrorCode::validation, std::string("malformed request body: ") + e.what()));
    } catch (const std::exception& e) {
      send_error(res, Error(ErrorCode::io, e.what()));
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body);
  if (!j.is_object()) throw Error(ErrorCode::validation, "request body must be a JSON object");
  return j;
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  httplib::Server http;

  explicit Impl(StudyService& s) : service(s) {
    http.Post("/api/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                if (!body.contains("observer_id") || !body["observer_id"].is_string())
                  throw Error(ErrorCode::validation, "observer_id (string) is required");
                send_json(res, service.create_session(body["observer_id"].get<std::string>()), 201);
              }));
    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, service.session(req.matches[1]));
             }));
    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+)/next)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, service.next(req.matches[1]));
             }));
    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+)/results)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, service.results_view(req.matches[1]));
             }));
    http.Post(R"(/api/sessions/([A-Za-z0-9_-]+)/scores)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                ScoreSubmission sub;
                sub.session = req.matches[1];
                if (!body.contains("stack") || !body["stack"].is_string())
                  throw Error(ErrorCode::validation, "stack (string) is required");
                sub.stack = body["stack"].get<std::string>();
                if (!body.contains("score") || !body["score"].is_number())
                  throw Error(ErrorCode::validation, "score must be one of 0, 1, 2, 3");
                sub.score = body["score"].get<double>();
                sub.presentations = body.value("presentations", std::size_t{1});
                sub.elapsed_ms = body.value("elapsed_ms", 0.0);
                send_json(res, service.record_score(sub));
              }));
    http.Get(R"(/api/stacks/([0-9a-f]+)/slices/(\d+)\.png)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               std::optional<DisplayWindow> window;
               if (req.has_param("lo") || req.has_param("hi")) {
                 window = service.config().window;
                 if (req.has_param("lo")) window->lo = std::stod(req.get_param_value("lo"));
                 if (req.has_param("hi")) window->hi = std::stod(req.get_param_value("hi"));
               }
               const auto png = service.slice(req.matches[1], std::stoul(req.matches[2]), window);
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));

    const auto& dir = service.config().static_dir;
    if (!dir.empty() && std::filesystem::is_directory(dir)) {
      http.set_mount_point("/", dir.string());
    } else {
      http.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kPlaceholderPage, "text/html");
      });
    }
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        res.set_content(Error(ErrorCode::not_found, "no such resource").to_json(), "application/json");
      }
    });
  }
};

StudyServer::StudyServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}
StudyServer::~StudyServer() = default;

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  if (!impl_->http.bind_to_port(host, port))
    throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void StudyServer::listen() { impl_->http.listen_after_bind(); }
void StudyServer::stop() { impl_->http.stop(); }

}  // namespace hvsobs
