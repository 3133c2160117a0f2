#pragma once

// HTTP routes for ReviewService (cpp-httplib).

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "harmless/service.hpp"

namespace harmless::service {

namespace detail {

template <class Fn>
void respond(httplib::Response& res, Fn&& fn, int ok_status = 200) {
  try {
    json body = fn();
    res.status = ok_status;
    res.set_content(body.dump(), "application/json");
  } catch (const ApiError& e) {
    res.status = e.status();
    if (e.retry_after()) res.set_header("Retry-After", std::to_string(*e.retry_after()));
    res.set_content(e.body().dump(), "application/json");
  } catch (const json::exception& e) {
    res.status = 400;
    res.set_content(json{{"error", std::string("malformed JSON: ") + e.what()}, {"status", 400}}.dump(),
                    "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(json{{"error", e.what()}, {"status", 500}}.dump(), "application/json");
  }
}

inline std::size_t parse_index(const std::string& s, const char* field) {
  if (s.empty() || s.size() > 18 || s.find_first_not_of("0123456789") != std::string::npos)
    throw ApiError(400, std::string(field) + " must be a non-negative integer", field);
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace detail

inline void bind_routes(httplib::Server& server, ReviewService& svc) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] { return svc.create_session(req.body.empty() ? json::object() : json::parse(req.body)); },
                    201);
  });
  server.Get("/sessions/:id", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] { return svc.status(req.path_params.at("id")); });
  });
  server.Get("/sessions/:id/queue", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] {
      const std::size_t limit = req.has_param("limit") ? detail::parse_index(req.get_param_value("limit"), "limit") : 1;
      return svc.queue(req.path_params.at("id"), req.get_param_value("reviewer"), limit);
    });
  });
  server.Post("/sessions/:id/verdicts", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] { return svc.submit(req.path_params.at("id"), json::parse(req.body)); });
  });
  server.Get("/sessions/:id/trace", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] { return svc.trace(req.path_params.at("id")); });
  });
  server.Get("/documents/:id", [&svc](const httplib::Request& req, httplib::Response& res) {
    detail::respond(res, [&] {
      std::string scope = req.get_param_value("session");
      if (scope.empty()) scope = req.get_param_value("corpus");
      return svc.document(detail::parse_index(req.path_params.at("id"), "doc_id"), scope);
    });
  });
}

}  // namespace harmless::service
