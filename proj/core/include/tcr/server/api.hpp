#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "tcr/server/jobs.hpp"

namespace tcr::server {

struct Request {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> headers;  ///< lower-case names
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Transport-independent routing for the /api endpoints:
///   GET  /api/health
///   GET  /api/slides
///   GET  /api/slides/{id}
///   GET  /api/slides/{id}/tiles/{level}/{tx}/{ty}   PNG, ETag from the tile CRC
///   POST /api/slides/{id}/analyze  {"region": {x,y,w,h} | [x,y,w,h], "idempotency_key"?}
///   GET  /api/jobs
///   GET  /api/jobs/{id}
///   GET  /api/jobs/{id}/result
class Api {
 public:
  Api(const SlideRegistry& slides, JobManager& jobs) : slides_(slides), jobs_(jobs) {}
  [[nodiscard]] Response handle(const Request& request) const;

 private:
  [[nodiscard]] Response tile(const std::string& slide, int level, std::int64_t tx, std::int64_t ty,
                              const Request& request) const;
  [[nodiscard]] Response analyze(const std::string& slide, const Request& request) const;

  const SlideRegistry& slides_;
  JobManager& jobs_;
};

/// HTTP/1.1 listener that forwards /api requests to an Api and optionally
/// serves static files.
class HttpServer {
 public:
  explicit HttpServer(const Api& api, const std::filesystem::path& static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tcr::server
