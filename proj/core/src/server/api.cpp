#include "tcr/server/api.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <regex>

#include "tcr/io.hpp"

namespace tcr::server {

namespace {

Response json_response(int status, const nlohmann::json& body) { return {status, "application/json", body.dump(), {}}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}, {"status", status}});
}

Rect parse_region(const nlohmann::json& j) {
  if (j.is_array()) {
    if (j.size() != 4) throw ApiError(400, "region array must be [x, y, w, h]");
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>(), j[3].get<std::int64_t>()};
  }
  return {j.at("x").get<std::int64_t>(), j.at("y").get<std::int64_t>(), j.at("w").get<std::int64_t>(),
          j.at("h").get<std::int64_t>()};
}

}  // namespace

Response Api::handle(const Request& req) const {
  static const std::regex slide_re(R"(^/api/slides/([A-Za-z0-9._-]+)$)");
  static const std::regex tile_re(R"(^/api/slides/([A-Za-z0-9._-]+)/tiles/(\d+)/(\d+)/(\d+)$)");
  static const std::regex analyze_re(R"(^/api/slides/([A-Za-z0-9._-]+)/analyze$)");
  static const std::regex job_re(R"(^/api/jobs/([A-Za-z0-9._-]+)$)");
  static const std::regex result_re(R"(^/api/jobs/([A-Za-z0-9._-]+)/result$)");

  auto expect = [&](const char* method) {
    if (req.method != method) throw ApiError(405, std::string("use ") + method);
  };
  try {
    std::smatch m;
    if (req.path == "/api/health") {
      expect("GET");
      return json_response(200, {{"status", "ok"}, {"running_jobs", jobs_.running()}});
    }
    if (req.path == "/api/slides") {
      expect("GET");
      return json_response(200, slides_.to_json());
    }
    if (std::regex_match(req.path, m, slide_re)) {
      expect("GET");
      return json_response(200, slide::to_json(slides_.get(m[1].str()).manifest()));
    }
    if (std::regex_match(req.path, m, tile_re)) {
      expect("GET");
      try {
        return tile(m[1].str(), std::stoi(m[2].str()), std::stoll(m[3].str()), std::stoll(m[4].str()), req);
      } catch (const std::out_of_range&) {
        throw ApiError(404, "tile coordinates out of range");
      }
    }
    if (std::regex_match(req.path, m, analyze_re)) {
      expect("POST");
      return analyze(m[1].str(), req);
    }
    if (req.path == "/api/jobs") {
      expect("GET");
      nlohmann::json a = nlohmann::json::array();
      for (const auto& j : jobs_.list()) a.push_back(to_json(j));
      return json_response(200, a);
    }
    if (std::regex_match(req.path, m, job_re)) {
      expect("GET");
      const auto job = jobs_.get(m[1].str());
      if (!job) throw ApiError(404, "unknown job '" + m[1].str() + "'");
      return json_response(200, to_json(*job));
    }
    if (std::regex_match(req.path, m, result_re)) {
      expect("GET");
      return {200, "application/json", jobs_.result(m[1].str()), {}};
    }
    return error_response(404, "no route for " + req.path);
  } catch (const ApiError& e) {
    return error_response(e.status, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

Response Api::tile(const std::string& slide_id, int level, std::int64_t tx, std::int64_t ty, const Request& req) const {
  const auto& slide = slides_.get(slide_id);
  if (level < 0 || level >= slide.levels()) throw ApiError(404, "no level " + std::to_string(level));
  const auto& info = slide.manifest().levels[static_cast<std::size_t>(level)];
  const std::int64_t ts = slide.manifest().tile_size;
  const std::int64_t cols = (info.width + ts - 1) / ts, rows = (info.height + ts - 1) / ts;
  if (tx < 0 || ty < 0 || tx >= cols || ty >= rows) throw ApiError(404, "tile outside the level grid");
  const auto index = static_cast<std::size_t>(ty * cols + tx);
  char etag[16];
  std::snprintf(etag, sizeof etag, "\"%08x\"", info.tiles[index].crc32);
  Response r;
  r.headers["ETag"] = etag;
  r.headers["Cache-Control"] = "public, max-age=31536000, immutable";
  r.content_type = "image/png";
  if (const auto it = req.headers.find("if-none-match"); it != req.headers.end() && it->second == etag) {
    r.status = 304;
    return r;
  }
  const auto png = encode_png(slide.read_tile(level, index));
  r.body.assign(png.begin(), png.end());
  return r;
}

Response Api::analyze(const std::string& slide_id, const Request& req) const {
  (void)slides_.get(slide_id);
  std::optional<Rect> region;
  std::string key;
  if (const auto it = req.headers.find("idempotency-key"); it != req.headers.end()) key = it->second;
  if (!req.body.empty()) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
      if (!body.is_object()) throw ApiError(400, "request body must be a JSON object");
      if (body.contains("region") && !body["region"].is_null()) region = parse_region(body["region"]);
      if (body.contains("idempotency_key")) key = body["idempotency_key"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ApiError(400, std::string("bad request body: ") + e.what());
    }
  }
  const auto submitted = jobs_.submit(slide_id, region, key);
  const auto job = jobs_.get(submitted.job_id);
  auto r = json_response(submitted.created ? 202 : 200,
                         {{"job_id", submitted.job_id}, {"status", job ? to_string(job->status) : "queued"}});
  r.headers["Location"] = "/api/jobs/" + submitted.job_id;
  return r;
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Api& api, const std::filesystem::path& static_dir) : impl_(std::make_unique<Impl>()) {
  auto forward = [&api](const httplib::Request& hreq, httplib::Response& hres) {
    Request req{hreq.method, hreq.path, hreq.body, {}};
    for (const auto& [k, v] : hreq.headers) {
      std::string name = k;
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
      req.headers[name] = v;
    }
    const auto res = api.handle(req);
    hres.status = res.status;
    for (const auto& [k, v] : res.headers) hres.set_header(k, v);
    if (res.status != 304) hres.set_content(res.body, res.content_type);
  };
  auto& s = impl_->server;
  s.Get(R"(/api(/.*)?)", forward);
  s.Post(R"(/api(/.*)?)", forward);
  s.Put(R"(/api(/.*)?)", forward);
  s.Delete(R"(/api(/.*)?)", forward);
  if (!static_dir.empty() && !s.set_mount_point("/", static_dir.string())) {
    throw std::invalid_argument("static directory " + static_dir.string() + " does not exist");
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace tcr::server
