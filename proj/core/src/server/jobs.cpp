#include "tcr/server/jobs.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "tcr/io.hpp"

namespace tcr::server {

namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

nlohmann::json rect_json(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }
Rect rect_from(const nlohmann::json& j) {
  return {j.at("x").get<std::int64_t>(), j.at("y").get<std::int64_t>(), j.at("w").get<std::int64_t>(),
          j.at("h").get<std::int64_t>()};
}

}  // namespace

SlideRegistry::SlideRegistry(const fs::path& root) {
  if (root.empty()) return;
  if (!fs::is_directory(root)) throw std::invalid_argument("slide root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) add(d.filename().string(), d);
}

void SlideRegistry::add(const std::string& id, const fs::path& dir) {
  slides_[id] = std::make_unique<slide::SlidePyramid>(slide::SlidePyramid::open(dir));
}

const slide::SlidePyramid& SlideRegistry::get(const std::string& id) const {
  const auto it = slides_.find(id);
  if (it == slides_.end()) throw ApiError(404, "unknown slide '" + id + "'");
  return *it->second;
}

std::vector<std::string> SlideRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : slides_) out.push_back(id);
  return out;
}

nlohmann::json SlideRegistry::to_json() const {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& [id, s] : slides_) {
    a.push_back({{"id", id}, {"width", s->width()}, {"height", s->height()}, {"mpp", s->mpp()},
                 {"tile_size", s->manifest().tile_size}, {"levels", s->levels()}});
  }
  return a;
}

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

JobStatus job_status_from(const std::string& name) {
  for (auto s : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed})
    if (name == to_string(s)) return s;
  throw std::invalid_argument("unknown job status '" + name + "'");
}

nlohmann::json to_json(const JobRecord& j) {
  nlohmann::json out = {{"id", j.id},
                        {"slide", j.slide},
                        {"region", rect_json(j.region)},
                        {"status", to_string(j.status)},
                        {"submitted_ms", j.submitted_ms},
                        {"finished_ms", j.finished_ms},
                        {"progress", {{"done", j.tiles_done}, {"total", j.tiles_total}}},
                        {"sequence", j.sequence}};
  if (!j.result_path.empty()) out["result_path"] = j.result_path;
  if (!j.error.empty()) out["error"] = j.error;
  if (!j.idempotency_key.empty()) out["idempotency_key"] = j.idempotency_key;
  return out;
}

JobRecord job_from_json(const nlohmann::json& j) {
  JobRecord r;
  r.id = j.at("id").get<std::string>();
  r.slide = j.at("slide").get<std::string>();
  r.region = rect_from(j.at("region"));
  r.status = job_status_from(j.at("status").get<std::string>());
  r.submitted_ms = j.value("submitted_ms", std::int64_t{0});
  r.finished_ms = j.value("finished_ms", std::int64_t{0});
  r.result_path = j.value("result_path", std::string{});
  r.error = j.value("error", std::string{});
  r.idempotency_key = j.value("idempotency_key", std::string{});
  r.sequence = j.value("sequence", std::uint64_t{0});
  if (j.contains("progress")) {
    r.tiles_done = j["progress"].value("done", 0);
    r.tiles_total = j["progress"].value("total", 0);
  }
  return r;
}

Journal::Journal(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (fs::exists(path)) {
    // Drop a torn final record so the next event starts on a fresh line.
    const auto bytes = read_file(path);
    std::size_t keep = bytes.size();
    while (keep > 0 && bytes[keep - 1] != '\n') --keep;
    if (keep != bytes.size()) fs::resize_file(path, keep);
  }
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) throw IoError("cannot open journal " + path.string());
}

void Journal::append(const nlohmann::json& event) {
  out_ << event.dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("journal write failed");
}

std::vector<nlohmann::json> Journal::read(const fs::path& path) {
  std::vector<nlohmann::json> events;
  std::ifstream in(path, std::ios::binary);
  if (!in) return events;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      events.push_back(nlohmann::json::parse(lines[i]));
    } catch (const nlohmann::json::parse_error&) {
      if (i + 1 != lines.size()) throw IoError("journal " + path.string() + " is corrupt at line " + std::to_string(i + 1));
    }
  }
  return events;
}

JobManager::JobManager(JobManagerOptions options, const SlideRegistry& slides,
                       std::shared_ptr<const pipeline::PipelineConfig> config)
    : options_(std::move(options)), slides_(slides), config_(std::move(config)) {
  if (options_.state_dir.empty()) throw std::invalid_argument("job manager needs a state directory");
  if (options_.pipeline_workers < 1 || options_.concurrent_jobs < 1) throw std::invalid_argument("worker counts must be >= 1");
  fs::create_directories(options_.state_dir / "results");
  replay();
  journal_ = std::make_unique<Journal>(options_.state_dir / "journal.jsonl");
  // Persist the outcome of replay so the journal alone describes the state.
  for (auto& [id, job] : jobs_) {
    if (job.status == JobStatus::queued && job.error == "requeued") {
      job.error.clear();
      journal_->append({{"event", "requeue"}, {"id", id}});
    } else if (job.status == JobStatus::failed && job.finished_ms == -1) {
      job.finished_ms = now_ms();
      journal_->append({{"event", "failed"}, {"id", id}, {"time", job.finished_ms}, {"error", job.error}});
    }
  }
}

JobManager::~JobManager() { stop(); }

void JobManager::replay() {
  for (const auto& e : Journal::read(options_.state_dir / "journal.jsonl")) {
    const auto event = e.at("event").get<std::string>();
    if (event == "submit") {
      auto job = job_from_json(e.at("job"));
      next_sequence_ = std::max(next_sequence_, job.sequence + 1);
      if (!job.idempotency_key.empty()) keys_[job.idempotency_key] = job.id;
      jobs_[job.id] = job;
      continue;
    }
    const auto it = jobs_.find(e.at("id").get<std::string>());
    if (it == jobs_.end()) continue;
    auto& job = it->second;
    if (event == "start") {
      job.status = JobStatus::running;
    } else if (event == "requeue") {
      job.status = JobStatus::queued;
    } else if (event == "done") {
      job.status = JobStatus::done;
      job.finished_ms = e.value("time", std::int64_t{0});
      job.result_path = e.value("result", std::string{});
      job.tiles_done = job.tiles_total = e.value("tiles", 0);
    } else if (event == "failed") {
      job.status = JobStatus::failed;
      job.finished_ms = e.value("time", std::int64_t{0});
      job.error = e.value("error", std::string{});
    }
  }
  std::vector<const JobRecord*> pending;
  for (auto& [id, job] : jobs_) {
    if (job.status == JobStatus::running) {
      job.status = JobStatus::queued;
      job.error = "requeued";
    }
    if (job.status == JobStatus::done && !fs::exists(job.result_path)) {
      job.status = JobStatus::failed;
      job.error = "result file missing after restart";
      job.finished_ms = -1;
    }
    if (job.status == JobStatus::queued) pending.push_back(&job);
  }
  std::sort(pending.begin(), pending.end(), [](auto* a, auto* b) { return a->sequence < b->sequence; });
  for (auto* j : pending) queue_.push_back(j->id);
}

void JobManager::start() {
  std::lock_guard lock(mutex_);
  if (!runners_.empty() || stopping_) return;
  for (int i = 0; i < options_.concurrent_jobs; ++i) runners_.emplace_back([this] { run_loop(); });
}

void JobManager::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  changed_.notify_all();
  for (auto& t : runners_)
    if (t.joinable()) t.join();
  runners_.clear();
}

SubmitResult JobManager::submit(const std::string& slide_id, const std::optional<Rect>& region,
                                const std::string& idempotency_key) {
  const auto& slide = slides_.get(slide_id);
  const Rect bounds{0, 0, slide.width(), slide.height()};
  const Rect r = region.value_or(bounds);
  if (r.empty() || !bounds.contains(r)) {
    throw ApiError(422, "region " + r.str() + " is not inside slide bounds " + bounds.str());
  }
  std::lock_guard lock(mutex_);
  if (!idempotency_key.empty()) {
    const auto it = keys_.find(idempotency_key);
    if (it != keys_.end()) {
      const auto& prior = jobs_.at(it->second);
      if (prior.slide != slide_id || prior.region != r) {
        throw ApiError(409, "idempotency key '" + idempotency_key + "' was used for a different request");
      }
      return {prior.id, false};
    }
  }
  JobRecord job;
  job.sequence = next_sequence_++;
  char buf[32];
  std::snprintf(buf, sizeof buf, "job-%06llu", static_cast<unsigned long long>(job.sequence));
  job.id = buf;
  job.slide = slide_id;
  job.region = r;
  job.submitted_ms = now_ms();
  job.idempotency_key = idempotency_key;
  journal_->append({{"event", "submit"}, {"job", to_json(job)}});
  if (!idempotency_key.empty()) keys_[idempotency_key] = job.id;
  jobs_[job.id] = job;
  queue_.push_back(job.id);
  changed_.notify_all();
  return {job.id, true};
}

std::optional<JobRecord> JobManager::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<JobRecord> JobManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JobRecord> out;
  for (const auto& [_, j] : jobs_) out.push_back(j);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sequence < b.sequence; });
  return out;
}

std::string JobManager::result(const std::string& id) const {
  std::string path;
  {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw ApiError(404, "unknown job '" + id + "'");
    if (it->second.status != JobStatus::done) {
      throw ApiError(409, "job '" + id + "' is " + to_string(it->second.status));
    }
    path = it->second.result_path;
  }
  // Done results are immutable files; read without holding the lock.
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

bool JobManager::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return changed_.wait_for(lock, timeout, [&] {
    const auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.status == JobStatus::done || it->second.status == JobStatus::failed;
  });
}

int JobManager::running() const {
  std::lock_guard lock(mutex_);
  return running_;
}

void JobManager::run_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      auto& job = jobs_.at(id);
      journal_->append({{"event", "start"}, {"id", id}, {"time", now_ms()}});
      job.status = JobStatus::running;
      ++running_;
    }
    changed_.notify_all();
    run_job(id);
  }
}

void JobManager::run_job(const std::string& id) {
  JobRecord job;
  {
    std::lock_guard lock(mutex_);
    job = jobs_.at(id);
  }
  try {
    if (!config_) throw std::runtime_error("server has no model configuration");
    const auto& slide = slides_.get(job.slide);
    auto result = pipeline::run_pipeline(slide, job.region, *config_, options_.pipeline_workers, [&](int done, int total) {
      {
        std::lock_guard lock(mutex_);
        auto& j = jobs_.at(id);
        j.tiles_done = done;
        j.tiles_total = total;
      }
      changed_.notify_all();
    });
    if (result.partial()) {
      throw std::runtime_error(std::to_string(result.failures.size()) + " tile(s) failed; first: " +
                               result.failures.front().message);
    }
    const auto path = options_.state_dir / "results" / (id + ".json");
    pipeline::save_result(result, path);
    finish(id, JobStatus::done, path.string(), {});
  } catch (const std::exception& e) {
    finish(id, JobStatus::failed, {}, e.what());
  }
}

void JobManager::finish(const std::string& id, JobStatus status, const std::string& result_path,
                        const std::string& error) {
  {
    std::lock_guard lock(mutex_);
    auto& job = jobs_.at(id);
    job.finished_ms = now_ms();
    nlohmann::json event = {{"event", to_string(status)}, {"id", id}, {"time", job.finished_ms}};
    if (status == JobStatus::done) {
      event["result"] = result_path;
      event["tiles"] = job.tiles_total;
    } else {
      event["error"] = error;
    }
    journal_->append(event);
    job.status = status;
    job.result_path = result_path;
    job.error = error;
    --running_;
  }
  changed_.notify_all();
}

}  // namespace tcr::server
