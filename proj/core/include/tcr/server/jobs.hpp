#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/image.hpp"
#include "tcr/pipeline/pipeline.hpp"
#include "tcr/slide/pyramid.hpp"

namespace tcr::server {

/// Error carrying an HTTP status.
struct ApiError : std::runtime_error {
  int status;
  ApiError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

/// Slides under a root directory; each subdirectory holding a manifest is one
/// slide, identified by the directory name.
class SlideRegistry {
 public:
  explicit SlideRegistry(const std::filesystem::path& root);
  void add(const std::string& id, const std::filesystem::path& dir);

  /// Throws ApiError 404 for unknown ids.
  [[nodiscard]] const slide::SlidePyramid& get(const std::string& id) const;
  [[nodiscard]] bool contains(const std::string& id) const { return slides_.count(id) != 0; }
  [[nodiscard]] std::vector<std::string> ids() const;
  [[nodiscard]] nlohmann::json to_json() const;

 private:
  std::map<std::string, std::unique_ptr<slide::SlidePyramid>> slides_;
};

enum class JobStatus { queued, running, done, failed };
const char* to_string(JobStatus s);
JobStatus job_status_from(const std::string& name);

struct JobRecord {
  std::string id;
  std::string slide;
  Rect region;
  JobStatus status = JobStatus::queued;
  std::int64_t submitted_ms = 0;  ///< unix epoch milliseconds
  std::int64_t finished_ms = 0;
  std::string result_path;
  std::string error;
  int tiles_done = 0;
  int tiles_total = 0;
  std::string idempotency_key;
  std::uint64_t sequence = 0;  ///< submit order
};

nlohmann::json to_json(const JobRecord& j);
JobRecord job_from_json(const nlohmann::json& j);

/// Append-only JSON-lines log of job events. Replaying it restores every job.
class Journal {
 public:
  /// Truncates an unterminated final line left by an interrupted write.
  explicit Journal(const std::filesystem::path& path);
  void append(const nlohmann::json& event);
  /// Events in file order; an unparsable final line (torn write) is skipped.
  [[nodiscard]] static std::vector<nlohmann::json> read(const std::filesystem::path& path);

 private:
  std::ofstream out_;
};

struct JobManagerOptions {
  std::filesystem::path state_dir;  ///< journal.jsonl and results/
  int pipeline_workers = 1;         ///< tile workers per job
  int concurrent_jobs = 1;          ///< jobs running at once
};

struct SubmitResult {
  std::string job_id;
  bool created = true;
};

/// Queues analysis jobs FIFO and runs them on dedicated threads. State changes
/// go through the journal before they become visible.
class JobManager {
 public:
  /// Replays the journal: queued jobs stay queued, running jobs are re-queued,
  /// done jobs whose result file vanished are marked failed.
  JobManager(JobManagerOptions options, const SlideRegistry& slides,
             std::shared_ptr<const pipeline::PipelineConfig> config);
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  /// Starts the runner threads. Jobs submitted before start() stay queued.
  void start();
  /// Stops accepting work and joins the runners after their current job.
  void stop();

  /// Region defaults to the whole slide. Throws ApiError 404 (slide), 422
  /// (region out of bounds) or 409 (key reused with another request).
  SubmitResult submit(const std::string& slide_id, const std::optional<Rect>& region,
                      const std::string& idempotency_key = {});

  [[nodiscard]] std::optional<JobRecord> get(const std::string& id) const;
  [[nodiscard]] std::vector<JobRecord> list() const;
  /// Result JSON text. Throws ApiError 404 (unknown) or 409 (not done).
  [[nodiscard]] std::string result(const std::string& id) const;
  /// Blocks until the job is done or failed, or the timeout expires.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) const;
  [[nodiscard]] int running() const;

 private:
  void replay();
  void run_loop();
  void run_job(const std::string& id);
  void finish(const std::string& id, JobStatus status, const std::string& result_path, const std::string& error);

  JobManagerOptions options_;
  const SlideRegistry& slides_;
  std::shared_ptr<const pipeline::PipelineConfig> config_;
  std::unique_ptr<Journal> journal_;

  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::map<std::string, JobRecord> jobs_;
  std::map<std::string, std::string> keys_;  ///< idempotency key -> job id
  std::deque<std::string> queue_;
  std::uint64_t next_sequence_ = 1;
  int running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> runners_;
};

}  // namespace tcr::server
