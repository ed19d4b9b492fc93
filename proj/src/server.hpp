#pragma once

// JSON HTTP API over a Store. Long work (stage runs, maps, profiles) runs as
// background jobs polled through /runs/{id}/progress.

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "store.hpp"

namespace httplib {
class Server;
}

namespace forage {

struct ServiceOptions {
  unsigned threads = 1;      // per job
  EpisodeRunner runner;      // analysis and trajectories; empty = physics
  Evaluator evaluator;       // stage runs; empty = physics
  double map_timer = 30.0;
  double profile_timer = 60.0;
};

struct Job {
  std::string id;
  std::string kind;    // "stage", "map" or "profile"
  std::string target;  // stage or organism id
  std::string state = "queued";  // queued, running, done, failed
  std::uint64_t completed = 0;
  std::uint64_t total = 0;
  std::string error;
};

ordered_json job_to_json(const Job& j);

class Service {
 public:
  Service(Store& store, ServiceOptions opt = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(). Throws Io when the port is taken.
  void listen(const std::string& host, int port);
  /// Binds to a free port and serves on a background thread.
  int start(const std::string& host = "127.0.0.1");
  void stop();
  /// Blocks until every job has finished.
  void wait_jobs();

  std::optional<Job> job(const std::string& id) const;

 private:
  void routes();
  std::string launch(const std::string& kind, const std::string& target, std::uint64_t total,
                     std::function<void(Job&)> work);

  Store& store_;
  ServiceOptions opt_;
  std::unique_ptr<httplib::Server> http_;
  std::thread listener_;
  std::mutex mutate_;  // serializes POST handlers

  mutable std::mutex jobs_mu_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, std::string> active_;  // job key -> job id
  std::vector<std::thread> workers_;
  std::uint64_t next_job_ = 1;
};

}  // namespace forage
