#include "server.hpp"

#include <httplib.h>

#include <cstdio>
#include <sstream>

namespace forage {

namespace {

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownOrganism:
    case ErrorCode::UnknownStage: return 404;
    case ErrorCode::NoKeyOrganism:
    case ErrorCode::LineageMismatch: return 409;
    case ErrorCode::InvalidConfig:
    case ErrorCode::Parse:
    case ErrorCode::Degenerate: return 400;
    case ErrorCode::FirstTargetMissed: return 422;
    default: return 500;
  }
}

void send(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send(res, status, {{"error", code}, {"message", message}});
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), std::string(error_code_name(e.code())), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "Parse", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

ordered_json body_json(const httplib::Request& req) {
  if (req.body.empty()) return ordered_json::object();
  try {
    return ordered_json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("request body: ") + e.what());
  }
}

long param_int(const httplib::Request& req, const char* name, long fallback, long lo, long hi) {
  if (!req.has_param(name)) return fallback;
  const std::string s = req.get_param_value(name);
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || v < lo || v > hi)
    throw Error(ErrorCode::InvalidConfig, std::string(name) + " must be an integer in [" + std::to_string(lo) + ", " +
                                              std::to_string(hi) + "]");
  return v;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) throw Error(ErrorCode::Parse, "bad number '" + s + "'");
  return v;
}

Vec2 parse_point(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw Error(ErrorCode::Parse, "expected x,y but got '" + s + "'");
  return {parse_double(s.substr(0, comma)), parse_double(s.substr(comma + 1))};
}

ordered_json stage_summary(const Store& store, const std::string& id) {
  const StageConfig c = store.stage(id);
  const StageResult r = store.stage_result(id);
  const auto key = store.key_organism(id);
  ordered_json j;
  j["stage_id"] = id;
  j["parent"] = c.parent;
  j["seed"] = c.seed;
  j["repeats"] = c.repeats;
  j["generations"] = c.generations;
  j["population"] = c.population;
  if (c.plan.uniform) j["noise"] = "uniform";
  else j["noise"] = c.plan.noise_p;
  j["variant"] = variant_name(c.plan.variant);
  j["timer"] = c.plan.timer;
  j["completed"] = r.count(RepeatResult::State::Done);
  j["failed"] = r.count(RepeatResult::State::Failed);
  j["key_organism"] = key ? ordered_json(*key) : ordered_json();
  return j;
}

ordered_json trajectory_json(const std::string& id, const std::vector<Vec2>& targets, const EpisodeRecord& rec) {
  ordered_json j;
  j["organism_id"] = id;
  j["targets"] = ordered_json::array();
  for (const auto& t : targets) j["targets"].push_back({t.x, t.y});
  j["unstable"] = rec.unstable;
  j["p0"] = {rec.p0.x, rec.p0.y, rec.p0.z};
  j["columns"] = {"step", "t", "x", "y", "z", "sensor_distance", "target_index"};
  j["rows"] = ordered_json::array();
  for (const auto& r : rec.rows)
    j["rows"].push_back({r.step, r.t, r.root.x, r.root.y, r.root.z, r.sensor_distance, r.target_index});
  j["absorptions"] = ordered_json::array();
  for (const auto& a : rec.absorptions)
    j["absorptions"].push_back({{"target_index", a.target_index},
                                {"step", a.step_index},
                                {"position", {a.position.x, a.position.y, a.position.z}}});
  return j;
}

}  // namespace

ordered_json job_to_json(const Job& j) {
  return {{"run_id", j.id},     {"kind", j.kind},   {"target", j.target}, {"state", j.state},
          {"completed", j.completed}, {"total", j.total}, {"error", j.error}};
}

Service::Service(Store& store, ServiceOptions opt)
    : store_(store), opt_(std::move(opt)), http_(std::make_unique<httplib::Server>()) {
  if (!opt_.runner) opt_.runner = physics_runner();
  if (!opt_.evaluator) opt_.evaluator = physics_evaluator();
  // SO_REUSEADDR only: a second server on the same port must fail to bind
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  routes();
}

Service::~Service() {
  stop();
  wait_jobs();
}

void Service::listen(const std::string& host, int port) {
  if (!http_->bind_to_port(host, port))
    throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  http_->listen_after_bind();
}

int Service::start(const std::string& host) {
  const int port = http_->bind_to_any_port(host);
  if (port < 0) throw Error(ErrorCode::Io, "cannot bind " + host);
  listener_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port;
}

void Service::stop() {
  http_->stop();
  if (listener_.joinable()) listener_.join();
}

void Service::wait_jobs() {
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(jobs_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

std::optional<Job> Service::job(const std::string& id) const {
  std::lock_guard<std::mutex> lock(jobs_mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::string Service::launch(const std::string& kind, const std::string& target, std::uint64_t total,
                            std::function<void(Job&)> work) {
  std::lock_guard<std::mutex> lock(jobs_mu_);
  const std::string key = kind + ":" + target;
  if (auto it = active_.find(key); it != active_.end()) return it->second;
  char id[32];
  std::snprintf(id, sizeof id, "run-%04llu", static_cast<unsigned long long>(next_job_++));
  Job j;
  j.id = id;
  j.kind = kind;
  j.target = target;
  j.total = total;
  jobs_[j.id] = j;
  active_[key] = j.id;
  workers_.emplace_back([this, key, jid = j.id, work = std::move(work)] {
    Job snapshot;
    {
      std::lock_guard<std::mutex> l(jobs_mu_);
      jobs_[jid].state = "running";
      snapshot = jobs_[jid];
    }
    std::string error;
    try {
      work(snapshot);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard<std::mutex> l(jobs_mu_);
    Job& done = jobs_[jid];
    done.state = error.empty() ? "done" : "failed";
    done.error = error;
    if (error.empty()) done.completed = done.total;
    // failed analysis jobs stay registered so their error is reported
    if (error.empty() || done.kind == "stage") active_.erase(key);
  });
  return j.id;
}

void Service::routes() {
  auto& s = *http_;

  s.Get("/stages", guarded([this](const httplib::Request&, httplib::Response& res) {
    ordered_json out = ordered_json::array();
    for (const auto& id : store_.stage_ids()) out.push_back(stage_summary(store_, id));
    send(res, 200, out);
  }));

  s.Get(R"(/stages/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const StageConfig c = store_.stage(id);
    ordered_json j = stage_summary(store_, id);
    j["config"] = stage_to_json(c);
    j["warnings"] = validate_stage(c);
    j["ranking"] = ordered_json::array();
    for (const auto& r : store_.stage_result(id).ranked())
      j["ranking"].push_back({{"repeat", r.repeat}, {"organism_id", r.organism_id}, {"w_bar", r.fitness.w_bar},
                              {"sources_reached", r.fitness.sources_reached}});
    send(res, 200, j);
  }));

  s.Get(R"(/stages/([A-Za-z0-9_-]+)/repeats)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    ordered_json out = ordered_json::array();
    for (const auto& r : store_.stage_result(req.matches[1]).repeats) out.push_back(repeat_to_json(r));
    send(res, 200, out);
  }));

  s.Get("/lineage", guarded([this](const httplib::Request&, httplib::Response& res) {
    ordered_json j = lineage_to_json(store_.lineage());
    j["problems"] = verify_lineage(store_);
    send(res, 200, j);
  }));

  s.Get(R"(/organisms/([0-9a-f]{16}))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const Genome g = store_.organism(id);
    ordered_json j;
    j["organism_id"] = id;
    j["genome"] = genome_to_json(g);
    j["results"] = ordered_json::array();
    j["key_of"] = ordered_json::array();
    for (const auto& sid : store_.stage_ids()) {
      for (const auto& r : store_.stage_result(sid).repeats)
        if (r.state == RepeatResult::State::Done && r.organism_id == id)
          j["results"].push_back({{"stage_id", sid}, {"repeat", r.repeat}, {"w_bar", r.fitness.w_bar},
                                  {"sources_reached", r.fitness.sources_reached}});
      if (store_.key_organism(sid) == id) j["key_of"].push_back(sid);
    }
    j["in_lineage_store"] = fs::exists(store_.lineage_genome_path(id));
    send(res, 200, j);
  }));

  s.Get(R"(/organisms/([0-9a-f]{16})/map)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const Genome g = store_.organism(id);
    ForagingMap probe;
    probe.resolution = static_cast<int>(param_int(req, "res", 11, 2, 201));
    if (req.has_param("cond")) probe.conditional_on = parse_point(req.get_param_value("cond"));
    const fs::path dir = store_.analysis_dir(id) / "maps";
    const std::string base = map_basename(id, probe);
    const fs::path meta = dir / (base + ".json");
    if (fs::exists(meta)) {
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "json";
      if (format == "png") {
        res.set_content(read_text(dir / (base + ".png")), "image/png");
      } else if (format == "csv") {
        res.set_content(read_text(dir / (base + ".csv")), "text/csv");
      } else {
        ordered_json j;
        j["organism_id"] = id;
        j["metadata"] = read_json(meta);
        j["csv"] = read_text(dir / (base + ".csv"));
        j["png"] = "/organisms/" + id + "/map?res=" + std::to_string(probe.resolution) +
                   (req.has_param("cond") ? "&cond=" + req.get_param_value("cond") : "") + "&format=png";
        send(res, 200, j);
      }
      return;
    }
    MapOptions opt;
    opt.resolution = probe.resolution;
    opt.timer = opt_.map_timer;
    opt.threads = opt_.threads;
    const auto cond = probe.conditional_on;
    const std::string jid = launch("map", base, 1, [this, g, id, opt, cond, dir](Job& job) {
      const Organism org = develop(g);
      ForagingMap m = cond ? conditional_map(org, *cond, opt, opt_.runner) : foraging_map(org, opt, opt_.runner);
      // render aside, then move the metadata in last: its presence marks completion
      const fs::path tmp = dir / (".tmp-" + job.id);
      const MapFiles f = render_map(m, id, tmp);
      fs::rename(f.png, dir / f.png.filename());
      fs::rename(f.csv, dir / f.csv.filename());
      fs::rename(f.json, dir / f.json.filename());
      fs::remove_all(tmp);
    });
    const auto job = this->job(jid);
    if (job && job->state == "failed") {
      send_error(res, 422, "AnalysisFailed", job->error);
      return;
    }
    send(res, 202, {{"run_id", jid}, {"progress", "/runs/" + jid + "/progress"}});
  }));

  s.Get(R"(/organisms/([0-9a-f]{16})/profile)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const Genome g = store_.organism(id);
    ProfileOptions opt;
    opt.trials = static_cast<int>(param_int(req, "trials", 100, 1, 100000));
    opt.sequence_length = static_cast<int>(param_int(req, "seq", 10, 1, 1000));
    opt.timer = opt_.profile_timer;
    opt.threads = opt_.threads;
    const std::string name = "profile_" + std::to_string(opt.trials) + "_" + std::to_string(opt.sequence_length);
    const fs::path path = store_.analysis_dir(id) / (name + ".json");
    if (fs::exists(path)) {
      ordered_json j = read_json(path);
      j["organism_id"] = id;
      send(res, 200, j);
      return;
    }
    const std::string jid = launch("profile", id + ":" + name, 1, [this, g, opt, path](Job&) {
      const ForagingProfile p = foraging_profile(develop(g), opt, opt_.runner);
      write_atomic(path, profile_to_json(p).dump(2) + "\n");
    });
    send(res, 202, {{"run_id", jid}, {"progress", "/runs/" + jid + "/progress"}});
  }));

  s.Get(R"(/organisms/([0-9a-f]{16})/trajectory)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const Genome g = store_.organism(id);
    std::vector<Vec2> targets;
    std::stringstream ss(req.has_param("targets") ? req.get_param_value("targets") : "10,0");
    for (std::string item; std::getline(ss, item, ';');)
      if (!item.empty()) targets.push_back(parse_point(item));
    if (targets.empty()) throw Error(ErrorCode::InvalidConfig, "targets is empty");
    EpisodeSpec spec;
    spec.first_target = targets.front();
    spec.next_offsets.assign(targets.begin() + 1, targets.end());
    spec.timer = req.has_param("timer") ? parse_double(req.get_param_value("timer")) : opt_.map_timer;
    if (spec.timer <= 0.0 || spec.timer > 600.0) throw Error(ErrorCode::InvalidConfig, "timer must be in (0, 600]");
    send(res, 200, trajectory_json(id, targets, opt_.runner(develop(g), spec)));
  }));

  s.Get(R"(/runs/([A-Za-z0-9_-]+)/progress)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto j = job(req.matches[1]);
    if (!j) {
      send_error(res, 404, "UnknownRun", "no run '" + std::string(req.matches[1]) + "'");
      return;
    }
    send(res, 200, job_to_json(*j));
  }));

  s.Post("/stages", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mutate_);
    const ordered_json body = body_json(req);
    if (body.contains("from")) {
      const DerivedStage d =
          derive_next_stage(store_, body.at("from").get<std::string>(), body.value("overrides", ordered_json::object()));
      send(res, 201, {{"config", stage_to_json(d.config)}, {"warnings", d.warnings}});
      return;
    }
    StageConfig c = ladder_stage(0);
    c.stage_id = store_.next_stage_id();
    if (body.contains("config")) {
      ordered_json cj = body.at("config");
      if (!cj.contains("stage_id")) cj["stage_id"] = c.stage_id;
      c = stage_from_json(cj);
    }
    apply_overrides(c, body.value("overrides", ordered_json::object()));
    if (store_.has_stage(c.stage_id)) throw Error(ErrorCode::InvalidConfig, "stage '" + c.stage_id + "' already exists");
    const auto warnings = validate_stage(c);
    store_.create_stage(c);
    send(res, 201, {{"config", stage_to_json(c)}, {"warnings", warnings}});
  }));

  s.Post(R"(/stages/([A-Za-z0-9_-]+)/key-organism)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mutate_);
    const ordered_json body = body_json(req);
    if (!body.contains("organism_id")) throw Error(ErrorCode::InvalidConfig, "organism_id is required");
    const Lineage l =
        mark_key_organism(store_, req.matches[1], body.at("organism_id").get<std::string>(), body.value("note", ""));
    send(res, 200, lineage_to_json(l));
  }));

  s.Post(R"(/stages/([A-Za-z0-9_-]+)/run)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mutate_);
    const std::string id = req.matches[1];
    const StageConfig c = store_.stage(id);
    validate_stage(c);
    if (!c.random_seed()) store_.organism(c.seed);
    const ordered_json body = body_json(req);
    RunHooks hooks;
    hooks.parallelism = body.value("parallelism", opt_.threads);
    hooks.evaluator = opt_.evaluator;
    const std::uint64_t per_repeat = c.generations + 1;
    const std::uint64_t total = static_cast<std::uint64_t>(c.repeats) * per_repeat;
    const std::string jid = launch("stage", id, total, [this, id, hooks, per_repeat](Job& job) mutable {
      const std::string jid = job.id;
      const StageResult before = store_.stage_result(id);
      {
        std::lock_guard<std::mutex> l(jobs_mu_);
        jobs_[jid].completed = before.count(RepeatResult::State::Done) * per_repeat;
      }
      hooks.on_record = [this, jid](int, const LogRecord&) {
        std::lock_guard<std::mutex> l(jobs_mu_);
        ++jobs_[jid].completed;
      };
      const StageResult after = run_stage(store_, id, hooks);
      if (after.count(RepeatResult::State::Failed) > 0)
        throw Error(ErrorCode::Io, std::to_string(after.count(RepeatResult::State::Failed)) + " repeat(s) failed");
    });
    send(res, 202, {{"run_id", jid}, {"progress", "/runs/" + jid + "/progress"}});
  }));
}

}  // namespace forage
