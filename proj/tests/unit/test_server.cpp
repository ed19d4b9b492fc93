#include "testing.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

#include "server.hpp"
#include "stubs.hpp"

using namespace forage;

namespace {

FitnessBreakdown surrogate(const Genome& g, const EvaluationPlan& plan) {
  FitnessBreakdown fb;
  fb.variant = plan.variant;
  for (const auto& b : g.blocks) fb.w_bar += b.dims.x * b.dims.y * b.dims.z;
  return fb;
}

// Every file under the store with its contents.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[e.path().string()] = read_text(e.path());
  return files;
}

class Api {
 public:
  Api() {
    static int counter = 0;
    root_ = fs::temp_directory_path() / ("forage_api_" + std::to_string(++counter));
    fs::remove_all(root_);
    store_ = std::make_unique<Store>(root_);
    ServiceOptions opt;
    opt.runner = stubs::straight_walker(0.05);
    opt.evaluator = surrogate;
    service_ = std::make_unique<Service>(*store_, opt);
    port_ = service_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  ~Api() {
    client_.reset();
    service_.reset();
  }

  ordered_json get(const std::string& path, int expect = 200) {
    auto res = client_->Get(path);
    { INFO(path); CHECK(res); }
    if (!res) return {};
    { INFO(path << "\n" << res->body); CHECK_EQ(res->status, expect); }
    return ordered_json::parse(res->body);
  }

  ordered_json post(const std::string& path, const ordered_json& body, int expect) {
    auto res = client_->Post(path, body.dump(), "application/json");
    { INFO(path); CHECK(res); }
    if (!res) return {};
    { INFO(path << "\n" << res->body); CHECK_EQ(res->status, expect); }
    return ordered_json::parse(res->body);
  }

  ordered_json wait_run(const std::string& id) {
    for (int i = 0; i < 2000; ++i) {
      ordered_json p = get("/runs/" + id + "/progress");
      if (p["state"] == "done" || p["state"] == "failed") return p;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    FAIL_CHECK("run " << id << " did not finish");
    return {};
  }

  // Creates s01 (3 repeats) and runs it to completion.
  void run_first_stage() {
    post("/stages", {{"overrides", {{"repeats", 3}, {"generations", 3}, {"population", 10}, {"timer", 10}}}}, 201);
    const ordered_json r = post("/stages/s01/run", ordered_json::object(), 202);
    const ordered_json p = wait_run(r["run_id"]);
    CHECK_EQ(p["state"], "done");
    CHECK_EQ(p["completed"], p["total"]);
    CHECK_EQ(p["total"], 3 * 4);
  }

  std::string best_of(const std::string& stage) {
    return get("/stages/" + stage)["ranking"][0]["organism_id"];
  }

  fs::path root_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

TEST_CASE_FIXTURE(Api, "Api.EmptyStoreListsNoStages") { CHECK_EQ(get("/stages"), ordered_json::array()); }

TEST_CASE_FIXTURE(Api, "Api.CreateRunAndInspectStage") {
  run_first_stage();
  const ordered_json stages = get("/stages");
  REQUIRE_EQ(stages.size(), 1u);
  CHECK_EQ(stages[0]["stage_id"], "s01");
  CHECK_EQ(stages[0]["completed"], 3);
  CHECK(stages[0]["key_organism"].is_null());

  const ordered_json repeats = get("/stages/s01/repeats");
  REQUIRE_EQ(repeats.size(), 3u);
  for (const auto& r : repeats) CHECK_EQ(r["state"], "done");

  const ordered_json stage = get("/stages/s01");
  REQUIRE_EQ(stage["ranking"].size(), 3u);
  for (std::size_t i = 1; i < 3; ++i)
    CHECK_GE(stage["ranking"][i - 1]["w_bar"].get<double>(), stage["ranking"][i]["w_bar"].get<double>());
  CHECK_EQ(stage["config"]["plan"]["noise_p"], 0.001);

  const std::string id = best_of("s01");
  const ordered_json org = get("/organisms/" + id);
  CHECK_EQ(org["organism_id"], id);
  CHECK_EQ(organism_id(genome_from_json(org["genome"])), id);
  CHECK_FALSE(org["results"].empty());
}

TEST_CASE_FIXTURE(Api, "Api.KeyOrganismAndLineage") {
  run_first_stage();
  post("/stages", {{"from", "s01"}}, 409);  // no key yet
  const std::string id = best_of("s01");
  post("/stages/s01/key-organism", {{"organism_id", id}, {"note", "fast"}}, 200);
  const ordered_json l = get("/lineage");
  REQUIRE_EQ(l["entries"].size(), 1u);
  CHECK_EQ(l["entries"][0]["key_organism_id"], id);
  CHECK_EQ(l["entries"][0]["note"], "fast");
  CHECK(l["problems"].empty());
  CHECK_EQ(get("/stages")[0]["key_organism"], id);

  const ordered_json next = post("/stages", {{"from", "s01"}}, 201);
  CHECK_EQ(next["config"]["seed"], id);
  CHECK_EQ(next["config"]["plan"]["noise_p"], 0.05);
  const ordered_json c = post("/stages", {{"from", "s01"}, {"overrides", {{"variant", "C"}}}}, 201);
  CHECK_EQ(c["warnings"].size(), 1u);

  post("/stages/s01/key-organism", {{"organism_id", "0000000000000000"}}, 404);
  post("/stages/s01/key-organism", ordered_json::object(), 400);
}

TEST_CASE_FIXTURE(Api, "Api.MapIsComputedOnDemand") {
  run_first_stage();
  const std::string id = best_of("s01");
  const ordered_json job = get("/organisms/" + id + "/map?res=11", 202);
  CHECK_EQ(wait_run(job["run_id"])["state"], "done");
  const ordered_json m = get("/organisms/" + id + "/map?res=11");
  CHECK_EQ(m["metadata"]["active_cells"], 112);
  CHECK_EQ(m["csv"].get<std::string>().rfind("row,col,x,y,speed,reached,excluded", 0), 0u);
  auto png = client_->Get("/organisms/" + id + "/map?res=11&format=png");
  REQUIRE(png);
  CHECK_EQ(png->get_header_value("Content-Type"), "image/png");
  CHECK_EQ(png->body.substr(1, 3), "PNG");

  const ordered_json cjob = get("/organisms/" + id + "/map?res=5&cond=6,0", 202);
  CHECK_EQ(wait_run(cjob["run_id"])["state"], "done");
  CHECK_EQ(get("/organisms/" + id + "/map?res=5&cond=6,0")["metadata"]["conditional_on"], ordered_json({6.0, 0.0}));

  get("/organisms/" + id + "/map?res=zero", 400);
}

TEST_CASE_FIXTURE(Api, "Api.ProfileAndTrajectory") {
  run_first_stage();
  const std::string id = best_of("s01");
  const ordered_json job = get("/organisms/" + id + "/profile?trials=6&seq=3", 202);
  CHECK_EQ(wait_run(job["run_id"])["state"], "done");
  const ordered_json p = get("/organisms/" + id + "/profile?trials=6&seq=3");
  CHECK_EQ(p["success_rate"], ordered_json({1.0, 1.0, 1.0}));

  const ordered_json t = get("/organisms/" + id + "/trajectory?targets=6,0;0,6&timer=20");
  CHECK_EQ(t["absorptions"].size(), 2u);
  CHECK_EQ(t["rows"][0].size(), t["columns"].size());
  get("/organisms/" + id + "/trajectory?targets=6", 400);
}

TEST_CASE_FIXTURE(Api, "Api.ErrorsAndUnknowns") {
  get("/stages/s07", 404);
  get("/stages/s07/repeats", 404);
  get("/organisms/0123456789abcdef", 404);
  get("/runs/run-9999/progress", 404);
  auto res = client_->Post("/stages", "{not json", "application/json");
  REQUIRE(res);
  CHECK_EQ(res->status, 400);
  post("/stages", {{"overrides", {{"repeats", 0}}}}, 400);
  post("/stages/s07/run", ordered_json::object(), 404);
}

TEST_CASE_FIXTURE(Api, "Api.ReadsHaveNoSideEffects") {
  run_first_stage();
  const std::string id = best_of("s01");
  post("/stages/s01/key-organism", {{"organism_id", id}}, 200);
  const auto before = snapshot(root_);
  get("/stages");
  get("/stages/s01");
  get("/stages/s01/repeats");
  get("/organisms/" + id);
  get("/lineage");
  get("/organisms/" + id + "/trajectory");
  CHECK_EQ(snapshot(root_), before);
}

TEST_CASE_FIXTURE(Api, "Api.SecondServerOnSamePortFails") {
  Service other(*store_);
  try {
    other.listen("127.0.0.1", port_);
    FAIL("no exception");
  } catch (const Error& e) {
    CHECK_EQ(e.code(), ErrorCode::Io);
  }
}
