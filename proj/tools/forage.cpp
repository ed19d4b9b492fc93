#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace forage;
  CLI::App app{"Evolve, analyze and stage virtual foragers."};
  app.require_subcommand(1);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());

  EvolveArgs ev;
  ev.parallelism = hw;
  auto* evolve = app.add_subcommand("evolve", "Run every repeat of a stage config");
  evolve->add_option("--config", ev.config, "Stage config (JSON)")->required()->check(CLI::ExistingFile);
  evolve->add_option("--repeats", ev.repeats, "Override the repeat count");
  evolve->add_option("--seed", ev.seed, "Override the rng base seed");
  evolve->add_option("--out", ev.out, "Store directory")->capture_default_str();
  evolve->add_option("-j,--jobs", ev.parallelism, "Repeats run concurrently")->capture_default_str();

  MapArgs mp;
  mp.threads = hw;
  std::string cond;
  auto* map = app.add_subcommand("map", "Compute a foraging map");
  map->add_option("--organism", mp.organism, "Genome file (JSON)")->required()->check(CLI::ExistingFile);
  map->add_option("--res", mp.resolution, "Lattice resolution")->check(CLI::IsMember({11, 101}))->capture_default_str();
  map->add_option("--cond", cond, "First target X,Y for a conditional map");
  map->add_option("--out", mp.out, "Output directory")->required();
  map->add_option("--timer", mp.timer, "Seconds per trial")->capture_default_str();
  map->add_option("-j,--jobs", mp.threads, "Worker threads")->capture_default_str();

  ProfileArgs pf;
  pf.threads = hw;
  std::string profile_out;
  auto* profile = app.add_subcommand("profile", "Compute a sequential foraging profile");
  profile->add_option("--organism", pf.organism, "Genome file (JSON)")->required()->check(CLI::ExistingFile);
  profile->add_option("--trials", pf.trials, "Number of trials")->capture_default_str();
  profile->add_option("--seq", pf.seq, "Targets per trial")->capture_default_str();
  profile->add_option("--timer", pf.timer, "Seconds per target")->capture_default_str();
  profile->add_option("--seed", pf.seed, "Placement seed")->capture_default_str();
  profile->add_option("--out", profile_out, "Also write the JSON here");
  profile->add_option("-j,--jobs", pf.threads, "Worker threads")->capture_default_str();

  auto* stage = app.add_subcommand("stage", "Stage ladder operations");
  stage->require_subcommand(1);
  fs::path store_dir = "store";
  stage->add_option("--store", store_dir, "Store directory")->capture_default_str();

  StageNextArgs nx;
  std::string overrides;
  auto* next = stage->add_subcommand("next", "Derive the next stage from a marked one");
  next->add_option("--from", nx.from, "Stage id")->required();
  auto* noise = next->add_option("--noise", nx.noise, "Placement noise fraction");
  next->add_flag("--uniform", nx.uniform, "Uniform target placement")->excludes(noise);
  next->add_option("--variant", nx.variant, "Fitness variant")->check(CLI::IsMember({"A", "B", "C"}));
  next->add_option("--set", overrides, "Extra overrides as a JSON object");

  std::string mark_stage, mark_org, mark_note;
  auto* mark = stage->add_subcommand("mark", "Mark the key organism of a stage");
  mark->add_option("--stage", mark_stage, "Stage id")->required();
  mark->add_option("--organism", mark_org, "Organism id")->required();
  mark->add_option("--note", mark_note, "Free text");

  std::string run_stage_id;
  unsigned run_jobs = hw;
  auto* run = stage->add_subcommand("run", "Run (or resume) a stored stage");
  run->add_option("--stage", run_stage_id, "Stage id")->required();
  run->add_option("-j,--jobs", run_jobs, "Repeats run concurrently")->capture_default_str();

  int port = 8080;
  std::string host = "127.0.0.1";
  fs::path serve_store = "store";
  unsigned serve_threads = hw;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--port", port, "TCP port")->capture_default_str();
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--store", serve_store, "Store directory")->capture_default_str();
  serve->add_option("-j,--jobs", serve_threads, "Worker threads per job")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*evolve) {
      const StageResult r = cmd_evolve(ev, std::cout);
      return r.count(RepeatResult::State::Failed) ? 1 : 0;
    }
    if (*map) {
      if (!cond.empty()) mp.cond = parse_xy(cond);
      cmd_map(mp, std::cout);
    } else if (*profile) {
      if (!profile_out.empty()) pf.out = profile_out;
      cmd_profile(pf, std::cout);
    } else if (*next) {
      nx.store = store_dir;
      if (!overrides.empty()) nx.overrides = ordered_json::parse(overrides);
      cmd_stage_next(nx, std::cout);
    } else if (*mark) {
      cmd_stage_mark(store_dir, mark_stage, mark_org, mark_note, std::cout);
    } else if (*run) {
      const StageResult r = cmd_stage_run(store_dir, run_stage_id, run_jobs, std::cout);
      return r.count(RepeatResult::State::Failed) ? 1 : 0;
    } else if (*serve) {
      cmd_serve(serve_store, host, port, serve_threads, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
