#include "commands.hpp"

#include <cstdio>
#include <ostream>

#include "server.hpp"

namespace forage {

namespace {

void print_ranking(const StageResult& r, std::ostream& log) {
  char line[160];
  for (const auto& rr : r.ranked()) {
    std::snprintf(line, sizeof line, "  r%03d  %s  w_bar=%.6g  reached=%d\n", rr.repeat, rr.organism_id.c_str(),
                  rr.fitness.w_bar, rr.fitness.sources_reached);
    log << line;
  }
  for (const auto& rr : r.repeats)
    if (rr.state == RepeatResult::State::Failed) log << "  r" << rr.repeat << " failed: " << rr.error << "\n";
}

}  // namespace

Vec2 parse_xy(const std::string& s) {
  double x = 0, y = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%lf,%lf%c", &x, &y, &tail) != 2) throw Error(ErrorCode::Parse, "expected X,Y but got '" + s + "'");
  return {x, y};
}

Genome load_genome(const fs::path& path) { return genome_from_string(read_text(path)); }

StageResult cmd_evolve(const EvolveArgs& a, std::ostream& log, const Evaluator& evaluator) {
  Store store(a.out);
  ordered_json j = read_json(a.config);
  if (j.contains("seed_file")) {
    const fs::path p = a.config.parent_path() / j.at("seed_file").get<std::string>();
    j["seed"] = store.put_organism(load_genome(p));
    j.erase("seed_file");
  }
  if (!j.contains("stage_id")) j["stage_id"] = store.next_stage_id();
  StageConfig c = stage_from_json(j);
  if (a.repeats) c.repeats = *a.repeats;
  if (a.seed) c.rng_base_seed = *a.seed;
  for (const auto& w : validate_stage(c)) log << "warning: " << w << "\n";
  store.create_stage(c);
  log << "stage " << c.stage_id << ": " << c.repeats << " repeat(s), " << c.generations << " generation(s), population "
      << c.population << "\n";
  RunHooks hooks;
  hooks.parallelism = a.parallelism;
  hooks.evaluator = evaluator;
  hooks.on_repeat_done = [&log](int r) { log << "  repeat " << r << " finished\n"; };
  const StageResult r = run_stage(store, c.stage_id, hooks);
  print_ranking(r, log);
  return r;
}

MapFiles cmd_map(const MapArgs& a, std::ostream& log, const EpisodeRunner& runner) {
  const Genome g = load_genome(a.organism);
  MapOptions opt;
  opt.resolution = a.resolution;
  opt.timer = a.timer;
  opt.threads = a.threads;
  const EpisodeRunner run = runner ? runner : physics_runner(opt.physics);
  const Organism org = develop(g);
  const ForagingMap m = a.cond ? conditional_map(org, *a.cond, opt, run) : foraging_map(org, opt, run);
  const MapFiles f = render_map(m, organism_id(g), a.out);
  log << f.png.string() << "\n" << f.csv.string() << "\n" << f.json.string() << "\n";
  return f;
}

ForagingProfile cmd_profile(const ProfileArgs& a, std::ostream& log, const EpisodeRunner& runner) {
  const Genome g = load_genome(a.organism);
  ProfileOptions opt;
  opt.trials = a.trials;
  opt.sequence_length = a.seq;
  opt.timer = a.timer;
  opt.rng_seed = a.seed;
  opt.threads = a.threads;
  const ForagingProfile p = foraging_profile(develop(g), opt, runner ? runner : physics_runner(opt.physics));
  ordered_json j = profile_to_json(p);
  j["organism_id"] = organism_id(g);
  if (a.out) write_atomic(*a.out, j.dump(2) + "\n");
  log << j.dump(2) << "\n";
  return p;
}

DerivedStage cmd_stage_next(const StageNextArgs& a, std::ostream& log) {
  Store store(a.store);
  ordered_json o = a.overrides;
  if (a.noise && a.uniform) throw Error(ErrorCode::InvalidConfig, "--noise and --uniform are exclusive");
  if (a.noise) o["noise"] = *a.noise;
  if (a.uniform) o["noise"] = "uniform";
  if (a.variant) o["variant"] = *a.variant;
  const DerivedStage d = derive_next_stage(store, a.from, o);
  for (const auto& w : d.warnings) log << "warning: " << w << "\n";
  log << stage_to_json(d.config).dump(2) << "\n";
  return d;
}

Lineage cmd_stage_mark(const fs::path& store_dir, const std::string& stage, const std::string& organism,
                       const std::string& note, std::ostream& log) {
  Store store(store_dir);
  const Lineage l = mark_key_organism(store, stage, organism, note);
  for (const auto& e : l.entries)
    log << e.stage_id << "  key " << e.key_organism_id << "  seed " << e.seed_organism_id << "  generations "
        << e.cumulative_generations << "\n";
  return l;
}

StageResult cmd_stage_run(const fs::path& store_dir, const std::string& stage, unsigned parallelism, std::ostream& log,
                          const Evaluator& evaluator) {
  Store store(store_dir);
  RunHooks hooks;
  hooks.parallelism = parallelism;
  hooks.evaluator = evaluator;
  hooks.on_repeat_done = [&log](int r) { log << "  repeat " << r << " finished\n"; };
  const StageResult r = run_stage(store, stage, hooks);
  print_ranking(r, log);
  return r;
}

void cmd_serve(const fs::path& store_dir, const std::string& host, int port, unsigned threads, std::ostream& log) {
  if (!fs::is_directory(store_dir)) throw Error(ErrorCode::Io, "store directory " + store_dir.string() + " does not exist");
  Store store(store_dir);
  ServiceOptions opt;
  opt.threads = threads;
  Service service(store, opt);
  log << "serving " << store_dir.string() << " on http://" << host << ":" << port << "\n";
  log.flush();
  service.listen(host, port);
}

}  // namespace forage
