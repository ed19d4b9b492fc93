// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "oracles.hpp"
#include "store.hpp"
#include "stubs.hpp"

using namespace forage;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("forage_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome fitness_math() {
  Outcome o;
  Rng rng(8);
  int violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t T = 2 + rng.index(60);
    const double total = rng.uniform(-0.5, 3.0);
    std::vector<double> flat(T, total / static_cast<double>(T)), pert = flat, noise(T);
    double mean = 0.0;
    for (auto& x : noise) mean += (x = rng.uniform(-0.02, 0.02));
    mean /= static_cast<double>(T);
    for (std::size_t i = 0; i < T; ++i) pert[i] += noise[i] - mean;
    if (w_s(pert) > w_s(flat) * (1 + 1e-12)) ++violations;
    if (oracles::w_s(pert) > oracles::w_s(flat) * (1 + 1e-14)) ++violations;
  }
  o.check(violations == 0, std::to_string(violations) + " AM-GM violations");

  const double one = w_r(1, 3000);
  o.check(std::abs(one / oracles::w_r(1, 3000) - 1) < 1e-12, "w_r(1,3000) disagrees with the oracle");
  o.check(std::abs(one / std::exp(10.0) - 1) < 0.02, fmt("w_r(1,3000)/e^10 = %.4f", one / std::exp(10.0)));
  const double two = w_r(2, 3000);
  o.check(std::abs(two / (2 * std::exp(20.0)) - 1) < 0.10, fmt("w_r(2,3000)/2e^20 = %.4f", two / (2 * std::exp(20.0))));
  int band = 0;
  for (int S = 1; S < 10; ++S)
    for (long long T : {1001LL, 1500LL, 3000LL, 4500LL, 10000LL}) {
      const double exact = oracles::w_r(S, T);
      const double ratio = exact / (S * std::exp(10.0 * S));
      if (std::abs(w_r(S, T) / exact - 1) > 1e-12) ++band;
      if (ratio > 1.0 || ratio < std::exp(-50.0 * S * S / static_cast<double>(T))) ++band;
    }
  o.check(band == 0, std::to_string(band) + " band violations");
  if (o.pass) o.detail = fmt("0 violations in 1e4 perturbations; w_r(1,3000)/e^10 = %.4f", one / std::exp(10.0));
  return o;
}

Outcome placement_noise() {
  Outcome o;
  for (int R : {1, 2, 4, 8}) {
    const auto a = base_placements(R);
    o.check(a.size() == static_cast<std::size_t>(R), "wrong count for R=" + std::to_string(R));
    for (int k = 0; k < R && k < static_cast<int>(a.size()); ++k)
      o.check(a[static_cast<std::size_t>(k)] == 2.0 * kPi * k / R, "angle mismatch at R=" + std::to_string(R));
  }
  o.check(base_placements(4)[2] == kPi && base_placements(8)[4] == kPi, "half turn is not pi");
  Rng rng(2);
  for (double p : {0.0, 0.001, 0.05, 0.5, 1.0})
    for (int i = 0; i < 20000; ++i) {
      const Vec2 v = apply_noise({10, 0}, 10, p, rng);
      if (std::abs(v.x - 10) > p * 10 || std::abs(v.y) > p * 10) {
        o.check(false, fmt("noise out of bounds at p=%g", p));
        break;
      }
    }
  Rng ks(4);
  std::vector<double> xs, ys;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 v = apply_noise({0, 0}, 10, 0.5, ks);
    xs.push_back(v.x);
    ys.push_back(v.y);
  }
  const double px = oracles::ks_p_value(oracles::ks_uniform_statistic(xs, -5, 5), xs.size());
  const double py = oracles::ks_p_value(oracles::ks_uniform_statistic(ys, -5, 5), ys.size());
  o.check(px > 0.01 && py > 0.01, fmt("KS p-values %.3g, %.3g", px, py));
  if (o.pass) o.detail = fmt("KS p = %.3f (x), %.3f (y)", px, py);
  return o;
}

Outcome map_geometry() {
  Outcome o;
  for (int n : {11, 101}) {
    const ForagingMap m = map_lattice(n);
    const int half = (n - 1) / 2;
    const long long limit = (4LL * (n - 1)) * (4LL * (n - 1)) / 400;
    std::size_t mismatched = 0;
    for (const auto& c : m.cells) {
      const long long i = c.col - half, j = half - c.row;
      if (c.excluded != (i * i + j * j < limit)) ++mismatched;
    }
    o.check(mismatched == 0, std::to_string(mismatched) + " cells disagree at " + std::to_string(n));
    o.check(m.cells.size() - m.active() == oracles::excluded_cells(n), "excluded count at " + std::to_string(n));
  }
  o.check(map_lattice(11).active() == 112, "11x11 active cells != 112");
  const ForagingMap stub = foraging_map(develop(random_genome(1)), {}, stubs::straight_walker(0.05));
  std::size_t simulated = 0;
  for (const auto& c : stub.cells) simulated += !c.excluded && c.speed > 0.0;
  o.check(simulated == 112, std::to_string(simulated) + " cells simulated with the stub");
  if (o.pass)
    o.detail = "112 active cells; exclusion matches enumeration at 11 and 101 (" +
               std::to_string(oracles::excluded_cells(101)) + " excluded)";
  return o;
}

// Plan-independent fitness with ties and zeros.
FitnessBreakdown rough_fitness(const Genome& g, const EvaluationPlan& plan) {
  FitnessBreakdown fb;
  fb.variant = plan.variant;
  const std::uint64_t h = genome_hash(g) ^ plan.rng_seed;
  fb.w_bar = (h % 7 == 0) ? 0.0 : static_cast<double>(h % 13);
  return fb;
}

FitnessBreakdown volume_fitness(const Genome& g, const EvaluationPlan& plan) {
  FitnessBreakdown fb;
  fb.variant = plan.variant;
  for (const auto& b : g.blocks) fb.w_bar += b.dims.x * b.dims.y * b.dims.z;
  return fb;
}

Outcome ga_suite() {
  Outcome o;
  GenerationConfig cfg;
  cfg.run_seed = 11;
  Population pop;
  for (std::size_t i = 0; i < 60; ++i) pop.members.push_back(make_member(random_genome(1000 + i), Origin::Initial));
  std::size_t overlaps = 0, size_errors = 0, elite_losses = 0;
  Rng shuffle(5);
  for (int g = 0; g < 1000; ++g) {
    // vary the split so every method mix is exercised
    cfg.selection.elite_count = shuffle.index(13);
    const EvaluationPlan plan = plan_for_generation(PlanSpec{}, cfg.run_seed, pop.generation);
    GenerationOutcome out = run_generation(pop, plan, cfg, rough_fitness);
    std::map<std::size_t, std::set<SelectionMethod>> by;
    for (const auto& p : out.survivors) by[p.index].insert(p.method);
    for (const auto& [index, methods] : by) overlaps += methods.size() > 1;
    size_errors += out.next.size() != pop.size();
    for (const auto& p : out.survivors)
      if (p.method == SelectionMethod::Elite) {
        bool kept = false;
        for (const auto& m : out.next.members) kept |= m.genome == out.evaluated.members[p.index].genome;
        elite_losses += !kept;
      }
    pop = std::move(out.next);
  }
  o.check(overlaps == 0, std::to_string(overlaps) + " members chosen by two methods");
  o.check(size_errors == 0, "population size changed");
  o.check(elite_losses == 0, std::to_string(elite_losses) + " elites lost");

  std::vector<Genome> survivors;
  for (std::size_t i = 0; i < 40; ++i) survivors.push_back(random_genome(2000 + i));
  std::size_t clones = 0, offspring = 0;
  for (std::uint64_t g = 0; offspring < 10000; ++g) {
    const Population next = reproduce(survivors, 240, 77, g);
    for (std::size_t i = survivors.size(); i < next.size(); ++i, ++offspring) clones += next.members[i].origin == Origin::Clone;
  }
  const double fraction = static_cast<double>(clones) / static_cast<double>(offspring);
  o.check(std::abs(fraction - 0.30) <= 0.015, fmt("clone fraction %.4f", fraction));

  RunConfig rc;
  rc.population = 50;
  rc.generations = 50;
  rc.plan.noise_p = 0.0;
  rc.rng_seed = 3;
  const RunResult r = run_evolution(rc, volume_fitness);
  std::size_t drops = 0;
  for (std::size_t i = 1; i < r.log.size(); ++i) drops += r.log[i].best_w_bar < r.log[i - 1].best_w_bar;
  o.check(drops == 0, std::to_string(drops) + " decreases of the best fitness");
  o.check(r.log.back().best_w_bar > r.log.front().best_w_bar, "no progress in 50 generations");
  if (o.pass) o.detail = fmt("clone fraction %.4f; best fitness %.3g -> %.3g", fraction, r.log.front().best_w_bar) +
                         fmt(" %.3g", r.log.back().best_w_bar);
  return o;
}

Outcome evolve_determinism() {
  Outcome o;
  const fs::path dir = scratch("determinism");
  ordered_json cfg = {{"stage_id", "s01"}, {"repeats", 2}, {"generations", 5}, {"population", 20},
                      {"plan", {{"directions", 2}, {"noise_p", 0.001}, {"timer", 30}, {"variant", "A"}}}};
  write_atomic(dir / "config.json", cfg.dump(2));
  std::ostringstream log;
  EvolveArgs a;
  a.config = dir / "config.json";
  a.out = dir / "first";
  cmd_evolve(a, log);
  a.out = dir / "second";
  cmd_evolve(a, log);
  std::size_t compared = 0;
  for (int r = 0; r < 2; ++r) {
    char rel[64];
    std::snprintf(rel, sizeof rel, "stages/s01/repeats/r%03d", r);
    for (const char* f : {"run.jsonl", "best.json", "result.json"}) {
      const fs::path p1 = dir / "first" / rel / f, p2 = dir / "second" / rel / f;
      o.check(fs::exists(p1) && fs::exists(p2), std::string(f) + " missing");
      if (fs::exists(p1) && fs::exists(p2)) {
        o.check(read_text(p1) == read_text(p2), std::string(rel) + "/" + f + " differs");
        ++compared;
      }
    }
  }
  if (o.pass) o.detail = std::to_string(compared) + " files byte-identical (population 20, 5 generations, R=2)";
  return o;
}

double lowest(const World& w) {
  double z = std::numeric_limits<double>::infinity();
  for (const auto& b : w.bodies()) z = std::min(z, b.lowest_z());
  return z;
}

Outcome physics_sanity() {
  Outcome o;
  {
    World w = create_world(develop(random_genome(0)), {10, 0, 0}, 30.0);
    for (auto& b : w.bodies()) b.pos.z += 1.0;
    const double z0 = w.bodies()[0].pos.z, g = w.config().gravity;
    double worst = 0.0;
    for (int i = 1; i < 100; ++i) {
      w.physics_step(nullptr);
      if (lowest(w) < 0.05) break;
      const double t = i * w.config().dt, fallen = 0.5 * g * t * t;
      worst = std::max(worst, std::abs((z0 - w.bodies()[0].pos.z) / fallen - 1));
    }
    o.check(worst <= 0.02, fmt("free fall off by %.2f%%", 100 * worst));
  }
  double deepest = 0.0, worst_gain = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Organism org = develop(random_genome(s));
    World w = create_world(org, {10, 0, 0}, 10.0);
    Controller c = Controller::build(org);
    if (!settle_anticheat(w, c)) continue;
    deepest = std::max(deepest, -lowest(w));
    while (true) {
      const StepResult r = step_world(w, c.step(w.sensors()));
      deepest = std::max(deepest, -lowest(w));
      if (r.unstable || r.timer_expired) break;
    }

    World off = create_world(org, {10, 0, 0}, 10.0);
    const int per_second = static_cast<int>(std::llround(1.0 / off.config().dt));
    std::vector<double> energy{off.total_energy()};
    for (int i = 0; i < 5 * per_second; ++i) {
      off.physics_step(nullptr);
      energy.push_back(off.total_energy());
    }
    for (std::size_t i = 0; i + per_second < energy.size(); ++i)
      worst_gain = std::max(worst_gain, (energy[i + per_second] - energy[i]) / std::abs(energy.front()));
  }
  o.check(deepest <= 1e-3, fmt("ground penetration %.3g m", deepest));
  o.check(worst_gain <= 0.01, fmt("energy gain %.3f%%/s", 100 * worst_gain));
  if (o.pass) o.detail = fmt("max penetration %.2g m; max energy gain %.3f%%/s over 100 organisms", deepest, 100 * worst_gain);
  return o;
}

Outcome profile_semantics() {
  Outcome o;
  std::vector<int> depths(100, 1);
  for (int i = 0; i < 28; ++i) depths[static_cast<std::size_t>(i)] = 2;
  const ForagingProfile fixed = profile_from_depths(depths, 2);
  o.check(fixed.success_rate == std::vector<double>{1.0, 0.28}, "rates are not (1.0, 0.28)");
  o.check(fixed.consecutive_ratios.size() == 1 && fixed.consecutive_ratios[0] == 0.28, "ratio is not exactly 0.28");

  auto non_increasing = [](const ForagingProfile& p) {
    for (std::size_t k = 1; k < p.success_rate.size(); ++k)
      if (p.success_rate[k] > p.success_rate[k - 1]) return false;
    return true;
  };
  ProfileOptions opt;
  opt.trials = 20;
  opt.sequence_length = 4;
  opt.timer = 10.0;
  std::size_t tested = 0;
  for (double step : {0.002, 0.005, 0.05}) {
    o.check(non_increasing(foraging_profile(develop(random_genome(1)), opt, stubs::straight_walker(step))),
            fmt("stub %g increases", step));
    ++tested;
  }
  for (std::uint64_t s = 0; s < 3; ++s) {
    o.check(non_increasing(foraging_profile(develop(random_genome(s)), opt)), "organism profile increases");
    ++tested;
  }
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep, ++tested) {
    std::vector<int> d;
    for (int t = 0; t < 40; ++t) d.push_back(static_cast<int>(rng.index(11)));
    o.check(non_increasing(profile_from_depths(d, 10)), "random depths increase");
  }
  if (o.pass) o.detail = "ratio 0.28 exact; " + std::to_string(tested) + " profiles non-increasing";
  return o;
}

Outcome smoke_staged_run() {
  Outcome o;
  const fs::path dir = scratch("smoke");
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  auto stage_chain = [&](const fs::path& root, bool mark_from_config) {
    Store store(root);
    StageConfig first = ladder_stage(0);
    first.stage_id = "s01";
    first.repeats = 4;
    first.generations = 10;
    first.population = 20;
    first.plan.timer = 10.0;
    store.create_stage(first);
    RunHooks hooks;
    hooks.parallelism = threads;
    StageResult r1 = run_stage(store, "s01", hooks);
    std::string key1 = r1.ranked().empty() ? "" : r1.ranked().front().organism_id;
    (void)mark_from_config;
    mark_key_organism(store, "s01", key1, "smoke");
    const DerivedStage d = derive_next_stage(store, "s01", {{"timer", 10}});
    StageResult r2 = run_stage(store, d.config.stage_id, hooks);
    std::string key2 = r2.ranked().empty() ? "" : r2.ranked().front().organism_id;
    mark_key_organism(store, d.config.stage_id, key2, "smoke");
    return std::vector<StageResult>{r1, r2};
  };
  const auto first = stage_chain(dir / "a", false);
  for (const auto& r : first)
    o.check(r.count(RepeatResult::State::Done) == 4, r.stage_id + " finished " +
                                                         std::to_string(r.count(RepeatResult::State::Done)) + "/4");
  Store a(dir / "a");
  const Lineage l = a.lineage();
  o.check(l.entries.size() == 2, "lineage has " + std::to_string(l.entries.size()) + " entries");
  o.check(verify_lineage(a).empty(), "lineage integrity problems");
  if (l.entries.size() == 2) {
    o.check(l.entries[1].seed_organism_id == l.entries[0].key_organism_id, "second stage not seeded by the first key");
    o.check(l.entries[1].cumulative_generations == 20, "cumulative generations != 20");
  }

  // replay: copy only the stage configs into a fresh store and rerun
  Store b(dir / "b");
  for (const auto& id : a.stage_ids()) {
    const StageConfig c = a.stage(id);
    if (!c.random_seed()) {
      const Genome seed = a.lineage_genome(c.seed);
      b.put_organism(seed);
    }
    b.create_stage(c);
    RunHooks hooks;
    hooks.parallelism = threads;
    run_stage(b, id, hooks);
  }
  std::size_t identical = 0, compared = 0;
  for (const auto& id : a.stage_ids())
    for (int r = 0; r < 4; ++r)
      for (const char* f : {"run.jsonl", "best.json"}) {
        ++compared;
        identical += read_text(a.repeat_dir(id, r) / f) == read_text(b.repeat_dir(id, r) / f);
      }
  o.check(identical == compared, std::to_string(compared - identical) + " replayed files differ");
  if (o.pass)
    o.detail = "2 stages x 4 repeats x 10 generations, population 20; lineage of 2 persisted; " +
               std::to_string(compared) + " files replay byte-identically";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"fitness math", 60, fitness_math},
      {"placement and noise", 60, placement_noise},
      {"map geometry", 60, map_geometry},
      {"GA suite", 120, ga_suite},
      {"evolve determinism", 600, evolve_determinism},
      {"physics sanity", 60, physics_sanity},
      {"profile semantics", 60, profile_semantics},
      {"headline behavior excluded; smoke staged run", 1200, smoke_staged_run},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) o.check(false, fmt("took %.0f s, budget %.0f s", secs, c.budget_s));
    failures += !o.pass;
    std::printf("%s  %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
