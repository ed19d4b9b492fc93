#pragma once

// Steady-state GA: evaluation of every member on the generation's plan,
// ordered selection (elite, roulette, tournament) with exclusivity between
// methods, and clone/recombine reproduction.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "forage/error.hpp"
#include "forage/fitness.hpp"
#include "forage/foragingtask.hpp"
#include "forage/morphogenome.hpp"
#include "forage/rng.hpp"

namespace forage {

enum class SelectionMethod : std::uint8_t { Elite, Roulette, Tournament };

inline std::string method_name(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::Elite: return "elite";
    case SelectionMethod::Roulette: return "roulette";
    case SelectionMethod::Tournament: return "tournament";
  }
  return "?";
}

inline SelectionMethod method_from_name(const std::string& s) {
  if (s == "elite") return SelectionMethod::Elite;
  if (s == "roulette") return SelectionMethod::Roulette;
  if (s == "tournament") return SelectionMethod::Tournament;
  throw Error(ErrorCode::InvalidConfig, "unknown selection method '" + s + "'");
}

enum class Origin : std::uint8_t { Initial, Survivor, Clone, Recombination };

inline std::string origin_name(Origin o) {
  switch (o) {
    case Origin::Initial: return "initial";
    case Origin::Survivor: return "survivor";
    case Origin::Clone: return "clone";
    case Origin::Recombination: return "recombination";
  }
  return "?";
}

struct Member {
  Genome genome;
  std::optional<FitnessBreakdown> fitness;  // empty = unevaluated
  Origin origin = Origin::Initial;
  std::uint64_t hash = 0;

  double w_bar() const { return fitness ? fitness->w_bar : 0.0; }
};

inline Member make_member(Genome g, Origin origin) {
  Member m;
  m.hash = genome_hash(g);
  m.genome = std::move(g);
  m.origin = origin;
  return m;
}

struct Population {
  std::vector<Member> members;
  std::uint64_t generation = 0;

  std::size_t size() const { return members.size(); }
  bool evaluated() const {
    return std::all_of(members.begin(), members.end(), [](const Member& m) { return m.fitness.has_value(); });
  }
};

/// Resolved per-method survivor counts.
struct SelectionCounts {
  std::size_t elite = 0, roulette = 0, tournament = 0;
  std::size_t total() const { return elite + roulette + tournament; }
  std::size_t of(SelectionMethod m) const {
    return m == SelectionMethod::Elite ? elite : m == SelectionMethod::Roulette ? roulette : tournament;
  }
};

struct SelectionConfig {
  double survival_fraction = 0.20;
  std::size_t elite_count = 8;
  // Negative means "split what the elites leave": roulette takes the larger
  // half when the remainder is odd.
  long roulette_count = -1;
  long tournament_count = -1;
  std::size_t tournament_size = 5;
  std::vector<SelectionMethod> order{SelectionMethod::Elite, SelectionMethod::Roulette, SelectionMethod::Tournament};

  std::size_t survivors(std::size_t n) const {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * survival_fraction - 1e-9));
  }

  SelectionCounts counts(std::size_t n) const {
    const std::size_t total = survivors(n);
    SelectionCounts c;
    c.elite = std::min(elite_count, total);
    const std::size_t rest = total - c.elite;
    if (roulette_count < 0 && tournament_count < 0) {
      c.tournament = rest / 2;
      c.roulette = rest - c.tournament;
    } else if (roulette_count < 0) {
      c.tournament = std::min(rest, static_cast<std::size_t>(tournament_count));
      c.roulette = rest - c.tournament;
    } else if (tournament_count < 0) {
      c.roulette = std::min(rest, static_cast<std::size_t>(roulette_count));
      c.tournament = rest - c.roulette;
    } else {
      c.roulette = static_cast<std::size_t>(roulette_count);
      c.tournament = static_cast<std::size_t>(tournament_count);
      if (c.total() != total)
        throw Error(ErrorCode::InvalidConfig, "selection counts do not add up to " + std::to_string(total));
    }
    return c;
  }
};

struct Pick {
  std::size_t index = 0;  // into Population::members
  SelectionMethod method = SelectionMethod::Elite;

  bool operator==(const Pick&) const = default;
};

namespace detail {

// Higher W first, then lower genome hash.
inline bool ranks_before(const Member& a, const Member& b) {
  if (a.w_bar() != b.w_bar()) return a.w_bar() > b.w_bar();
  return a.hash < b.hash;
}

}  // namespace detail

/// Survivor multiset. Members picked by one method are removed from the pool
/// of every later method; roulette and tournament may repeat a member.
inline std::vector<Pick> select_survivors(const Population& pop, const SelectionConfig& cfg, Rng& rng) {
  if (!pop.evaluated()) throw Error(ErrorCode::InvalidConfig, "selection needs an evaluated population");
  const SelectionCounts counts = cfg.counts(pop.size());
  std::vector<bool> taken(pop.size(), false);
  std::vector<Pick> picks;

  for (SelectionMethod method : cfg.order) {
    const std::size_t want = counts.of(method);
    if (want == 0) continue;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < pop.size(); ++i)
      if (!taken[i]) pool.push_back(i);
    if (pool.empty()) throw Error(ErrorCode::DegeneratePool, method_name(method) + " has nothing left to choose from");
    std::vector<std::size_t> chosen;

    switch (method) {
      case SelectionMethod::Elite: {
        std::sort(pool.begin(), pool.end(),
                  [&](std::size_t a, std::size_t b) { return detail::ranks_before(pop.members[a], pop.members[b]); });
        chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(want, pool.size())));
        break;
      }
      case SelectionMethod::Roulette: {
        double top = 0.0;
        for (std::size_t i : pool) top = std::max(top, pop.members[i].w_bar());
        std::vector<double> cumulative;
        double sum = 0.0;
        for (std::size_t i : pool) {
          // scaled by the maximum so huge fitness values do not overflow
          sum += top > 0.0 ? std::max(pop.members[i].w_bar(), 0.0) / top : 1.0;
          cumulative.push_back(sum);
        }
        for (std::size_t k = 0; k < want; ++k) {
          const double r = rng.uniform() * sum;
          auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
          if (it == cumulative.end()) --it;
          chosen.push_back(pool[static_cast<std::size_t>(it - cumulative.begin())]);
        }
        break;
      }
      case SelectionMethod::Tournament: {
        for (std::size_t k = 0; k < want; ++k) {
          std::size_t best = pool[rng.index(pool.size())];
          for (std::size_t t = 1; t < cfg.tournament_size; ++t) {
            const std::size_t c = pool[rng.index(pool.size())];
            if (detail::ranks_before(pop.members[c], pop.members[best])) best = c;
          }
          chosen.push_back(best);
        }
        break;
      }
    }
    for (std::size_t i : chosen) picks.push_back({i, method});
    for (std::size_t i : chosen) taken[i] = true;
  }
  return picks;
}

struct ReproductionConfig {
  double clone_probability = 0.30;
  double mutation_rate = 0.01;
};

/// Next population: survivors unchanged (fitness cleared), then every vacant
/// slot filled by a clone or a recombination of two distinct survivors,
/// mutated afterwards. Slot streams are keyed by (seed, generation, slot).
inline Population reproduce(const std::vector<Genome>& survivors, std::size_t n, std::uint64_t run_seed,
                            std::uint64_t generation, const ReproductionConfig& cfg = {}) {
  if (survivors.empty()) throw Error(ErrorCode::DegeneratePool, "no survivors to reproduce from");
  Population next;
  next.generation = generation + 1;
  for (const auto& g : survivors) {
    if (next.members.size() == n) break;
    next.members.push_back(make_member(g, Origin::Survivor));
  }
  for (std::size_t slot = next.members.size(); slot < n; ++slot) {
    Rng rng(derive_seed({run_seed, generation, slot, 0x7265707264ULL}));
    const std::uint64_t cross_seed = rng.bits();
    const std::uint64_t mutation_seed = rng.bits();
    Genome child;
    Origin origin = Origin::Clone;
    if (survivors.size() < 2 || rng.bernoulli(cfg.clone_probability)) {
      child = survivors[rng.index(survivors.size())];
    } else {
      const std::size_t a = rng.index(survivors.size());
      std::size_t b = rng.index(survivors.size() - 1);
      if (b >= a) ++b;
      child = recombine(survivors[a], survivors[b], cross_seed);
      origin = Origin::Recombination;
    }
    next.members.push_back(make_member(mutate(child, mutation_seed, cfg.mutation_rate), origin));
  }
  return next;
}

/// Scores one genome on a plan. Replaceable so tests and the acceptance
/// suite can use surrogates.
using Evaluator = std::function<FitnessBreakdown(const Genome&, const EvaluationPlan&)>;

inline Evaluator physics_evaluator(const PhysicsConfig& cfg = {}) {
  return [cfg](const Genome& g, const EvaluationPlan& plan) { return evaluate(develop(g), plan, cfg); };
}

/// Evaluates every member on `plan`. Identical genomes are scored once.
/// Work is spread over `threads` workers; the result does not depend on it.
inline void evaluate_population(Population& pop, const EvaluationPlan& plan, const Evaluator& evaluator,
                                unsigned threads = 1) {
  std::map<std::uint64_t, std::size_t> first;
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < pop.size(); ++i)
    if (first.emplace(pop.members[i].hash, i).second) unique.push_back(i);

  std::vector<FitnessBreakdown> results(unique.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t k = next++; k < unique.size(); k = next++) {
      try {
        results[k] = evaluator(pop.members[unique[k]].genome, plan);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(unique.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::map<std::uint64_t, std::size_t> slot;
  for (std::size_t k = 0; k < unique.size(); ++k) slot[pop.members[unique[k]].hash] = k;
  for (auto& m : pop.members) m.fitness = results[slot.at(m.hash)];
}

/// Index of the best member (ties to the lower genome hash).
inline std::size_t best_index(const Population& pop) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pop.size(); ++i)
    if (detail::ranks_before(pop.members[i], pop.members[best])) best = i;
  return best;
}

struct LogRecord {
  std::uint64_t generation = 0;
  double best_w_bar = 0.0;
  double mean_w_bar = 0.0;
  std::string best_organism_id;
  std::string plan_digest;

  bool operator==(const LogRecord&) const = default;
};

inline ordered_json log_record_to_json(const LogRecord& r) {
  ordered_json j;
  j["generation"] = r.generation;
  j["best_w_bar"] = r.best_w_bar;
  j["mean_w_bar"] = r.mean_w_bar;
  j["best_organism_id"] = r.best_organism_id;
  j["plan_digest"] = r.plan_digest;
  return j;
}

inline LogRecord log_record_from_json(const ordered_json& j) {
  LogRecord r;
  r.generation = j.at("generation").get<std::uint64_t>();
  r.best_w_bar = j.at("best_w_bar").get<double>();
  r.mean_w_bar = j.at("mean_w_bar").get<double>();
  r.best_organism_id = j.at("best_organism_id").get<std::string>();
  r.plan_digest = j.at("plan_digest").get<std::string>();
  return r;
}

inline LogRecord summarize(const Population& pop, const EvaluationPlan& plan) {
  LogRecord r;
  r.generation = pop.generation;
  r.plan_digest = plan_digest(plan);
  if (pop.members.empty()) return r;
  const std::size_t best = best_index(pop);
  r.best_w_bar = pop.members[best].w_bar();
  r.best_organism_id = organism_id(pop.members[best].genome);
  double sum = 0.0;
  for (const auto& m : pop.members) sum += m.w_bar();
  r.mean_w_bar = sum / static_cast<double>(pop.size());
  return r;
}

struct GenerationConfig {
  SelectionConfig selection;
  ReproductionConfig reproduction;
  std::uint64_t run_seed = 0;
  unsigned threads = 1;
};

struct GenerationOutcome {
  Population evaluated;  // this generation, scored
  std::vector<Pick> survivors;
  Population next;
  LogRecord record;
};

/// One generation: evaluate everyone on the fresh plan, log, select, refill.
inline GenerationOutcome run_generation(const Population& pop, const EvaluationPlan& plan, const GenerationConfig& cfg,
                                        const Evaluator& evaluator) {
  GenerationOutcome out;
  out.evaluated = pop;
  evaluate_population(out.evaluated, plan, evaluator, cfg.threads);
  out.record = summarize(out.evaluated, plan);
  Rng rng(derive_seed({cfg.run_seed, pop.generation, 0x73656c656374ULL}));
  out.survivors = select_survivors(out.evaluated, cfg.selection, rng);
  std::vector<Genome> genomes;
  for (const auto& p : out.survivors) genomes.push_back(out.evaluated.members[p.index].genome);
  out.next = reproduce(genomes, pop.size(), cfg.run_seed, pop.generation, cfg.reproduction);
  return out;
}

struct RunConfig {
  std::optional<Genome> seed_genome;  // empty = random initial population
  std::size_t population = 200;
  std::uint64_t generations = 50;
  PlanSpec plan;
  SelectionConfig selection;
  ReproductionConfig reproduction;
  GenomeLimits limits;
  PhysicsConfig physics;
  std::uint64_t rng_seed = 1;
  unsigned threads = 1;
};

struct RunResult {
  Population population;  // after the final evaluation
  std::vector<LogRecord> log;
  Genome best;
  FitnessBreakdown best_fitness;
};

inline Population initial_population(const RunConfig& cfg) {
  Population pop;
  for (std::size_t i = 0; i < cfg.population; ++i) {
    if (cfg.seed_genome) pop.members.push_back(make_member(*cfg.seed_genome, Origin::Initial));
    else
      pop.members.push_back(
          make_member(random_genome(derive_seed({cfg.rng_seed, i, 0x696e6974ULL}), cfg.limits), Origin::Initial));
  }
  return pop;
}

/// G generations followed by a final evaluation of the last population on
/// the plan of generation G; the log holds one record per evaluation.
/// `on_record` sees each record as soon as it exists.
inline RunResult run_evolution(const RunConfig& cfg, const Evaluator& evaluator,
                               const std::function<void(const LogRecord&)>& on_record = {}) {
  if (cfg.population == 0) throw Error(ErrorCode::InvalidConfig, "population must be positive");
  GenerationConfig gen;
  gen.selection = cfg.selection;
  gen.reproduction = cfg.reproduction;
  gen.run_seed = cfg.rng_seed;
  gen.threads = cfg.threads;

  RunResult result;
  Population pop = initial_population(cfg);
  for (std::uint64_t g = 0; g < cfg.generations; ++g) {
    const EvaluationPlan plan = plan_for_generation(cfg.plan, cfg.rng_seed, g);
    GenerationOutcome out = run_generation(pop, plan, gen, evaluator);
    result.log.push_back(out.record);
    if (on_record) on_record(out.record);
    pop = std::move(out.next);
  }
  const EvaluationPlan plan = plan_for_generation(cfg.plan, cfg.rng_seed, cfg.generations);
  evaluate_population(pop, plan, evaluator, cfg.threads);
  result.log.push_back(summarize(pop, plan));
  if (on_record) on_record(result.log.back());
  const std::size_t best = best_index(pop);
  result.best = pop.members[best].genome;
  result.best_fitness = *pop.members[best].fitness;
  result.population = std::move(pop);
  return result;
}

inline RunResult run_evolution(const RunConfig& cfg) { return run_evolution(cfg, physics_evaluator(cfg.physics)); }

inline ordered_json selection_to_json(const SelectionConfig& s) {
  ordered_json j;
  j["survival_fraction"] = s.survival_fraction;
  j["elite_count"] = s.elite_count;
  j["roulette_count"] = s.roulette_count;
  j["tournament_count"] = s.tournament_count;
  j["tournament_size"] = s.tournament_size;
  auto order = ordered_json::array();
  for (auto m : s.order) order.push_back(method_name(m));
  j["method_order"] = order;
  return j;
}

inline SelectionConfig selection_from_json(const ordered_json& j) {
  SelectionConfig s;
  s.survival_fraction = j.value("survival_fraction", s.survival_fraction);
  s.elite_count = j.value("elite_count", s.elite_count);
  s.roulette_count = j.value("roulette_count", s.roulette_count);
  s.tournament_count = j.value("tournament_count", s.tournament_count);
  s.tournament_size = j.value("tournament_size", s.tournament_size);
  if (j.contains("method_order")) {
    s.order.clear();
    for (const auto& m : j.at("method_order")) s.order.push_back(method_from_name(m.get<std::string>()));
  }
  if (s.tournament_size == 0) throw Error(ErrorCode::InvalidConfig, "tournament size must be positive");
  return s;
}

}  // namespace forage
