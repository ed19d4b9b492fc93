#include "store.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace forage {

namespace {

constexpr std::uint64_t kDefaultTimers[] = {10, 30, 60};

FitnessVariant ladder_variant(int rung) {
  return rung <= 2 ? FitnessVariant::A : rung == 3 ? FitnessVariant::B : FitnessVariant::C;
}

template <class T>
T get_or(const ordered_json& j, const char* key, T fallback) {
  try {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string(key) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage configs

ordered_json stage_to_json(const StageConfig& c) {
  ordered_json j;
  j["stage_id"] = c.stage_id;
  j["seed"] = c.seed;
  j["parent"] = c.parent;
  j["repeats"] = c.repeats;
  j["generations"] = c.generations;
  j["population"] = c.population;
  j["plan"] = plan_spec_to_json(c.plan);
  j["selection"] = selection_to_json(c.selection);
  j["reproduction"] = {{"clone_probability", c.reproduction.clone_probability},
                       {"mutation_rate", c.reproduction.mutation_rate}};
  j["rng_base_seed"] = c.rng_base_seed;
  return j;
}

StageConfig stage_from_json(const ordered_json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, "stage config must be an object");
  StageConfig c;
  c.stage_id = get_or<std::string>(j, "stage_id", "");
  c.seed = get_or<std::string>(j, "seed", "random");
  c.parent = get_or<std::string>(j, "parent", "");
  c.repeats = get_or<int>(j, "repeats", c.repeats);
  c.generations = get_or<std::uint64_t>(j, "generations", c.generations);
  c.population = get_or<std::size_t>(j, "population", c.population);
  if (j.contains("plan")) c.plan = plan_spec_from_json(j.at("plan"));
  if (j.contains("selection")) c.selection = selection_from_json(j.at("selection"));
  if (j.contains("reproduction")) {
    const auto& r = j.at("reproduction");
    c.reproduction.clone_probability = get_or<double>(r, "clone_probability", c.reproduction.clone_probability);
    c.reproduction.mutation_rate = get_or<double>(r, "mutation_rate", c.reproduction.mutation_rate);
  }
  c.rng_base_seed = get_or<std::uint64_t>(j, "rng_base_seed", c.rng_base_seed);
  return c;
}

StageConfig ladder_stage(int rung) {
  rung = std::clamp(rung, 0, kLadderTop);
  StageConfig c;
  c.plan.variant = ladder_variant(rung);
  if (rung <= 2) {
    c.plan.noise_p = rung == 0 ? 0.001 : rung == 1 ? 0.05 : 0.5;
    c.plan.timer = 30.0;
    return c;
  }
  c.plan.uniform = true;
  c.plan.noise_p = 0.0;
  c.plan.timer = 60.0;
  c.plan.evals = rung == 3 ? 4 : 6;
  // tournament fills everything after the elites
  c.selection.roulette_count = 0;
  c.selection.tournament_count = -1;
  return c;
}

int ladder_position(const PlanSpec& plan) {
  if (plan.uniform) return plan.variant == FitnessVariant::C ? 4 : 3;
  if (plan.noise_p < 0.05) return 0;
  if (plan.noise_p < 0.5) return 1;
  return 2;
}

std::vector<std::string> validate_stage(const StageConfig& c) {
  if (!is_stage_id(c.stage_id)) throw Error(ErrorCode::InvalidConfig, "bad stage id '" + c.stage_id + "'");
  if (c.repeats < 1) throw Error(ErrorCode::InvalidConfig, "repeats must be at least 1");
  if (c.population < 1) throw Error(ErrorCode::InvalidConfig, "population must be positive");
  if (!c.random_seed() && !is_organism_id(c.seed))
    throw Error(ErrorCode::InvalidConfig, "seed must be \"random\" or an organism id");
  if (c.reproduction.clone_probability < 0.0 || c.reproduction.clone_probability > 1.0)
    throw Error(ErrorCode::InvalidConfig, "clone probability outside [0, 1]");
  make_plan(c.plan, 0);
  c.selection.counts(c.population);

  std::vector<std::string> warnings;
  const int rung = ladder_position(c.plan);
  if (c.plan.variant != ladder_variant(rung))
    warnings.push_back("variant " + variant_name(c.plan.variant) + " is off the ladder here (expected " +
                       variant_name(ladder_variant(rung)) + ")");
  if (std::none_of(std::begin(kDefaultTimers), std::end(kDefaultTimers),
                   [&](std::uint64_t t) { return static_cast<double>(t) == c.plan.timer; }))
    warnings.push_back("timer is not one of 10, 30, 60 s");
  return warnings;
}

void apply_overrides(StageConfig& c, const ordered_json& o) {
  if (o.is_null()) return;
  if (!o.is_object()) throw Error(ErrorCode::Parse, "overrides must be an object");
  for (const auto& [key, v] : o.items()) {
    try {
      if (key == "stage_id") c.stage_id = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::string>();
      else if (key == "repeats") c.repeats = v.get<int>();
      else if (key == "generations") c.generations = v.get<std::uint64_t>();
      else if (key == "population") c.population = v.get<std::size_t>();
      else if (key == "rng_base_seed") c.rng_base_seed = v.get<std::uint64_t>();
      else if (key == "noise" || key == "noise_p") {
        if (v.is_string()) {
          if (v.get<std::string>() != "uniform") throw Error(ErrorCode::InvalidConfig, "noise must be a number or \"uniform\"");
          c.plan.uniform = true;
          c.plan.noise_p = 0.0;
        } else {
          c.plan.uniform = false;
          c.plan.noise_p = v.get<double>();
        }
      } else if (key == "uniform") c.plan.uniform = v.get<bool>();
      else if (key == "variant") c.plan.variant = variant_from_name(v.get<std::string>());
      else if (key == "timer") c.plan.timer = v.get<double>();
      else if (key == "evals") c.plan.evals = v.get<int>();
      else if (key == "directions") c.plan.directions = v.get<int>();
      else if (key == "seq_len") c.plan.seq_len = v.get<int>();
      else if (key == "selection") c.selection = selection_from_json(v);
      else if (key == "clone_probability") c.reproduction.clone_probability = v.get<double>();
      else if (key == "mutation_rate") c.reproduction.mutation_rate = v.get<double>();
      else throw Error(ErrorCode::InvalidConfig, "unknown override '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, key + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Results and lineage

std::string repeat_state_name(RepeatResult::State s) {
  switch (s) {
    case RepeatResult::State::Pending: return "pending";
    case RepeatResult::State::Done: return "done";
    case RepeatResult::State::Failed: return "failed";
  }
  return "?";
}

ordered_json repeat_to_json(const RepeatResult& r) {
  ordered_json j;
  j["repeat"] = r.repeat;
  j["rng_seed"] = r.rng_seed;
  j["state"] = repeat_state_name(r.state);
  if (r.state == RepeatResult::State::Done) {
    j["organism_id"] = r.organism_id;
    j["w_bar"] = r.fitness.w_bar;
    j["sources_reached"] = r.fitness.sources_reached;
    j["fitness"] = breakdown_to_json(r.fitness);
  }
  if (r.state == RepeatResult::State::Failed) j["error"] = r.error;
  return j;
}

std::size_t StageResult::count(RepeatResult::State s) const {
  return static_cast<std::size_t>(
      std::count_if(repeats.begin(), repeats.end(), [s](const RepeatResult& r) { return r.state == s; }));
}

std::vector<RepeatResult> StageResult::ranked() const {
  std::vector<RepeatResult> done;
  for (const auto& r : repeats)
    if (r.state == RepeatResult::State::Done) done.push_back(r);
  std::stable_sort(done.begin(), done.end(),
                   [](const RepeatResult& a, const RepeatResult& b) { return a.fitness.w_bar > b.fitness.w_bar; });
  return done;
}

const LineageEntry* Lineage::find(const std::string& stage_id) const {
  for (const auto& e : entries)
    if (e.stage_id == stage_id) return &e;
  return nullptr;
}

ordered_json lineage_to_json(const Lineage& l) {
  ordered_json j;
  j["entries"] = ordered_json::array();
  for (const auto& e : l.entries) {
    ordered_json x;
    x["stage_id"] = e.stage_id;
    x["key_organism_id"] = e.key_organism_id;
    x["seed_organism_id"] = e.seed_organism_id;
    x["parent_stage"] = e.parent_stage;
    x["repeats"] = e.repeats;
    if (e.uniform) x["noise"] = "uniform";
    else x["noise"] = e.noise_p;
    x["variant"] = variant_name(e.variant);
    x["generations"] = e.generations;
    x["cumulative_generations"] = e.cumulative_generations;
    x["note"] = e.note;
    j["entries"].push_back(std::move(x));
  }
  j["audit"] = ordered_json::array();
  for (const auto& a : l.audit)
    j["audit"].push_back({{"seq", a.seq},
                          {"action", a.action},
                          {"stage_id", a.stage_id},
                          {"organism_id", a.organism_id},
                          {"previous", a.previous},
                          {"note", a.note}});
  return j;
}

Lineage lineage_from_json(const ordered_json& j) {
  Lineage l;
  try {
    for (const auto& x : j.at("entries")) {
      LineageEntry e;
      e.stage_id = x.at("stage_id").get<std::string>();
      e.key_organism_id = x.at("key_organism_id").get<std::string>();
      e.seed_organism_id = x.at("seed_organism_id").get<std::string>();
      e.parent_stage = x.value("parent_stage", "");
      e.repeats = x.at("repeats").get<int>();
      const auto& n = x.at("noise");
      e.uniform = n.is_string();
      e.noise_p = e.uniform ? 0.0 : n.get<double>();
      e.variant = variant_from_name(x.at("variant").get<std::string>());
      e.generations = x.at("generations").get<std::uint64_t>();
      e.cumulative_generations = x.at("cumulative_generations").get<std::uint64_t>();
      e.note = x.value("note", "");
      l.entries.push_back(std::move(e));
    }
    for (const auto& x : j.at("audit")) {
      AuditEntry a;
      a.seq = x.at("seq").get<std::uint64_t>();
      a.action = x.at("action").get<std::string>();
      a.stage_id = x.at("stage_id").get<std::string>();
      a.organism_id = x.at("organism_id").get<std::string>();
      a.previous = x.value("previous", "");
      a.note = x.value("note", "");
      l.audit.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("lineage: ") + e.what());
  }
  return l;
}

// ---------------------------------------------------------------------------
// Files

bool is_organism_id(const std::string& s) {
  return s.size() == 16 && std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(c) && !std::isupper(c); });
}

bool is_stage_id(const std::string& s) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(s, re);
}

void write_atomic(const fs::path& path, const std::string& text) {
  static std::atomic<std::uint64_t> counter{0};
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp" + std::to_string(counter++) + "_" +
                       std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os << text;
    if (!os) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ordered_json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Store

Store::Store(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "stages");
  fs::create_directories(root_ / "organisms");
  fs::create_directories(root_ / "lineage");
}

fs::path Store::stage_dir(const std::string& id) const {
  if (!is_stage_id(id)) throw Error(ErrorCode::UnknownStage, "bad stage id '" + id + "'");
  return root_ / "stages" / id;
}

fs::path Store::repeat_dir(const std::string& id, int repeat) const {
  char name[16];
  std::snprintf(name, sizeof name, "r%03d", repeat);
  return stage_dir(id) / "repeats" / name;
}

fs::path Store::analysis_dir(const std::string& organism) const {
  if (!is_organism_id(organism)) throw Error(ErrorCode::UnknownOrganism, "bad organism id '" + organism + "'");
  return root_ / "analysis" / organism;
}

std::vector<std::string> Store::stage_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root_ / "stages"))
    if (e.is_directory() && fs::exists(e.path() / "config.json")) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool Store::has_stage(const std::string& id) const {
  return is_stage_id(id) && fs::exists(stage_dir(id) / "config.json");
}

StageConfig Store::stage(const std::string& id) const {
  if (!has_stage(id)) throw Error(ErrorCode::UnknownStage, "no stage '" + id + "'");
  return stage_from_json(read_json(stage_dir(id) / "config.json"));
}

void Store::create_stage(const StageConfig& c) {
  validate_stage(c);
  const std::string text = stage_to_json(c).dump(2) + "\n";
  std::lock_guard<std::mutex> lock(mu_);
  const fs::path path = stage_dir(c.stage_id) / "config.json";
  if (fs::exists(path)) {
    if (read_text(path) != text)
      throw Error(ErrorCode::InvalidConfig, "stage '" + c.stage_id + "' exists with a different config");
    return;
  }
  write_atomic(path, text);
}

std::string Store::next_stage_id() const {
  for (int n = 1;; ++n) {
    char id[16];
    std::snprintf(id, sizeof id, "s%02d", n);
    if (!fs::exists(root_ / "stages" / id)) return id;
  }
}

StageResult Store::stage_result(const std::string& id) const {
  const StageConfig c = stage(id);
  StageResult res;
  res.stage_id = id;
  for (int r = 0; r < c.repeats; ++r) {
    RepeatResult rr;
    rr.repeat = r;
    rr.rng_seed = c.rng_base_seed + static_cast<std::uint64_t>(r);
    const fs::path dir = repeat_dir(id, r);
    if (fs::exists(dir / "done")) {
      const ordered_json j = read_json(dir / "result.json");
      rr.state = RepeatResult::State::Done;
      rr.organism_id = j.at("organism_id").get<std::string>();
      rr.fitness = breakdown_from_json(j.at("fitness"));
    } else if (fs::exists(dir / "error.json")) {
      rr.state = RepeatResult::State::Failed;
      rr.error = read_json(dir / "error.json").value("error", "");
    }
    res.repeats.push_back(std::move(rr));
  }
  return res;
}

std::optional<std::string> Store::key_organism(const std::string& stage_id) const {
  const Lineage l = lineage();
  if (const LineageEntry* e = l.find(stage_id)) return e->key_organism_id;
  return std::nullopt;
}

std::string Store::put_organism(const Genome& g) {
  const std::string id = organism_id(g);
  const fs::path path = root_ / "organisms" / (id + ".json");
  std::lock_guard<std::mutex> lock(mu_);
  if (!fs::exists(path)) write_atomic(path, genome_to_string(g));
  return id;
}

bool Store::has_organism(const std::string& id) const {
  return is_organism_id(id) && (fs::exists(root_ / "organisms" / (id + ".json")) || fs::exists(lineage_genome_path(id)));
}

Genome Store::organism(const std::string& id) const {
  if (!has_organism(id)) throw Error(ErrorCode::UnknownOrganism, "no organism '" + id + "'");
  fs::path path = root_ / "organisms" / (id + ".json");
  if (!fs::exists(path)) path = lineage_genome_path(id);
  return genome_from_string(read_text(path));
}

fs::path Store::lineage_genome_path(const std::string& id) const { return root_ / "lineage" / (id + ".json"); }

Genome Store::lineage_genome(const std::string& id) const {
  if (!is_organism_id(id) || !fs::exists(lineage_genome_path(id)))
    throw Error(ErrorCode::UnknownOrganism, "organism '" + id + "' is not in the lineage store");
  return genome_from_string(read_text(lineage_genome_path(id)));
}

Lineage Store::lineage() const {
  const fs::path path = root_ / "lineage.json";
  if (!fs::exists(path)) return {};
  return lineage_from_json(read_json(path));
}

void Store::save_lineage(const Lineage& l) { write_atomic(root_ / "lineage.json", lineage_to_json(l).dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Operations

RunConfig repeat_run_config(const StageConfig& c, int repeat, const std::optional<Genome>& seed) {
  RunConfig rc;
  rc.seed_genome = seed;
  rc.population = c.population;
  rc.generations = c.generations;
  rc.plan = c.plan;
  rc.selection = c.selection;
  rc.reproduction = c.reproduction;
  rc.rng_seed = c.rng_base_seed + static_cast<std::uint64_t>(repeat);
  rc.threads = 1;
  return rc;
}

StageResult run_stage(Store& store, const std::string& stage_id, const RunHooks& hooks) {
  const StageConfig c = store.stage(stage_id);
  validate_stage(c);
  std::optional<Genome> seed;
  if (!c.random_seed()) {
    seed = store.organism(c.seed);
    if (organism_id(*seed) != c.seed) throw Error(ErrorCode::LineageMismatch, "stored seed genome does not hash to " + c.seed);
  }
  const Evaluator evaluator = hooks.evaluator ? hooks.evaluator : physics_evaluator();

  std::vector<int> todo;
  for (int r = 0; r < c.repeats; ++r)
    if (!fs::exists(store.repeat_dir(stage_id, r) / "done")) todo.push_back(r);

  detail::for_each_parallel(todo.size(), hooks.parallelism, [&](std::size_t i) {
    const int r = todo[i];
    const fs::path dir = store.repeat_dir(stage_id, r);
    fs::create_directories(dir);
    fs::remove(dir / "error.json");
    try {
      std::ofstream log(dir / "run.jsonl", std::ios::binary | std::ios::trunc);
      auto on_record = [&](const LogRecord& rec) {
        log << log_record_to_json(rec).dump() << "\n";
        log.flush();
        if (hooks.on_record) hooks.on_record(r, rec);
      };
      const RunResult result = run_evolution(repeat_run_config(c, r, seed), evaluator, on_record);
      log.close();
      if (!log) throw Error(ErrorCode::Io, "cannot write run log in " + dir.string());
      const std::string id = store.put_organism(result.best);
      write_atomic(dir / "best.json", genome_to_string(result.best));
      ordered_json j;
      j["repeat"] = r;
      j["rng_seed"] = c.rng_base_seed + static_cast<std::uint64_t>(r);
      j["organism_id"] = id;
      j["fitness"] = breakdown_to_json(result.best_fitness);
      write_atomic(dir / "result.json", j.dump(2) + "\n");
      write_atomic(dir / "done", "");
    } catch (const std::exception& e) {
      write_atomic(dir / "error.json", ordered_json{{"error", e.what()}}.dump(2) + "\n");
    }
    if (hooks.on_repeat_done) hooks.on_repeat_done(r);
  });
  return store.stage_result(stage_id);
}

Lineage mark_key_organism(Store& store, const std::string& stage_id, const std::string& organism_id,
                          const std::string& note) {
  const StageConfig c = store.stage(stage_id);
  const StageResult res = store.stage_result(stage_id);
  const bool belongs = std::any_of(res.repeats.begin(), res.repeats.end(), [&](const RepeatResult& r) {
    return r.state == RepeatResult::State::Done && r.organism_id == organism_id;
  });
  if (!belongs)
    throw Error(ErrorCode::UnknownOrganism, "organism '" + organism_id + "' is not a result of stage " + stage_id);
  const Genome genome = store.organism(organism_id);

  std::lock_guard<std::mutex> lock(store.write_mutex());
  Lineage l = store.lineage();
  const std::uint64_t seq = l.audit.size() + 1;
  auto it = std::find_if(l.entries.begin(), l.entries.end(), [&](const LineageEntry& e) { return e.stage_id == stage_id; });
  if (it != l.entries.end()) {
    const std::string previous = it->key_organism_id;
    if (previous != organism_id) {
      for (auto later = std::next(it); later != l.entries.end(); ++later)
        if (later->seed_organism_id == previous)
          throw Error(ErrorCode::LineageMismatch,
                      "stage " + later->stage_id + " descends from the current key of " + stage_id);
    }
    it->key_organism_id = organism_id;
    it->note = note;
    l.audit.push_back({seq, previous == organism_id ? "remark" : "replace", stage_id, organism_id, previous, note});
  } else {
    if (!l.entries.empty() && c.seed != l.entries.back().key_organism_id)
      throw Error(ErrorCode::LineageMismatch,
                  "stage " + stage_id + " is not seeded by the key organism of " + l.entries.back().stage_id);
    LineageEntry e;
    e.stage_id = stage_id;
    e.key_organism_id = organism_id;
    e.seed_organism_id = c.seed;
    e.parent_stage = c.parent;
    e.repeats = c.repeats;
    e.noise_p = c.plan.noise_p;
    e.uniform = c.plan.uniform;
    e.variant = c.plan.variant;
    e.generations = c.generations;
    e.cumulative_generations = (l.entries.empty() ? 0 : l.entries.back().cumulative_generations) + c.generations;
    e.note = note;
    l.entries.push_back(std::move(e));
    l.audit.push_back({seq, "mark", stage_id, organism_id, "", note});
  }
  write_atomic(store.lineage_genome_path(organism_id), genome_to_string(genome));
  store.save_lineage(l);
  return l;
}

DerivedStage derive_next_stage(Store& store, const std::string& stage_id, const ordered_json& overrides) {
  const StageConfig from = store.stage(stage_id);
  const auto key = store.key_organism(stage_id);
  if (!key) throw Error(ErrorCode::NoKeyOrganism, "stage " + stage_id + " has no key organism");
  DerivedStage d;
  d.config = ladder_stage(ladder_position(from.plan) + 1);
  d.config.stage_id = store.next_stage_id();
  d.config.seed = *key;
  d.config.parent = stage_id;
  d.config.repeats = from.repeats;
  d.config.generations = from.generations;
  d.config.population = from.population;
  d.config.rng_base_seed = from.rng_base_seed;
  apply_overrides(d.config, overrides);
  d.warnings = validate_stage(d.config);
  if (store.has_stage(d.config.stage_id))
    throw Error(ErrorCode::InvalidConfig, "stage '" + d.config.stage_id + "' already exists");
  store.create_stage(d.config);
  return d;
}

std::vector<std::string> verify_lineage(const Store& store) {
  std::vector<std::string> problems;
  const Lineage l = store.lineage();
  for (std::size_t i = 0; i < l.entries.size(); ++i) {
    const LineageEntry& e = l.entries[i];
    if (i > 0 && e.seed_organism_id != l.entries[i - 1].key_organism_id)
      problems.push_back(e.stage_id + ": seed " + e.seed_organism_id + " is not the previous key " +
                         l.entries[i - 1].key_organism_id);
    try {
      if (organism_id(store.lineage_genome(e.key_organism_id)) != e.key_organism_id)
        problems.push_back(e.stage_id + ": stored key genome does not hash to " + e.key_organism_id);
    } catch (const Error& err) {
      problems.push_back(e.stage_id + ": " + err.what());
    }
    if (i > 0 && store.has_stage(e.stage_id) && store.stage(e.stage_id).seed != e.seed_organism_id)
      problems.push_back(e.stage_id + ": config seed differs from the lineage");
  }
  return problems;
}

}  // namespace forage
