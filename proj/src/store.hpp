#pragma once

// Stage store: stage configs, per-repeat evolution results, organisms, the
// lineage of key organisms and cached analysis artifacts, all as flat files.
//
//   <root>/stages/<id>/config.json
//   <root>/stages/<id>/repeats/r000/{run.jsonl,best.json,result.json,done}
//   <root>/organisms/<organism>.json
//   <root>/lineage.json
//   <root>/lineage/<organism>.json
//   <root>/analysis/<organism>/...

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "forage/analysis.hpp"
#include "forage/ssga.hpp"

namespace forage {

namespace fs = std::filesystem;

struct StageConfig {
  std::string stage_id;
  std::string seed = "random";  // "random" or an organism id
  std::string parent;           // stage whose key organism is the seed
  int repeats = 4;
  std::uint64_t generations = 50;
  std::size_t population = 200;
  PlanSpec plan;
  SelectionConfig selection;
  ReproductionConfig reproduction;
  std::uint64_t rng_base_seed = 1;

  bool random_seed() const { return seed == "random"; }
};

ordered_json stage_to_json(const StageConfig& c);
StageConfig stage_from_json(const ordered_json& j);

// Rungs of the default ladder: 0.1%, 5%, 50% noise with variant A, then
// uniform placement with B, then uniform with C.
inline constexpr int kLadderTop = 4;
StageConfig ladder_stage(int rung);
int ladder_position(const PlanSpec& plan);

/// Throws InvalidConfig on hard errors; returns warnings for settings that
/// leave the ladder.
std::vector<std::string> validate_stage(const StageConfig& c);

/// Applies JSON overrides (flat keys, e.g. {"noise": 0.5, "variant": "C"}).
void apply_overrides(StageConfig& c, const ordered_json& overrides);

struct RepeatResult {
  int repeat = 0;
  std::uint64_t rng_seed = 0;
  enum class State { Pending, Done, Failed } state = State::Pending;
  std::string error;
  std::string organism_id;
  FitnessBreakdown fitness;
};

std::string repeat_state_name(RepeatResult::State s);
ordered_json repeat_to_json(const RepeatResult& r);

struct StageResult {
  std::string stage_id;
  std::vector<RepeatResult> repeats;

  std::size_t count(RepeatResult::State s) const;
  /// Finished repeats by descending W̄, ties by repeat index.
  std::vector<RepeatResult> ranked() const;
};

struct LineageEntry {
  std::string stage_id;
  std::string key_organism_id;
  std::string seed_organism_id;  // "random" for the first stage
  std::string parent_stage;
  int repeats = 0;
  double noise_p = 0.0;
  bool uniform = false;
  FitnessVariant variant = FitnessVariant::A;
  std::uint64_t generations = 0;
  std::uint64_t cumulative_generations = 0;
  std::string note;
};

struct AuditEntry {
  std::uint64_t seq = 0;
  std::string action;  // "mark", "remark" or "replace"
  std::string stage_id;
  std::string organism_id;
  std::string previous;
  std::string note;
};

struct Lineage {
  std::vector<LineageEntry> entries;
  std::vector<AuditEntry> audit;

  const LineageEntry* find(const std::string& stage_id) const;
};

ordered_json lineage_to_json(const Lineage& l);
Lineage lineage_from_json(const ordered_json& j);

bool is_organism_id(const std::string& s);
bool is_stage_id(const std::string& s);

void write_atomic(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
ordered_json read_json(const fs::path& path);

class Store {
 public:
  explicit Store(fs::path root);

  const fs::path& root() const { return root_; }
  fs::path stage_dir(const std::string& id) const;
  fs::path repeat_dir(const std::string& id, int repeat) const;
  fs::path analysis_dir(const std::string& organism) const;

  std::vector<std::string> stage_ids() const;
  bool has_stage(const std::string& id) const;
  StageConfig stage(const std::string& id) const;
  /// Writes config.json. Re-creating with an identical config is a no-op.
  void create_stage(const StageConfig& c);
  std::string next_stage_id() const;
  StageResult stage_result(const std::string& id) const;
  std::optional<std::string> key_organism(const std::string& stage_id) const;

  std::string put_organism(const Genome& g);
  bool has_organism(const std::string& id) const;
  Genome organism(const std::string& id) const;
  Genome lineage_genome(const std::string& id) const;
  fs::path lineage_genome_path(const std::string& id) const;

  Lineage lineage() const;
  void save_lineage(const Lineage& l);

  /// Serializes writers of shared files (organisms, lineage).
  std::mutex& write_mutex() const { return mu_; }

 private:
  fs::path root_;
  mutable std::mutex mu_;
};

struct RunHooks {
  unsigned parallelism = 1;
  Evaluator evaluator;  // empty = physics
  std::function<void(int repeat, const LogRecord&)> on_record;
  std::function<void(int repeat)> on_repeat_done;
};

/// Runs every repeat of a stage that has no completion marker. Repeat r uses
/// rng seed rng_base_seed + r. Failed repeats are recorded, not thrown.
StageResult run_stage(Store& store, const std::string& stage_id, const RunHooks& hooks = {});

RunConfig repeat_run_config(const StageConfig& c, int repeat, const std::optional<Genome>& seed);

Lineage mark_key_organism(Store& store, const std::string& stage_id, const std::string& organism_id,
                          const std::string& note = "");

struct DerivedStage {
  StageConfig config;
  std::vector<std::string> warnings;
};

/// New stage seeded by the key organism of `stage_id`, one rung up the
/// ladder, with `overrides` applied last. The config is persisted.
DerivedStage derive_next_stage(Store& store, const std::string& stage_id, const ordered_json& overrides = {});

/// Problems found in the lineage: seeds that do not match the previous key,
/// or stored key genomes whose hash differs from their id.
std::vector<std::string> verify_lineage(const Store& store);

}  // namespace forage
