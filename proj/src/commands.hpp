#pragma once

// Bodies of the CLI subcommands; tools/forage.cpp only parses arguments.

#include <iosfwd>
#include <optional>
#include <string>

#include "store.hpp"

namespace forage {

struct EvolveArgs {
  fs::path config;
  std::optional<int> repeats;
  std::optional<std::uint64_t> seed;  // rng base seed
  fs::path out = "store";
  unsigned parallelism = 1;
};

/// Creates (or resumes) the stage described by the config file in the store
/// at `out` and runs its pending repeats. A config may name a genome file as
/// "seed_file" instead of an organism id.
StageResult cmd_evolve(const EvolveArgs& a, std::ostream& log, const Evaluator& evaluator = {});

struct MapArgs {
  fs::path organism;
  int resolution = 11;
  std::optional<Vec2> cond;
  fs::path out = ".";
  double timer = 30.0;
  unsigned threads = 1;
};

MapFiles cmd_map(const MapArgs& a, std::ostream& log, const EpisodeRunner& runner = {});

struct ProfileArgs {
  fs::path organism;
  int trials = 100;
  int seq = 10;
  double timer = 60.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::optional<fs::path> out;
};

ForagingProfile cmd_profile(const ProfileArgs& a, std::ostream& log, const EpisodeRunner& runner = {});

struct StageNextArgs {
  fs::path store = "store";
  std::string from;
  std::optional<double> noise;
  bool uniform = false;
  std::optional<std::string> variant;
  ordered_json overrides = ordered_json::object();
};

DerivedStage cmd_stage_next(const StageNextArgs& a, std::ostream& log);

Lineage cmd_stage_mark(const fs::path& store, const std::string& stage, const std::string& organism,
                       const std::string& note, std::ostream& log);

StageResult cmd_stage_run(const fs::path& store, const std::string& stage, unsigned parallelism, std::ostream& log,
                          const Evaluator& evaluator = {});

void cmd_serve(const fs::path& store, const std::string& host, int port, unsigned threads, std::ostream& log);

Vec2 parse_xy(const std::string& s);
Genome load_genome(const fs::path& path);

}  // namespace forage
