#pragma once

// Evaluation plans: direction steps, noised target sequences and the uniform
// placement used by the late stages.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "forage/error.hpp"
#include "forage/linalg.hpp"
#include "forage/rng.hpp"

namespace forage {

using ordered_json = nlohmann::ordered_json;

enum class FitnessVariant : std::uint8_t { A, B, C };

inline std::string variant_name(FitnessVariant v) {
  switch (v) {
    case FitnessVariant::A: return "A";
    case FitnessVariant::B: return "B";
    case FitnessVariant::C: return "C";
  }
  return "A";
}

inline FitnessVariant variant_from_name(const std::string& s) {
  if (s == "A" || s == "a") return FitnessVariant::A;
  if (s == "B" || s == "b") return FitnessVariant::B;
  if (s == "C" || s == "c") return FitnessVariant::C;
  throw Error(ErrorCode::InvalidConfig, "unknown fitness variant '" + s + "'");
}

/// Map and uniform-placement domain.
inline constexpr double kDomainExtent = 20.0;
inline constexpr double kExclusionRadius = 4.0;

/// Parameters a plan is built from. `uniform` replaces the direction steps
/// by uniformly drawn positions and uses `evals` steps.
struct PlanSpec {
  int directions = 4;
  bool uniform = false;
  int evals = 4;
  double noise_p = 0.001;
  double base_distance = 10.0;
  int seq_len = 3;
  double timer = 30.0;
  FitnessVariant variant = FitnessVariant::A;

  int steps() const { return uniform ? evals : directions; }
};

struct EvaluationPlan {
  std::vector<double> directions;  // empty for uniform placement
  double base_distance = 10.0;
  double noise_p = 0.0;
  bool uniform = false;
  int seq_len = 3;
  double timer = 30.0;
  FitnessVariant variant = FitnessVariant::A;
  std::uint64_t rng_seed = 0;
  // offsets[step][k]: the first is relative to the spawn position, the others
  // to the root position at the previous absorption
  std::vector<std::vector<Vec2>> offsets;

  std::size_t steps() const { return offsets.size(); }
  bool operator==(const EvaluationPlan&) const = default;
};

/// Angles 2*pi*k/R for k = 0..R-1, front first.
inline std::vector<double> base_placements(int R) {
  std::vector<double> out;
  if (R < 1) return out;
  out.reserve(static_cast<std::size_t>(R));
  for (int k = 0; k < R; ++k) out.push_back(2.0 * kPi * k / R);
  return out;
}

/// Adds independent per-axis perturbations uniform in [-p*delta, p*delta].
inline Vec2 apply_noise(const Vec2& offset, double delta, double p, Rng& rng) {
  if (p <= 0.0) return offset;
  const double a = p * delta;
  return {offset.x + rng.uniform(-a, a), offset.y + rng.uniform(-a, a)};
}

/// Uniform point of the 20x20 m square centered on the origin, outside the
/// exclusion disk.
inline Vec2 uniform_placement(Rng& rng) {
  const double h = kDomainExtent / 2.0;
  while (true) {
    Vec2 v{rng.uniform(-h, h), rng.uniform(-h, h)};
    if (v.norm() >= kExclusionRadius) return v;
  }
}

inline EvaluationPlan make_plan(const PlanSpec& spec, std::uint64_t rng_seed) {
  if (spec.seq_len < 1) throw Error(ErrorCode::InvalidConfig, "seq_len must be at least 1");
  if (spec.steps() < 1) throw Error(ErrorCode::InvalidConfig, "a plan needs at least one evaluation step");
  if (spec.noise_p < 0.0) throw Error(ErrorCode::InvalidConfig, "noise must be non-negative");
  EvaluationPlan plan;
  plan.base_distance = spec.base_distance;
  plan.noise_p = spec.noise_p;
  plan.uniform = spec.uniform;
  plan.seq_len = spec.seq_len;
  plan.timer = spec.timer;
  plan.variant = spec.variant;
  plan.rng_seed = rng_seed;
  Rng rng(derive_seed({rng_seed, 0x706c616eULL}));
  if (spec.uniform) {
    for (int i = 0; i < spec.evals; ++i) {
      std::vector<Vec2> seq;
      for (int k = 0; k < spec.seq_len; ++k) seq.push_back(uniform_placement(rng));
      plan.offsets.push_back(std::move(seq));
    }
    return plan;
  }
  plan.directions = base_placements(spec.directions);
  for (double a : plan.directions) {
    const Vec2 base{spec.base_distance * std::cos(a), spec.base_distance * std::sin(a)};
    std::vector<Vec2> seq;
    for (int k = 0; k < spec.seq_len; ++k) seq.push_back(apply_noise(base, spec.base_distance, spec.noise_p, rng));
    plan.offsets.push_back(std::move(seq));
  }
  return plan;
}

/// Plan of generation `generation` of the run seeded with `run_seed`; every
/// member of a generation sees the same targets.
inline EvaluationPlan plan_for_generation(const PlanSpec& spec, std::uint64_t run_seed, std::uint64_t generation) {
  return make_plan(spec, derive_seed({run_seed, generation, 0x67656eULL}));
}

inline ordered_json plan_spec_to_json(const PlanSpec& s) {
  ordered_json j;
  if (s.uniform) j["directions"] = "uniform";
  else j["directions"] = s.directions;
  j["evals"] = s.evals;
  j["noise_p"] = s.noise_p;
  j["base_distance"] = s.base_distance;
  j["seq_len"] = s.seq_len;
  j["timer"] = s.timer;
  j["variant"] = variant_name(s.variant);
  return j;
}

inline PlanSpec plan_spec_from_json(const ordered_json& j) {
  PlanSpec s;
  try {
    if (j.contains("directions")) {
      const auto& d = j.at("directions");
      if (d.is_string()) {
        if (d.get<std::string>() != "uniform") throw Error(ErrorCode::InvalidConfig, "directions must be an integer or \"uniform\"");
        s.uniform = true;
      } else {
        s.directions = d.get<int>();
      }
    }
    if (j.contains("uniform")) s.uniform = j.at("uniform").get<bool>();
    s.evals = j.value("evals", s.evals);
    s.noise_p = j.value("noise_p", s.noise_p);
    s.base_distance = j.value("base_distance", s.base_distance);
    s.seq_len = j.value("seq_len", s.seq_len);
    s.timer = j.value("timer", s.timer);
    if (j.contains("variant")) s.variant = variant_from_name(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  return s;
}

inline ordered_json plan_to_json(const EvaluationPlan& p) {
  ordered_json j;
  j["directions"] = p.directions;
  j["base_distance"] = p.base_distance;
  j["noise_p"] = p.noise_p;
  j["uniform"] = p.uniform;
  j["seq_len"] = p.seq_len;
  j["timer"] = p.timer;
  j["variant"] = variant_name(p.variant);
  j["rng_seed"] = p.rng_seed;
  ordered_json offs = ordered_json::array();
  for (const auto& seq : p.offsets) {
    ordered_json s = ordered_json::array();
    for (const auto& o : seq) s.push_back({o.x, o.y});
    offs.push_back(std::move(s));
  }
  j["offsets"] = std::move(offs);
  return j;
}

inline EvaluationPlan plan_from_json(const ordered_json& j) {
  EvaluationPlan p;
  try {
    p.directions = j.at("directions").get<std::vector<double>>();
    p.base_distance = j.at("base_distance").get<double>();
    p.noise_p = j.at("noise_p").get<double>();
    p.uniform = j.at("uniform").get<bool>();
    p.seq_len = j.at("seq_len").get<int>();
    p.timer = j.at("timer").get<double>();
    p.variant = variant_from_name(j.at("variant").get<std::string>());
    p.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    for (const auto& s : j.at("offsets")) {
      std::vector<Vec2> seq;
      for (const auto& o : s) seq.push_back({o.at(0).get<double>(), o.at(1).get<double>()});
      p.offsets.push_back(std::move(seq));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  return p;
}

/// 16 hex digits identifying the plan's content.
inline std::string plan_digest(const EvaluationPlan& p) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(plan_to_json(p).dump())));
  return buf;
}

}  // namespace forage
