#pragma once

// Fitness family: per-target approach products, locomotion term, reach bonus,
// the three compositions and the geometric mean over evaluation steps.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "forage/foragingtask.hpp"
#include "forage/morphogenome.hpp"
#include "forage/physsim.hpp"

namespace forage {

inline constexpr double kLocomotionScale = 100.0;
inline constexpr double kLocomotionCap = 1.0;
inline constexpr double kMinDelta = -0.99;

/// Product of (1 + d) over the approach deltas. Deltas below -0.99 are
/// clamped so every factor stays positive.
inline double w_s(std::span<const double> deltas) {
  double w = 1.0;
  for (double d : deltas) w *= 1.0 + std::max(d, kMinDelta);
  return w;
}

/// Product of (1 + d / 2^s), s >= 1 being the target ordinal.
inline double w_s_halved(std::span<const double> deltas, int s) {
  const double scale = std::ldexp(1.0, -s);
  double w = 1.0;
  for (double d : deltas) w *= 1.0 + std::max(d, kMinDelta) * scale;
  return w;
}

/// 100 * min(horizontal distance between p0 and pf, 1).
inline double w_l(const Vec3& p0, const Vec3& pf) {
  return kLocomotionScale * std::min((pf - p0).xy().norm(), kLocomotionCap);
}

/// S * (1 + 10 S / T)^T, evaluated as exp(log S + T log1p(10 S / T)).
inline double w_r(int S, long long T) {
  if (S <= 0) return 0.0;
  if (T < 1) T = 1;
  const double x = 10.0 * S / static_cast<double>(T);
  return std::exp(std::log(static_cast<double>(S)) + static_cast<double>(T) * std::log1p(x));
}

/// Geometric mean in log space; any zero entry gives 0.
inline double w_bar(std::span<const double> w) {
  if (w.empty()) return 0.0;
  double acc = 0.0;
  for (double v : w) {
    if (!(v > 0.0)) return 0.0;
    acc += std::log(v);
  }
  return std::exp(acc / static_cast<double>(w.size()));
}

/// Approach deltas d_{t-1} - d_t of one target.
using ApproachSeries = std::vector<double>;

/// Splits a trajectory into one series per target that appeared. A target
/// placed at an absorption starts at distance `start_distance[k]` from the
/// root.
inline std::vector<ApproachSeries> approach_series(const std::vector<TrajectoryRow>& rows,
                                                   const std::vector<double>& start_distance) {
  std::vector<ApproachSeries> out;
  if (rows.empty()) return out;
  out.resize(rows.back().target_index + 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::size_t k = rows[i].target_index;
    double prev = rows[i - 1].sensor_distance;
    if (rows[i - 1].target_index != k) prev = k < start_distance.size() ? start_distance[k] : prev;
    out[k].push_back(prev - rows[i].sensor_distance);
  }
  return out;
}

/// W of one evaluation step.
inline double compose(FitnessVariant variant, const std::vector<ApproachSeries>& series, const Vec3& p0,
                      const Vec3& pf, int S, long long T) {
  if (variant == FitnessVariant::C) return static_cast<double>(S);
  const int first = variant == FitnessVariant::B ? 2 : 1;
  double prod = 1.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const int s = static_cast<int>(i) + 1;
    if (s >= first) prod *= w_s_halved(series[i], s);
  }
  return w_l(p0, pf) * prod + w_r(S, T);
}

struct StepBreakdown {
  std::vector<double> w_s_list;  // per target, halved form
  double w_l = 0.0;
  double w_r = 0.0;
  double w = 0.0;
  int reached = 0;
  long long steps = 0;
  bool unstable = false;
};

struct FitnessBreakdown {
  std::vector<StepBreakdown> per_step;
  double w_bar = 0.0;
  int sources_reached = 0;
  FitnessVariant variant = FitnessVariant::A;
  bool valid = true;
  bool unstable = false;
};

inline FitnessBreakdown zero_fitness(FitnessVariant v, bool valid, bool unstable) {
  FitnessBreakdown b;
  b.variant = v;
  b.valid = valid;
  b.unstable = unstable;
  return b;
}

/// Runs one trial of an organism. Replaceable so tests can inject stubs.
using EpisodeRunner = std::function<EpisodeRecord(const Organism&, const EpisodeSpec&)>;

inline EpisodeRunner physics_runner(const PhysicsConfig& cfg = {}) {
  return [cfg](const Organism& org, const EpisodeSpec& spec) { return run_episode(org, spec, cfg); };
}

inline EpisodeSpec episode_for_step(const EvaluationPlan& plan, std::size_t step) {
  EpisodeSpec spec;
  const auto& seq = plan.offsets.at(step);
  spec.first_target = seq.at(0);
  spec.next_offsets.assign(seq.begin() + 1, seq.end());
  spec.timer = plan.timer;
  return spec;
}

/// Breakdown of one recorded trial under `variant`.
inline StepBreakdown score_episode(const EpisodeRecord& rec, const EpisodeSpec& spec, FitnessVariant variant) {
  StepBreakdown sb;
  if (rec.unstable) {
    sb.unstable = true;
    return sb;
  }
  std::vector<double> start{spec.first_target.norm()};
  for (const auto& o : spec.next_offsets) start.push_back(o.norm());
  auto series = approach_series(rec.rows, start);
  sb.reached = static_cast<int>(rec.reached());
  sb.steps = rec.rows.empty() ? 0 : static_cast<long long>(rec.rows.size()) - 1;
  for (std::size_t i = 0; i < series.size(); ++i) sb.w_s_list.push_back(w_s_halved(series[i], static_cast<int>(i) + 1));
  sb.w_l = w_l(rec.p0, rec.pf);
  sb.w_r = w_r(sb.reached, std::max<long long>(sb.steps, 1));
  sb.w = compose(variant, series, rec.p0, rec.pf, sb.reached, std::max<long long>(sb.steps, 1));
  return sb;
}

/// Scores an organism on every step of the plan, one fresh world per step.
/// Invalid organisms and any unstable trial yield W = 0.
inline FitnessBreakdown evaluate(const Organism& org, const EvaluationPlan& plan, const EpisodeRunner& runner) {
  if (!validate(org).valid) return zero_fitness(plan.variant, false, false);
  FitnessBreakdown fb;
  fb.variant = plan.variant;
  std::vector<double> ws;
  for (std::size_t i = 0; i < plan.steps(); ++i) {
    const EpisodeSpec spec = episode_for_step(plan, i);
    EpisodeRecord rec;
    try {
      rec = runner(org, spec);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SpawnOverlap && e.code() != ErrorCode::Unstable) throw;
      return zero_fitness(plan.variant, e.code() != ErrorCode::SpawnOverlap, e.code() == ErrorCode::Unstable);
    }
    StepBreakdown sb = score_episode(rec, spec, plan.variant);
    if (sb.unstable) return zero_fitness(plan.variant, true, true);
    fb.sources_reached += sb.reached;
    ws.push_back(sb.w);
    fb.per_step.push_back(std::move(sb));
  }
  if (plan.variant == FitnessVariant::C) fb.w_bar = static_cast<double>(fb.sources_reached);
  else fb.w_bar = w_bar(ws);
  return fb;
}

inline FitnessBreakdown evaluate(const Organism& org, const EvaluationPlan& plan, const PhysicsConfig& cfg = {}) {
  return evaluate(org, plan, physics_runner(cfg));
}

inline nlohmann::ordered_json breakdown_to_json(const FitnessBreakdown& b) {
  nlohmann::ordered_json j;
  j["w_bar"] = b.w_bar;
  j["sources_reached"] = b.sources_reached;
  j["variant"] = variant_name(b.variant);
  j["valid"] = b.valid;
  j["unstable"] = b.unstable;
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : b.per_step) {
    nlohmann::ordered_json e;
    e["w_s_list"] = s.w_s_list;
    e["w_l"] = s.w_l;
    e["w_r"] = s.w_r;
    e["w"] = s.w;
    e["reached"] = s.reached;
    e["steps"] = s.steps;
    steps.push_back(std::move(e));
  }
  j["per_step"] = std::move(steps);
  return j;
}

inline FitnessBreakdown breakdown_from_json(const nlohmann::ordered_json& j) {
  FitnessBreakdown b;
  try {
    b.w_bar = j.at("w_bar").get<double>();
    b.sources_reached = j.at("sources_reached").get<int>();
    b.variant = variant_from_name(j.at("variant").get<std::string>());
    b.valid = j.value("valid", true);
    b.unstable = j.value("unstable", false);
    for (const auto& e : j.at("per_step")) {
      StepBreakdown s;
      s.w_s_list = e.at("w_s_list").get<std::vector<double>>();
      s.w_l = e.at("w_l").get<double>();
      s.w_r = e.at("w_r").get<double>();
      s.w = e.at("w").get<double>();
      s.reached = e.at("reached").get<int>();
      s.steps = e.at("steps").get<long long>();
      b.per_step.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  return b;
}

}  // namespace forage
