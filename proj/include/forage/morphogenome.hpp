#pragma once

// Heritable genome: a tree of box-shaped blocks joined by hinges, plus a typed
// neuron graph wired to the joint motors. Covers random initialization,
// per-site mutation, gene-aligned crossover, development into a body plan and
// the structural validity test applied before simulation.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forage/error.hpp"
#include "forage/linalg.hpp"
#include "forage/neuron_kind.hpp"
#include "forage/rng.hpp"

namespace forage {

inline constexpr int kGenomeSchemaVersion = 1;

/// Legal ranges of the scalar sites. Mutation clamps into these.
namespace ranges {
inline constexpr double kDimMin = 0.05, kDimMax = 2.0;
inline constexpr double kAnchorMin = 0.0, kAnchorMax = 1.0;
inline constexpr double kAxisMin = -1.0, kAxisMax = 1.0;
inline constexpr double kLimitLoMin = -kPi, kLimitLoMax = -0.01;
inline constexpr double kLimitHiMin = 0.01, kLimitHiMax = kPi;
inline constexpr double kTorqueMin = 5.0, kTorqueMax = 400.0;
inline constexpr double kParamMin = -3.0, kParamMax = 3.0;
inline constexpr double kWeightMin = -3.0, kWeightMax = 3.0;
}  // namespace ranges

struct BlockGene {
  int parent = -1;  // -1 for the root block
  Vec3 dims{0.4, 0.4, 0.2};
  Vec2 joint_anchor{0.5, 0.5};
  Vec3 joint_axis{0.0, 1.0, 0.0};
  double limit_lo = -1.0;
  double limit_hi = 1.0;
  double max_torque = 50.0;

  bool operator==(const BlockGene&) const = default;
};

enum class InputSource : std::uint8_t { Sensor, Neuron, Constant };

struct InputGene {
  InputSource source = InputSource::Constant;
  int index = 0;
  double weight = 0.0;

  bool operator==(const InputGene&) const = default;
};

struct NeuronGene {
  NeuronKind kind = NeuronKind::Sum;
  std::array<double, kNeuronParams> params{};
  std::array<InputGene, kNeuronInputs> inputs{};

  bool operator==(const NeuronGene&) const = default;
};

struct ConnectionGene {
  int source = 0;  // neuron index
  int joint = 0;   // joint index; joint j drives block j + 1

  bool operator==(const ConnectionGene&) const = default;
};

struct Genome {
  std::vector<BlockGene> blocks;
  std::vector<NeuronGene> neurons;
  std::vector<ConnectionGene> wiring;
  int schema_version = kGenomeSchemaVersion;

  bool operator==(const Genome&) const = default;

  std::size_t joint_count() const { return blocks.empty() ? 0 : blocks.size() - 1; }
  /// contact per block, angle per joint, target angle, target distance
  std::size_t sensor_count() const { return blocks.size() + joint_count() + 2; }
};

struct GenomeLimits {
  std::size_t max_blocks = 8;
  std::size_t max_neurons = 32;
};

inline constexpr std::size_t kBlockSites = 12;
inline constexpr std::size_t kNeuronSites = 1 + kNeuronParams + 2 * kNeuronInputs;
inline constexpr std::size_t kConnectionSites = 2;

/// Number of independently mutable sites.
inline std::size_t sites(const Genome& g) {
  return g.blocks.size() * kBlockSites + g.neurons.size() * kNeuronSites + g.wiring.size() * kConnectionSites;
}

/// Checks the tree and reference invariants. Returns an empty string when
/// they hold, otherwise a description of the first violation.
inline std::string check_invariants(const Genome& g) {
  if (g.blocks.empty()) return "genome has no blocks";
  if (g.blocks[0].parent != -1) return "block 0 must be the root";
  for (std::size_t i = 1; i < g.blocks.size(); ++i) {
    int p = g.blocks[i].parent;
    if (p < 0 || static_cast<std::size_t>(p) >= i) return "block " + std::to_string(i) + " has invalid parent";
  }
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    const auto& b = g.blocks[i];
    for (int k = 0; k < 3; ++k)
      if (!(b.dims[k] >= ranges::kDimMin && b.dims[k] <= ranges::kDimMax))
        return "block " + std::to_string(i) + " extent out of range";
    if (!(b.limit_lo >= -kPi && b.limit_hi <= kPi && b.limit_lo < b.limit_hi))
      return "block " + std::to_string(i) + " joint limits invalid";
  }
  const std::size_t ns = g.sensor_count();
  for (std::size_t i = 0; i < g.neurons.size(); ++i) {
    for (const auto& in : g.neurons[i].inputs) {
      if (in.index < 0) return "negative input index";
      if (in.source == InputSource::Sensor && static_cast<std::size_t>(in.index) >= ns)
        return "neuron " + std::to_string(i) + " reads a missing sensor";
      if (in.source == InputSource::Neuron && static_cast<std::size_t>(in.index) >= g.neurons.size())
        return "neuron " + std::to_string(i) + " reads a missing neuron";
    }
  }
  for (const auto& c : g.wiring) {
    if (c.source < 0 || static_cast<std::size_t>(c.source) >= g.neurons.size()) return "wiring source out of range";
    if (c.joint < 0 || static_cast<std::size_t>(c.joint) >= g.joint_count()) return "wiring joint out of range";
  }
  return {};
}

/// Remaps dangling references after a structural change (crossover). Neuron
/// and sensor references wrap modulo the available count; references to
/// neurons in a neuron-less genome become constants; wiring without a valid
/// target is dropped.
inline void repair_references(Genome& g) {
  const std::size_t ns = g.sensor_count();
  const std::size_t nn = g.neurons.size();
  for (auto& n : g.neurons) {
    for (auto& in : n.inputs) {
      if (in.source == InputSource::Sensor) {
        in.index = static_cast<int>(static_cast<std::size_t>(std::max(in.index, 0)) % ns);
      } else if (in.source == InputSource::Neuron) {
        in.index = static_cast<int>(static_cast<std::size_t>(std::max(in.index, 0)) % nn);
      } else {
        in.index = 0;
      }
    }
  }
  const std::size_t nj = g.joint_count();
  std::vector<ConnectionGene> kept;
  kept.reserve(g.wiring.size());
  for (auto c : g.wiring) {
    if (nn == 0 || nj == 0) continue;
    c.source = static_cast<int>(static_cast<std::size_t>(std::max(c.source, 0)) % nn);
    c.joint = static_cast<int>(static_cast<std::size_t>(std::max(c.joint, 0)) % nj);
    kept.push_back(c);
  }
  g.wiring = std::move(kept);
}

namespace detail {

inline InputGene random_input(Rng& rng, std::size_t sensors, std::size_t neurons) {
  InputGene in;
  std::size_t pick = rng.index(sensors + neurons + 1);
  if (pick < sensors) {
    in.source = InputSource::Sensor;
    in.index = static_cast<int>(pick);
  } else if (pick < sensors + neurons) {
    in.source = InputSource::Neuron;
    in.index = static_cast<int>(pick - sensors);
  } else {
    in.source = InputSource::Constant;
    in.index = 0;
  }
  in.weight = rng.uniform(-2.0, 2.0);
  return in;
}

inline Genome random_genome_attempt(Rng& rng, const GenomeLimits& limits) {
  Genome g;
  const std::size_t max_blocks = std::max<std::size_t>(limits.max_blocks, 2);
  const std::size_t nb = 2 + rng.index(max_blocks - 1);
  const std::size_t nn_lo = std::max<std::size_t>(1, limits.max_neurons / 4);
  const std::size_t nn_hi = std::max(nn_lo, limits.max_neurons);
  const std::size_t nn = nn_lo + rng.index(nn_hi - nn_lo + 1);

  for (std::size_t i = 0; i < nb; ++i) {
    BlockGene b;
    b.parent = i == 0 ? -1 : static_cast<int>(rng.index(i));
    const double lo = i == 0 ? 0.2 : 0.1;
    const double hi = i == 0 ? 1.0 : 0.8;
    b.dims = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
    b.joint_anchor = {rng.uniform(), rng.uniform()};
    b.joint_axis = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    b.limit_lo = rng.uniform(-1.5, -0.2);
    b.limit_hi = rng.uniform(0.2, 1.5);
    b.max_torque = rng.uniform(20.0, 200.0);
    g.blocks.push_back(b);
  }
  const std::size_t ns = g.sensor_count();
  for (std::size_t i = 0; i < nn; ++i) {
    NeuronGene n;
    n.kind = static_cast<NeuronKind>(rng.index(kNeuronKindCount));
    for (auto& p : n.params) p = rng.uniform(ranges::kParamMin, ranges::kParamMax);
    for (auto& in : n.inputs) in = random_input(rng, ns, nn);
    g.neurons.push_back(n);
  }
  for (std::size_t j = 0; j < g.joint_count(); ++j) {
    if (j == 0 || rng.bernoulli(0.8))
      g.wiring.push_back({static_cast<int>(rng.index(nn)), static_cast<int>(j)});
  }
  return g;
}

inline double jitter(Rng& rng, double value, double lo, double hi) {
  // sigma is 10% of the legal range
  return std::clamp(value + rng.normal() * 0.1 * (hi - lo), lo, hi);
}

}  // namespace detail


struct MutationOutcome {
  Genome genome;
  std::size_t events = 0;  // sites selected for mutation
};

/// Perturbs each site independently with probability `rate`. Scalars get a
/// clamped Gaussian jitter, categorical sites are resampled uniformly.
inline MutationOutcome mutate_counted(const Genome& genome, std::uint64_t rng_seed, double rate = 0.01) {
  MutationOutcome out{genome, 0};
  if (rate <= 0.0) return out;
  Genome& g = out.genome;
  Rng rng(derive_seed({rng_seed, 0x6d757461746eULL}));
  auto hit = [&] {
    bool h = rng.bernoulli(rate);
    out.events += h ? 1 : 0;
    return h;
  };
  using namespace ranges;

  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    BlockGene& b = g.blocks[i];
    if (hit() && i > 0) b.parent = static_cast<int>(rng.index(i));
    for (int k = 0; k < 3; ++k)
      if (hit()) b.dims[k] = detail::jitter(rng, b.dims[k], kDimMin, kDimMax);
    if (hit()) b.joint_anchor.x = detail::jitter(rng, b.joint_anchor.x, kAnchorMin, kAnchorMax);
    if (hit()) b.joint_anchor.y = detail::jitter(rng, b.joint_anchor.y, kAnchorMin, kAnchorMax);
    for (int k = 0; k < 3; ++k)
      if (hit()) b.joint_axis[k] = detail::jitter(rng, b.joint_axis[k], kAxisMin, kAxisMax);
    if (hit()) b.limit_lo = detail::jitter(rng, b.limit_lo, kLimitLoMin, kLimitLoMax);
    if (hit()) b.limit_hi = detail::jitter(rng, b.limit_hi, kLimitHiMin, kLimitHiMax);
    if (hit()) b.max_torque = detail::jitter(rng, b.max_torque, kTorqueMin, kTorqueMax);
  }
  const std::size_t ns = g.sensor_count();
  const std::size_t nn = g.neurons.size();
  for (auto& n : g.neurons) {
    if (hit()) n.kind = static_cast<NeuronKind>(rng.index(kNeuronKindCount));
    for (auto& p : n.params)
      if (hit()) p = detail::jitter(rng, p, kParamMin, kParamMax);
    for (auto& in : n.inputs) {
      if (hit()) {
        double w = in.weight;
        in = detail::random_input(rng, ns, nn);
        in.weight = w;
      }
      if (hit()) in.weight = detail::jitter(rng, in.weight, kWeightMin, kWeightMax);
    }
  }
  const std::size_t nj = g.joint_count();
  for (auto& c : g.wiring) {
    if (hit() && nn > 0) c.source = static_cast<int>(rng.index(nn));
    if (hit() && nj > 0) c.joint = static_cast<int>(rng.index(nj));
  }
  return out;
}

inline Genome mutate(const Genome& genome, std::uint64_t rng_seed, double rate = 0.01) {
  return mutate_counted(genome, rng_seed, rate).genome;
}

/// Crossover points, one per gene list. Child list = a[0, cut) ++ b[cut, |b|).
struct CrossoverPoints {
  std::size_t blocks = 0;
  std::size_t neurons = 0;
  std::size_t wiring = 0;
};

inline Genome recombine_at(const Genome& a, const Genome& b, const CrossoverPoints& cut) {
  auto splice = [](const auto& la, const auto& lb, std::size_t k) {
    std::remove_cvref_t<decltype(la)> out;
    k = std::min({k, la.size(), lb.size()});
    out.insert(out.end(), la.begin(), la.begin() + static_cast<std::ptrdiff_t>(k));
    out.insert(out.end(), lb.begin() + static_cast<std::ptrdiff_t>(k), lb.end());
    return out;
  };
  Genome child;
  child.blocks = splice(a.blocks, b.blocks, cut.blocks);
  child.neurons = splice(a.neurons, b.neurons, cut.neurons);
  child.wiring = splice(a.wiring, b.wiring, cut.wiring);
  // Block positions are preserved by the splice, so each block keeps a parent
  // index below its own. Only cross-list references can dangle.
  repair_references(child);
  std::string why = check_invariants(child);
  if (!why.empty()) throw Error(ErrorCode::Degenerate, "crossover child: " + why);
  return child;
}

/// Gene-aligned single-point crossover on each list.
inline Genome recombine(const Genome& a, const Genome& b, std::uint64_t rng_seed) {
  Rng rng(derive_seed({rng_seed, 0x63726f7373ULL}));
  CrossoverPoints cut;
  cut.blocks = rng.index(std::min(a.blocks.size(), b.blocks.size()) + 1);
  cut.neurons = rng.index(std::min(a.neurons.size(), b.neurons.size()) + 1);
  cut.wiring = rng.index(std::min(a.wiring.size(), b.wiring.size()) + 1);
  return recombine_at(a, b, cut);
}

// ---------------------------------------------------------------------------
// Development

/// One block of a developed body plan. Blocks start axis-aligned; positions
/// are relative to the root block's center.
struct BlockPlan {
  Vec3 half_extents;
  Vec3 position;
  int parent = -1;
  Vec3 joint_point;  // on the parent's surface; unused for the root
  Vec3 joint_axis{0, 1, 0};
  double limit_lo = -1.0;
  double limit_hi = 1.0;
  double max_torque = 0.0;
};

/// Index layout of the sensor vector a controller reads.
struct SensorLayout {
  std::size_t blocks = 0;
  std::size_t joints = 0;

  std::size_t contact(std::size_t block) const { return block; }
  std::size_t joint_angle(std::size_t joint) const { return blocks + joint; }
  std::size_t target_angle() const { return blocks + joints; }
  std::size_t target_distance() const { return blocks + joints + 1; }
  std::size_t count() const { return blocks + joints + 2; }
};

struct Organism {
  Genome genome;
  std::vector<BlockPlan> blocks;
  SensorLayout sensors;

  std::size_t joint_count() const { return sensors.joints; }
  bool operator==(const Organism& o) const {
    if (!(genome == o.genome) || blocks.size() != o.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto &x = blocks[i], &y = o.blocks[i];
      if (!(x.half_extents == y.half_extents && x.position == y.position && x.parent == y.parent &&
            x.joint_point == y.joint_point && x.joint_axis == y.joint_axis && x.limit_lo == y.limit_lo &&
            x.limit_hi == y.limit_hi && x.max_torque == y.max_torque))
        return false;
    }
    return sensors.blocks == o.sensors.blocks && sensors.joints == o.sensors.joints;
  }
};

/// Maps an anchor in [0,1]^2 onto the surface of a box with the given half
/// extents: u sweeps azimuth, v elevation, and the resulting direction is
/// pushed out to the box boundary. Returns the surface point and the outward
/// face axis (0..2) and sign.
inline Vec3 anchor_on_box(const Vec2& anchor, const Vec3& half, int& face_axis, double& face_sign) {
  const double theta = 2.0 * kPi * anchor.x;
  const double phi = kPi * (anchor.y - 0.5);
  const Vec3 d{std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi)};
  double best = std::numeric_limits<double>::infinity();
  face_axis = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) continue;
    double t = half[k] / std::abs(d[k]);
    if (t < best) {
      best = t;
      face_axis = k;
    }
  }
  face_sign = d[face_axis] >= 0 ? 1.0 : -1.0;
  Vec3 p = d * best;
  p[face_axis] = face_sign * half[face_axis];  // exact on the face
  return p;
}

inline Organism develop(const Genome& genome) {
  std::string why = check_invariants(genome);
  if (!why.empty()) throw Error(ErrorCode::Degenerate, why);
  Organism org;
  org.genome = genome;
  org.blocks.reserve(genome.blocks.size());
  for (std::size_t i = 0; i < genome.blocks.size(); ++i) {
    const BlockGene& gene = genome.blocks[i];
    BlockPlan plan;
    plan.half_extents = gene.dims * 0.5;
    for (int k = 0; k < 3; ++k)
      if (!(plan.half_extents[k] > 0.0) || !std::isfinite(plan.half_extents[k]))
        throw Error(ErrorCode::Degenerate, "zero-volume block " + std::to_string(i));
    plan.parent = gene.parent;
    if (i > 0) {
      const BlockPlan& parent = org.blocks[static_cast<std::size_t>(gene.parent)];
      int axis = 0;
      double sign = 1.0;
      Vec3 local = anchor_on_box(gene.joint_anchor, parent.half_extents, axis, sign);
      plan.joint_point = parent.position + local;
      plan.position = plan.joint_point;
      plan.position[axis] += sign * plan.half_extents[axis];
      plan.joint_axis = normalized(gene.joint_axis, Vec3{0, 1, 0});
      plan.limit_lo = gene.limit_lo;
      plan.limit_hi = gene.limit_hi;
      plan.max_torque = gene.max_torque;
    }
    org.blocks.push_back(plan);
  }
  org.sensors.blocks = genome.blocks.size();
  org.sensors.joints = genome.joint_count();
  return org;
}

// ---------------------------------------------------------------------------
// Validity

enum class InvalidReason { OnlyOneBlock, MotorsDisconnected, SensorsDisconnected, InitialInterpenetration, Unstable };

constexpr std::string_view reason_name(InvalidReason r) {
  switch (r) {
    case InvalidReason::OnlyOneBlock: return "OnlyOneBlock";
    case InvalidReason::MotorsDisconnected: return "MotorsDisconnected";
    case InvalidReason::SensorsDisconnected: return "SensorsDisconnected";
    case InvalidReason::InitialInterpenetration: return "InitialInterpenetration";
    case InvalidReason::Unstable: return "Unstable";
  }
  return "?";
}

struct ValidityReport {
  bool valid = true;
  std::vector<InvalidReason> reasons;

  bool has(InvalidReason r) const { return std::find(reasons.begin(), reasons.end(), r) != reasons.end(); }
  bool operator==(const ValidityReport&) const = default;
};

/// Optional physics probe: returns true when a short simulation of the
/// organism goes unstable.
using WorldProbe = std::function<bool(const Organism&)>;

/// Neurons with a path to at least one motor, following only the inputs each
/// kind actually reads.
inline std::vector<bool> motor_reaching_neurons(const Genome& g) {
  std::vector<bool> reach(g.neurons.size(), false);
  std::vector<int> stack;
  for (const auto& c : g.wiring) {
    if (c.source >= 0 && static_cast<std::size_t>(c.source) < g.neurons.size() && c.joint >= 0 &&
        static_cast<std::size_t>(c.joint) < g.joint_count() && !reach[static_cast<std::size_t>(c.source)]) {
      reach[static_cast<std::size_t>(c.source)] = true;
      stack.push_back(c.source);
    }
  }
  while (!stack.empty()) {
    const NeuronGene& n = g.neurons[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    for (std::size_t k = 0; k < kind_arity(n.kind); ++k) {
      const InputGene& in = n.inputs[k];
      if (in.source != InputSource::Neuron) continue;
      auto idx = static_cast<std::size_t>(in.index);
      if (idx < reach.size() && !reach[idx]) {
        reach[idx] = true;
        stack.push_back(in.index);
      }
    }
  }
  return reach;
}

/// Joined blocks are adjacent; every other pair must not overlap.
inline bool blocks_overlap(const BlockPlan& a, const BlockPlan& b) {
  constexpr double kTouch = 1e-9;
  for (int k = 0; k < 3; ++k)
    if (std::abs(a.position[k] - b.position[k]) >= a.half_extents[k] + b.half_extents[k] - kTouch) return false;
  return true;
}

inline ValidityReport validate(const Organism& org, const WorldProbe& probe = {}) {
  ValidityReport report;
  auto flag = [&](InvalidReason r) {
    report.valid = false;
    report.reasons.push_back(r);
  };
  const Genome& g = org.genome;
  if (org.blocks.size() <= 1) flag(InvalidReason::OnlyOneBlock);

  auto reach = motor_reaching_neurons(g);
  bool any_motor = std::find(reach.begin(), reach.end(), true) != reach.end();
  if (!any_motor) {
    flag(InvalidReason::MotorsDisconnected);
  }
  bool sensed = false;
  for (std::size_t i = 0; i < g.neurons.size() && !sensed; ++i) {
    if (!reach[i]) continue;
    for (std::size_t k = 0; k < kind_arity(g.neurons[i].kind); ++k)
      if (g.neurons[i].inputs[k].source == InputSource::Sensor) sensed = true;
  }
  if (!sensed) flag(InvalidReason::SensorsDisconnected);

  bool overlap = false;
  for (std::size_t i = 0; i < org.blocks.size() && !overlap; ++i) {
    for (std::size_t j = i + 1; j < org.blocks.size() && !overlap; ++j) {
      bool adjacent = org.blocks[j].parent == static_cast<int>(i) || org.blocks[i].parent == static_cast<int>(j);
      if (!adjacent && blocks_overlap(org.blocks[i], org.blocks[j])) overlap = true;
    }
  }
  if (overlap) flag(InvalidReason::InitialInterpenetration);

  if (report.valid && probe && probe(org)) flag(InvalidReason::Unstable);
  return report;
}

/// Random genome with 2..max_blocks blocks and max_neurons/4..max_neurons
/// neurons. Draws are repeated until the developed organism passes the static
/// validity test (no physics probe). Deterministic for a given seed.
inline Genome random_genome(std::uint64_t rng_seed, const GenomeLimits& limits = {}) {
  Rng rng(derive_seed({rng_seed, 0x67656e6f6d65ULL}));
  for (int attempt = 0; attempt < 256; ++attempt) {
    Genome g = detail::random_genome_attempt(rng, limits);
    if (!check_invariants(g).empty() || sites(g) < 1) continue;
    if (validate(develop(g)).valid) return g;
  }
  throw Error(ErrorCode::Degenerate, "could not produce a structurally valid random genome");
}

// ---------------------------------------------------------------------------
// Serialization

using ordered_json = nlohmann::ordered_json;

inline ordered_json genome_to_json(const Genome& g) {
  auto v3 = [](const Vec3& v) { return ordered_json::array({v.x, v.y, v.z}); };
  ordered_json j;
  j["schema_version"] = g.schema_version;
  j["blocks"] = ordered_json::array();
  for (const auto& b : g.blocks) {
    ordered_json jb;
    jb["parent"] = b.parent;
    jb["dims"] = v3(b.dims);
    jb["joint_anchor"] = ordered_json::array({b.joint_anchor.x, b.joint_anchor.y});
    jb["joint_axis"] = v3(b.joint_axis);
    jb["joint_limits"] = ordered_json::array({b.limit_lo, b.limit_hi});
    jb["max_torque"] = b.max_torque;
    j["blocks"].push_back(std::move(jb));
  }
  j["neurons"] = ordered_json::array();
  for (const auto& n : g.neurons) {
    ordered_json jn;
    jn["kind"] = std::string(kind_name(n.kind));
    jn["params"] = ordered_json::array({n.params[0], n.params[1], n.params[2]});
    jn["inputs"] = ordered_json::array();
    for (const auto& in : n.inputs) {
      ordered_json ji;
      ji["source"] = in.source == InputSource::Sensor ? "sensor" : (in.source == InputSource::Neuron ? "neuron" : "constant");
      ji["index"] = in.index;
      ji["weight"] = in.weight;
      jn["inputs"].push_back(std::move(ji));
    }
    j["neurons"].push_back(std::move(jn));
  }
  j["wiring"] = ordered_json::array();
  for (const auto& c : g.wiring) j["wiring"].push_back(ordered_json{{"source", c.source}, {"joint", c.joint}});
  return j;
}

inline Genome genome_from_json(const ordered_json& j) {
  try {
    Genome g;
    g.schema_version = j.at("schema_version").get<int>();
    if (g.schema_version != kGenomeSchemaVersion)
      throw Error(ErrorCode::Parse, "unsupported genome schema_version " + std::to_string(g.schema_version));
    auto v3 = [](const ordered_json& a) { return Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}; };
    for (const auto& jb : j.at("blocks")) {
      BlockGene b;
      b.parent = jb.at("parent").get<int>();
      b.dims = v3(jb.at("dims"));
      b.joint_anchor = {jb.at("joint_anchor").at(0).get<double>(), jb.at("joint_anchor").at(1).get<double>()};
      b.joint_axis = v3(jb.at("joint_axis"));
      b.limit_lo = jb.at("joint_limits").at(0).get<double>();
      b.limit_hi = jb.at("joint_limits").at(1).get<double>();
      b.max_torque = jb.at("max_torque").get<double>();
      g.blocks.push_back(b);
    }
    for (const auto& jn : j.at("neurons")) {
      NeuronGene n;
      auto kind = kind_from_name(jn.at("kind").get<std::string>());
      if (!kind) throw Error(ErrorCode::Parse, "unknown neuron kind " + jn.at("kind").get<std::string>());
      n.kind = *kind;
      for (std::size_t k = 0; k < kNeuronParams; ++k) n.params[k] = jn.at("params").at(k).get<double>();
      for (std::size_t k = 0; k < kNeuronInputs; ++k) {
        const auto& ji = jn.at("inputs").at(k);
        std::string src = ji.at("source").get<std::string>();
        InputGene in;
        if (src == "sensor") in.source = InputSource::Sensor;
        else if (src == "neuron") in.source = InputSource::Neuron;
        else if (src == "constant") in.source = InputSource::Constant;
        else throw Error(ErrorCode::Parse, "unknown input source " + src);
        in.index = ji.at("index").get<int>();
        in.weight = ji.at("weight").get<double>();
        n.inputs[k] = in;
      }
      g.neurons.push_back(n);
    }
    for (const auto& jc : j.at("wiring")) g.wiring.push_back({jc.at("source").get<int>(), jc.at("joint").get<int>()});
    std::string why = check_invariants(g);
    if (!why.empty()) throw Error(ErrorCode::Parse, "genome violates invariants: " + why);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

inline std::string genome_to_string(const Genome& g) { return genome_to_json(g).dump(2) + "\n"; }

inline Genome genome_from_string(const std::string& text) {
  try {
    return genome_from_json(ordered_json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

/// Content hash over the canonical serialization.
inline std::uint64_t genome_hash(const Genome& g) { return fnv1a64(genome_to_json(g).dump()); }

/// 16-hex-digit identifier derived from the genome hash.
inline std::string organism_id(const Genome& g) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = genome_hash(g);
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace forage
