#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "forage/morphogenome.hpp"
#include "forage/neuron_kind.hpp"

namespace forage {

inline constexpr double kControlDt = 0.02;
inline constexpr double kValueBound = 1e6;

/// Sensor readings for one control step.
struct SensorFrame {
  std::vector<double> contact;      // per block, 0 or 1
  std::vector<double> joint_angle;  // per joint, radians
  double target_angle = 0.0;        // (-pi, pi], about +z from the forward vector
  double target_distance = 0.0;     // meters

  double read(const SensorLayout& layout, std::size_t index) const {
    if (index < layout.blocks) return index < contact.size() ? contact[index] : 0.0;
    index -= layout.blocks;
    if (index < layout.joints) return index < joint_angle.size() ? joint_angle[index] : 0.0;
    index -= layout.joints;
    return index == 0 ? target_angle : target_distance;
  }
};

/// One desired joint velocity per joint, each in [-1, 1].
using MotorCommands = std::vector<double>;

struct KindResult {
  double value = 0.0;
  double state = 0.0;
};

/// Replaces NaN by 0 and bounds everything else to [-1e6, 1e6].
inline double sanitize(double v) {
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, -kValueBound, kValueBound);
}

/// Semantics of one neuron kind. `in` holds already-weighted inputs.
inline KindResult eval_kind(NeuronKind kind, std::span<const double, kNeuronInputs> in,
                            const std::array<double, kNeuronParams>& p, double state, double t, double dt) {
  (void)t;
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  double v = 0.0;
  double s = state;
  switch (kind) {
    case NeuronKind::Sum: v = in[0] + in[1] + in[2]; break;
    case NeuronKind::Product: v = in[0] * in[1] * in[2]; break;
    case NeuronKind::Divide: v = std::abs(in[1]) > 1e-6 ? in[0] / in[1] : 0.0; break;
    case NeuronKind::SumThreshold: v = (in[0] + in[1] + in[2]) > p[0] ? 1.0 : 0.0; break;
    case NeuronKind::GreaterThan: v = in[0] > in[1] ? 1.0 : 0.0; break;
    case NeuronKind::SignOf: v = (in[0] > 0 ? 1.0 : (in[0] < 0 ? -1.0 : 0.0)) * std::abs(in[1]); break;
    case NeuronKind::Min: v = std::min({in[0], in[1], in[2]}); break;
    case NeuronKind::Max: v = std::max({in[0], in[1], in[2]}); break;
    case NeuronKind::Abs: v = std::abs(in[0]); break;
    case NeuronKind::If: v = in[0] > 0 ? in[1] : in[2]; break;
    case NeuronKind::Interpolate: v = in[0] + clamp01(in[2]) * (in[1] - in[0]); break;
    case NeuronKind::Sin: v = std::sin(in[0]); break;
    case NeuronKind::Cos: v = std::cos(in[0]); break;
    case NeuronKind::Atan: v = std::atan(in[0]); break;
    case NeuronKind::Log: v = std::log(std::abs(in[0]) + 1e-9); break;
    case NeuronKind::Exp: v = std::exp(std::clamp(in[0], -30.0, 30.0)); break;
    case NeuronKind::Sigmoid: v = 1.0 / (1.0 + std::exp(-in[0])); break;
    case NeuronKind::Integrate:
      s = state + in[0] * dt;
      v = s;
      break;
    case NeuronKind::Differentiate:
      v = (in[0] - state) / dt;
      s = in[0];
      break;
    case NeuronKind::Smooth:
      s = state + p[0] * (in[0] - state);
      v = s;
      break;
    case NeuronKind::Memory:
      v = state;
      if (in[1] > 0) s = in[0];
      break;
    case NeuronKind::Wave:
      // state is elapsed time
      v = std::sin(2.0 * kPi * p[0] * state + p[1]);
      s = state + dt;
      break;
    case NeuronKind::Saw: {
      double ph = p[0] * state + p[1];
      v = (ph - std::floor(ph)) * 2.0 - 1.0;
      s = state + dt;
      break;
    }
    case NeuronKind::Constant: v = p[0]; break;
  }
  return {sanitize(v), sanitize(s)};
}

/// Executable neural network built from a developed organism.
class Controller {
 public:
  struct Input {
    InputSource source = InputSource::Constant;
    std::size_t index = 0;
    double weight = 0.0;
  };
  struct Node {
    std::size_t neuron = 0;  // genome index
    NeuronKind kind = NeuronKind::Sum;
    std::array<double, kNeuronParams> params{};
    std::array<Input, kNeuronInputs> inputs{};
  };

  Controller() = default;

  /// Nodes are ordered so every acyclic dependency is evaluated before its
  /// reader. Edges closing a cycle read the value from the previous step.
  static Controller build(const Organism& org) {
    Controller c;
    const Genome& g = org.genome;
    c.layout_ = org.sensors;
    const std::size_t n = g.neurons.size();
    c.values_.assign(n, 0.0);
    c.states_.assign(n, 0.0);
    c.motor_sources_.assign(org.joint_count(), {});
    for (const auto& w : g.wiring)
      if (static_cast<std::size_t>(w.joint) < c.motor_sources_.size())
        c.motor_sources_[static_cast<std::size_t>(w.joint)].push_back(static_cast<std::size_t>(w.source));

    // Depth-first post-order over "reads from" edges; a neuron currently on
    // the stack that is reached again marks a feedback edge.
    std::vector<int> mark(n, 0);  // 0 new, 1 open, 2 done
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t root = 0; root < n; ++root) {
      if (mark[root] != 0) continue;
      std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
      mark[root] = 1;
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const NeuronGene& ng = g.neurons[node];
        if (next < kind_arity(ng.kind)) {
          const InputGene& in = ng.inputs[next++];
          if (in.source == InputSource::Neuron) {
            auto src = static_cast<std::size_t>(in.index);
            if (src < n && mark[src] == 0) {
              mark[src] = 1;
              stack.emplace_back(src, 0);
            }
          }
          continue;
        }
        mark[node] = 2;
        order.push_back(node);
        stack.pop_back();
      }
    }
    c.nodes_.reserve(n);
    for (std::size_t idx : order) {
      const NeuronGene& ng = g.neurons[idx];
      Node node;
      node.neuron = idx;
      node.kind = ng.kind;
      node.params = ng.params;
      for (std::size_t k = 0; k < kNeuronInputs; ++k)
        node.inputs[k] = {ng.inputs[k].source, static_cast<std::size_t>(std::max(ng.inputs[k].index, 0)),
                          ng.inputs[k].weight};
      c.nodes_.push_back(node);
    }
    return c;
  }

  MotorCommands step(const SensorFrame& frame, double dt = kControlDt) {
    std::array<double, kNeuronInputs> in{};
    for (const Node& node : nodes_) {
      for (std::size_t k = 0; k < kNeuronInputs; ++k) {
        const Input& src = node.inputs[k];
        double raw = 1.0;
        if (src.source == InputSource::Sensor) raw = frame.read(layout_, src.index);
        else if (src.source == InputSource::Neuron) raw = src.index < values_.size() ? values_[src.index] : 0.0;
        in[k] = sanitize(src.weight * raw);
      }
      KindResult r = eval_kind(node.kind, in, node.params, states_[node.neuron], t_, dt);
      values_[node.neuron] = r.value;
      states_[node.neuron] = r.state;
    }
    t_ += dt;
    MotorCommands out(motor_sources_.size(), 0.0);
    for (std::size_t j = 0; j < motor_sources_.size(); ++j) {
      double sum = 0.0;
      for (std::size_t src : motor_sources_[j]) sum += values_[src];
      out[j] = std::clamp(sanitize(sum), -1.0, 1.0);
    }
    return out;
  }

  void reset() {
    std::fill(values_.begin(), values_.end(), 0.0);
    std::fill(states_.begin(), states_.end(), 0.0);
    t_ = 0.0;
  }

  double time() const { return t_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> states() const { return states_; }

  bool operator==(const Controller& o) const {
    if (nodes_.size() != o.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].neuron != o.nodes_[i].neuron) return false;
    return values_ == o.values_ && states_ == o.states_ && t_ == o.t_ && motor_sources_ == o.motor_sources_;
  }

 private:
  SensorLayout layout_;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> states_;
  std::vector<std::vector<std::size_t>> motor_sources_;
  double t_ = 0.0;
};

}  // namespace forage
