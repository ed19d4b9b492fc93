#pragma once

#include "forage/morphogenome.hpp"

namespace fixtures {

using namespace forage;

inline NeuronGene neuron(NeuronKind kind, std::array<double, kNeuronParams> params = {},
                         std::array<InputGene, kNeuronInputs> inputs = {}) {
  NeuronGene n;
  n.kind = kind;
  n.params = params;
  n.inputs = inputs;
  return n;
}

inline InputGene sensor(int index, double weight = 1.0) { return {InputSource::Sensor, index, weight}; }
inline InputGene from_neuron(int index, double weight = 1.0) { return {InputSource::Neuron, index, weight}; }
inline InputGene constant(double weight = 1.0) { return {InputSource::Constant, 0, weight}; }

// Anchor (0, 0.5) lands on the parent's +x face center, (0.5, 0.5) on -x.
inline BlockGene block(int parent, Vec3 dims, Vec2 anchor = {0.0, 0.5}) {
  BlockGene b;
  b.parent = parent;
  b.dims = dims;
  b.joint_anchor = anchor;
  b.joint_axis = {0, 1, 0};
  b.limit_lo = -1.0;
  b.limit_hi = 1.0;
  b.max_torque = 60.0;
  return b;
}

/// Four blocks joined by three hinges: a body with a two-segment front limb
/// and a rear limb. Two oscillators and one steering neuron drive the joints.
inline Genome four_block_genome() {
  Genome g;
  g.blocks.push_back(block(-1, {0.8, 0.5, 0.2}));
  g.blocks.push_back(block(0, {0.4, 0.3, 0.1}, {0.0, 0.5}));
  g.blocks.push_back(block(0, {0.4, 0.3, 0.1}, {0.5, 0.5}));
  g.blocks.push_back(block(1, {0.3, 0.2, 0.1}, {0.0, 0.5}));
  // sensors: contact 0..3, joint angles 4..6, target angle 7, distance 8
  g.neurons.push_back(neuron(NeuronKind::Wave, {1.0, 0.0, 0.0}));
  g.neurons.push_back(neuron(NeuronKind::Wave, {1.0, 1.5, 0.0}));
  g.neurons.push_back(neuron(NeuronKind::Sum, {}, {sensor(7, 0.5), from_neuron(0, 0.5), constant(0.0)}));
  g.wiring = {{0, 0}, {1, 1}, {2, 2}};
  return g;
}

inline Genome single_block_genome() {
  Genome g;
  g.blocks.push_back(block(-1, {0.5, 0.5, 0.5}));
  g.neurons.push_back(neuron(NeuronKind::Sum, {}, {sensor(0), constant(), constant()}));
  return g;
}

}  // namespace fixtures
