#pragma once

// Fixed-step rigid-body world for one organism: boxes joined by motorized
// hinges, a ground plane at z = 0, Coulomb friction, and the food-source
// bookkeeping used by evaluations (sensors, absorption, per-target timers).
//
// Each step: gravity -> build constraint rows -> 8 sequential-impulse sweeps
// in a fixed order -> integrate -> position projection. Everything runs in a
// fixed order on doubles, so identical inputs give bit-identical trajectories.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "forage/error.hpp"
#include "forage/linalg.hpp"
#include "forage/morphogenome.hpp"
#include "forage/neurocontroller.hpp"

namespace forage {

/// Activation/deactivation protocol run before a trial starts.
struct SettleSchedule {
  double gravity_settle_s = 2.0;  // motors disabled
  int cycles = 2;
  double on_s = 1.0;
  double off_s = 1.0;
};

struct PhysicsConfig {
  double dt = 0.02;
  double gravity = 9.81;
  double friction = 0.8;
  double density = 500.0;
  int velocity_iterations = 8;
  int position_iterations = 4;
  double max_joint_speed = 4.0;  // rad/s at command magnitude 1
  double absorption_radius = 2.0;
  double unstable_speed = 1e3;
  SettleSchedule settle;
};

struct RigidBox {
  Vec3 half;
  double mass = 0.0;
  double inv_mass = 0.0;
  Vec3 inv_inertia_local;
  Vec3 pos;
  Quat rot;
  Vec3 vel;
  Vec3 omega;
  // cached from rot
  Mat3 r = Mat3::identity();
  Mat3 inv_inertia_world;

  void refresh() {
    r = rot.to_matrix();
    inv_inertia_world = r * Mat3::diag(inv_inertia_local) * r.transposed();
  }
  Vec3 to_world(const Vec3& local) const { return pos + r * local; }
  Vec3 vertex(int i) const {
    return to_world({(i & 1) ? half.x : -half.x, (i & 2) ? half.y : -half.y, (i & 4) ? half.z : -half.z});
  }
  double lowest_z() const {
    // |R|·half along z
    return pos.z - (std::abs(r(2, 0)) * half.x + std::abs(r(2, 1)) * half.y + std::abs(r(2, 2)) * half.z);
  }
};

struct HingeJoint {
  std::size_t parent = 0;
  std::size_t child = 0;
  Vec3 anchor_parent, anchor_child;  // body-local
  Vec3 axis_parent, axis_child;      // body-local, unit
  Vec3 ref_parent, ref_child;        // body-local, unit, perpendicular to the axis
  double lo = -1.0;
  double hi = 1.0;
  double max_torque = 0.0;
};

struct TrajectoryRow {
  std::uint64_t step = 0;
  double t = 0.0;
  Vec3 root;
  double sensor_distance = 0.0;
  std::size_t target_index = 0;

  bool operator==(const TrajectoryRow&) const = default;
};

struct AbsorptionEvent {
  std::size_t target_index = 0;
  Vec3 position;  // root center of gravity when absorbed
  std::uint64_t step_index = 0;

  bool operator==(const AbsorptionEvent&) const = default;
};

struct StepResult {
  SensorFrame frame;
  std::optional<AbsorptionEvent> absorbed;
  bool timer_expired = false;
  bool unstable = false;
};

class World {
 public:
  /// Builds a fresh world: ground, the organism resting 1 cm above it with
  /// its root centered at the origin, and the first food source.
  static World create(const Organism& org, const Vec3& first_target, double timer, std::size_t sequence_length = 1,
                      const PhysicsConfig& cfg = {}) {
    World w;
    w.cfg_ = cfg;
    w.layout_ = org.sensors;
    w.sequence_length_ = std::max<std::size_t>(sequence_length, 1);
    w.timer_steps_ = std::max<std::int64_t>(1, std::llround(timer / cfg.dt));
    w.timer_left_ = w.timer_steps_;

    for (std::size_t i = 0; i < org.blocks.size(); ++i)
      for (std::size_t j = i + 1; j < org.blocks.size(); ++j) {
        bool adjacent = org.blocks[j].parent == static_cast<int>(i) || org.blocks[i].parent == static_cast<int>(j);
        if (!adjacent && blocks_overlap(org.blocks[i], org.blocks[j]))
          throw Error(ErrorCode::SpawnOverlap, "non-adjacent blocks overlap at spawn");
      }

    double min_z = std::numeric_limits<double>::infinity();
    for (const auto& b : org.blocks) min_z = std::min(min_z, b.position.z - b.half_extents.z);
    const Vec3 shift{-org.blocks[0].position.x, -org.blocks[0].position.y, 0.01 - min_z};

    for (const auto& b : org.blocks) {
      RigidBox box;
      box.half = b.half_extents;
      const Vec3 d = b.half_extents * 2.0;
      box.mass = cfg.density * d.x * d.y * d.z;
      box.inv_mass = 1.0 / box.mass;
      const double k = box.mass / 12.0;
      box.inv_inertia_local = {1.0 / (k * (d.y * d.y + d.z * d.z)), 1.0 / (k * (d.x * d.x + d.z * d.z)),
                               1.0 / (k * (d.x * d.x + d.y * d.y))};
      box.pos = b.position + shift;
      box.refresh();
      w.bodies_.push_back(box);
    }
    for (std::size_t i = 1; i < org.blocks.size(); ++i) {
      const BlockPlan& b = org.blocks[i];
      HingeJoint h;
      h.parent = static_cast<std::size_t>(b.parent);
      h.child = i;
      const Vec3 jp = b.joint_point + shift;
      h.anchor_parent = jp - w.bodies_[h.parent].pos;
      h.anchor_child = jp - w.bodies_[i].pos;
      h.axis_parent = h.axis_child = b.joint_axis;
      Vec3 b1, b2;
      orthonormal_basis(b.joint_axis, b1, b2);
      h.ref_parent = h.ref_child = b1;
      h.lo = b.limit_lo;
      h.hi = b.limit_hi;
      h.max_torque = b.max_torque;
      w.joints_.push_back(h);
    }
    w.contact_.assign(w.bodies_.size(), false);
    w.forward_ = w.compute_forward(Vec2{1.0, 0.0});
    w.target_ = {first_target.x, first_target.y, 0.0};
    return w;
  }

  /// Gravity settle with motors disabled, then on/off activation cycles. The
  /// root position afterwards is the fitness origin; the controller is reset
  /// and trajectory recording starts.
  bool settle(Controller& controller) {
    const auto steps = [&](double s) { return static_cast<int>(std::llround(s / cfg_.dt)); };
    auto run = [&](int n, bool motors) {
      for (int i = 0; i < n && !unstable_; ++i) {
        if (motors) {
          MotorCommands cmd = controller.step(sensors(), cfg_.dt);
          physics_step(&cmd);
        } else {
          physics_step(nullptr);
        }
      }
    };
    run(steps(cfg_.settle.gravity_settle_s), false);
    for (int c = 0; c < cfg_.settle.cycles; ++c) {
      run(steps(cfg_.settle.on_s), true);
      run(steps(cfg_.settle.off_s), false);
    }
    controller.reset();
    settled_ = true;
    p0_ = bodies_[0].pos;
    step_index_ = 0;
    trajectory_.clear();
    if (!unstable_) trajectory_.push_back({0, 0.0, bodies_[0].pos, target_distance(), target_index_});
    return !unstable_;
  }

  /// One control step of the trial: motors driven by `commands`, timer
  /// decremented, trajectory row recorded, absorption checked.
  StepResult step(const MotorCommands& commands) {
    StepResult res;
    if (unstable_) {
      res.unstable = true;
      return res;
    }
    if (timer_left_ <= 0) {
      res.timer_expired = true;
      res.frame = sensors();
      return res;
    }
    physics_step(&commands);
    if (unstable_) {
      res.unstable = true;
      return res;
    }
    ++step_index_;
    --timer_left_;
    const double d = target_distance();
    trajectory_.push_back({step_index_, static_cast<double>(step_index_) * cfg_.dt, bodies_[0].pos, d, target_index_});
    if (!consumed_ && d <= cfg_.absorption_radius) {
      AbsorptionEvent ev{target_index_, bodies_[0].pos, step_index_};
      absorptions_.push_back(ev);
      res.absorbed = ev;
      if (target_index_ + 1 >= sequence_length_) consumed_ = true;
    }
    res.timer_expired = timer_left_ <= 0;
    res.frame = sensors();
    return res;
  }

  /// Places the next food source at the root's horizontal position plus
  /// `offset` and restarts the timer. Controller state is untouched.
  void advance_target(const Vec2& offset) {
    if (target_index_ + 1 >= sequence_length_)
      throw Error(ErrorCode::SequenceExhausted, "no target remains in the sequence");
    ++target_index_;
    const Vec3& root = bodies_[0].pos;
    target_ = {root.x + offset.x, root.y + offset.y, 0.0};
    timer_left_ = timer_steps_;
  }

  /// Advances the bodies by dt. `commands == nullptr` disables the motors.
  void physics_step(const MotorCommands* commands) {
    if (unstable_) return;
    const double dt = cfg_.dt;
    for (auto& b : bodies_) b.vel.z -= cfg_.gravity * dt;

    rows_.clear();
    build_joint_rows(commands);
    const std::size_t first_contact = rows_.size();
    build_ground_rows();
    build_box_rows();

    for (auto& row : rows_) prepare(row);
    Articulation& art = art_;
    art.rows.clear();
    for (const Row& row : rows_)
      if (row.equality) art.rows.push_back(row);
    finish(art);
    hold_joints(art);
    // Every other row sees the bodies through the hinges: its impulse comes
    // with whatever hinge impulses keep the joints closed.
    const std::size_t nb = bodies_.size();
    std::vector<std::size_t> free_rows;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      if (!rows_[i].equality) free_rows.push_back(i);
    std::vector<Vec3> response(free_rows.size() * 2 * nb);
    for (std::size_t k = 0; k < free_rows.size(); ++k) {
      Row& row = rows_[free_rows[k]];
      Vec3* dlin = &response[k * 2 * nb];
      articulated_response(row, art, dlin, dlin + nb);
      const double m = row_dot(row, dlin, dlin + nb);
      row.eff_mass = m > 1e-12 ? 1.0 / m : 0.0;
    }
    for (int it = 0; it < cfg_.velocity_iterations; ++it)
      for (std::size_t k = 0; k < free_rows.size(); ++k) {
        const Vec3* dlin = &response[k * 2 * nb];
        solve(rows_[free_rows[k]], dlin, dlin + nb);
      }
    hold_joints(art);

    std::fill(contact_.begin(), contact_.end(), false);
    bool any_contact = false;
    for (std::size_t i = first_contact; i < rows_.size(); ++i) {
      const Row& row = rows_[i];
      if (row.friction_of >= 0 || row.lambda <= 0.0) continue;
      any_contact = true;
      contact_[static_cast<std::size_t>(row.a)] = true;
      if (row.b >= 0) contact_[static_cast<std::size_t>(row.b)] = true;
    }

    // Free flight integrates gravity exactly; otherwise plain semi-implicit.
    const double ballistic = any_contact ? 0.0 : 0.5 * cfg_.gravity * dt * dt;
    for (auto& b : bodies_) {
      b.pos += b.vel * dt;
      b.pos.z += ballistic;
      b.rot = b.rot.integrated(b.omega * dt);
      b.refresh();
    }
    project_positions();
    for (std::size_t i = 0; i < bodies_.size(); ++i)
      if (bodies_[i].lowest_z() < 2e-3) contact_[i] = true;

    for (const auto& b : bodies_) {
      if (!b.pos.finite() || !b.vel.finite() || !b.omega.finite() || !b.rot.finite() ||
          b.vel.norm() > cfg_.unstable_speed || b.omega.norm() > cfg_.unstable_speed) {
        unstable_ = true;
        break;
      }
    }
    forward_ = compute_forward(forward_);
  }

  SensorFrame sensors() const {
    SensorFrame f;
    f.contact.resize(bodies_.size());
    for (std::size_t i = 0; i < bodies_.size(); ++i) f.contact[i] = contact_[i] ? 1.0 : 0.0;
    f.joint_angle.resize(joints_.size());
    for (std::size_t j = 0; j < joints_.size(); ++j) f.joint_angle[j] = hinge_angle(joints_[j]);
    f.target_angle = target_angle();
    f.target_distance = target_distance();
    return f;
  }

  double target_distance() const { return (target_.xy() - bodies_[0].pos.xy()).norm(); }

  double target_angle() const {
    const Vec2 u = target_.xy() - bodies_[0].pos.xy();
    const double c = forward_.x * u.y - forward_.y * u.x;
    const double d = forward_.x * u.x + forward_.y * u.y;
    if (c == 0.0 && d == 0.0) return 0.0;
    return wrap_angle(std::atan2(c, d));
  }

  double hinge_angle(const HingeJoint& h) const {
    const RigidBox& p = bodies_[h.parent];
    const RigidBox& c = bodies_[h.child];
    const Vec3 a = p.r * h.axis_parent;
    const Vec3 rp = p.r * h.ref_parent;
    const Vec3 rc = c.r * h.ref_child;
    return std::atan2(dot(cross(rp, rc), a), dot(rp, rc));
  }

  double kinetic_energy() const {
    double e = 0.0;
    for (const auto& b : bodies_) {
      Vec3 wl = b.r.transposed() * b.omega;
      Vec3 iw{wl.x / b.inv_inertia_local.x, wl.y / b.inv_inertia_local.y, wl.z / b.inv_inertia_local.z};
      e += 0.5 * b.mass * dot(b.vel, b.vel) + 0.5 * dot(wl, iw);
    }
    return e;
  }
  double potential_energy() const {
    double e = 0.0;
    for (const auto& b : bodies_) e += b.mass * cfg_.gravity * b.pos.z;
    return e;
  }
  double total_energy() const { return kinetic_energy() + potential_energy(); }

  const std::vector<RigidBox>& bodies() const { return bodies_; }
  std::vector<RigidBox>& bodies() { return bodies_; }
  const std::vector<HingeJoint>& joints() const { return joints_; }
  const std::vector<TrajectoryRow>& trajectory() const { return trajectory_; }
  const std::vector<AbsorptionEvent>& absorptions() const { return absorptions_; }
  const Vec3& target() const { return target_; }
  Vec3 root_position() const { return bodies_[0].pos; }
  const Vec3& fitness_origin() const { return p0_; }
  std::size_t target_index() const { return target_index_; }
  std::size_t sequence_length() const { return sequence_length_; }
  bool consumed() const { return consumed_; }
  std::uint64_t step_index() const { return step_index_; }
  double timer_remaining() const { return static_cast<double>(timer_left_) * cfg_.dt; }
  bool unstable() const { return unstable_; }
  bool settled() const { return settled_; }
  const PhysicsConfig& config() const { return cfg_; }

  /// Mark the world unusable; used by tests and by callers that detect a
  /// failure outside the integrator.
  void flag_unstable() { unstable_ = true; }

 private:
  struct Row {
    int a = -1, b = -1;
    Vec3 lin_a, ang_a, lin_b, ang_b;
    double target = 0.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double lambda = 0.0;
    double eff_mass = 0.0;
    int friction_of = -1;  // index of the normal row bounding this friction row
    bool equality = false;  // hinge point/axis row, solved as one dense block
    // cached inverse-mass products
    Vec3 ia_lin, ia_ang, ib_lin, ib_ang;
  };

  World() = default;

  Vec2 compute_forward(const Vec2& previous) const {
    const Vec3 fx = bodies_[0].r.column(0);
    const Vec2 h{fx.x, fx.y};
    const double n = h.norm();
    if (n < 1e-6) return previous;
    return h * (1.0 / n);
  }

  void prepare(Row& row) const {
    double k = 0.0;
    if (row.a >= 0) {
      const RigidBox& A = bodies_[static_cast<std::size_t>(row.a)];
      row.ia_lin = row.lin_a * A.inv_mass;
      row.ia_ang = A.inv_inertia_world * row.ang_a;
      k += dot(row.lin_a, row.ia_lin) + dot(row.ang_a, row.ia_ang);
    }
    if (row.b >= 0) {
      const RigidBox& B = bodies_[static_cast<std::size_t>(row.b)];
      row.ib_lin = row.lin_b * B.inv_mass;
      row.ib_ang = B.inv_inertia_world * row.ang_b;
      k += dot(row.lin_b, row.ib_lin) + dot(row.ang_b, row.ib_ang);
    }
    row.eff_mass = k > 1e-12 ? 1.0 / k : 0.0;
  }

  double velocity_of(const Row& row) const {
    double v = 0.0;
    if (row.a >= 0) {
      const RigidBox& A = bodies_[static_cast<std::size_t>(row.a)];
      v += dot(row.lin_a, A.vel) + dot(row.ang_a, A.omega);
    }
    if (row.b >= 0) {
      const RigidBox& B = bodies_[static_cast<std::size_t>(row.b)];
      v += dot(row.lin_b, B.vel) + dot(row.ang_b, B.omega);
    }
    return v;
  }

  void apply(const Row& row, double impulse) {
    if (row.a >= 0) {
      RigidBox& A = bodies_[static_cast<std::size_t>(row.a)];
      A.vel += row.ia_lin * impulse;
      A.omega += row.ia_ang * impulse;
    }
    if (row.b >= 0) {
      RigidBox& B = bodies_[static_cast<std::size_t>(row.b)];
      B.vel += row.ib_lin * impulse;
      B.omega += row.ib_ang * impulse;
    }
  }

  void solve(Row& row, const Vec3* dlin, const Vec3* dang) {
    double lo = row.lo, hi = row.hi;
    if (row.friction_of >= 0) {
      const double limit = cfg_.friction * rows_[static_cast<std::size_t>(row.friction_of)].lambda;
      lo = -limit;
      hi = limit;
    }
    const double delta = row.eff_mass * (row.target - velocity_of(row));
    const double next = std::clamp(row.lambda + delta, lo, hi);
    const double applied = next - row.lambda;
    row.lambda = next;
    if (applied == 0.0) return;
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      bodies_[i].vel += dlin[i] * applied;
      bodies_[i].omega += dang[i] * applied;
    }
  }

  // Row for a relative constraint between body `a` (sign +) and body `b` (sign -).
  Row make_pair_row(std::size_t a, const Vec3& ra, std::size_t b, const Vec3& rb, const Vec3& dir) const {
    Row row;
    row.a = static_cast<int>(a);
    row.b = static_cast<int>(b);
    row.lin_a = dir;
    row.ang_a = cross(ra, dir);
    row.lin_b = -dir;
    row.ang_b = -cross(rb, dir);
    return row;
  }

  Row make_angular_row(std::size_t child, std::size_t parent, const Vec3& dir) const {
    Row row;
    row.a = static_cast<int>(child);
    row.b = static_cast<int>(parent);
    row.ang_a = dir;
    row.ang_b = -dir;
    return row;
  }

  void build_joint_rows(const MotorCommands* commands) {
    const double dt = cfg_.dt;
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      const HingeJoint& h = joints_[j];
      const RigidBox& P = bodies_[h.parent];
      const RigidBox& C = bodies_[h.child];
      const Vec3 rp = P.r * h.anchor_parent;
      const Vec3 rc = C.r * h.anchor_child;
      for (int k = 0; k < 3; ++k) {
        Vec3 e;
        e[k] = 1.0;
        rows_.push_back(make_pair_row(h.child, rc, h.parent, rp, e));
        rows_.back().equality = true;
      }
      const Vec3 axis = P.r * h.axis_parent;
      Vec3 b1, b2;
      orthonormal_basis(axis, b1, b2);
      rows_.push_back(make_angular_row(h.child, h.parent, b1));
      rows_.back().equality = true;
      rows_.push_back(make_angular_row(h.child, h.parent, b2));
      rows_.back().equality = true;

      const double theta = hinge_angle(h);
      constexpr double kLimitMargin = 0.1;
      if (theta - h.lo < kLimitMargin) {
        Row row = make_angular_row(h.child, h.parent, axis);
        row.target = theta > h.lo ? (h.lo - theta) / dt : 0.0;
        row.lo = 0.0;
        rows_.push_back(row);
      }
      if (h.hi - theta < kLimitMargin) {
        Row row = make_angular_row(h.child, h.parent, -axis);
        row.target = theta < h.hi ? (theta - h.hi) / dt : 0.0;
        row.lo = 0.0;
        rows_.push_back(row);
      }
      if (commands && j < commands->size()) {
        Row row = make_angular_row(h.child, h.parent, axis);
        row.target = std::clamp((*commands)[j], -1.0, 1.0) * cfg_.max_joint_speed;
        row.lo = -h.max_torque * dt;
        row.hi = h.max_torque * dt;
        rows_.push_back(row);
      }
    }
  }

  // J_r M^-1 J_s^T for two prepared rows.
  static double coupling(const Row& r, const Row& s) {
    double k = 0.0;
    auto add = [&](int body, const Vec3& lin, const Vec3& ang) {
      if (body < 0) return;
      if (s.a == body) k += dot(lin, s.ia_lin) + dot(ang, s.ia_ang);
      if (s.b == body) k += dot(lin, s.ib_lin) + dot(ang, s.ib_ang);
    };
    add(r.a, r.lin_a, r.ang_a);
    add(r.b, r.lin_b, r.ang_b);
    return k;
  }

  // Hinge point/axis rows at one configuration with the Cholesky factor
  // (row-major lower triangle) of their effective mass.
  struct Articulation {
    std::vector<Row> rows;
    std::vector<double> L;
    // Body velocity change per unit force/torque component on each body,
    // 6 columns per body, each holding 2 * bodies entries (linear, angular).
    std::vector<Vec3> K;

    void factor() {
      const std::size_t n = rows.size();
      L.assign(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) L[i * n + j] = coupling(rows[i], rows[j]);
      for (std::size_t j = 0; j < n; ++j) {
        double d = L[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= L[j * n + k] * L[j * n + k];
        d = std::sqrt(std::max(d, 1e-12));
        L[j * n + j] = d;
        for (std::size_t i = j + 1; i < n; ++i) {
          double v = L[i * n + j];
          for (std::size_t k = 0; k < j; ++k) v -= L[i * n + k] * L[j * n + k];
          L[i * n + j] = v / d;
        }
      }
    }

    void solve(std::vector<double>& x) const {
      const std::size_t n = x.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) x[i] -= L[i * n + k] * x[k];
        x[i] /= L[i * n + i];
      }
      for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) x[i] -= L[k * n + i] * x[k];
        x[i] /= L[i * n + i];
      }
    }
  };

  // Factors the prepared hinge rows and fills K.
  void finish(Articulation& art) const {
    art.factor();
    const std::size_t nb = bodies_.size();
    art.K.assign(6 * nb * 2 * nb, Vec3{});
    std::vector<double> g(art.rows.size());
    for (std::size_t b = 0; b < nb; ++b)
      for (int c = 0; c < 6; ++c) {
        Row unit;
        unit.a = static_cast<int>(b);
        (c < 3 ? unit.lin_a : unit.ang_a)[c % 3] = 1.0;
        prepare(unit);
        Vec3* dlin = &art.K[(6 * b + static_cast<std::size_t>(c)) * 2 * nb];
        Vec3* dang = dlin + nb;
        dlin[b] = unit.ia_lin;
        dang[b] = unit.ia_ang;
        if (art.rows.empty()) continue;
        for (std::size_t e = 0; e < g.size(); ++e) g[e] = coupling(art.rows[e], unit);
        art.solve(g);
        for (std::size_t e = 0; e < g.size(); ++e) {
          const Row& r = art.rows[e];
          dlin[r.a] -= r.ia_lin * g[e];
          dang[r.a] -= r.ia_ang * g[e];
          dlin[r.b] -= r.ib_lin * g[e];
          dang[r.b] -= r.ib_ang * g[e];
        }
      }
  }

  // Velocity change of every body per unit impulse on `row`, including the
  // hinge impulses that keep the joints closed.
  void articulated_response(const Row& row, const Articulation& art, Vec3* dlin, Vec3* dang) const {
    const std::size_t nb = bodies_.size();
    std::fill(dlin, dlin + nb, Vec3{});
    std::fill(dang, dang + nb, Vec3{});
    auto add = [&](int body, const Vec3& lin, const Vec3& ang) {
      if (body < 0) return;
      for (int c = 0; c < 6; ++c) {
        const double w = c < 3 ? lin[c] : ang[c - 3];
        if (w == 0.0) continue;
        const Vec3* col = &art.K[(6 * static_cast<std::size_t>(body) + static_cast<std::size_t>(c)) * 2 * nb];
        for (std::size_t i = 0; i < nb; ++i) {
          dlin[i] += col[i] * w;
          dang[i] += col[nb + i] * w;
        }
      }
    };
    add(row.a, row.lin_a, row.ang_a);
    add(row.b, row.lin_b, row.ang_b);
  }

  static double row_dot(const Row& row, const Vec3* dlin, const Vec3* dang) {
    double v = 0.0;
    if (row.a >= 0) v += dot(row.lin_a, dlin[row.a]) + dot(row.ang_a, dang[row.a]);
    if (row.b >= 0) v += dot(row.lin_b, dlin[row.b]) + dot(row.ang_b, dang[row.b]);
    return v;
  }

  // Closes the hinges at velocity level in one exact solve.
  void hold_joints(const Articulation& art) {
    if (art.rows.empty()) return;
    std::vector<double> x(art.rows.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = art.rows[i].target - velocity_of(art.rows[i]);
    art.solve(x);
    for (std::size_t i = 0; i < x.size(); ++i) apply(art.rows[i], x[i]);
  }

  void push_contact(int a, const Vec3& ra, int b, const Vec3& rb, const Vec3& n, double target) {
    Row normal;
    normal.a = a;
    normal.b = b;
    normal.lin_a = n;
    normal.ang_a = cross(ra, n);
    if (b >= 0) {
      normal.lin_b = -n;
      normal.ang_b = -cross(rb, n);
    }
    normal.target = target;
    normal.lo = 0.0;
    const int normal_index = static_cast<int>(rows_.size());
    rows_.push_back(normal);
    Vec3 t1, t2;
    orthonormal_basis(n, t1, t2);
    for (const Vec3& t : {t1, t2}) {
      Row f;
      f.a = a;
      f.b = b;
      f.lin_a = t;
      f.ang_a = cross(ra, t);
      if (b >= 0) {
        f.lin_b = -t;
        f.ang_b = -cross(rb, t);
      }
      f.friction_of = normal_index;
      rows_.push_back(f);
    }
  }

  void build_ground_rows() {
    const double dt = cfg_.dt;
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      const RigidBox& B = bodies_[i];
      // speculative margin: anything that could reach the ground this step
      const double margin = 0.01 + std::max(0.0, -B.vel.z) * dt + (B.omega.norm() * B.half.norm()) * dt;
      if (B.lowest_z() > margin) continue;
      for (int v = 0; v < 8; ++v) {
        const Vec3 p = B.vertex(v);
        if (p.z > margin) continue;
        const double target = p.z > 0.0 ? -p.z / dt : 0.0;
        push_contact(static_cast<int>(i), p - B.pos, -1, {}, Vec3{0, 0, 1}, target);
      }
    }
  }

  // Vertex of `a` inside box `b`: contact normal is b's face of least
  // penetration. Returns false when the vertex is outside.
  static bool vertex_in_box(const Vec3& p, const RigidBox& b, Vec3& normal, double& depth) {
    const Vec3 local = b.r.transposed() * (p - b.pos);
    double best = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 1.0;
    for (int k = 0; k < 3; ++k) {
      const double pen = b.half[k] - std::abs(local[k]);
      if (pen <= 0.0) return false;
      if (pen < best) {
        best = pen;
        axis = k;
        sign = local[k] >= 0 ? 1.0 : -1.0;
      }
    }
    normal = b.r.column(axis) * sign;
    depth = best;
    return true;
  }

  bool adjacent(std::size_t i, std::size_t j) const {
    for (const auto& h : joints_)
      if ((h.parent == i && h.child == j) || (h.parent == j && h.child == i)) return true;
    return false;
  }

  void build_box_rows() {
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      for (std::size_t j = i + 1; j < bodies_.size(); ++j) {
        if (adjacent(i, j)) continue;
        const RigidBox& A = bodies_[i];
        const RigidBox& B = bodies_[j];
        if ((A.pos - B.pos).norm() > A.half.norm() + B.half.norm()) continue;
        for (int pass = 0; pass < 2; ++pass) {
          const std::size_t ia = pass == 0 ? i : j;
          const std::size_t ib = pass == 0 ? j : i;
          const RigidBox& VA = bodies_[ia];
          const RigidBox& VB = bodies_[ib];
          for (int v = 0; v < 8; ++v) {
            const Vec3 p = VA.vertex(v);
            Vec3 n;
            double depth = 0.0;
            if (!vertex_in_box(p, VB, n, depth)) continue;
            push_contact(static_cast<int>(ia), p - VA.pos, static_cast<int>(ib), p - VB.pos, n, 0.0);
          }
        }
      }
    }
  }

  // Applies a positional pseudo-impulse along a row computed at the current
  // configuration. `error` is the signed constraint violation.
  void correct(Row row, double error, double beta, const Articulation& art) {
    prepare(row);
    std::vector<Vec3> d(2 * bodies_.size());
    articulated_response(row, art, d.data(), d.data() + bodies_.size());
    const double k = row_dot(row, d.data(), d.data() + bodies_.size());
    if (!(k > 1e-12)) return;
    displace(d.data(), d.data() + bodies_.size(), -beta * error / k);
  }

  void project_boxes(double beta, const Articulation& art) {
    for (std::size_t i = 0; i < bodies_.size(); ++i)
      for (std::size_t j = i + 1; j < bodies_.size(); ++j) {
        if (adjacent(i, j)) continue;
        if ((bodies_[i].pos - bodies_[j].pos).norm() > bodies_[i].half.norm() + bodies_[j].half.norm()) continue;
        for (int pass = 0; pass < 2; ++pass) {
          const std::size_t ia = pass == 0 ? i : j;
          const std::size_t ib = pass == 0 ? j : i;
          for (int v = 0; v < 8; ++v) {
            const Vec3 p = bodies_[ia].vertex(v);
            Vec3 n;
            double depth = 0.0;
            if (!vertex_in_box(p, bodies_[ib], n, depth)) continue;
            correct(make_pair_row(ia, p - bodies_[ia].pos, ib, p - bodies_[ib].pos, n), -depth, beta, art);
          }
        }
      }
  }

  // Hinge point/axis rows at the current pose; `x` receives -beta times
  // each row's positional error.
  void hinge_rows(std::vector<Row>& rows, std::vector<double>& x, double beta) const {
    for (const HingeJoint& h : joints_) {
      const RigidBox& P = bodies_[h.parent];
      const RigidBox& C = bodies_[h.child];
      const Vec3 rp = P.r * h.anchor_parent;
      const Vec3 rc = C.r * h.anchor_child;
      const Vec3 err = (C.pos + rc) - (P.pos + rp);
      for (int k = 0; k < 3; ++k) {
        Vec3 e;
        e[k] = 1.0;
        rows.push_back(make_pair_row(h.child, rc, h.parent, rp, e));
        x.push_back(-beta * err[k]);
      }
      const Vec3 ap = P.r * h.axis_parent;
      const Vec3 e = cross(C.r * h.axis_child, ap);
      Vec3 b1, b2;
      orthonormal_basis(ap, b1, b2);
      rows.push_back(make_angular_row(h.child, h.parent, b1));
      x.push_back(beta * dot(e, b1));
      rows.push_back(make_angular_row(h.child, h.parent, b2));
      x.push_back(beta * dot(e, b2));
    }
  }

  void displace(const Vec3* dlin, const Vec3* dang, double p) {
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      RigidBox& B = bodies_[i];
      B.pos += dlin[i] * p;
      B.rot = B.rot.integrated(dang[i] * p);
      B.refresh();
    }
  }

  // All hinge point/axis errors corrected together, linearized at the start
  // of the step.
  void project_joints(double beta, const Articulation& art) {
    if (joints_.empty()) return;
    std::vector<Row> rows;
    std::vector<double> x;
    hinge_rows(rows, x, beta);
    art.solve(x);
    std::vector<Vec3> dlin(bodies_.size()), dang(bodies_.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Row& r = art.rows[i];
      dlin[static_cast<std::size_t>(r.a)] += r.ia_lin * x[i];
      dang[static_cast<std::size_t>(r.a)] += r.ia_ang * x[i];
      dlin[static_cast<std::size_t>(r.b)] += r.ib_lin * x[i];
      dang[static_cast<std::size_t>(r.b)] += r.ib_ang * x[i];
    }
    displace(dlin.data(), dang.data(), 1.0);
  }

  void project_positions() {
    constexpr double kBeta = 0.8;
    for (int it = 0; it < cfg_.position_iterations; ++it) {
      const Articulation& art = art_;
      project_joints(kBeta, art);
      for (const HingeJoint& h : joints_) {
        const double theta = hinge_angle(h);
        const Vec3 axis = bodies_[h.parent].r * h.axis_parent;
        if (theta < h.lo) correct(make_angular_row(h.child, h.parent, axis), theta - h.lo, kBeta, art);
        else if (theta > h.hi) correct(make_angular_row(h.child, h.parent, -axis), h.hi - theta, kBeta, art);
      }
      project_boxes(kBeta, art);
      for (std::size_t i = 0; i < bodies_.size(); ++i) {
        for (int v = 0; v < 8; ++v) {
          const RigidBox& B = bodies_[i];
          const Vec3 p = B.vertex(v);
          if (p.z >= 0.0) continue;
          Row row;
          row.a = static_cast<int>(i);
          row.lin_a = {0, 0, 1};
          row.ang_a = cross(p - B.pos, Vec3{0, 0, 1});
          correct(row, p.z, kBeta, art);
        }
      }
    }
    // Residual ground penetration lifts the whole body plan, which keeps
    // joints intact.
    double low = 0.0;
    for (const auto& b : bodies_) low = std::min(low, b.lowest_z());
    if (low < 0.0)
      for (auto& b : bodies_) b.pos.z -= low;
  }

  PhysicsConfig cfg_;
  SensorLayout layout_;
  std::vector<RigidBox> bodies_;
  std::vector<HingeJoint> joints_;
  std::vector<Row> rows_;
  Articulation art_;
  std::vector<bool> contact_;
  Vec2 forward_{1.0, 0.0};
  Vec3 target_;
  Vec3 p0_;
  std::vector<TrajectoryRow> trajectory_;
  std::vector<AbsorptionEvent> absorptions_;
  std::size_t sequence_length_ = 1;
  std::size_t target_index_ = 0;
  bool consumed_ = false;
  std::int64_t timer_steps_ = 0;
  std::int64_t timer_left_ = 0;
  std::uint64_t step_index_ = 0;
  bool unstable_ = false;
  bool settled_ = false;
};

// ---------------------------------------------------------------------------
// Free functions mirroring the world operations.

inline World create_world(const Organism& org, const Vec3& first_target, double timer, std::size_t sequence_length = 1,
                          const PhysicsConfig& cfg = {}) {
  return World::create(org, first_target, timer, sequence_length, cfg);
}

inline bool settle_anticheat(World& world, Controller& controller) { return world.settle(controller); }

inline StepResult step_world(World& world, const MotorCommands& commands) { return world.step(commands); }

inline void advance_target(World& world, const Vec2& offset) { world.advance_target(offset); }

/// Short motors-off simulation used by validate() to reject organisms that
/// blow up the integrator.
inline WorldProbe stability_probe(const PhysicsConfig& cfg = {}, double seconds = 1.0) {
  return [cfg, seconds](const Organism& org) {
    try {
      World w = World::create(org, {10, 0, 0}, 10.0, 1, cfg);
      const int n = static_cast<int>(std::llround(seconds / cfg.dt));
      for (int i = 0; i < n && !w.unstable(); ++i) w.physics_step(nullptr);
      return w.unstable();
    } catch (const Error&) {
      return true;
    }
  };
}

// ---------------------------------------------------------------------------
// Episodes: one fresh world driven through a target sequence.

struct EpisodeSpec {
  Vec2 first_target;              // relative to the spawn position of the root
  std::vector<Vec2> next_offsets;  // added to the root position at each absorption
  double timer = 30.0;
  bool stop_on_final_absorption = false;
  bool stop_on_timeout = true;

  std::size_t sequence_length() const { return 1 + next_offsets.size(); }
};

struct EpisodeRecord {
  std::vector<TrajectoryRow> rows;
  std::vector<AbsorptionEvent> absorptions;
  Vec3 p0;
  Vec3 pf;
  bool unstable = false;
  std::uint64_t simulated_steps = 0;  // including settle

  std::size_t reached() const { return absorptions.size(); }
};

/// Runs one trial: settle, then step until the timer of the current target
/// expires (or, optionally, until the last target is absorbed).
inline EpisodeRecord run_episode(const Organism& org, const EpisodeSpec& spec, const PhysicsConfig& cfg = {}) {
  EpisodeRecord rec;
  World world = World::create(org, {spec.first_target.x, spec.first_target.y, 0.0}, spec.timer,
                              spec.sequence_length(), cfg);
  Controller controller = Controller::build(org);
  const SettleSchedule& s = cfg.settle;
  rec.simulated_steps = static_cast<std::uint64_t>(
      std::llround((s.gravity_settle_s + s.cycles * (s.on_s + s.off_s)) / cfg.dt));
  if (!world.settle(controller)) {
    rec.unstable = true;
    return rec;
  }
  SensorFrame frame = world.sensors();
  while (true) {
    MotorCommands cmd = controller.step(frame, cfg.dt);
    StepResult r = world.step(cmd);
    ++rec.simulated_steps;
    if (r.unstable) {
      rec.unstable = true;
      break;
    }
    frame = r.frame;
    if (r.absorbed) {
      const std::size_t next = r.absorbed->target_index + 1;
      if (next < spec.sequence_length()) {
        world.advance_target(spec.next_offsets[next - 1]);
        frame = world.sensors();
        continue;
      }
      if (spec.stop_on_final_absorption) break;
    }
    if (r.timer_expired) break;
  }
  rec.rows = world.trajectory();
  rec.absorptions = world.absorptions();
  rec.p0 = world.fitness_origin();
  rec.pf = rec.rows.empty() ? rec.p0 : rec.rows.back().root;
  return rec;
}

inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows) {
  os << "step,t,x,y,z,sensor_distance,target_index\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n",
                  static_cast<unsigned long long>(r.step), r.t, r.root.x, r.root.y, r.root.z, r.sensor_distance,
                  r.target_index);
    os << buf;
  }
}

}  // namespace forage
