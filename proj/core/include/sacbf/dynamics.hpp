#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sacbf/util.hpp"

namespace sacbf {

using Policy = std::function<VectorXd(const VectorXd&)>;

// Discrete-time plant x+ = step(x, u). The step map is the only place the
// true dynamics live; everything downstream of data collection works from
// transition samples alone.
struct SystemSpec {
  int state_dim = 0;
  int input_dim = 0;
  double dt = 0.0;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> step;
  std::string name;
};

// State constraint h(x) <= 0 as a max over scalar components, input box U,
// target set and sampling domain. `tighten_margin` shifts h during learning
// only; feasibility flags and evaluation always use the raw h.
struct ConstraintSpec {
  std::vector<std::function<double(const VectorXd&)>> h_components;
  VectorXd input_lo, input_hi;
  std::function<bool(const VectorXd&)> target_membership;
  VectorXd domain_lo, domain_hi;
  double tighten_margin = 0.0;

  double h(const VectorXd& x) const;
  // h + tighten_margin; what learners and the grid oracle see
  double h_learning(const VectorXd& x) const { return h(x) + tighten_margin; }
  bool state_feasible(const VectorXd& x) const { return h(x) <= 0.0; }
  bool input_feasible(const VectorXd& u) const;

  ConstraintSpec with_tighten_margin(double margin) const {
    ConstraintSpec c = *this;
    c.tighten_margin = margin;
    return c;
  }
};

struct Trajectory {
  std::vector<VectorXd> states;   // length T+1
  std::vector<VectorXd> inputs;   // length T
  std::vector<uint8_t> state_feasible;  // length T+1, raw h
  std::vector<uint8_t> input_feasible;  // length T
  bool reached_target = false;    // membership of states.back()

  int steps() const { return static_cast<int>(inputs.size()); }
  bool fully_feasible() const;
};

// Explicit Euler discretization of dx/dt = rhs(x, u).
SystemSpec euler_discretize(
    std::function<VectorXd(const VectorXd&, const VectorXd&)> rhs, double dt,
    int state_dim, int input_dim, const std::string& name);

struct Obstacle {
  double cx = 0.0, cy = 0.0, r = 0.0;
};

// Kinematic vehicle, state (px, py, v, psi), inputs (a, delta).
// Defaults follow the reduced-scale study configuration; obstacle layout is
// config-driven. See configs/vehicle_default.json for the key schema.
struct VehicleParams {
  double wheelbase = 0.1;
  double dt = 0.05;
  double a_min = -5.0, a_max = 2.0;
  double delta_max = M_PI / 4.0;
  double pos_bound = 2.6;
  double v_min = 0.0, v_max = 1.0;
  double psi_bound = M_PI;
  double target_radius = 0.1;
  double tighten_margin = 0.2;
  // sampling domain
  double domain_pos = 3.0;
  double domain_v_lo = -0.2, domain_v_hi = 1.2;
  std::vector<Obstacle> obstacles = {
      {1.5, 0.0, 0.5}, {-1.5, 0.8, 0.45}, {0.0, 1.8, 0.5}, {-0.6, -1.6, 0.45}};

  static VehicleParams from_json_file(const std::string& path);
  void save_json(const std::string& path) const;
};

std::pair<SystemSpec, ConstraintSpec> make_vehicle(const VehicleParams& params = {});

// Double integrator desk plant: p+ = p + 0.1 v, v+ = v + 0.1 u, |u| <= 1,
// h = max{|p|-1, |v|-1}, target ball of radius 0.1 at the origin.
std::pair<SystemSpec, ConstraintSpec> make_double_integrator();

// Exact reachability value of the double integrator. Braking at full input
// from speed v > 0 costs the position overshoot D(v) = 0.1 (m+1)(r + 0.05 m)
// with m = floor(10 v), r = v - 0.1 m, so the smallest achievable future
// constraint maximum is max{v - 1, -p - 1, p + D(v) - 1} (mirrored for
// v < 0). Its zero sub-level set is the maximal control-invariant set.
double double_integrator_bstar(const VectorXd& x);

// Simulates `policy` for T steps. Throws if the policy emits non-finite
// inputs. Feasibility flags are computed against the raw h and U.
Trajectory rollout(const SystemSpec& system, const ConstraintSpec& constraints,
                   const Policy& policy, const VectorXd& x0, int T);

// CSV with header t,x0..x{n-1},u0..u{m-1},h,feasible. The final row has no
// input; its u fields are left empty.
void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const ConstraintSpec& constraints);

}  // namespace sacbf
