#include "sacbf/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sacbf {

double ConstraintSpec::h(const VectorXd& x) const {
  double v = -std::numeric_limits<double>::infinity();
  for (const auto& comp : h_components) v = std::max(v, comp(x));
  return v;
}

bool ConstraintSpec::input_feasible(const VectorXd& u) const {
  return (u.array() >= input_lo.array()).all() &&
         (u.array() <= input_hi.array()).all();
}

bool Trajectory::fully_feasible() const {
  for (uint8_t f : state_feasible)
    if (!f) return false;
  for (uint8_t f : input_feasible)
    if (!f) return false;
  return true;
}

SystemSpec euler_discretize(
    std::function<VectorXd(const VectorXd&, const VectorXd&)> rhs, double dt,
    int state_dim, int input_dim, const std::string& name) {
  if (dt <= 0.0) throw std::invalid_argument("euler_discretize: dt must be > 0");
  SystemSpec sys;
  sys.state_dim = state_dim;
  sys.input_dim = input_dim;
  sys.dt = dt;
  sys.name = name;
  sys.step = [rhs = std::move(rhs), dt](const VectorXd& x, const VectorXd& u) {
    return VectorXd(x + dt * rhs(x, u));
  };
  return sys;
}

VehicleParams VehicleParams::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vehicle config: " + path);
  nlohmann::json j;
  in >> j;
  VehicleParams p;
  p.wheelbase = j.value("wheelbase", p.wheelbase);
  p.dt = j.value("dt", p.dt);
  p.a_min = j.value("a_min", p.a_min);
  p.a_max = j.value("a_max", p.a_max);
  p.delta_max = j.value("delta_max", p.delta_max);
  p.pos_bound = j.value("pos_bound", p.pos_bound);
  p.v_min = j.value("v_min", p.v_min);
  p.v_max = j.value("v_max", p.v_max);
  p.psi_bound = j.value("psi_bound", p.psi_bound);
  p.target_radius = j.value("target_radius", p.target_radius);
  p.tighten_margin = j.value("tighten_margin", p.tighten_margin);
  if (j.contains("domain")) {
    const auto& d = j["domain"];
    p.domain_pos = d.value("pos", p.domain_pos);
    p.domain_v_lo = d.value("v_lo", p.domain_v_lo);
    p.domain_v_hi = d.value("v_hi", p.domain_v_hi);
  }
  if (j.contains("obstacles")) {
    p.obstacles.clear();
    for (const auto& o : j["obstacles"]) {
      p.obstacles.push_back({o.at("cx").get<double>(), o.at("cy").get<double>(),
                             o.at("r").get<double>()});
    }
  }
  return p;
}

void VehicleParams::save_json(const std::string& path) const {
  nlohmann::json j;
  j["wheelbase"] = wheelbase;
  j["dt"] = dt;
  j["a_min"] = a_min;
  j["a_max"] = a_max;
  j["delta_max"] = delta_max;
  j["pos_bound"] = pos_bound;
  j["v_min"] = v_min;
  j["v_max"] = v_max;
  j["psi_bound"] = psi_bound;
  j["target_radius"] = target_radius;
  j["tighten_margin"] = tighten_margin;
  j["domain"] = {{"pos", domain_pos}, {"v_lo", domain_v_lo}, {"v_hi", domain_v_hi}};
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : obstacles)
    j["obstacles"].push_back({{"cx", o.cx}, {"cy", o.cy}, {"r", o.r}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vehicle config: " + path);
  out << j.dump(2) << "\n";
}

std::pair<SystemSpec, ConstraintSpec> make_vehicle(const VehicleParams& params) {
  const double L = params.wheelbase;
  auto rhs = [L](const VectorXd& x, const VectorXd& u) {
    VectorXd dx(4);
    dx(0) = x(2) * std::cos(x(3));
    dx(1) = x(2) * std::sin(x(3));
    dx(2) = u(0);
    dx(3) = x(2) * std::tan(u(1)) / L;
    return dx;
  };
  SystemSpec sys = euler_discretize(rhs, params.dt, 4, 2, "vehicle");

  ConstraintSpec cs;
  const double pb = params.pos_bound;
  cs.h_components.push_back([pb](const VectorXd& x) { return std::abs(x(0)) - pb; });
  cs.h_components.push_back([pb](const VectorXd& x) { return std::abs(x(1)) - pb; });
  cs.h_components.push_back([](const VectorXd& x) { return -x(2); });
  const double vmax = params.v_max;
  cs.h_components.push_back([vmax](const VectorXd& x) { return x(2) - vmax; });
  const double psib = params.psi_bound;
  cs.h_components.push_back([psib](const VectorXd& x) { return std::abs(x(3)) - psib; });
  for (const auto& obs : params.obstacles) {
    cs.h_components.push_back([obs](const VectorXd& x) {
      const double dx = x(0) - obs.cx;
      const double dy = x(1) - obs.cy;
      return obs.r * obs.r - dx * dx - dy * dy;
    });
  }

  cs.input_lo = VectorXd(2);
  cs.input_lo << params.a_min, -params.delta_max;
  cs.input_hi = VectorXd(2);
  cs.input_hi << params.a_max, params.delta_max;

  const double r_tar2 = params.target_radius * params.target_radius;
  cs.target_membership = [r_tar2](const VectorXd& x) {
    return x(0) * x(0) + x(1) * x(1) <= r_tar2;
  };

  cs.domain_lo = VectorXd(4);
  cs.domain_lo << -params.domain_pos, -params.domain_pos, params.domain_v_lo,
      -params.psi_bound;
  cs.domain_hi = VectorXd(4);
  cs.domain_hi << params.domain_pos, params.domain_pos, params.domain_v_hi,
      params.psi_bound;
  cs.tighten_margin = params.tighten_margin;
  return {sys, cs};
}

std::pair<SystemSpec, ConstraintSpec> make_double_integrator() {
  SystemSpec sys;
  sys.state_dim = 2;
  sys.input_dim = 1;
  sys.dt = 0.1;
  sys.name = "dint";
  sys.step = [](const VectorXd& x, const VectorXd& u) {
    VectorXd xn(2);
    xn(0) = x(0) + 0.1 * x(1);
    xn(1) = x(1) + 0.1 * u(0);
    return xn;
  };

  ConstraintSpec cs;
  cs.h_components.push_back([](const VectorXd& x) { return std::abs(x(0)) - 1.0; });
  cs.h_components.push_back([](const VectorXd& x) { return std::abs(x(1)) - 1.0; });
  cs.input_lo = VectorXd::Constant(1, -1.0);
  cs.input_hi = VectorXd::Constant(1, 1.0);
  cs.target_membership = [](const VectorXd& x) { return x.norm() <= 0.1; };
  cs.domain_lo = VectorXd::Constant(2, -1.2);
  cs.domain_hi = VectorXd::Constant(2, 1.2);
  cs.tighten_margin = 0.0;
  return {sys, cs};
}

double double_integrator_bstar(const VectorXd& x) {
  double p = x(0), v = x(1);
  if (v < 0.0) {
    p = -p;
    v = -v;
  }
  const double m = std::floor(10.0 * v);
  const double r = v - 0.1 * m;
  const double overshoot = 0.1 * (m + 1.0) * (r + 0.05 * m);
  return std::max({v - 1.0, -p - 1.0, p + overshoot - 1.0});
}

Trajectory rollout(const SystemSpec& system, const ConstraintSpec& constraints,
                   const Policy& policy, const VectorXd& x0, int T) {
  if (T < 1) throw std::invalid_argument("rollout: T must be >= 1");
  Trajectory traj;
  traj.states.reserve(T + 1);
  traj.inputs.reserve(T);
  traj.states.push_back(x0);
  traj.state_feasible.push_back(constraints.state_feasible(x0) ? 1 : 0);
  VectorXd x = x0;
  for (int t = 0; t < T; ++t) {
    VectorXd u = policy(x);
    if (!u.allFinite()) {
      std::ostringstream msg;
      msg << "rollout: policy returned non-finite input at step " << t
          << " from state [" << x.transpose() << "]";
      throw std::runtime_error(msg.str());
    }
    traj.inputs.push_back(u);
    traj.input_feasible.push_back(constraints.input_feasible(u) ? 1 : 0);
    x = system.step(x, u);
    traj.states.push_back(x);
    traj.state_feasible.push_back(constraints.state_feasible(x) ? 1 : 0);
  }
  traj.reached_target = constraints.target_membership(traj.states.back());
  return traj;
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const ConstraintSpec& constraints) {
  const int n = traj.states.empty() ? 0 : static_cast<int>(traj.states[0].size());
  const int m = traj.inputs.empty() ? 0 : static_cast<int>(traj.inputs[0].size());
  std::ostringstream header;
  header << "t";
  for (int i = 0; i < n; ++i) header << ",x" << i;
  for (int i = 0; i < m; ++i) header << ",u" << i;
  header << ",h,feasible";

  std::vector<std::string> rows;
  rows.reserve(traj.states.size());
  for (size_t t = 0; t < traj.states.size(); ++t) {
    std::ostringstream row;
    row << t;
    for (int i = 0; i < n; ++i) row << "," << format_double(traj.states[t](i));
    const bool has_input = t < traj.inputs.size();
    for (int i = 0; i < m; ++i) {
      row << ",";
      if (has_input) row << format_double(traj.inputs[t](i));
    }
    bool feasible = traj.state_feasible[t] && (!has_input || traj.input_feasible[t]);
    row << "," << format_double(constraints.h(traj.states[t])) << ","
        << (feasible ? 1 : 0);
    rows.push_back(row.str());
  }
  write_csv(path, header.str(), rows);
}

}  // namespace sacbf
