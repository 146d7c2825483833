#include "sacbf/harness.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sacbf {

void EvalReport::save_json(const std::string& path) const {
  nlohmann::json j;
  j["seed"] = seed;
  j["steps"] = steps;
  j["config_hash"] = config_hash;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"policy", r.policy},
                         {"safety_rate", r.safety_rate},
                         {"total_cost", r.total_cost},
                         {"mean_cpu_ms", r.mean_cpu_ms},
                         {"trials", r.trials},
                         {"infeasibility_events", r.infeasibility_events},
                         {"reached_target", r.reached_target}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << j.dump(2) << "\n";
}

void EvalReport::save_csv(const std::string& path) const {
  std::vector<std::string> lines;
  lines.reserve(rows.size());
  for (const auto& r : rows) {
    std::ostringstream row;
    row << r.policy << "," << format_double(r.safety_rate) << ","
        << format_double(r.total_cost) << "," << format_double(r.mean_cpu_ms)
        << "," << r.trials << "," << r.infeasibility_events << ","
        << r.reached_target;
    lines.push_back(row.str());
  }
  write_csv(path,
            "policy,safety_rate,total_cost,mean_cpu_ms,trials,"
            "infeasibility_events,reached_target",
            lines);
}

std::function<double(const VectorXd&, const VectorXd&)> position_cost(
    int position_dims) {
  return [position_dims](const VectorXd& x, const VectorXd&) {
    return x.head(position_dims).squaredNorm();
  };
}

EvalReport evaluate(std::vector<PolicyUnderTest>& policies,
                    const SystemSpec& system, const ConstraintSpec& constraints,
                    const MatrixXd& x0_set, int T, uint64_t seed,
                    const std::function<double(const VectorXd&, const VectorXd&)>&
                        stage_cost,
                    const std::string& config_text) {
  if (x0_set.cols() < 1) throw std::invalid_argument("evaluate: empty x0 set");
  EvalReport report;
  report.seed = seed;
  report.steps = T;
  report.config_hash = hex64(fnv1a(config_text));

  for (auto& p : policies) {
    EvalRow row;
    row.policy = p.name;
    row.trials = static_cast<int>(x0_set.cols());
    double cost_sum = 0.0;
    double cpu_sum = 0.0;
    int safe_trials = 0;

    for (Eigen::Index trial = 0; trial < x0_set.cols(); ++trial) {
      const int64_t events_before = p.stats ? p.stats->infeasible_events : 0;
      const size_t times_before = p.stats ? p.stats->solve_ms.size() : 0;

      std::vector<double> fallback_times;
      Policy timed = p.act;
      if (!p.stats) {
        timed = [&p, &fallback_times](const VectorXd& x) {
          const auto t0 = std::chrono::steady_clock::now();
          VectorXd u = p.act(x);
          fallback_times.push_back(std::chrono::duration<double, std::milli>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count());
          return u;
        };
      }

      Trajectory traj = rollout(system, constraints, timed, x0_set.col(trial), T);

      double cost = 0.0;
      bool reached = false;
      for (int t = 0; t < traj.steps(); ++t) {
        cost += stage_cost(traj.states[t], traj.inputs[t]);
        reached = reached || constraints.target_membership(traj.states[t + 1]);
      }
      cost_sum += cost;
      if (reached) ++row.reached_target;

      const int64_t events =
          (p.stats ? p.stats->infeasible_events : 0) - events_before;
      row.infeasibility_events += events;
      if (traj.fully_feasible() && events == 0) ++safe_trials;

      // median per-step solve time for this trial
      std::vector<double> times;
      if (p.stats) {
        times.assign(p.stats->solve_ms.begin() + times_before,
                     p.stats->solve_ms.end());
      } else {
        times = std::move(fallback_times);
      }
      if (!times.empty()) {
        std::nth_element(times.begin(), times.begin() + times.size() / 2,
                         times.end());
        cpu_sum += times[times.size() / 2];
      }
    }

    row.safety_rate = 100.0 * safe_trials / static_cast<double>(row.trials);
    row.total_cost = cost_sum / static_cast<double>(row.trials);
    row.mean_cpu_ms = cpu_sum / static_cast<double>(row.trials);
    report.rows.push_back(std::move(row));
  }
  return report;
}

void export_levelset_slice(const std::function<double(const VectorXd&)>& field,
                           const VectorXd& pinned_state, int dim_a, int dim_b,
                           const VectorXd& lo, const VectorXd& hi, int per_axis,
                           const std::string& path) {
  if (per_axis < 2) throw std::invalid_argument("export_levelset_slice: per_axis < 2");
  std::vector<std::string> rows;
  rows.reserve(static_cast<size_t>(per_axis) * per_axis);
  VectorXd x = pinned_state;
  for (int i = 0; i < per_axis; ++i) {
    x(dim_a) = lo(dim_a) + (hi(dim_a) - lo(dim_a)) * i / (per_axis - 1);
    for (int j = 0; j < per_axis; ++j) {
      x(dim_b) = lo(dim_b) + (hi(dim_b) - lo(dim_b)) * j / (per_axis - 1);
      std::ostringstream row;
      row << format_double(x(dim_a)) << "," << format_double(x(dim_b)) << ","
          << format_double(field(x));
      rows.push_back(row.str());
    }
  }
  write_csv(path, "a,b,value", rows);
}

void export_beta_sweep(const std::vector<BetaSweepRow>& rows,
                       const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(rows.size());
  for (const auto& r : rows) {
    std::ostringstream row;
    row << format_double(r.beta) << "," << format_double(r.epsilon) << ","
        << format_double(r.safe_level) << "," << r.slice_nodes << ","
        << r.safe_nodes << "," << format_double(r.safe_area);
    lines.push_back(row.str());
  }
  write_csv(path, "beta,epsilon,safe_level,slice_nodes,safe_nodes,safe_area",
            lines);
}

}  // namespace sacbf
