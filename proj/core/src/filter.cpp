#include "sacbf/filter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace sacbf {

FilterObjective FilterObjective::distance_to(Policy ref) {
  FilterObjective o;
  o.mode = Mode::DistanceToReference;
  o.reference = std::move(ref);
  return o;
}

FilterObjective FilterObjective::learned_q(MlpModel q) {
  FilterObjective o;
  o.mode = Mode::LearnedQ;
  o.qtheta = std::move(q);
  return o;
}

FilterConfig FilterConfig::for_constraints(const ConstraintSpec& constraints) {
  FilterConfig cfg;
  cfg.input_lo = constraints.input_lo;
  cfg.input_hi = constraints.input_hi;
  return cfg;
}

namespace {

MatrixXd candidate_lattice(const VectorXd& lo, const VectorXd& hi, int per_axis) {
  const int nu = static_cast<int>(lo.size());
  Eigen::Index total = 1;
  for (int k = 0; k < nu; ++k) total *= per_axis;
  MatrixXd grid(nu, total);
  std::vector<int> idx(nu, 0);
  for (Eigen::Index i = 0; i < total; ++i) {
    for (int k = 0; k < nu; ++k)
      grid(k, i) = per_axis == 1 ? lo(k)
                                 : lo(k) + (hi(k) - lo(k)) * idx[k] / (per_axis - 1);
    for (int k = nu - 1; k >= 0; --k) {
      if (++idx[k] < per_axis) break;
      idx[k] = 0;
    }
  }
  return grid;
}

bool lex_less(const VectorXd& a, const VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (a(i) > b(i)) return false;
  }
  return false;
}

}  // namespace

FilterSolution solve_constrained(
    const std::function<double(const VectorXd&)>& objective_value,
    const std::function<VectorXd(const VectorXd&)>& objective_grad,
    const std::function<double(const VectorXd&)>& constraint, double level,
    const FilterConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const double feas_level = level + cfg.feas_tol;

  MatrixXd candidates = candidate_lattice(cfg.input_lo, cfg.input_hi,
                                          cfg.grid_per_axis);

  // phase (i): screen the lattice
  struct Candidate {
    VectorXd u;
    double obj;
    double con;
  };
  std::vector<Candidate> feasible;
  feasible.reserve(candidates.cols());
  VectorXd best_violation_u = candidates.col(0);
  double best_violation = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < candidates.cols(); ++i) {
    VectorXd u = candidates.col(i);
    const double c = constraint(u);
    if (c < best_violation) {
      best_violation = c;
      best_violation_u = u;
    }
    if (c <= feas_level) {
      const double obj = objective_value(u);
      feasible.push_back({std::move(u), obj, c});
    }
  }

  FilterSolution sol;
  if (feasible.empty()) {
    sol.u = best_violation_u;
    sol.feasible = false;
    sol.objective_value = objective_value(sol.u);
    sol.constraint_value = best_violation;
    sol.stats.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    return sol;
  }

  std::sort(feasible.begin(), feasible.end(), [](const Candidate& a, const Candidate& b) {
    if (a.obj != b.obj) return a.obj < b.obj;
    return lex_less(a.u, b.u);
  });
  const int starts = std::min<int>(cfg.k_starts, static_cast<int>(feasible.size()));

  // phase (ii): projected-gradient refinement with feasibility rejection
  int total_iters = 0;
  Candidate best = feasible[0];
  bool have_best = false;
  for (int s = 0; s < starts; ++s) {
    VectorXd u = feasible[s].u;
    double obj = feasible[s].obj;
    double con = feasible[s].con;
    for (int it = 0; it < cfg.max_refine_iters; ++it) {
      ++total_iters;
      VectorXd g = objective_grad(u);
      double step = cfg.step_init;
      bool accepted = false;
      VectorXd trial;
      while (step >= cfg.step_min) {
        trial = clip_to_box(u - step * g, cfg.input_lo, cfg.input_hi);
        const double c_trial = constraint(trial);
        if (c_trial <= feas_level) {
          const double o_trial = objective_value(trial);
          if (o_trial < obj) {
            const double moved = (trial - u).cwiseAbs().maxCoeff();
            u = trial;
            obj = o_trial;
            con = c_trial;
            accepted = true;
            if (moved <= cfg.converge_tol) it = cfg.max_refine_iters;
            break;
          }
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }
    Candidate refined{u, obj, con};
    if (!have_best || refined.obj < best.obj ||
        (refined.obj == best.obj && lex_less(refined.u, best.u))) {
      best = refined;
      have_best = true;
    }
  }

  sol.u = best.u;
  sol.objective_value = best.obj;
  sol.constraint_value = best.con;
  sol.feasible = true;
  sol.stats.starts_used = starts;
  sol.stats.iterations = total_iters;
  sol.stats.seed_objective = feasible[0].obj;
  sol.stats.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  return sol;
}

namespace {

struct ObjectiveFns {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
};

ObjectiveFns bind_objective(const FilterObjective& objective, const VectorXd& x) {
  if (objective.mode == FilterObjective::Mode::DistanceToReference) {
    if (!objective.reference)
      throw std::invalid_argument("filter objective: distance mode needs a reference");
    VectorXd ref = objective.reference(x);
    return {[ref](const VectorXd& u) { return (u - ref).squaredNorm(); },
            [ref](const VectorXd& u) { return VectorXd(2.0 * (u - ref)); }};
  }
  if (!objective.qtheta)
    throw std::invalid_argument("filter objective: learned mode needs a model");
  const MlpModel& q = *objective.qtheta;
  const Eigen::Index nu = q.input_dim() - x.size();
  auto value = [&q, x](const VectorXd& u) {
    VectorXd z(x.size() + u.size());
    z << x, u;
    return q.forward_scalar(z);
  };
  auto grad = [&q, x, nu](const VectorXd& u) {
    VectorXd z(x.size() + u.size());
    z << x, u;
    return VectorXd(q.gradient(z).input.tail(nu));
  };
  return {std::move(value), std::move(grad)};
}

FilterSolution solve_with_constraint(
    const std::function<double(const VectorXd&, const VectorXd&)>& constraint,
    double level, const FilterObjective& objective, const VectorXd& x,
    const FilterConfig& cfg) {
  if (!x.allFinite())
    throw std::invalid_argument("filter solve: non-finite state");
  const auto t0 = std::chrono::steady_clock::now();
  ObjectiveFns fns = bind_objective(objective, x);
  auto con = [&constraint, &x](const VectorXd& u) { return constraint(x, u); };

  // the clipped reference is the natural first candidate in distance mode
  if (objective.mode == FilterObjective::Mode::DistanceToReference) {
    VectorXd ref = clip_to_box(objective.reference(x), cfg.input_lo, cfg.input_hi);
    const double c_ref = con(ref);
    if (c_ref <= level + cfg.feas_tol) {
      FilterSolution direct;
      direct.u = ref;
      direct.objective_value = fns.value(ref);
      direct.constraint_value = c_ref;
      direct.feasible = true;
      direct.stats.starts_used = 1;
      direct.stats.seed_objective = direct.objective_value;
      direct.stats.wall_ms = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
      return direct;
    }
  }
  return solve_constrained(fns.value, fns.grad, con, level, cfg);
}

}  // namespace

FilterSolution solve(const SacbfBundle& bundle, const FilterObjective& objective,
                     const VectorXd& x, const FilterConfig& cfg) {
  return solve_with_constraint(bundle.qb, bundle.kappa, objective, x, cfg);
}

double FilterRuntimeStats::median_solve_ms() const {
  if (solve_ms.empty()) return 0.0;
  std::vector<double> v = solve_ms;
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

FilterPolicy::FilterPolicy(SacbfBundle bundle, FilterObjective objective,
                           FilterConfig cfg)
    : constraint_(bundle.qb),
      level_(bundle.kappa),
      objective_(std::move(objective)),
      cfg_(std::move(cfg)),
      stats_(std::make_shared<FilterRuntimeStats>()) {}

FilterPolicy::FilterPolicy(
    std::function<double(const VectorXd&, const VectorXd&)> constraint,
    double level, FilterObjective objective, FilterConfig cfg)
    : constraint_(std::move(constraint)),
      level_(level),
      objective_(std::move(objective)),
      cfg_(std::move(cfg)),
      stats_(std::make_shared<FilterRuntimeStats>()) {}

VectorXd FilterPolicy::operator()(const VectorXd& x) {
  const auto t0 = std::chrono::steady_clock::now();
  FilterSolution sol = solve_with_constraint(constraint_, level_, objective_, x, cfg_);
  stats_->solve_ms.push_back(std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count());
  ++stats_->steps;
  VectorXd u = sol.u;
  if (!sol.feasible) {
    ++stats_->infeasible_events;
    if (cfg_.on_infeasible == OnInfeasible::HoldLastInput && last_input_.size() > 0)
      u = last_input_;
  }
  last_input_ = u;
  return u;
}

Policy FilterPolicy::as_policy() {
  // shares this policy's state so stats keep accumulating
  auto self = std::make_shared<FilterPolicy>(*this);
  return [self](const VectorXd& x) { return (*self)(x); };
}

FilterPolicy make_policy(const SacbfBundle& bundle, const FilterObjective& objective,
                         const FilterConfig& cfg) {
  return FilterPolicy(bundle, objective, cfg);
}

}  // namespace sacbf
