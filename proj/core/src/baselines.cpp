#include "sacbf/baselines.hpp"

#include <cmath>

namespace sacbf {

namespace {
double wrap_to_pi(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}
}  // namespace

Policy apf_policy(const ApfConfig& cfg, const ConstraintSpec& constraints,
                  const std::vector<Obstacle>& obstacles) {
  const VectorXd lo = constraints.input_lo, hi = constraints.input_hi;
  return [cfg, obstacles, lo, hi](const VectorXd& x) {
    const double px = x(0), py = x(1), v = x(2), psi = x(3);

    // desired velocity = -grad potential in the position plane; repulsion
    // distance is measured from the obstacle center, so the field keeps
    // the local optima that make the expert imperfect
    double gx = cfg.attract_gain * px;
    double gy = cfg.attract_gain * py;
    if (cfg.repulse_gain > 0.0) {
      for (const auto& obs : obstacles) {
        const double dx = px - obs.cx, dy = py - obs.cy;
        double d = std::sqrt(dx * dx + dy * dy);
        if (d >= cfg.influence_radius) continue;
        d = std::max(d, 1e-3);
        // U_rep = 0.5 k (1/d - 1/d0)^2
        const double coeff = cfg.repulse_gain *
                             (1.0 / d - 1.0 / cfg.influence_radius) / (d * d);
        gx -= coeff * dx / d;
        gy -= coeff * dy / d;
      }
    }
    const double vx = -gx, vy = -gy;
    const double speed_des = std::min(std::sqrt(vx * vx + vy * vy),
                                      cfg.speed_setpoint);

    VectorXd u(2);
    u(0) = cfg.speed_gain * (speed_des - v);
    if (speed_des > 1e-9) {
      const double heading_des = std::atan2(vy, vx);
      u(1) = cfg.heading_gain * wrap_to_pi(heading_des - psi);
    } else {
      u(1) = 0.0;
    }
    return VectorXd(clip_to_box(u, lo, hi));
  };
}

VectorXd IdentifiedModel::predict(const VectorXd& x, const VectorXd& u) const {
  VectorXd z(x.size() + u.size());
  z << x, u;
  return model.forward(z);
}

IdentifiedModel identify_model(const TransitionDataset& data,
                               const IdentifyConfig& cfg) {
  if (data.count() < 2) throw std::invalid_argument("identify_model: dataset too small");
  auto [train, holdout] = data.split(cfg.holdout_fraction, cfg.fit.seed);

  std::vector<int> widths{data.state_dim() + data.input_dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(data.state_dim());
  MlpModel model(widths, cfg.fit.seed, "model-id");
  fit(model, train.joined_inputs(), train.xnext, cfg.fit);
  model.provenance["method"] = "identify";
  model.provenance["train_samples"] = std::to_string(train.count());

  IdentifiedModel out{std::move(model), 0.0};
  const TransitionDataset& eval = holdout.count() > 0 ? holdout : train;
  MatrixXd pred = out.model.forward_batch(eval.joined_inputs());
  // per-element mean squared error
  out.holdout_mse = (pred - eval.xnext).squaredNorm() /
                    static_cast<double>(eval.count() * eval.state_dim());
  return out;
}

Eigen::RowVectorXd indirect_reachability_targets(
    const IdentifiedModel& identified,
    const std::function<double(const VectorXd&)>& h, const MatrixXd& states,
    const VectorXd& input_lo, const VectorXd& input_hi, int horizon,
    int sequences, uint64_t seed) {
  if (horizon < 0) throw std::invalid_argument("indirect targets: horizon < 0");
  Eigen::RowVectorXd targets(states.cols());
  Rng rng(seed);
  const Eigen::Index nu = input_lo.size();
  for (Eigen::Index s = 0; s < states.cols(); ++s) {
    const double h0 = h(states.col(s));
    if (horizon == 0) {
      targets(s) = h0;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (int seq = 0; seq < sequences; ++seq) {
      // two-segment piecewise-constant profile with a random switch time;
      // per-step i.i.d. actions cannot express the sustained inputs that
      // the min-max favors
      const int switch_at = static_cast<int>(rng.uniform_index(horizon + 1));
      VectorXd u_a(nu), u_b(nu);
      for (Eigen::Index k = 0; k < nu; ++k) {
        u_a(k) = rng.uniform(input_lo(k), input_hi(k));
        u_b(k) = rng.uniform(input_lo(k), input_hi(k));
      }
      VectorXd x = states.col(s);
      double worst = h0;
      for (int t = 0; t < horizon; ++t) {
        x = identified.predict(x, t < switch_at ? u_a : u_b);
        worst = std::max(worst, h(x));
        if (worst >= best) break;
      }
      best = std::min(best, worst);
    }
    targets(s) = best;
  }
  return targets;
}

double IndirectFilter::barrier(const VectorXd& x) const {
  return cbf.forward_scalar(x);
}

FilterPolicy IndirectFilter::make_policy(const FilterObjective& objective,
                                         const FilterConfig& cfg) const {
  // constraint B(f_hat(x,u)) - beta_b B(x) <= 0; only the identified model
  // is consulted online
  IdentifiedModel id = identified;
  MlpModel barrier_net = cbf;
  const double beta = beta_b;
  auto constraint = [id = std::move(id), barrier_net = std::move(barrier_net),
                     beta](const VectorXd& x, const VectorXd& u) {
    return barrier_net.forward_scalar(id.predict(x, u)) -
           beta * barrier_net.forward_scalar(x);
  };
  return FilterPolicy(std::move(constraint), 0.0, objective, cfg);
}

IndirectFilter build_indirect_filter(const IdentifiedModel& identified,
                                     const TransitionDataset& data,
                                     const ConstraintSpec& constraints,
                                     const IndirectConfig& cfg) {
  const Eigen::Index n = std::min(cfg.max_target_states, data.count());
  MatrixXd states = data.x.leftCols(n);
  auto h = [&constraints](const VectorXd& x) { return constraints.h_learning(x); };
  Eigen::RowVectorXd targets = indirect_reachability_targets(
      identified, h, states, constraints.input_lo, constraints.input_hi,
      cfg.horizon, cfg.shooting_sequences, cfg.fit.seed);

  std::vector<int> widths{static_cast<int>(states.rows())};
  widths.insert(widths.end(), cfg.cbf_hidden.begin(), cfg.cbf_hidden.end());
  widths.push_back(1);
  MlpModel cbf(widths, cfg.fit.seed, "indirect-cbf");
  fit(cbf, states, targets, cfg.fit);
  cbf.provenance["method"] = "indirect";
  cbf.provenance["horizon"] = std::to_string(cfg.horizon);

  IndirectFilter out;
  out.cbf = std::move(cbf);
  out.identified = identified;
  out.beta_b = cfg.beta_b;
  return out;
}

}  // namespace sacbf
