#include "sacbf/learn.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "sacbf/essf.hpp"

namespace sacbf {

std::string to_string(SacbfMethod m) {
  switch (m) {
    case SacbfMethod::Sl: return "sl";
    case SacbfMethod::Expert: return "expert";
    case SacbfMethod::Rl: return "rl";
  }
  return "rl";
}

SacbfMethod method_from_string(const std::string& s) {
  if (s == "sl") return SacbfMethod::Sl;
  if (s == "expert") return SacbfMethod::Expert;
  if (s == "rl") return SacbfMethod::Rl;
  throw std::invalid_argument("unknown sacbf method: " + s);
}

double SacbfBundle::qb_min_over_grid(const VectorXd& x) const {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < action_grid.cols(); ++a)
    best = std::min(best, qb(x, action_grid.col(a)));
  return best;
}

bool SacbfBundle::safe_set_test(const VectorXd& x) const {
  if (method == SacbfMethod::Expert) return qfun(x) <= safe_level;
  return qb_min_over_grid(x) <= safe_level;
}

namespace {

std::function<double(const VectorXd&, const VectorXd&)> model_qb(const MlpModel& m) {
  return [model = m](const VectorXd& x, const VectorXd& u) {
    VectorXd z(x.size() + u.size());
    z << x, u;
    return model.forward_scalar(z);
  };
}

std::function<double(const VectorXd&)> model_qfun(const MlpModel& m) {
  return [model = m](const VectorXd& x) { return model.forward_scalar(x); };
}

}  // namespace

void SacbfBundle::save(const std::string& dir) const {
  if (!qb_model)
    throw std::logic_error("SacbfBundle::save: only model-backed bundles persist");
  ensure_directory(dir);
  qb_model->save(dir + "/qb.mlp");
  if (qfun_model) qfun_model->save(dir + "/qfun.mlp");

  nlohmann::json j;
  j["method"] = to_string(method);
  j["beta"] = beta;
  j["epsilon"] = epsilon;
  j["kappa"] = kappa;
  j["safe_level"] = safe_level;
  j["has_qfun"] = qfun_model.has_value();
  auto grid = nlohmann::json::array();
  for (Eigen::Index c = 0; c < action_grid.cols(); ++c) {
    auto col = nlohmann::json::array();
    for (Eigen::Index r = 0; r < action_grid.rows(); ++r)
      col.push_back(action_grid(r, c));
    grid.push_back(col);
  }
  j["action_grid"] = grid;
  std::ofstream out(dir + "/bundle.json");
  if (!out) throw std::runtime_error("cannot write bundle.json in " + dir);
  out << j.dump(2) << "\n";
}

SacbfBundle SacbfBundle::load(const std::string& dir) {
  std::ifstream in(dir + "/bundle.json");
  if (!in) throw std::runtime_error("missing bundle.json in " + dir);
  nlohmann::json j;
  in >> j;

  SacbfBundle b;
  b.method = method_from_string(j.at("method").get<std::string>());
  b.beta = j.value("beta", 1.0);
  b.epsilon = j.value("epsilon", 0.0);
  b.kappa = j.value("kappa", 0.0);
  b.safe_level = j.value("safe_level", 0.0);
  const auto& grid = j.at("action_grid");
  if (!grid.empty()) {
    const size_t rows = grid[0].size();
    b.action_grid.resize(rows, grid.size());
    for (size_t c = 0; c < grid.size(); ++c)
      for (size_t r = 0; r < rows; ++r) b.action_grid(r, c) = grid[c][r];
  }
  b.qb_model = MlpModel::load(dir + "/qb.mlp");
  b.qb = model_qb(*b.qb_model);
  if (j.value("has_qfun", false)) {
    b.qfun_model = MlpModel::load(dir + "/qfun.mlp");
    b.qfun = model_qfun(*b.qfun_model);
  }
  return b;
}

SacbfBundle make_oracle_bundle(GridValue qgrid, MatrixXd action_grid) {
  SacbfBundle b;
  b.method = SacbfMethod::Rl;
  b.beta = 1.0;
  b.action_grid = std::move(action_grid);
  auto shared = std::make_shared<GridValue>(std::move(qgrid));
  b.qb = [shared](const VectorXd& x, const VectorXd& u) {
    VectorXd z(x.size() + u.size());
    z << x, u;
    return shared->interpolate(z);
  };
  return b;
}

SacbfBundle make_function_bundle(
    std::function<double(const VectorXd&, const VectorXd&)> qb,
    MatrixXd action_grid, SacbfMethod method, double beta) {
  SacbfBundle b;
  b.method = method;
  b.beta = beta;
  b.qb = std::move(qb);
  b.action_grid = std::move(action_grid);
  return b;
}

VectorXd min_over_action_grid(const MlpModel& model, const MatrixXd& states,
                              const MatrixXd& action_grid) {
  const Eigen::Index n = states.cols();
  const Eigen::Index nu = action_grid.rows();
  VectorXd best = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  MatrixXd z(states.rows() + nu, n);
  z.topRows(states.rows()) = states;
  for (Eigen::Index a = 0; a < action_grid.cols(); ++a) {
    z.bottomRows(nu).colwise() = action_grid.col(a);
    MatrixXd out = model.forward_batch(z);
    best = best.cwiseMin(out.row(0).transpose());
  }
  return best;
}

// --- supervised learning --------------------------------------------------

SacbfBundle learn_sl(const std::function<double(const VectorXd&)>& cbf,
                     double beta_b, const TransitionDataset& data,
                     const ConstraintSpec& constraints, const SlLearnConfig& cfg) {
  if (!(beta_b > 0.0 && beta_b < 1.0))
    throw std::invalid_argument("learn_sl: beta_b must lie strictly in (0, 1)");
  if (data.count() < 2) throw std::invalid_argument("learn_sl: dataset too small");
  if (cfg.action_grid.cols() < 1)
    throw std::invalid_argument("learn_sl: empty action grid");

  auto [train, holdout] = data.split(cfg.holdout_fraction, cfg.fit.seed);

  auto labels_for = [&](const TransitionDataset& d) {
    VectorXd y(d.count());
    for (Eigen::Index i = 0; i < d.count(); ++i)
      y(i) = std::max(constraints.h_learning(d.x.col(i)),
                      cbf(d.xnext.col(i)) / beta_b);
    return y;
  };

  std::vector<int> widths;
  widths.push_back(data.state_dim() + data.input_dim());
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  MlpModel model(widths, cfg.fit.seed, "omega");

  MatrixXd inputs = train.joined_inputs();
  VectorXd y = labels_for(train);
  fit(model, inputs, y.transpose(), cfg.fit);

  model.provenance["method"] = "sl";
  model.provenance["beta_b"] = format_double(beta_b);
  model.provenance["train_samples"] = std::to_string(train.count());

  SacbfBundle bundle;
  bundle.method = SacbfMethod::Sl;
  bundle.beta = beta_b;
  bundle.qb_model = std::move(model);
  bundle.qb = model_qb(*bundle.qb_model);
  bundle.action_grid = cfg.action_grid;

  if (holdout.count() > 0) {
    bundle.epsilon = estimate_epsilon_sl(bundle, cbf, holdout, constraints);
    Margins m = essf_margins(SacbfMethod::Sl, beta_b, bundle.epsilon);
    bundle.kappa = m.kappa;
    bundle.safe_level = m.safe_level;
  }
  return bundle;
}

// --- expert-guided learning -----------------------------------------------

namespace {

struct ExpertFamilies {
  // columns of states per family; family D pairs a safe state with a grid
  // input and the stored successor
  MatrixXd unsafe_states;
};

MatrixXd collect_unsafe_states(const LabeledTrajectorySet& labeled) {
  Eigen::Index n = 0;
  for (size_t ti = 0; ti < labeled.trajectories.size(); ++ti)
    if (!labeled.trajectory_safe[ti])
      n += static_cast<Eigen::Index>(labeled.trajectories[ti].states.size());
  MatrixXd out(labeled.all_states.rows(), n);
  Eigen::Index c = 0;
  for (size_t ti = 0; ti < labeled.trajectories.size(); ++ti) {
    if (labeled.trajectory_safe[ti]) continue;
    for (const auto& s : labeled.trajectories[ti].states) out.col(c++) = s;
  }
  return out;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace

ExpertLossTerms expert_loss_terms(
    const std::function<double(const VectorXd&, const VectorXd&)>& qb,
    const std::function<double(const VectorXd&)>& qfun,
    const LabeledTrajectorySet& labeled, double beta) {
  ExpertLossTerms t;
  const Eigen::Index na = labeled.all_states.cols();
  for (Eigen::Index i = 0; i < na; ++i) t.objective += qfun(labeled.all_states.col(i));
  if (na > 0) t.objective /= static_cast<double>(na);

  MatrixXd unsafe = collect_unsafe_states(labeled);
  for (Eigen::Index i = 0; i < unsafe.cols(); ++i) {
    const double v = relu(-qfun(unsafe.col(i)));
    t.pen_b += v * v;
  }
  if (unsafe.cols() > 0) t.pen_b /= static_cast<double>(unsafe.cols());

  const Eigen::Index ns = labeled.safe_count();
  for (Eigen::Index i = 0; i < ns; ++i) {
    const double v = relu(qb(labeled.safe_states.col(i),
                             labeled.safe_expert_inputs.col(i)) -
                          beta * qfun(labeled.safe_states.col(i)));
    t.pen_c += v * v;
  }
  if (ns > 0) t.pen_c /= static_cast<double>(ns);

  const Eigen::Index m = labeled.input_samples.cols();
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double v = relu(qfun(labeled.safe_grid_successors.col(i * m + j)) -
                            qb(labeled.safe_states.col(i),
                               labeled.input_samples.col(j)));
      t.pen_d += v * v;
    }
  }
  if (ns * m > 0) t.pen_d /= static_cast<double>(ns * m);
  return t;
}

SacbfBundle learn_expert(const LabeledTrajectorySet& labeled,
                         const ExpertLearnConfig& cfg) {
  if (!(cfg.beta >= 0.0 && cfg.beta < 1.0))
    throw std::invalid_argument("learn_expert: beta must lie in [0, 1)");
  if (labeled.safe_count() == 0)
    throw std::runtime_error(
        "learn_expert: expert never safe (no demonstration trajectory passed "
        "the feasibility-and-target check)");
  cfg.fit.validate();

  auto [train, holdout] = labeled.split(cfg.holdout_fraction, cfg.fit.seed);
  if (train.safe_count() == 0)
    throw std::runtime_error("learn_expert: no safe trajectories left after split");

  const int nx = static_cast<int>(train.all_states.rows());
  const int nu = static_cast<int>(train.input_samples.rows());

  std::vector<int> qb_widths{nx + nu};
  qb_widths.insert(qb_widths.end(), cfg.qb_hidden.begin(), cfg.qb_hidden.end());
  qb_widths.push_back(1);
  std::vector<int> q_widths{nx};
  q_widths.insert(q_widths.end(), cfg.q_hidden.begin(), cfg.q_hidden.end());
  q_widths.push_back(1);

  MlpModel qb_net(qb_widths, cfg.fit.seed, "omega_qb");
  MlpModel q_net(q_widths, cfg.fit.seed + 1, "omega_q");

  MatrixXd unsafe = collect_unsafe_states(train);
  const Eigen::Index n_obj = train.all_states.cols();
  const Eigen::Index n_b = unsafe.cols();
  const Eigen::Index n_c = train.safe_count();
  const Eigen::Index m = train.input_samples.cols();
  const Eigen::Index n_d = n_c * m;
  const Eigen::Index pool = n_obj + n_b + n_c + n_d;

  // family tags: 0 = objective, 1 = sign penalty, 2 = expert decrease,
  // 3 = successor consistency
  std::vector<std::pair<uint8_t, Eigen::Index>> items;
  items.reserve(pool);
  for (Eigen::Index i = 0; i < n_obj; ++i) items.emplace_back(0, i);
  for (Eigen::Index i = 0; i < n_b; ++i) items.emplace_back(1, i);
  for (Eigen::Index i = 0; i < n_c; ++i) items.emplace_back(2, i);
  for (Eigen::Index i = 0; i < n_d; ++i) items.emplace_back(3, i);

  const double w_obj = 1.0 / static_cast<double>(n_obj);
  const double w_b = n_b > 0 ? cfg.lambda_b / static_cast<double>(n_b) : 0.0;
  const double w_c = cfg.lambda_c / static_cast<double>(n_c);
  const double w_d = n_d > 0 ? cfg.lambda_d / static_cast<double>(n_d) : 0.0;

  Rng rng(cfg.fit.seed);
  SgdState sgd_qb(qb_net), sgd_q(q_net);
  std::vector<MatrixXd> dW_qb(qb_net.layer_count()), dW_q(q_net.layer_count());
  std::vector<VectorXd> db_qb(qb_net.layer_count()), db_q(q_net.layer_count());
  auto zero_grads = [](const MlpModel& net, std::vector<MatrixXd>& dW,
                       std::vector<VectorXd>& db) {
    for (int l = 0; l < net.layer_count(); ++l) {
      dW[l] = MatrixXd::Zero(net.W[l].rows(), net.W[l].cols());
      db[l] = VectorXd::Zero(net.b[l].size());
    }
  };

  // single-sample backprop accumulating into the layer gradient buffers
  auto accumulate = [](const MlpModel& net, const VectorXd& z, double upstream,
                       std::vector<MatrixXd>& dW, std::vector<VectorXd>& db) {
    const int layers = net.layer_count();
    std::vector<VectorXd> acts(layers + 1);
    acts[0] = z;
    for (int l = 0; l < layers; ++l) {
      VectorXd pre = net.W[l] * acts[l] + net.b[l];
      acts[l + 1] = (l + 1 < layers) ? pre.array().tanh().matrix() : pre;
    }
    VectorXd delta = VectorXd::Constant(1, upstream);
    for (int l = layers - 1; l >= 0; --l) {
      dW[l].noalias() += delta * acts[l].transpose();
      db[l] += delta;
      if (l > 0) {
        VectorXd back = net.W[l].transpose() * delta;
        back.array() *= 1.0 - acts[l].array().square();
        delta = std::move(back);
      }
    }
    return acts[layers](0);
  };

  const Eigen::Index bsz = std::min<Eigen::Index>(cfg.fit.batch_size, pool);
  VectorXd zjoin(nx + nu);
  for (int epoch = 0; epoch < cfg.fit.epochs; ++epoch) {
    rng.shuffle(items);
    for (Eigen::Index start = 0; start < pool; start += bsz) {
      const Eigen::Index cur = std::min(bsz, pool - start);
      zero_grads(qb_net, dW_qb, db_qb);
      zero_grads(q_net, dW_q, db_q);
      double batch_loss = 0.0;
      for (Eigen::Index k = 0; k < cur; ++k) {
        const auto [family, idx] = items[start + k];
        switch (family) {
          case 0: {  // objective: w * q(x)
            const VectorXd& x = train.all_states.col(idx);
            batch_loss += w_obj * accumulate(q_net, x, w_obj, dW_q, db_q);
            break;
          }
          case 1: {  // w * relu(-q)^2
            const VectorXd& x = unsafe.col(idx);
            const double qv = q_net.forward_scalar(x);
            const double v = relu(-qv);
            batch_loss += w_b * v * v;
            if (v > 0.0) accumulate(q_net, x, -2.0 * w_b * v, dW_q, db_q);
            break;
          }
          case 2: {  // w * relu(qb(x, pi_s(x)) - beta q(x))^2
            const VectorXd& x = train.safe_states.col(idx);
            zjoin << x, train.safe_expert_inputs.col(idx);
            const double v =
                relu(qb_net.forward_scalar(zjoin) - cfg.beta * q_net.forward_scalar(x));
            batch_loss += w_c * v * v;
            if (v > 0.0) {
              accumulate(qb_net, zjoin, 2.0 * w_c * v, dW_qb, db_qb);
              accumulate(q_net, x, -2.0 * w_c * cfg.beta * v, dW_q, db_q);
            }
            break;
          }
          default: {  // w * relu(q(x+) - qb(x, u))^2
            const Eigen::Index i = idx / m, j = idx % m;
            const VectorXd& xp = train.safe_grid_successors.col(idx);
            zjoin << train.safe_states.col(i), train.input_samples.col(j);
            const double v =
                relu(q_net.forward_scalar(xp) - qb_net.forward_scalar(zjoin));
            batch_loss += w_d * v * v;
            if (v > 0.0) {
              accumulate(q_net, xp, 2.0 * w_d * v, dW_q, db_q);
              accumulate(qb_net, zjoin, -2.0 * w_d * v, dW_qb, db_qb);
            }
            break;
          }
        }
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("learn_expert: non-finite loss at epoch " +
                                 std::to_string(epoch));
      // scale so a batch estimates the full weighted loss gradient
      const double scale = static_cast<double>(pool) / static_cast<double>(cur);
      for (auto& g : dW_qb) g *= scale;
      for (auto& g : db_qb) g *= scale;
      for (auto& g : dW_q) g *= scale;
      for (auto& g : db_q) g *= scale;
      sgd_qb.apply(qb_net, dW_qb, db_qb, cfg.fit.rate_at(epoch), cfg.fit.momentum);
      sgd_q.apply(q_net, dW_q, db_q, cfg.fit.rate_at(epoch), cfg.fit.momentum);
    }
  }

  qb_net.provenance["method"] = "expert";
  qb_net.provenance["beta"] = format_double(cfg.beta);
  q_net.provenance["method"] = "expert";

  SacbfBundle bundle;
  bundle.method = SacbfMethod::Expert;
  bundle.beta = cfg.beta;
  bundle.qb_model = std::move(qb_net);
  bundle.qfun_model = std::move(q_net);
  bundle.qb = model_qb(*bundle.qb_model);
  bundle.qfun = model_qfun(*bundle.qfun_model);
  bundle.action_grid = labeled.input_samples;

  const LabeledTrajectorySet& eval_set = holdout.safe_count() > 0 ? holdout : train;
  bundle.epsilon = estimate_epsilon_expert(bundle, eval_set);
  Margins mg = essf_margins(SacbfMethod::Expert, cfg.beta, bundle.epsilon);
  bundle.kappa = mg.kappa;
  bundle.safe_level = mg.safe_level;
  return bundle;
}

// --- RL on the reachability Bellman equation ------------------------------

RlLossTerms rl_loss_terms(
    const std::function<double(const VectorXd&, const VectorXd&)>& qb,
    const TransitionDataset& data,
    const std::function<double(const VectorXd&)>& h,
    const MatrixXd& action_grid) {
  RlLossTerms t;
  for (Eigen::Index i = 0; i < data.count(); ++i) {
    double inner = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < action_grid.cols(); ++a)
      inner = std::min(inner, qb(data.xnext.col(i), action_grid.col(a)));
    const double target = std::max(h(data.x.col(i)), inner);
    const double pred = qb(data.x.col(i), data.u.col(i));
    t.l1 += (target - pred) * (target - pred);
    t.l2 += pred;
  }
  if (data.count() > 0) {
    t.l1 /= static_cast<double>(data.count());
    t.l2 /= static_cast<double>(data.count());
  }
  return t;
}

SacbfBundle learn_rl(const TransitionDataset& data,
                     const ConstraintSpec& constraints, const RlLearnConfig& cfg) {
  if (cfg.action_grid.cols() < 1)
    throw std::invalid_argument("learn_rl: empty action grid");
  if (cfg.rho <= 0.0) throw std::invalid_argument("learn_rl: rho must be > 0");
  if (cfg.target_refresh < 1)
    throw std::invalid_argument("learn_rl: target_refresh must be >= 1");
  cfg.fit.validate();

  std::vector<int> widths{data.state_dim() + data.input_dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  MlpModel model(widths, cfg.fit.seed, "omega");

  MatrixXd inputs = data.joined_inputs();
  VectorXd h_at_x(data.count());
  for (Eigen::Index i = 0; i < data.count(); ++i)
    h_at_x(i) = constraints.h_learning(data.x.col(i));

  const double rho = cfg.rho;
  SampleLoss loss = [rho](const VectorXd& pred, const VectorXd& target,
                          VectorXd& grad) {
    const double r = pred(0) - target(0);
    grad = VectorXd::Constant(1, 2.0 * r + rho);
    return r * r + rho * pred(0);
  };

  std::vector<double> history;
  Eigen::RowVectorXd targets(data.count());
  TrainConfig step_cfg = cfg.fit;
  step_cfg.epochs = 1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch % cfg.target_refresh == 0) {
      VectorXd inner = min_over_action_grid(model, data.xnext, cfg.action_grid);
      targets = h_at_x.cwiseMax(inner).transpose();
    }
    step_cfg.seed = cfg.fit.seed + static_cast<uint64_t>(epoch);
    step_cfg.learning_rate = cfg.fit.rate_at(epoch);
    FitResult r = fit(model, inputs, targets, step_cfg, loss);
    history.insert(history.end(), r.loss_history.begin(), r.loss_history.end());
    if (!history.empty() && history.back() > 1e6)
      throw TrainingDiverged("learn_rl: loss exceeded 1e6 at epoch " +
                                 std::to_string(epoch),
                             std::move(history));
  }

  model.provenance["method"] = "rl";
  model.provenance["rho"] = format_double(cfg.rho);
  model.provenance["epochs"] = std::to_string(cfg.epochs);

  SacbfBundle bundle;
  bundle.method = SacbfMethod::Rl;
  bundle.beta = 1.0;
  bundle.qb_model = std::move(model);
  bundle.qb = model_qb(*bundle.qb_model);
  bundle.action_grid = cfg.action_grid;
  bundle.epsilon = 0.0;
  bundle.kappa = 0.0;
  bundle.safe_level = 0.0;
  return bundle;
}

}  // namespace sacbf
