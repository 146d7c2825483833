#pragma once

// Test-only oracles, independent of the library implementation paths they
// check: plain-loop net evaluation, finite differences, tabular value
// iteration for the toy problem.

#include <cmath>
#include <vector>

#include "sacbf/mlp.hpp"

namespace oracles {

using sacbf::MatrixXd;
using sacbf::MlpModel;
using sacbf::VectorXd;

// straight-line scalar re-computation of a tanh net, no Eigen products
inline std::vector<double> plain_forward(const MlpModel& net,
                                         const std::vector<double>& z) {
  std::vector<double> a = z;
  const int layers = net.layer_count();
  for (int l = 0; l < layers; ++l) {
    const auto& W = net.W[l];
    const auto& b = net.b[l];
    std::vector<double> out(static_cast<size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double s = b(i);
      for (Eigen::Index j = 0; j < W.cols(); ++j) s += W(i, j) * a[j];
      out[static_cast<size_t>(i)] = (l + 1 < layers) ? std::tanh(s) : s;
    }
    a = std::move(out);
  }
  return a;
}

// central finite differences of the scalar output w.r.t. parameters
inline VectorXd fd_param_gradient(const MlpModel& net, const VectorXd& z,
                                  double step = 1e-5) {
  MlpModel work = net;
  VectorXd theta = work.flat_parameters();
  VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VectorXd tp = theta, tm = theta;
    tp(i) += step;
    tm(i) -= step;
    work.set_flat_parameters(tp);
    const double fp = work.forward_scalar(z);
    work.set_flat_parameters(tm);
    const double fm = work.forward_scalar(z);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline VectorXd fd_input_gradient(const MlpModel& net, const VectorXd& z,
                                  double step = 1e-5) {
  VectorXd g(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    VectorXd zp = z, zm = z;
    zp(i) += step;
    zm(i) -= step;
    g(i) = (net.forward_scalar(zp) - net.forward_scalar(zm)) / (2.0 * step);
  }
  return g;
}

// max over components of |fd - an| / max(|an|, 1)
inline double gradient_rel_error(const VectorXd& fd, const VectorXd& an) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < fd.size(); ++i)
    worst = std::max(worst,
                     std::abs(fd(i) - an(i)) / std::max(std::abs(an(i)), 1.0));
  return worst;
}

}  // namespace oracles
