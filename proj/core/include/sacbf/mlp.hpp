#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sacbf/util.hpp"

namespace sacbf {

enum class Activation : uint8_t { Tanh = 0, Linear = 1 };

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;    // in [0, 1)
  double lr_decay = 1.0;    // multiplicative per epoch, in (0, 1]
  int batch_size = 64;
  int epochs = 10;
  uint64_t seed = 0;

  void validate() const;
  double rate_at(int epoch) const;
};

// Per-sample loss: fills dloss/dpred and returns the loss value.
using SampleLoss = std::function<double(const VectorXd& pred, const VectorXd& target,
                                        VectorXd& grad)>;
SampleLoss squared_error_loss();

// Dense feed-forward net, tanh hidden layers, linear output. Weights are
// plain members; construction seeds a uniform +-sqrt(6/(din+dout)) init.
class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<int> widths, uint64_t seed, std::string tag = "");

  int input_dim() const { return widths_.empty() ? 0 : widths_.front(); }
  int output_dim() const { return widths_.empty() ? 0 : widths_.back(); }
  const std::vector<int>& layer_widths() const { return widths_; }
  int layer_count() const { return static_cast<int>(W.size()); }
  size_t parameter_count() const;

  VectorXd forward(const VectorXd& z) const;
  double forward_scalar(const VectorXd& z) const;
  // columns are samples
  MatrixXd forward_batch(const MatrixXd& z) const;

  struct Gradient {
    VectorXd params;  // flattened per layer: W row-major, then b
    VectorXd input;
  };
  // gradients of dot(upstream, output) w.r.t. parameters and input
  Gradient backprop(const VectorXd& z, const VectorXd& upstream) const;
  // scalar-output convenience: upstream = [1]
  Gradient gradient(const VectorXd& z) const;

  VectorXd flat_parameters() const;
  void set_flat_parameters(const VectorXd& theta);

  void save(const std::string& path) const;
  static MlpModel load(const std::string& path);

  std::vector<Eigen::MatrixXd> W;  // W[l]: widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> b;
  std::string param_tag;
  std::map<std::string, std::string> provenance;  // written to the JSON sidecar

 private:
  std::vector<int> widths_;
};

// Momentum-SGD state shared by fit() and the custom learners.
struct SgdState {
  std::vector<MatrixXd> vW;
  std::vector<VectorXd> vb;
  explicit SgdState(const MlpModel& model);
  void apply(MlpModel& model, const std::vector<MatrixXd>& dW,
             const std::vector<VectorXd>& db, double lr, double momentum);
};

struct FitResult {
  std::vector<double> loss_history;  // one entry per mini-batch
};

// Mini-batch SGD with momentum; batch order is reshuffled each epoch from
// cfg.seed, so identical seeds give identical histories. Throws on a
// non-finite batch loss, reporting the epoch index.
FitResult fit(MlpModel& model, const MatrixXd& inputs, const MatrixXd& targets,
              const TrainConfig& cfg, const SampleLoss& loss = squared_error_loss());

}  // namespace sacbf
