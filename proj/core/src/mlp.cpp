#include "sacbf/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace sacbf {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (lr_decay <= 0.0 || lr_decay > 1.0)
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

double TrainConfig::rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, epoch);
}

SampleLoss squared_error_loss() {
  return [](const VectorXd& pred, const VectorXd& target, VectorXd& grad) {
    VectorXd r = pred - target;
    grad = 2.0 * r;
    return r.squaredNorm();
  };
}

MlpModel::MlpModel(std::vector<int> widths, uint64_t seed, std::string tag)
    : param_tag(std::move(tag)), widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("MlpModel needs >= 2 widths");
  for (int w : widths_)
    if (w < 1) throw std::invalid_argument("MlpModel widths must be positive");
  Rng rng(seed);
  const int layers = static_cast<int>(widths_.size()) - 1;
  W.resize(layers);
  b.resize(layers);
  for (int l = 0; l < layers; ++l) {
    const int din = widths_[l], dout = widths_[l + 1];
    const double bound = std::sqrt(6.0 / (din + dout));
    W[l].resize(dout, din);
    for (int i = 0; i < dout; ++i)
      for (int j = 0; j < din; ++j) W[l](i, j) = rng.uniform(-bound, bound);
    b[l] = VectorXd::Zero(dout);
  }
}

size_t MlpModel::parameter_count() const {
  size_t n = 0;
  for (size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
  return n;
}

VectorXd MlpModel::forward(const VectorXd& z) const {
  if (z.size() != input_dim())
    throw std::invalid_argument("forward: input has dimension " +
                                std::to_string(z.size()) + ", expected " +
                                std::to_string(input_dim()));
  VectorXd a = z;
  const int layers = layer_count();
  for (int l = 0; l < layers; ++l) {
    a = (W[l] * a + b[l]).eval();
    if (l + 1 < layers) a = a.array().tanh().matrix();
  }
  return a;
}

double MlpModel::forward_scalar(const VectorXd& z) const {
  if (output_dim() != 1)
    throw std::logic_error("forward_scalar on a net with output_dim != 1");
  return forward(z)(0);
}

MatrixXd MlpModel::forward_batch(const MatrixXd& z) const {
  if (z.rows() != input_dim())
    throw std::invalid_argument("forward_batch: wrong input dimension");
  MatrixXd a = z;
  const int layers = layer_count();
  for (int l = 0; l < layers; ++l) {
    MatrixXd pre = W[l] * a;
    pre.colwise() += b[l];
    if (l + 1 < layers)
      a = pre.array().tanh().matrix();
    else
      a = std::move(pre);
  }
  return a;
}

MlpModel::Gradient MlpModel::backprop(const VectorXd& z, const VectorXd& upstream) const {
  if (z.size() != input_dim())
    throw std::invalid_argument("backprop: wrong input dimension");
  if (upstream.size() != output_dim())
    throw std::invalid_argument("backprop: wrong upstream dimension");
  const int layers = layer_count();
  std::vector<VectorXd> acts(layers + 1);
  acts[0] = z;
  for (int l = 0; l < layers; ++l) {
    VectorXd pre = W[l] * acts[l] + b[l];
    acts[l + 1] = (l + 1 < layers) ? pre.array().tanh().matrix() : pre;
  }

  Gradient g;
  g.params.resize(parameter_count());
  VectorXd delta = upstream;
  // walk layers backwards, writing flat gradient segments in forward order
  std::vector<Eigen::Index> offsets(layers);
  Eigen::Index off = 0;
  for (int l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += W[l].size() + b[l].size();
  }
  for (int l = layers - 1; l >= 0; --l) {
    // dW = delta * a^T, written row-major
    Eigen::Index pos = offsets[l];
    for (Eigen::Index i = 0; i < W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < W[l].cols(); ++j)
        g.params(pos++) = delta(i) * acts[l](j);
    for (Eigen::Index i = 0; i < b[l].size(); ++i) g.params(pos++) = delta(i);
    VectorXd back = W[l].transpose() * delta;
    if (l > 0) back.array() *= 1.0 - acts[l].array().square();
    delta = std::move(back);
  }
  g.input = delta;
  return g;
}

MlpModel::Gradient MlpModel::gradient(const VectorXd& z) const {
  return backprop(z, VectorXd::Ones(1));
}

VectorXd MlpModel::flat_parameters() const {
  VectorXd theta(parameter_count());
  Eigen::Index pos = 0;
  for (size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) theta(pos++) = W[l](i, j);
    for (Eigen::Index i = 0; i < b[l].size(); ++i) theta(pos++) = b[l](i);
  }
  return theta;
}

void MlpModel::set_flat_parameters(const VectorXd& theta) {
  if (static_cast<size_t>(theta.size()) != parameter_count())
    throw std::invalid_argument("set_flat_parameters: size mismatch");
  Eigen::Index pos = 0;
  for (size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) W[l](i, j) = theta(pos++);
    for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l](i) = theta(pos++);
  }
}

namespace {
constexpr char kMagic[8] = {'S', 'A', 'C', 'B', 'F', 'M', 'L', 'P'};
constexpr uint32_t kVersion = 1;
}  // namespace

void MlpModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path);
  out.write(kMagic, 8);
  uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  uint32_t n = static_cast<uint32_t>(widths_.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (int w : widths_) {
    uint32_t w32 = static_cast<uint32_t>(w);
    out.write(reinterpret_cast<const char*>(&w32), 4);
  }
  uint8_t hidden = static_cast<uint8_t>(Activation::Tanh);
  uint8_t output = static_cast<uint8_t>(Activation::Linear);
  uint16_t pad = 0;
  out.write(reinterpret_cast<const char*>(&hidden), 1);
  out.write(reinterpret_cast<const char*>(&output), 1);
  out.write(reinterpret_cast<const char*>(&pad), 2);
  VectorXd theta = flat_parameters();
  out.write(reinterpret_cast<const char*>(theta.data()),
            static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write: " + path);

  nlohmann::json side;
  side["param_tag"] = param_tag;
  side["widths"] = widths_;
  side["hidden_activation"] = "tansig";
  side["output_activation"] = "linear";
  side["provenance"] = provenance;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

MlpModel MlpModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("bad model magic: " + path);
  uint32_t version = 0, n = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw std::runtime_error("unsupported model version in " + path);
  in.read(reinterpret_cast<char*>(&n), 4);
  std::vector<int> widths(n);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t w = 0;
    in.read(reinterpret_cast<char*>(&w), 4);
    widths[i] = static_cast<int>(w);
  }
  uint8_t hidden = 0, output = 0;
  uint16_t pad = 0;
  in.read(reinterpret_cast<char*>(&hidden), 1);
  in.read(reinterpret_cast<char*>(&output), 1);
  in.read(reinterpret_cast<char*>(&pad), 2);
  if (hidden != static_cast<uint8_t>(Activation::Tanh) ||
      output != static_cast<uint8_t>(Activation::Linear))
    throw std::runtime_error("unsupported activation tags in " + path);

  MlpModel model(widths, 0);
  VectorXd theta(model.parameter_count());
  in.read(reinterpret_cast<char*>(theta.data()),
          static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated model file: " + path);
  model.set_flat_parameters(theta);

  if (file_exists(path + ".json")) {
    std::ifstream js(path + ".json");
    nlohmann::json side;
    js >> side;
    model.param_tag = side.value("param_tag", std::string());
    if (side.contains("provenance"))
      model.provenance =
          side["provenance"].get<std::map<std::string, std::string>>();
  }
  return model;
}

SgdState::SgdState(const MlpModel& model) {
  vW.reserve(model.W.size());
  vb.reserve(model.b.size());
  for (size_t l = 0; l < model.W.size(); ++l) {
    vW.push_back(MatrixXd::Zero(model.W[l].rows(), model.W[l].cols()));
    vb.push_back(VectorXd::Zero(model.b[l].size()));
  }
}

void SgdState::apply(MlpModel& model, const std::vector<MatrixXd>& dW,
                     const std::vector<VectorXd>& db, double lr, double momentum) {
  for (size_t l = 0; l < model.W.size(); ++l) {
    vW[l] = momentum * vW[l] - lr * dW[l];
    vb[l] = momentum * vb[l] - lr * db[l];
    model.W[l] += vW[l];
    model.b[l] += vb[l];
  }
}

FitResult fit(MlpModel& model, const MatrixXd& inputs, const MatrixXd& targets,
              const TrainConfig& cfg, const SampleLoss& loss) {
  cfg.validate();
  const Eigen::Index n = inputs.cols();
  if (n < 1) throw std::invalid_argument("fit: empty input batch");
  if (targets.cols() != n) throw std::invalid_argument("fit: inputs/targets mismatch");
  if (inputs.rows() != model.input_dim() || targets.rows() != model.output_dim())
    throw std::invalid_argument("fit: dimension mismatch with model");

  const int layers = model.layer_count();
  const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, n);
  FitResult result;
  result.loss_history.reserve(static_cast<size_t>(cfg.epochs) *
                              ((n + bsz - 1) / bsz));

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);

  SgdState sgd(model);
  std::vector<MatrixXd> acts(layers + 1);
  std::vector<MatrixXd> dW(layers);
  std::vector<VectorXd> db(layers);
  MatrixXd in_batch(inputs.rows(), bsz), tgt_batch(targets.rows(), bsz);
  VectorXd pred, grad;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += bsz) {
      const Eigen::Index cur = std::min(bsz, n - start);
      for (Eigen::Index k = 0; k < cur; ++k) {
        in_batch.col(k) = inputs.col(order[start + k]);
        tgt_batch.col(k) = targets.col(order[start + k]);
      }
      auto in_view = in_batch.leftCols(cur);
      auto tgt_view = tgt_batch.leftCols(cur);

      acts[0] = in_view;
      for (int l = 0; l < layers; ++l) {
        MatrixXd pre = model.W[l] * acts[l];
        pre.colwise() += model.b[l];
        acts[l + 1] = (l + 1 < layers) ? pre.array().tanh().matrix() : std::move(pre);
      }

      MatrixXd delta(model.output_dim(), cur);
      double batch_loss = 0.0;
      for (Eigen::Index k = 0; k < cur; ++k) {
        pred = acts[layers].col(k);
        batch_loss += loss(pred, tgt_view.col(k), grad);
        delta.col(k) = grad;
      }
      batch_loss /= static_cast<double>(cur);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("fit: non-finite loss at epoch " +
                                 std::to_string(epoch));
      result.loss_history.push_back(batch_loss);
      delta /= static_cast<double>(cur);

      for (int l = layers - 1; l >= 0; --l) {
        dW[l] = delta * acts[l].transpose();
        db[l] = delta.rowwise().sum();
        if (l > 0) {
          MatrixXd back = model.W[l].transpose() * delta;
          back.array() *= 1.0 - acts[l].array().square();
          delta = std::move(back);
        }
      }
      sgd.apply(model, dW, db, cfg.rate_at(epoch), cfg.momentum);
    }
  }
  return result;
}

}  // namespace sacbf
