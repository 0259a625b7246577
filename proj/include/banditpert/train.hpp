#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "banditpert/common.hpp"
#include "banditpert/data.hpp"
#include "banditpert/reward.hpp"

namespace banditpert {

struct TrainConfig {
  std::vector<int> hidden_widths = {1000};
  int epochs = 100;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpReward model;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

namespace detail {

// Batched forward pass; returns predictions and fills the per-layer
// activations needed for the backward pass.
inline Eigen::VectorXd mlp_forward_batch(const MlpReward& model,
                                         const Eigen::MatrixXd& x,
                                         std::vector<Eigen::MatrixXd>* pre,
                                         std::vector<Eigen::MatrixXd>* post) {
  const auto& widths = model.widths();
  const int layers = model.num_affine_layers();
  Eigen::MatrixXd z = x;
  if (pre) pre->resize(layers);
  if (post) post->resize(layers);
  for (int l = 0; l < layers; ++l) {
    const int in = widths[l], out = widths[l + 1];
    Eigen::Map<const RowMajorMatrix> w(model.theta().data() + model.weight_offset(l),
                                       out, in);
    Eigen::Map<const Eigen::VectorXd> b(model.theta().data() + model.bias_offset(l),
                                        out);
    Eigen::MatrixXd a = z * w.transpose();
    a.rowwise() += b.transpose();
    if (pre) (*pre)[l] = a;
    if (l + 1 < layers) a = a.cwiseMax(0.0);
    if (post) (*post)[l] = a;
    z = std::move(a);
  }
  return z.col(0);
}

inline double mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

}  // namespace detail

// Fits a ReLU network to the linear teacher y = x^T mu_{i*} with adaptive
// moment updates on mean-squared error. All parameters are trainable; the
// returned mask marks every coordinate attackable.
inline TrainResult train_mlp(const LoggedDataset& data, const ArmSuite& suite,
                             const TrainConfig& cfg) {
  int total = 0;
  for (int i = 0; i < data.num_arms(); ++i) total += data.samples(i);
  if (total == 0 || data.num_arms() == 0)
    throw std::invalid_argument("train_mlp: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size < 1)
    throw std::invalid_argument("train_mlp: bad config");

  const int d = data.dim();
  Eigen::MatrixXd x(total, d);
  int row = 0;
  for (const auto& block : data.arms) {
    x.middleRows(row, block.rows()) = block;
    row += static_cast<int>(block.rows());
  }
  const Eigen::VectorXd labels =
      x * suite.means.row(suite.optimal_arm).transpose();

  auto rng = make_rng(cfg.seed, rng_stream::train);
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_val = static_cast<int>(cfg.validation_fraction * total);
  const int n_train = total - n_val;
  if (n_train < 1) throw std::invalid_argument("train_mlp: no training samples");

  auto gather = [&](int begin, int count) {
    Eigen::MatrixXd xs(count, d);
    Eigen::VectorXd ys(count);
    for (int i = 0; i < count; ++i) {
      xs.row(i) = x.row(order[begin + i]);
      ys(i) = labels(order[begin + i]);
    }
    return std::make_pair(xs, ys);
  };
  auto [x_train, y_train] = gather(0, n_train);
  auto [x_val, y_val] = gather(n_train, n_val);

  std::vector<int> widths;
  widths.push_back(d);
  for (int w : cfg.hidden_widths) widths.push_back(w);
  widths.push_back(1);

  // Same init scheme as random_mlp, every parameter trainable.
  MlpReward model = [&] {
    MlpReward init = random_mlp(widths, cfg.seed, 0);
    std::vector<std::uint8_t> all(init.param_count(), 1);
    return MlpReward(widths, init.theta(), std::move(all));
  }();

  const int n_params = model.param_count();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd grad(n_params);
  std::vector<int> batch_order(n_train);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      Eigen::MatrixXd xb(bsz, d);
      Eigen::VectorXd yb(bsz);
      for (int i = 0; i < bsz; ++i) {
        xb.row(i) = x_train.row(batch_order[start + i]);
        yb(i) = y_train(batch_order[start + i]);
      }

      std::vector<Eigen::MatrixXd> pre, post;
      const Eigen::VectorXd pred = detail::mlp_forward_batch(model, xb, &pre, &post);

      grad.setZero();
      const int layers = model.num_affine_layers();
      Eigen::MatrixXd upstream =
          (2.0 / bsz) * (pred - yb);  // d MSE / d output, column
      for (int l = layers - 1; l >= 0; --l) {
        const int in = widths[l], out = widths[l + 1];
        const Eigen::MatrixXd& below = (l == 0) ? xb : post[l - 1];
        Eigen::Map<RowMajorMatrix> gw(grad.data() + model.weight_offset(l), out, in);
        gw.noalias() = upstream.transpose() * below;
        grad.segment(model.bias_offset(l), out) = upstream.colwise().sum();
        if (l > 0) {
          Eigen::Map<const RowMajorMatrix> w(
              model.theta().data() + model.weight_offset(l), out, in);
          Eigen::MatrixXd dz = upstream * w;
          upstream = dz.cwiseProduct(
              (pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
      }

      ++step;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      model.mutable_theta() -=
          (cfg.learning_rate * (m / c1).array() /
           ((v / c2).array().sqrt() + cfg.adam_eps))
              .matrix();
    }
  }

  TrainResult result{std::move(model), 0.0, 0.0};
  result.train_loss = detail::mse(
      detail::mlp_forward_batch(result.model, x_train, nullptr, nullptr), y_train);
  result.validation_loss =
      n_val > 0 ? detail::mse(detail::mlp_forward_batch(result.model, x_val,
                                                        nullptr, nullptr),
                              y_val)
                : 0.0;
  return result;
}

}  // namespace banditpert
