#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "banditpert/common.hpp"

namespace banditpert {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LinearReward {
  Eigen::VectorXd weight;
};

// Additive change to a model's free parameters: d entries for a linear
// model, one entry per unmasked theta coordinate for an MLP.
struct Perturbation {
  Eigen::VectorXd values;

  static Perturbation zero(int n) { return {Eigen::VectorXd::Zero(n)}; }
  double l2() const { return values.norm(); }
  double linf() const {
    return values.size() ? values.lpNorm<Eigen::Infinity>() : 0.0;
  }
};

// Feedforward ReLU network with a scalar output. Parameters are stored flat,
// layer by layer, weights before biases within a layer; each weight matrix is
// row-major (row r = incoming weights of output unit r). Layer l maps
// widths[l] -> widths[l+1]; the last layer has no activation. A network with
// widths {d, 1} is a plain affine map.
class MlpReward {
 public:
  MlpReward() = default;

  MlpReward(std::vector<int> widths, Eigen::VectorXd theta,
            std::vector<std::uint8_t> trainable_mask)
      : widths_(std::move(widths)),
        theta_(std::move(theta)),
        mask_(std::move(trainable_mask)) {
    if (widths_.size() < 2)
      throw std::invalid_argument("mlp: need at least input and output widths");
    for (int w : widths_)
      if (w < 1) throw std::invalid_argument("mlp: widths must be positive");
    if (widths_.back() != 1)
      throw std::invalid_argument("mlp: output width must be 1");
    const int layers = num_affine_layers();
    weight_off_.resize(layers);
    bias_off_.resize(layers);
    int off = 0;
    for (int l = 0; l < layers; ++l) {
      weight_off_[l] = off;
      off += widths_[l] * widths_[l + 1];
      bias_off_[l] = off;
      off += widths_[l + 1];
    }
    if (theta_.size() != off)
      throw std::invalid_argument("mlp: theta size does not match widths");
    if (mask_.size() != static_cast<std::size_t>(off))
      throw std::invalid_argument("mlp: mask size does not match theta");
    if (!theta_.allFinite())
      throw std::invalid_argument("mlp: non-finite parameters");
    free_count_ = 0;
    for (auto m : mask_) free_count_ += m ? 1 : 0;
  }

  static int param_count_for(const std::vector<int>& widths) {
    int off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      off += widths[l] * widths[l + 1] + widths[l + 1];
    return off;
  }

  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  int num_affine_layers() const { return static_cast<int>(widths_.size()) - 1; }
  int num_hidden_layers() const { return num_affine_layers() - 1; }
  const Eigen::VectorXd& theta() const { return theta_; }
  Eigen::VectorXd& mutable_theta() { return theta_; }
  const std::vector<std::uint8_t>& trainable_mask() const { return mask_; }
  int param_count() const { return static_cast<int>(theta_.size()); }
  int free_param_count() const { return free_count_; }
  int weight_offset(int layer) const { return weight_off_.at(layer); }
  int bias_offset(int layer) const { return bias_off_.at(layer); }

  double value(const Eigen::VectorXd& x) const { return value_with(theta_, x); }

  double value_with(const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& x) const {
    if (x.size() != input_dim())
      throw std::invalid_argument("mlp: input dimension mismatch");
    Eigen::VectorXd z = x;
    const int layers = num_affine_layers();
    for (int l = 0; l < layers; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      Eigen::Map<const RowMajorMatrix> w(theta.data() + weight_off_[l], out, in);
      Eigen::Map<const Eigen::VectorXd> b(theta.data() + bias_off_[l], out);
      Eigen::VectorXd a = w * z + b;
      if (l + 1 < layers) a = a.cwiseMax(0.0);  // ReLU, derivative 0 at the kink
      z = std::move(a);
    }
    return z(0);
  }

  // Scatters a free-parameter perturbation into the full theta vector.
  Eigen::VectorXd perturbed_theta(const Perturbation& delta) const {
    if (delta.values.size() != free_count_)
      throw std::invalid_argument("mlp: perturbation dimension mismatch");
    Eigen::VectorXd full = theta_;
    int k = 0;
    for (int i = 0; i < param_count(); ++i)
      if (mask_[i]) full(i) += delta.values(k++);
    return full;
  }

  // Exact gradient of the scalar output w.r.t. every parameter at theta.
  Eigen::VectorXd full_gradient(const Eigen::VectorXd& x) const {
    if (x.size() != input_dim())
      throw std::invalid_argument("mlp: input dimension mismatch");
    const int layers = num_affine_layers();
    std::vector<Eigen::VectorXd> post(layers);      // post-activation outputs
    std::vector<Eigen::VectorXd> pre(layers);       // pre-activation values
    Eigen::VectorXd z = x;
    for (int l = 0; l < layers; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      Eigen::Map<const RowMajorMatrix> w(theta_.data() + weight_off_[l], out, in);
      Eigen::Map<const Eigen::VectorXd> b(theta_.data() + bias_off_[l], out);
      pre[l] = w * z + b;
      post[l] = (l + 1 < layers) ? pre[l].cwiseMax(0.0) : pre[l];
      z = post[l];
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count());
    Eigen::VectorXd upstream = Eigen::VectorXd::Ones(1);  // d out / d a_last
    for (int l = layers - 1; l >= 0; --l) {
      const int in = widths_[l], out = widths_[l + 1];
      const Eigen::VectorXd& below = (l == 0) ? x : post[l - 1];
      Eigen::Map<RowMajorMatrix> gw(grad.data() + weight_off_[l], out, in);
      gw.noalias() = upstream * below.transpose();
      grad.segment(bias_off_[l], out) = upstream;
      if (l > 0) {
        Eigen::Map<const RowMajorMatrix> w(theta_.data() + weight_off_[l], out,
                                           in);
        Eigen::VectorXd dz = w.transpose() * upstream;
        upstream =
            dz.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    return grad;
  }

  Eigen::VectorXd masked_gradient(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd full = full_gradient(x);
    Eigen::VectorXd out(free_count_);
    int k = 0;
    for (int i = 0; i < param_count(); ++i)
      if (mask_[i]) out(k++) = full(i);
    return out;
  }

 private:
  std::vector<int> widths_;
  std::vector<int> weight_off_, bias_off_;
  Eigen::VectorXd theta_;
  std::vector<std::uint8_t> mask_;
  int free_count_ = 0;
};

inline double eval_reward(const LinearReward& model, const Perturbation& delta,
                          const Eigen::VectorXd& x) {
  if (model.weight.size() != x.size() || delta.values.size() != x.size())
    throw std::invalid_argument("eval_reward: dimension mismatch");
  return (model.weight + delta.values).dot(x);
}

inline double eval_reward(const MlpReward& model, const Perturbation& delta,
                          const Eigen::VectorXd& x) {
  return model.value_with(model.perturbed_theta(delta), x);
}

// Embedding of x in the network's tangent space, restricted to the
// attackable coordinates.
inline Eigen::VectorXd param_gradient(const MlpReward& model,
                                      const Eigen::VectorXd& x) {
  return model.masked_gradient(x);
}

// |NN_{theta+delta}(x) - NN_theta(x) - grad^T delta|: how far the network is
// from affine in its parameters at this perturbation.
inline double linearization_error(const MlpReward& model,
                                  const Perturbation& delta,
                                  const Eigen::VectorXd& x) {
  const double perturbed = eval_reward(model, delta, x);
  const double base = model.value(x);
  const double linear = param_gradient(model, x).dot(delta.values);
  return std::abs(perturbed - base - linear);
}

// Random network with 1/sqrt(fan-in) Gaussian weights, zero biases, and only
// one layer's weight matrix attackable. attack_layer indexes affine layers
// from 0 (the input map).
inline MlpReward random_mlp(const std::vector<int>& widths, std::uint64_t seed,
                            int attack_layer = 0) {
  const int total = MlpReward::param_count_for(widths);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(total);
  std::vector<std::uint8_t> mask(total, 0);
  auto rng = make_rng(seed, rng_stream::model_init);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int off = 0;
  const int layers = static_cast<int>(widths.size()) - 1;
  if (attack_layer < 0 || attack_layer >= layers)
    throw std::invalid_argument("random_mlp: attack_layer out of range");
  for (int l = 0; l < layers; ++l) {
    const int in = widths[l], out = widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in * out; ++i) theta(off + i) = scale * gauss(rng);
    if (l == attack_layer)
      std::fill(mask.begin() + off, mask.begin() + off + in * out, 1);
    off += in * out;
    off += out;  // biases stay zero
  }
  return MlpReward(widths, std::move(theta), std::move(mask));
}

// Checkpoint: magic, widths, per-parameter mask bytes, then the flat
// parameter block. Round-trips bit-exactly.
inline void save_model(const MlpReward& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  const char magic[8] = {'B', 'P', 'M', 'L', 'P', '0', '1', '\n'};
  os.write(magic, sizeof(magic));
  auto put_i64 = [&](std::int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put_i64(static_cast<std::int64_t>(model.widths().size()));
  for (int w : model.widths()) put_i64(w);
  os.write(reinterpret_cast<const char*>(model.trainable_mask().data()),
           static_cast<std::streamsize>(model.trainable_mask().size()));
  os.write(reinterpret_cast<const char*>(model.theta().data()),
           static_cast<std::streamsize>(model.theta().size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_model: write failed: " + path);
}

inline MlpReward load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, 5) != "BPMLP")
    throw std::runtime_error("load_model: bad magic in " + path);
  auto get_i64 = [&] {
    std::int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  const std::int64_t n_widths = get_i64();
  if (!is || n_widths < 2 || n_widths > 64)
    throw std::runtime_error("load_model: bad header");
  std::vector<int> widths(n_widths);
  for (auto& w : widths) w = static_cast<int>(get_i64());
  const int total = MlpReward::param_count_for(widths);
  std::vector<std::uint8_t> mask(total);
  is.read(reinterpret_cast<char*>(mask.data()), total);
  Eigen::VectorXd theta(total);
  is.read(reinterpret_cast<char*>(theta.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (!is) throw std::runtime_error("load_model: truncated file " + path);
  return MlpReward(widths, std::move(theta), std::move(mask));
}

}  // namespace banditpert
