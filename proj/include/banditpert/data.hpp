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
#include <vector>

#include "banditpert/common.hpp"

namespace banditpert {

// K data-generating distributions: unit-norm means with the optimal arm's
// mean equal to the linear reward weight w, all other means orthogonal to w
// and to each other. Samples are mean plus standard normal noise per
// coordinate.
struct ArmSuite {
  int num_arms = 0;       // K
  int dim = 0;            // d
  Eigen::MatrixXd means;  // K x d, one row per arm
  Eigen::VectorXd weight; // w, ||w|| = 1
  int optimal_arm = 0;    // i*, the arm with mean^T w = 1
};

inline ArmSuite make_arm_suite(int num_arms, int dim, std::uint64_t seed) {
  if (num_arms < 2) throw std::invalid_argument("make_arm_suite: K must be >= 2");
  if (dim < num_arms)
    throw std::invalid_argument(
        "make_arm_suite: dimension too small, need d >= K for orthogonal means");

  auto rng = make_rng(seed, rng_stream::suite);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_unit = [&] {
    Eigen::VectorXd v(dim);
    double norm = 0.0;
    do {
      for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
      norm = v.norm();
    } while (norm < 1e-12);
    return Eigen::VectorXd(v / norm);
  };

  ArmSuite suite;
  suite.num_arms = num_arms;
  suite.dim = dim;
  suite.optimal_arm = 0;
  suite.weight = random_unit();
  suite.means.resize(num_arms, dim);
  suite.means.row(0) = suite.weight.transpose();

  // Gram-Schmidt against w and previously placed means.
  for (int i = 1; i < num_arms; ++i) {
    Eigen::VectorXd v;
    double norm = 0.0;
    do {
      v = random_unit();
      for (int j = 0; j < i; ++j)
        v -= suite.means.row(j).dot(v) * suite.means.row(j).transpose();
      norm = v.norm();
    } while (norm < 1e-9);
    suite.means.row(i) = (v / norm).transpose();
  }
  return suite;
}

// Ordered per-arm sample logs; index j within an arm is the j-th pull.
struct LoggedDataset {
  std::vector<Eigen::MatrixXd> arms;  // each n_i x d, one sample per row

  int num_arms() const { return static_cast<int>(arms.size()); }
  int dim() const { return arms.empty() ? 0 : static_cast<int>(arms[0].cols()); }
  int samples(int arm) const { return static_cast<int>(arms.at(arm).rows()); }
};

inline LoggedDataset sample_logged_data(const ArmSuite& suite, int n_per_arm,
                                        std::uint64_t seed) {
  if (n_per_arm < 1)
    throw std::invalid_argument("sample_logged_data: n_per_arm must be >= 1");
  auto rng = make_rng(seed, rng_stream::logged_data);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LoggedDataset data;
  data.arms.reserve(suite.num_arms);
  for (int i = 0; i < suite.num_arms; ++i) {
    Eigen::MatrixXd block(n_per_arm, suite.dim);
    for (int j = 0; j < n_per_arm; ++j)
      for (int k = 0; k < suite.dim; ++k)
        block(j, k) = suite.means(i, k) + gauss(rng);
    data.arms.push_back(std::move(block));
  }
  return data;
}

struct DefenseConfig {
  double fraction = 0.0;  // portion of each arm's log prefix to shuffle
  std::uint64_t seed = 0;
};

// Permutes the first ceil(fraction * n_i) rows of each arm uniformly at
// random; the suffix and the per-arm sample multiset are untouched.
inline LoggedDataset shuffle_defense(const LoggedDataset& data,
                                     const DefenseConfig& cfg) {
  if (cfg.fraction < 0.0 || cfg.fraction > 1.0)
    throw std::invalid_argument("shuffle_defense: fraction must be in [0,1]");
  LoggedDataset out = data;
  if (cfg.fraction == 0.0) return out;
  auto rng = make_rng(cfg.seed, rng_stream::defense);
  for (auto& block : out.arms) {
    const int n = static_cast<int>(block.rows());
    const int prefix = static_cast<int>(std::ceil(cfg.fraction * n));
    std::vector<int> perm(prefix);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(prefix, block.cols());
    for (int j = 0; j < prefix; ++j) shuffled.row(j) = block.row(perm[j]);
    block.topRows(prefix) = shuffled;
  }
  return out;
}

// Flat binary layout: magic, K, d, n_0..n_{K-1} as little-endian int64,
// then per-arm row-major sample blocks of 64-bit floats.
inline void save_dataset(const LoggedDataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  const char magic[8] = {'B', 'P', 'L', 'O', 'G', '0', '1', '\n'};
  os.write(magic, sizeof(magic));
  auto put_i64 = [&](std::int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put_i64(data.num_arms());
  put_i64(data.dim());
  for (const auto& block : data.arms) put_i64(block.rows());
  for (const auto& block : data.arms)
    for (int j = 0; j < block.rows(); ++j)
      for (int k = 0; k < block.cols(); ++k) {
        const double v = block(j, k);
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  if (!os) throw std::runtime_error("save_dataset: write failed: " + path);
}

inline LoggedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, 5) != "BPLOG")
    throw std::runtime_error("load_dataset: bad magic in " + path);
  auto get_i64 = [&] {
    std::int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  const std::int64_t k = get_i64();
  const std::int64_t d = get_i64();
  if (!is || k < 0 || d < 0) throw std::runtime_error("load_dataset: bad header");
  std::vector<std::int64_t> counts(k);
  for (auto& c : counts) c = get_i64();
  LoggedDataset data;
  data.arms.reserve(k);
  for (std::int64_t i = 0; i < k; ++i) {
    Eigen::MatrixXd block(counts[i], d);
    for (int j = 0; j < block.rows(); ++j)
      for (int c = 0; c < block.cols(); ++c) {
        double v;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        block(j, c) = v;
      }
    data.arms.push_back(std::move(block));
  }
  if (!is) throw std::runtime_error("load_dataset: truncated file " + path);
  return data;
}

}  // namespace banditpert
