#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ttc/network.hpp"
#include "ttc/numeric.hpp"

namespace ttc::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

/// He-initialized MLP with BN gamma/beta and running stats perturbed away
/// from identity so every gradient path is exercised.
inline Network random_network(std::size_t input, std::vector<std::size_t> hidden, std::size_t k,
                              std::uint64_t seed) {
  Network net = Network::make_mlp(input, hidden, k, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> n(0.0, 0.3);
  for (std::size_t i = 0; i < net.bn_count(); ++i) {
    auto& bn = net.bn(i);
    for (std::size_t f = 0; f < bn.features(); ++f) {
      bn.gamma[f] = u(rng);
      bn.beta[f] = n(rng);
      bn.running_mean[f] = n(rng);
      bn.running_var[f] = u(rng);
    }
  }
  return net;
}

/// Maximum |a - b| over paired entries.
inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Independent entropy: plain loop over -p log p with no clamping.
inline double naive_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline std::vector<double> naive_softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace ttc::testing
