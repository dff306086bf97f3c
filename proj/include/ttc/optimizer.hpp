#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ttc {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

/// Plain SGD or bias-corrected Adam over a flat parameter vector. Adam
/// moments start at zero and persist across steps.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

  Optimizer(OptimizerKind kind, double lr, std::size_t num_params);

  void step(std::span<double> params, std::span<const double> grads);

  OptimizerKind kind() const noexcept { return kind_; }
  double lr() const noexcept { return lr_; }
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace ttc
