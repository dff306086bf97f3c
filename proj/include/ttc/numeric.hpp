#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ttc {

/// Probability clamp applied before any logarithm.
inline constexpr double kProbEps = 1e-12;

/// Default step for central-difference gradient oracles.
inline constexpr double kFiniteDiffStep = 1e-5;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Throws InvalidInput when `data.size() != rows * cols`.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept;

  /// Rows `[begin, begin + count)` copied into a new matrix.
  Matrix slice_rows(std::size_t begin, std::size_t count) const;
  /// Rows picked by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Stable softmax. Entries are clamped to [kProbEps, 1 - kProbEps] and
/// renormalized. Throws InvalidInput on non-finite logits or fewer than two.
std::vector<double> softmax(std::span<const double> logits);

/// Row-wise softmax of an N x K logit matrix.
Matrix softmax_rows(const Matrix& logits);

/// Shannon entropy -sum p log p of a probability vector.
double entropy(std::span<const double> probs);

/// d/dp of the binary entropy -p log p - (1-p) log(1-p), i.e. log((1-p)/p).
/// Throws InvalidInput for p outside [kProbEps, 1 - kProbEps].
double binary_entropy_grad(double p);

/// Gradient of entropy(softmax(z)) with respect to the logits z.
std::vector<double> entropy_grad_logits(std::span<const double> logits);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient of `f` at `x`.
std::vector<double> central_difference(const ScalarFn& f, std::span<const double> x,
                                       double step = kFiniteDiffStep);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|), with the
/// numeric gradient from central differences. Throws InvalidInput for a
/// non-positive step, mismatched sizes, or non-finite evaluations of `f`.
double finite_diff_check(const ScalarFn& f, std::span<const double> analytic,
                         std::span<const double> x, double step = kFiniteDiffStep);

using Trajectory = std::vector<std::vector<double>>;

/// Gradient descent on the logits of a single sample's entropy, starting
/// from `p0`. Entry 0 is `p0`; entry s is the distribution after s steps.
Trajectory simulate_entropy_descent(std::span<const double> p0, double lr, std::size_t steps);

/// Writes `step,p_1,...,p_K` followed by one row per step.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

/// Formats a double with 17 significant digits, enough to round-trip.
std::string format_real(double value);

}  // namespace ttc
