#include "ttc/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "ttc/error.hpp"

namespace ttc {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InvalidInput("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + " x " + std::to_string(cols_));
  }
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) throw InvalidInput("row slice out of range");
  Matrix out(count, cols_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_,
              out.data_.begin());
  return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw InvalidInput("row index out of range");
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidInput("softmax needs at least two logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit");
  }
  const double shift = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - shift);
    total += p[k];
  }
  bool clamped = false;
  for (double& v : p) {
    v /= total;
    if (v < kProbEps) {
      v = kProbEps;
      clamped = true;
    } else if (v > 1.0 - kProbEps) {
      v = 1.0 - kProbEps;
      clamped = true;
    }
  }
  if (clamped) {
    double s = 0.0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
  }
  return p;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = softmax(logits.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) h -= p * std::log(std::max(p, kProbEps));
  return std::max(h, 0.0);
}

double binary_entropy_grad(double p) {
  if (!(p >= kProbEps && p <= 1.0 - kProbEps)) {
    throw InvalidInput("binary_entropy_grad: p outside [eps, 1 - eps]");
  }
  return std::log((1.0 - p) / p);
}

std::vector<double> entropy_grad_logits(std::span<const double> logits) {
  // dH/dz_k = -p_k (log p_k + H)
  const auto p = softmax(logits);
  const double h = entropy(p);
  std::vector<double> grad(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) grad[k] = -p[k] * (std::log(p[k]) + h);
  return grad;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(
      std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

std::vector<double> central_difference(const ScalarFn& f, std::span<const double> x,
                                       double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw InvalidInput("finite difference step must be positive");
  }
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(probe);
    probe[i] = saved - step;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw InvalidInput("finite difference: non-finite function value");
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double finite_diff_check(const ScalarFn& f, std::span<const double> analytic,
                         std::span<const double> x, double step) {
  if (analytic.size() != x.size()) {
    throw InvalidInput("finite_diff_check: gradient and point sizes differ");
  }
  const auto numeric = central_difference(f, x, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

Trajectory simulate_entropy_descent(std::span<const double> p0, double lr, std::size_t steps) {
  if (!(lr > 0.0)) throw InvalidInput("simulate_entropy_descent: lr must be positive");
  if (p0.size() < 2) throw InvalidInput("simulate_entropy_descent: need K >= 2");
  Trajectory traj;
  traj.reserve(steps + 1);
  traj.emplace_back(p0.begin(), p0.end());
  std::vector<double> z(p0.size());
  for (std::size_t k = 0; k < p0.size(); ++k) {
    if (!(p0[k] > 0.0)) throw InvalidInput("simulate_entropy_descent: probabilities must be > 0");
    z[k] = std::log(p0[k]);
  }
  for (std::size_t s = 0; s < steps; ++s) {
    const auto g = entropy_grad_logits(z);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] -= lr * g[k];
    traj.push_back(softmax(z));
  }
  return traj;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const std::size_t k = trajectory.empty() ? 0 : trajectory.front().size();
  out << "step";
  for (std::size_t j = 1; j <= k; ++j) out << ",p_" << j;
  out << '\n';
  for (std::size_t s = 0; s < trajectory.size(); ++s) {
    out << s;
    for (double v : trajectory[s]) out << ',' << format_real(v);
    out << '\n';
  }
}

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace ttc
