#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>

#include "support.hpp"
#include "ttc/error.hpp"
#include "ttc/numeric.hpp"

using namespace ttc;
using ttc::testing::naive_entropy;
using ttc::testing::random_vector;

TEST(Matrix, RejectsWrongDataLength) {
  EXPECT_THROW(Matrix(2, 3, std::vector<double>(5)), InvalidInput);
  Matrix m(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m(1, 0), 4.0);
  EXPECT_EQ(m.row(1)[2], 6.0);
}

TEST(Matrix, SliceAndGather) {
  Matrix m(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.slice_rows(1, 2), Matrix(2, 2, std::vector<double>{3, 4, 5, 6}));
  std::vector<std::size_t> idx = {2, 0};
  EXPECT_EQ(m.gather_rows(idx), Matrix(2, 2, std::vector<double>{5, 6, 1, 2}));
  m(0, 0) = NAN;
  EXPECT_FALSE(m.all_finite());
}

TEST(Softmax, UniformLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0, 0});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, TwoClassLogistic) {
  for (double c : {-3.0, 0.0, 0.7, 5.0}) {
    const auto p = softmax(std::vector<double>{1.3, 1.3 + c});
    EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(-c)), 1e-15);
  }
  const auto half = softmax(std::vector<double>{2.0, 2.0});
  EXPECT_EQ(half[0], 0.5);
  EXPECT_EQ(half[1], 0.5);
}

TEST(Softmax, ReferenceValues) {
  // Evaluated independently at higher precision.
  const auto p = softmax(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(p[0], 0.09003057, 1e-5);
  EXPECT_NEAR(p[1], 0.24472847, 1e-5);
  EXPECT_NEAR(p[2], 0.66524096, 1e-5);
}

TEST(Softmax, RejectsBadInput) {
  EXPECT_THROW(softmax(std::vector<double>{0.0, NAN}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{INFINITY, 0.0}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0}), InvalidInput);
}

TEST(Softmax, ClampsExtremeLogits) {
  const auto p = softmax(std::vector<double>{0.0, 1000.0});
  EXPECT_GE(p[0], kProbEps * 0.99);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick_k(2, 60);
  for (int trial = 0; trial < 500; ++trial) {
    auto z = random_vector(pick_k(rng), rng, 4.0);
    const auto p = softmax(z);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double& v : z) v += 17.25;
    const auto q = softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Entropy, UniformIsLogK) {
  EXPECT_NEAR(entropy(std::vector<double>(10, 0.1)), std::log(10.0), 1e-12);
  EXPECT_NEAR(std::log(10.0), 2.302585, 1e-6);
}

TEST(Entropy, ReferenceValue) {
  // -0.9 log 0.9 - 0.1 log 0.1, evaluated independently.
  EXPECT_NEAR(entropy(std::vector<double>{0.9, 0.1}), 0.3250829733914482, 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.9, 0.1}), 0.325083, 1e-5);
}

TEST(Entropy, VanishesNearOneHot) {
  double previous = INFINITY;
  for (double eps : {1e-1, 1e-3, 1e-6, 1e-9}) {
    std::vector<double> p(5, eps / 4.0);
    p[0] = 1.0 - eps;
    const double h = entropy(p);
    EXPECT_LT(h, previous);
    previous = h;
  }
  EXPECT_LT(previous, 1e-7);
}

TEST(Entropy, BoundedByLogK) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + trial % 40;
    const auto p = softmax(random_vector(k, rng, 2.0));
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LT(h, std::log(static_cast<double>(k)) - 1e-9);
    EXPECT_NEAR(h, naive_entropy(p), 1e-12);
  }
  for (std::size_t k : {2u, 7u, 100u}) {
    std::vector<double> u(k, 1.0 / static_cast<double>(k));
    EXPECT_NEAR(entropy(u), std::log(static_cast<double>(k)), 1e-9);
  }
}

TEST(BinaryEntropyGrad, ReferenceValues) {
  EXPECT_EQ(binary_entropy_grad(0.5), 0.0);
  EXPECT_NEAR(binary_entropy_grad(0.9), -2.1972245773362196, 1e-12);
  EXPECT_NEAR(binary_entropy_grad(0.1), 2.1972245773362196, 1e-12);
}

TEST(BinaryEntropyGrad, SignAndAntisymmetryOnGrid) {
  for (int i = 1; i <= 10000; ++i) {
    const double p = static_cast<double>(i) / 10001.0;
    const double g = binary_entropy_grad(p);
    EXPECT_EQ(g < 0.0, p > 0.5) << "p=" << p;
    EXPECT_NEAR(g, -binary_entropy_grad(1.0 - p), 1e-9);
  }
}

TEST(BinaryEntropyGrad, MatchesDerivativeOfBinaryEntropy) {
  const ScalarFn h = [](std::span<const double> x) {
    return -x[0] * std::log(x[0]) - (1.0 - x[0]) * std::log(1.0 - x[0]);
  };
  for (double p : {0.05, 0.3, 0.62, 0.97}) {
    const std::vector<double> x = {p};
    const std::vector<double> g = {binary_entropy_grad(p)};
    EXPECT_LT(finite_diff_check(h, g, x), 1e-8);
  }
}

TEST(BinaryEntropyGrad, RejectsOutOfDomain) {
  EXPECT_THROW(binary_entropy_grad(0.0), InvalidInput);
  EXPECT_THROW(binary_entropy_grad(1.0), InvalidInput);
  EXPECT_THROW(binary_entropy_grad(-0.2), InvalidInput);
  EXPECT_THROW(binary_entropy_grad(NAN), InvalidInput);
}

TEST(EntropyGradLogits, ZeroAtUniform) {
  for (double v : entropy_grad_logits(std::vector<double>{0.4, 0.4, 0.4})) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(EntropyGradLogits, LargestClassComponentIsNegative) {
  const auto g = entropy_grad_logits(std::vector<double>{2.0, 0.0});
  EXPECT_LT(g[0], 0.0);
  EXPECT_GT(g[1], 0.0);
}

TEST(EntropyGradLogits, MatchesCentralDifferences) {
  const ScalarFn h = [](std::span<const double> z) { return entropy(softmax(z)); };
  std::mt19937_64 rng(5);
  for (std::size_t k : {2u, 10u, 50u}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto z = random_vector(k, rng, 1.5);
      const auto g = entropy_grad_logits(z);
      EXPECT_LT(finite_diff_check(h, g, z), 1e-5);
      EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 0.0, 1e-12);
      EXPECT_LT(g[argmax(z)], 0.0);
    }
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{-1}), 0u);
}

TEST(FiniteDiffCheck, LinearFunctionIsExact) {
  const ScalarFn sum = [](std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0);
  };
  std::mt19937_64 rng(8);
  const auto x = random_vector(6, rng);
  const std::vector<double> ones(6, 1.0);
  EXPECT_LT(finite_diff_check(sum, ones, x), 1e-10);
}

TEST(FiniteDiffCheck, ReportsRelativeError) {
  const ScalarFn sq = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x = {3.0};
  const std::vector<double> wrong = {7.0};
  EXPECT_NEAR(finite_diff_check(sq, wrong, x), 1.0 / 7.0, 1e-8);
  const std::vector<double> small = {0.5};
  const std::vector<double> at = {0.0};
  EXPECT_NEAR(finite_diff_check(sq, small, at), 0.5, 1e-8);
}

TEST(FiniteDiffCheck, RejectsDegenerateArguments) {
  const ScalarFn sum = [](std::span<const double> x) { return x[0]; };
  const std::vector<double> x = {1.0};
  const std::vector<double> g = {1.0};
  EXPECT_THROW(finite_diff_check(sum, g, x, 0.0), InvalidInput);
  EXPECT_THROW(finite_diff_check(sum, g, x, -1e-5), InvalidInput);
  const std::vector<double> two = {1.0, 1.0};
  EXPECT_THROW(finite_diff_check(sum, two, x), InvalidInput);
  const ScalarFn bad = [](std::span<const double>) { return NAN; };
  EXPECT_THROW(finite_diff_check(bad, g, x), InvalidInput);
}

TEST(EntropyDescent, BinaryStartRisesMonotonically) {
  const std::vector<double> p0 = {0.6, 0.4};
  const auto traj = simulate_entropy_descent(p0, 0.05, 2000);
  ASSERT_EQ(traj.size(), 2001u);
  EXPECT_EQ(traj[0], p0);
  for (std::size_t s = 1; s < traj.size(); ++s) EXPECT_GT(traj[s][0], traj[s - 1][0]) << s;
  EXPECT_GT(traj.back()[0], 0.99);
}

TEST(EntropyDescent, UniformIsStationary) {
  const std::vector<double> p0(4, 0.25);
  const auto traj = simulate_entropy_descent(p0, 0.05, 100);
  for (const auto& p : traj) {
    for (double v : p) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(EntropyDescent, ThreeClassStartSaturates) {
  const std::vector<double> p0 = {0.4, 0.35, 0.25};
  const auto traj = simulate_entropy_descent(p0, 0.05, 5000);
  for (std::size_t s = 1; s < traj.size(); ++s) {
    const double prev = *std::max_element(traj[s - 1].begin(), traj[s - 1].end());
    const double cur = *std::max_element(traj[s].begin(), traj[s].end());
    ASSERT_GE(cur, prev) << s;
  }
  EXPECT_GE(traj.back()[0], 0.999);
}

TEST(EntropyDescent, OneStepNeverLowersTheLargestProbability) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> pick_k(2, 100);
  std::exponential_distribution<double> expo(1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(pick_k(rng));
    double total = 0.0;
    for (double& v : p) total += (v = expo(rng) + 1e-9);
    for (double& v : p) v /= total;
    const std::size_t m = argmax(p);
    std::vector<double> sorted = p;
    std::sort(sorted.rbegin(), sorted.rend());
    const auto traj = simulate_entropy_descent(p, 0.01, 1);
    EXPECT_GE(traj[1][m], traj[0][m]);
    if (sorted[0] - sorted[1] > 1e-6) EXPECT_GT(traj[1][m], traj[0][m]);
  }
}

TEST(EntropyDescent, RejectsNonPositiveRate) {
  const std::vector<double> p0 = {0.6, 0.4};
  EXPECT_THROW(simulate_entropy_descent(p0, 0.0, 3), InvalidInput);
}

TEST(TrajectoryCsv, HeaderAndRows) {
  const std::vector<double> p0 = {0.6, 0.3, 0.1};
  const auto traj = simulate_entropy_descent(p0, 0.05, 2);
  std::ostringstream out;
  write_trajectory_csv(out, traj);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,p_1,p_2,p_3");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("0,", 0), 0u);
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(FormatReal, RoundTripsBitExactly) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(random_vector(1, rng)[0], static_cast<int>(i % 80) - 40);
    EXPECT_EQ(std::strtod(format_real(v).c_str(), nullptr), v);
  }
}
