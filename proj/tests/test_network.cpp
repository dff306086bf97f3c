#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"
#include "ttc/adaptation.hpp"
#include "ttc/error.hpp"
#include "ttc/network.hpp"

using namespace ttc;
using ttc::testing::random_matrix;
using ttc::testing::random_network;

namespace {

double weighted_logit_sum(const Network& net, const Matrix& x, const Matrix& g, BNMode mode) {
  const auto logits = forward(net, x, mode).logits;
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits.data()[i] * g.data()[i];
  return s;
}

DenseLayer make_dense(const Matrix& w, std::vector<double> b, Activation act) {
  return DenseLayer{w, std::move(b), act};
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ttc_network_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Network, RejectsInconsistentLayers) {
  std::mt19937_64 rng(1);
  const auto w1 = random_matrix(4, 3, rng);
  const auto w2 = random_matrix(2, 5, rng);
  std::vector<Layer> bad = {make_dense(w1, std::vector<double>(4), Activation::Identity),
                            BatchNormLayer::identity(4), make_dense(w2, std::vector<double>(2),
                                                                    Activation::Identity)};
  EXPECT_THROW(Network{bad}, SchemaError);
  std::vector<Layer> no_bn = {make_dense(w1, std::vector<double>(4), Activation::Identity)};
  EXPECT_THROW(Network{no_bn}, SchemaError);
  std::vector<Layer> one_class = {BatchNormLayer::identity(3),
                                  make_dense(random_matrix(1, 3, rng), {0.0}, Activation::Identity)};
  EXPECT_THROW(Network{one_class}, SchemaError);
  EXPECT_THROW(Network{std::vector<Layer>{}}, SchemaError);
}

TEST(Network, MlpShape) {
  const std::vector<std::size_t> hidden = {64, 64};
  const auto net = Network::make_mlp(32, hidden, 3, 0);
  EXPECT_EQ(net.input_dim(), 32u);
  EXPECT_EQ(net.num_classes(), 3u);
  EXPECT_EQ(net.feature_dim(), 64u);
  EXPECT_EQ(net.bn_count(), 2u);
  EXPECT_EQ(net.bn_affine_params().size(), 4u * 64u);
  EXPECT_EQ(net.all_params().size(), 32u * 64 + 64 + 2 * 64 + 64 * 64 + 64 + 2 * 64 + 64 * 3 + 3);
}

TEST(Forward, IdentityBatchNormIsANoOp) {
  std::mt19937_64 rng(2);
  const auto w1 = random_matrix(5, 4, rng);
  const auto w2 = random_matrix(3, 5, rng);
  const auto b1 = ttc::testing::random_vector(5, rng);
  const auto b2 = ttc::testing::random_vector(3, rng);
  auto bn = BatchNormLayer::identity(5, Activation::Relu);
  for (double& v : bn.running_var) v = 1.0 - bn.eps;
  const Network net({make_dense(w1, b1, Activation::Identity), bn,
                     make_dense(w2, b2, Activation::Identity)});
  const auto x = random_matrix(6, 4, rng);
  const auto logits = forward(net, x, BNMode::EvalStats).logits;
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> h(5);
    for (std::size_t o = 0; o < 5; ++o) {
      double s = b1[o];
      for (std::size_t j = 0; j < 4; ++j) s += w1(o, j) * x(i, j);
      h[o] = std::max(0.0, s);
    }
    for (std::size_t o = 0; o < 3; ++o) {
      double s = b2[o];
      for (std::size_t j = 0; j < 5; ++j) s += w2(o, j) * h[j];
      EXPECT_NEAR(logits(i, o), s, 1e-12);
    }
  }
}

TEST(Forward, IsDeterministic) {
  const auto net = random_network(8, {7, 6}, 4, 3);
  std::mt19937_64 rng(3);
  const auto x = random_matrix(10, 8, rng);
  for (auto mode : {BNMode::EvalStats, BNMode::TestBatchStats, BNMode::TrainStats}) {
    EXPECT_EQ(forward(net, x, mode).logits, forward(net, x, mode).logits);
  }
}

TEST(Forward, BatchStatisticsNormalizeEachFeature) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto net = random_network(6, {9, 5}, 3, seed);
    const auto x = random_matrix(17, 6, rng, 3.0);
    const auto fwd = forward(net, x, BNMode::TestBatchStats);
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      if (!std::holds_alternative<BatchNormLayer>(net.layers()[l])) continue;
      const auto& z = fwd.cache.layers[l].normalized;
      for (std::size_t f = 0; f < z.cols(); ++f) {
        double mean = 0.0;
        double sq = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) mean += z(i, f);
        mean /= static_cast<double>(z.rows());
        for (std::size_t i = 0; i < z.rows(); ++i) sq += (z(i, f) - mean) * (z(i, f) - mean);
        const double var = sq / static_cast<double>(z.rows());
        const double in_var = fwd.cache.layers[l].var[f];
        const double eps = std::get<BatchNormLayer>(net.layers()[l]).eps;
        EXPECT_LT(std::abs(mean), 1e-6);
        EXPECT_NEAR(var, in_var / (in_var + eps), 1e-9);
        if (in_var >= 10.0) {
          EXPECT_NEAR(var, 1.0, 1e-6);
        }
      }
    }
  }
}

TEST(Forward, RejectsDegenerateAndMalformedBatches) {
  const auto net = random_network(4, {3}, 2, 5);
  std::mt19937_64 rng(5);
  EXPECT_THROW(forward(net, random_matrix(1, 4, rng), BNMode::TestBatchStats), DegenerateBatch);
  EXPECT_THROW(forward(net, random_matrix(1, 4, rng), BNMode::TrainStats), DegenerateBatch);
  EXPECT_NO_THROW(forward(net, random_matrix(1, 4, rng), BNMode::EvalStats));
  EXPECT_THROW(forward(net, Matrix(0, 4), BNMode::EvalStats), InvalidInput);
  EXPECT_THROW(forward(net, random_matrix(3, 5, rng), BNMode::EvalStats), InvalidInput);
}

TEST(Forward, RunningStatisticsUseBiasedVarianceAndMomentum) {
  auto net = random_network(3, {4}, 2, 6);
  std::mt19937_64 rng(6);
  const auto x = random_matrix(5, 3, rng);
  const auto before = net.bn(0);
  const auto fwd = forward(net, x, BNMode::TrainStats);
  EXPECT_EQ(net.bn(0).running_mean, before.running_mean);
  commit_running_stats(net, fwd.cache);
  const auto& h = fwd.cache.layers[1].input;
  for (std::size_t f = 0; f < 4; ++f) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 5; ++i) mean += h(i, f) / 5.0;
    double var = 0.0;
    for (std::size_t i = 0; i < 5; ++i) var += (h(i, f) - mean) * (h(i, f) - mean) / 5.0;
    EXPECT_NEAR(net.bn(0).running_mean[f], 0.9 * before.running_mean[f] + 0.1 * mean, 1e-12);
    EXPECT_NEAR(net.bn(0).running_var[f], 0.9 * before.running_var[f] + 0.1 * var, 1e-12);
  }
  const auto eval = forward(net, x, BNMode::EvalStats);
  EXPECT_THROW(commit_running_stats(net, eval.cache), InvalidInput);
}

TEST(Backward, ZeroGradientGivesZeroSet) {
  const auto net = random_network(5, {4, 3}, 3, 7);
  std::mt19937_64 rng(7);
  const auto fwd = forward(net, random_matrix(6, 5, rng), BNMode::TestBatchStats);
  EXPECT_TRUE(backward_bn_affine(net, fwd.cache, Matrix(6, 3)).is_zero());
}

TEST(Backward, IsLinearInTheUpstreamGradient) {
  const auto net = random_network(5, {4, 3}, 3, 8);
  std::mt19937_64 rng(8);
  const auto fwd = forward(net, random_matrix(6, 5, rng), BNMode::TestBatchStats);
  auto g = random_matrix(6, 3, rng);
  const auto once = backward_bn_affine(net, fwd.cache, g).flatten();
  for (double& v : g.data()) v *= 2.0;
  const auto twice = backward_bn_affine(net, fwd.cache, g).flatten();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2.0 * once[i], 1e-12);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomArchitectures) {
  struct Arch {
    std::size_t in;
    std::vector<std::size_t> hidden;
    std::size_t k;
  };
  const std::vector<Arch> archs = {{4, {5}, 2}, {6, {7, 4}, 3}, {5, {6, 6, 3}, 4}};
  std::mt19937_64 rng(9);
  for (std::size_t a = 0; a < archs.size(); ++a) {
    const auto& arch = archs[a];
    for (auto mode : {BNMode::TestBatchStats, BNMode::EvalStats}) {
      for (int trial = 0; trial < 5; ++trial) {
        const auto net = random_network(arch.in, arch.hidden, arch.k, 100 * a + trial);
        const auto x = random_matrix(8, arch.in, rng);
        const auto g = random_matrix(8, arch.k, rng);
        const auto fwd = forward(net, x, mode);
        const auto analytic = backward_bn_affine(net, fwd.cache, g).flatten();
        const ScalarFn f = [&](std::span<const double> theta) {
          Network probe = net;
          probe.set_bn_affine_params(theta);
          return weighted_logit_sum(probe, x, g, mode);
        };
        const auto theta = net.bn_affine_params();
        EXPECT_LT(finite_diff_check(f, analytic, theta), 1e-4) << "arch " << a;
      }
    }
  }
}

TEST(Backward, FullGradientMatchesFiniteDifferences) {
  const auto net = random_network(4, {5, 3}, 3, 10);
  std::mt19937_64 rng(10);
  const auto x = random_matrix(7, 4, rng);
  const auto g = random_matrix(7, 3, rng);
  const auto fwd = forward(net, x, BNMode::TrainStats);
  const auto analytic = backward_all(net, fwd.cache, g);
  const ScalarFn f = [&](std::span<const double> theta) {
    Network probe = net;
    probe.set_all_params(theta);
    return weighted_logit_sum(probe, x, g, BNMode::TrainStats);
  };
  EXPECT_LT(finite_diff_check(f, analytic, net.all_params()), 1e-4);
}

TEST(Backward, RejectsMismatchedCache) {
  const auto net = random_network(4, {5}, 2, 11);
  const auto other = random_network(4, {5, 5}, 2, 11);
  std::mt19937_64 rng(11);
  const auto fwd = forward(net, random_matrix(6, 4, rng), BNMode::TestBatchStats);
  EXPECT_THROW(backward_bn_affine(other, fwd.cache, Matrix(6, 2)), InvalidInput);
  EXPECT_THROW(backward_bn_affine(net, fwd.cache, Matrix(5, 2)), InvalidInput);
  EXPECT_THROW(backward_bn_affine(net, fwd.cache, Matrix(6, 3)), InvalidInput);
}

TEST(PenultimateFeatures, BareBatchNormPassesInputThrough) {
  auto bn = BatchNormLayer::identity(4, Activation::Identity);
  for (double& v : bn.running_var) v = 1.0 - bn.eps;
  std::mt19937_64 rng(12);
  const Network net({bn, make_dense(random_matrix(2, 4, rng), {0.0, 0.0}, Activation::Identity)});
  const auto x = random_matrix(5, 4, rng);
  const auto z = penultimate_features(net, x, BNMode::EvalStats);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(z.data()[i], x.data()[i], 1e-12);
}

TEST(PenultimateFeatures, FiniteAndShaped) {
  const auto net = random_network(8, {6, 5}, 3, 13);
  std::mt19937_64 rng(13);
  const auto z = penultimate_features(net, random_matrix(9, 8, rng, 5.0), BNMode::TestBatchStats);
  EXPECT_EQ(z.rows(), 9u);
  EXPECT_EQ(z.cols(), 5u);
  EXPECT_TRUE(z.all_finite());
}

TEST(PenultimateFeatures, TextRoundTripIsBitExact) {
  const auto net = random_network(8, {6, 5}, 3, 14);
  std::mt19937_64 rng(14);
  const auto z = penultimate_features(net, random_matrix(20, 8, rng), BNMode::TestBatchStats);
  std::ostringstream out;
  for (double v : z.data()) out << format_real(v) << '\n';
  std::istringstream in(out.str());
  std::string line;
  for (double v : z.data()) {
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(std::strtod(line.c_str(), nullptr), v);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto net = random_network(32, {64, 64}, 3, 15);
  net.meta() = {15, 12};
  const auto path = temp_file("roundtrip.json");
  save_checkpoint(net, path);
  const auto loaded = load_checkpoint(path, 3);
  EXPECT_TRUE(loaded == net);
  EXPECT_EQ(parameter_digest(loaded), parameter_digest(net));
  EXPECT_EQ(loaded.meta().trained_epochs, 12);
  std::mt19937_64 rng(15);
  const auto x = random_matrix(10, 32, rng);
  EXPECT_EQ(forward(loaded, x, BNMode::EvalStats).logits, forward(net, x, BNMode::EvalStats).logits);
}

TEST(Checkpoint, DocumentLayout) {
  const auto net = random_network(3, {2}, 2, 16);
  const auto doc = nlohmann::json::parse(checkpoint_to_json(net));
  EXPECT_EQ(doc.at("k"), 2);
  ASSERT_EQ(doc.at("layers").size(), 3u);
  EXPECT_EQ(doc["layers"][0]["kind"], "dense");
  EXPECT_EQ(doc["layers"][0]["shape"], nlohmann::json::array({2, 3}));
  EXPECT_EQ(doc["layers"][1]["kind"], "bn");
  for (const char* key : {"gamma", "beta", "running_mean", "running_var", "eps", "momentum"}) {
    EXPECT_TRUE(doc["layers"][1].contains(key)) << key;
  }
  EXPECT_EQ(doc["layers"][1]["activation"], "relu");
  EXPECT_TRUE(doc.at("meta").contains("seed"));
  EXPECT_TRUE(doc.at("meta").contains("trained_epochs"));
}

TEST(Checkpoint, TruncatedDocumentIsAParseError) {
  const auto text = checkpoint_to_json(random_network(3, {2}, 2, 17));
  const auto cut = text.substr(0, text.size() / 2);
  try {
    checkpoint_from_json(cut);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
    EXPECT_LE(e.offset(), cut.size() + 1);
  }
  const auto path = temp_file("truncated.json");
  std::ofstream(path) << cut;
  EXPECT_THROW(load_checkpoint(path), ParseError);
}

TEST(Checkpoint, ClassCountMismatchIsASchemaError) {
  const auto text = checkpoint_to_json(random_network(4, {3}, 10, 18));
  EXPECT_THROW(checkpoint_from_json(text, 3), SchemaError);
  EXPECT_NO_THROW(checkpoint_from_json(text, 10));
}

TEST(Checkpoint, StructuralProblemsAreSchemaErrors) {
  auto doc = nlohmann::json::parse(checkpoint_to_json(random_network(4, {3}, 2, 19)));
  auto missing = doc;
  missing["layers"][1].erase("gamma");
  EXPECT_THROW(checkpoint_from_json(missing.dump()), SchemaError);
  auto reshaped = doc;
  reshaped["layers"][0]["shape"] = nlohmann::json::array({3, 5});
  EXPECT_THROW(checkpoint_from_json(reshaped.dump()), SchemaError);
  auto kind = doc;
  kind["layers"][0]["kind"] = "conv";
  EXPECT_THROW(checkpoint_from_json(kind.dump()), SchemaError);
  EXPECT_THROW(checkpoint_from_json("[1, 2]"), SchemaError);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.json")), Error);
}

TEST(Checkpoint, RefusesNonFiniteParameters) {
  auto net = random_network(3, {2}, 2, 20);
  net.bn(0).gamma[0] = NAN;
  EXPECT_THROW(checkpoint_to_json(net), InvalidInput);
}

TEST(Digest, SensitiveToEveryParameter) {
  const auto net = random_network(3, {2}, 2, 21);
  const auto base = parameter_digest(net);
  EXPECT_EQ(base.size(), 16u);
  auto a = net;
  a.bn(0).running_var[1] += 1e-15;
  EXPECT_NE(parameter_digest(a), base);
  auto params = net.all_params();
  params.back() = std::nextafter(params.back(), 1.0);
  auto b = net;
  b.set_all_params(params);
  EXPECT_NE(parameter_digest(b), base);
}

TEST(Freezing, AdaptationOnlyTouchesAffineParameters) {
  const auto source = random_network(8, {6, 5}, 3, 22);
  std::mt19937_64 rng(22);
  for (auto strategy : {Strategy::Norm, Strategy::Tent, Strategy::Ttc, Strategy::TentFiltered}) {
    AdaptationConfig cfg;
    cfg.strategy = strategy;
    cfg.lr = 1e-2;
    cfg.filter_threshold = 10.0;
    Adapter adapter(source, cfg, 10);
    for (int b = 0; b < 2 * static_cast<int>(adapter.q()); ++b) adapter.adapt_batch(random_matrix(10, 8, rng));
    const auto& adapted = adapter.network();
    for (std::size_t l = 0; l < source.layers().size(); ++l) {
      if (const auto* d = std::get_if<DenseLayer>(&source.layers()[l])) {
        EXPECT_TRUE(*d == std::get<DenseLayer>(adapted.layers()[l]));
      }
    }
    for (std::size_t i = 0; i < source.bn_count(); ++i) {
      EXPECT_EQ(adapted.bn(i).running_mean, source.bn(i).running_mean);
      EXPECT_EQ(adapted.bn(i).running_var, source.bn(i).running_var);
    }
    if (strategy == Strategy::Norm) {
      EXPECT_EQ(adapted.bn_affine_params(), source.bn_affine_params());
    } else {
      EXPECT_NE(adapted.bn_affine_params(), source.bn_affine_params());
    }
  }
}
