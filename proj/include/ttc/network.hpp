#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ttc/numeric.hpp"

namespace ttc {

enum class Activation { Identity, Relu };

/// How batch normalization obtains its statistics during a forward pass.
enum class BNMode {
  TrainStats,      ///< batch statistics; the caller commits running stats
  EvalStats,       ///< running statistics
  TestBatchStats,  ///< batch statistics; running stats untouched
};

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::Identity;

  std::size_t in_features() const noexcept { return weight.cols(); }
  std::size_t out_features() const noexcept { return weight.rows(); }
};

/// Per-feature batch normalization followed by an optional activation.
struct BatchNormLayer {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  Activation activation = Activation::Relu;

  static BatchNormLayer identity(std::size_t features, Activation act = Activation::Relu);
  std::size_t features() const noexcept { return gamma.size(); }
};

using Layer = std::variant<DenseLayer, BatchNormLayer>;

struct NetworkMeta {
  std::uint64_t seed = 0;
  std::int64_t trained_epochs = 0;
};

/// Feedforward classifier: Dense and BatchNorm layers in sequence, ending in
/// a Dense layer that emits K logits.
class Network {
 public:
  /// Validates shapes; throws SchemaError on inconsistency, a missing final
  /// Dense layer, fewer than two classes, or no BatchNorm layer.
  explicit Network(std::vector<Layer> layers, NetworkMeta meta = {});

  /// input -> [Dense(h) + BN + relu]* -> Dense(k), He-initialized.
  static Network make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t num_classes, std::uint64_t seed);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t bn_count() const noexcept { return bn_index_.size(); }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  BatchNormLayer& bn(std::size_t i) { return std::get<BatchNormLayer>(layers_[bn_index_[i]]); }
  const BatchNormLayer& bn(std::size_t i) const {
    return std::get<BatchNormLayer>(layers_[bn_index_[i]]);
  }

  NetworkMeta& meta() noexcept { return meta_; }
  const NetworkMeta& meta() const noexcept { return meta_; }

  /// BN gamma/beta flattened as [gamma_0, beta_0, gamma_1, beta_1, ...].
  std::vector<double> bn_affine_params() const;
  void set_bn_affine_params(std::span<const double> flat);

  /// Every trainable parameter, layer by layer (weight then bias, or gamma
  /// then beta).
  std::vector<double> all_params() const;
  void set_all_params(std::span<const double> flat);

  friend bool operator==(const Network& a, const Network& b);

 private:
  std::vector<Layer> layers_;
  std::vector<std::size_t> bn_index_;
  NetworkMeta meta_;
  std::size_t num_classes_ = 0;
  std::size_t input_dim_ = 0;
  std::size_t feature_dim_ = 0;
};

bool operator==(const BatchNormLayer& a, const BatchNormLayer& b);
bool operator==(const DenseLayer& a, const DenseLayer& b);

struct LayerCache {
  Matrix input;
  Matrix pre_activation;
  // BatchNorm only.
  Matrix normalized;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> inv_std;
};

struct ForwardCache {
  BNMode mode = BNMode::EvalStats;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// Throws InvalidInput on an empty or wrongly-shaped batch and
/// DegenerateBatch for a single-row batch under batch statistics.
ForwardResult forward(const Network& net, const Matrix& batch, BNMode mode);

/// Folds the batch statistics recorded in a TrainStats cache into the
/// running statistics (biased variance, layer momentum).
void commit_running_stats(Network& net, const ForwardCache& cache);

/// Activations entering the final Dense layer.
Matrix penultimate_features(const Network& net, const Matrix& batch, BNMode mode);

/// Gradients of BN scale and shift, one entry per BatchNorm layer.
struct GradientSet {
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> beta;

  static GradientSet zeros_like(const Network& net);
  void add_scaled(const GradientSet& other, double scale);
  void scale(double factor);
  /// Same order as Network::bn_affine_params.
  std::vector<double> flatten() const;
  bool is_zero() const;

  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

/// Backpropagates `grad_logits` (N x K) and returns gradients for BN
/// gamma/beta only. Throws InvalidInput if the cache does not belong to a
/// forward pass of `net` with a batch of matching size.
GradientSet backward_bn_affine(const Network& net, const ForwardCache& cache,
                               const Matrix& grad_logits);

/// Full backward pass, flattened like Network::all_params.
std::vector<double> backward_all(const Network& net, const ForwardCache& cache,
                                 const Matrix& grad_logits);

/// Writes the checkpoint as a JSON document with 17-significant-digit reals.
void save_checkpoint(const Network& net, const std::filesystem::path& path);
std::string checkpoint_to_json(const Network& net);

/// Throws ParseError for malformed JSON and SchemaError for a valid document
/// that does not describe a network (or has a class count other than
/// `expected_classes`).
Network load_checkpoint(const std::filesystem::path& path,
                        std::optional<std::size_t> expected_classes = std::nullopt);
Network checkpoint_from_json(std::string_view text,
                             std::optional<std::size_t> expected_classes = std::nullopt);

/// FNV-1a digest over the bit patterns of every parameter and running
/// statistic, as 16 hex digits.
std::string parameter_digest(const Network& net);

}  // namespace ttc
