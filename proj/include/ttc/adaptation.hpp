#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ttc/network.hpp"
#include "ttc/numeric.hpp"
#include "ttc/optimizer.hpp"

namespace ttc {

/// Lower bound on entropies before they are raised to -tau.
inline constexpr double kEntropyClamp = 1e-6;

enum class Strategy { Source, Norm, Tent, TentFiltered, Ttc };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

/// Knobs for one adaptation run. Unset optionals resolve per strategy and
/// batch size; see the accessors.
struct AdaptationConfig {
  Strategy strategy = Strategy::Tent;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double tau = 0.5;
  std::optional<std::size_t> accumulation_q;
  std::optional<bool> rla_enabled;
  std::optional<bool> wa_enabled;
  std::optional<bool> ga_enabled;
  std::optional<double> filter_threshold;
  /// Adapt with running statistics instead of per-batch statistics.
  bool freeze_bn_stats = false;

  /// Throws InvalidInput naming the offending field.
  void validate() const;

  // Components default to on for TTC and off otherwise.
  bool rla() const { return rla_enabled.value_or(strategy == Strategy::Ttc); }
  bool wa() const { return wa_enabled.value_or(strategy == Strategy::Ttc); }
  bool ga() const { return ga_enabled.value_or(strategy == Strategy::Ttc); }

  /// Accumulation window: 1 without GA, otherwise the configured value or
  /// max(1, round(200 / batch_size)).
  std::size_t effective_q(std::size_t batch_size) const;

  /// Configured threshold or 0.4 log K.
  double effective_filter_threshold(std::size_t num_classes) const;
};

/// Every field optional; unknown keys and bad values throw InvalidInput.
AdaptationConfig config_from_json(const nlohmann::json& doc);
AdaptationConfig config_from_json(std::string_view text);

/// Serializes with all derived values pinned for the given stream shape.
nlohmann::json config_to_json(const AdaptationConfig& cfg, std::size_t batch_size,
                              std::size_t num_classes);

struct LossResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Entropy of softmax for each row.
std::vector<double> row_entropies(const Matrix& logits);

/// Mean Shannon entropy of the batch and its gradient w.r.t. the logits.
LossResult tent_loss(const Matrix& logits);

/// w_i = max(H_i, kEntropyClamp)^(-tau) / n.
std::vector<double> sample_weights(std::span<const double> entropies, double tau, std::size_t n);

/// sum_i w_i H_i with the weights held constant under differentiation.
LossResult ttc_loss(const Matrix& combined_logits, double tau, std::size_t n);

/// Accepts sample i iff H_i < threshold. Throws InvalidInput unless
/// threshold > 0.
std::vector<bool> entropy_filter(std::span<const double> entropies, double threshold);

/// Mean entropy over accepted rows only; rejected rows get zero gradient.
/// `accepted` reports how many rows contributed.
struct FilteredLoss {
  LossResult result;
  std::size_t accepted = 0;
};
FilteredLoss filtered_tent_loss(const Matrix& logits, double threshold);

/// Input transform used by robust label assignment. Must be an involution
/// that preserves shape.
using Augmentation = std::function<Matrix(const Matrix&)>;

/// Reverses every row (the 1-D analogue of a horizontal flip).
Matrix flip_signals(const Matrix& batch);
Matrix identity_augmentation(const Matrix& batch);

struct RlaResult {
  /// (f(x) + f(aug(x))) / 2.
  Matrix combined;
  /// Forward of the un-augmented batch; the only branch gradients reach.
  ForwardResult plain;
  Matrix aug_logits;
};

/// Averages the logits of a batch and its augmentation. The augmented branch
/// is detached: a gradient w.r.t. `combined` is passed to `plain` unchanged,
/// so the augmentation enters only as a constant offset. Throws InvalidInput
/// if `aug` changes the batch shape.
RlaResult rla_forward(const Network& net, const Matrix& batch, const Augmentation& aug,
                      BNMode mode);

/// Sums 1/Q-scaled gradients and signals an optimizer step every Q batches.
class GradientAccumulator {
 public:
  GradientAccumulator(std::size_t q, const Network& net);

  std::size_t q() const noexcept { return q_; }
  std::size_t batches_seen() const noexcept { return batches_seen_; }
  const GradientSet& accumulated() const noexcept { return accumulated_; }

 private:
  friend bool accumulate_and_maybe_step(GradientAccumulator&, const GradientSet&, Optimizer&,
                                        Network&);
  std::size_t q_;
  std::size_t batches_seen_ = 0;
  GradientSet accumulated_;
};

/// Adds `grads` to the accumulator; on the Q-th batch applies one optimizer
/// step to the BN affine parameters of `net` and clears the accumulator.
/// Returns whether a step happened.
bool accumulate_and_maybe_step(GradientAccumulator& acc, const GradientSet& grads,
                               Optimizer& opt, Network& net);

struct AdaptOutput {
  std::vector<std::size_t> predictions;
  Matrix probs;
  /// Penultimate activations of the un-augmented forward.
  Matrix features;
  bool stepped = false;
  /// Rows that contributed to the loss (all of them unless filtered).
  std::size_t contributing = 0;
};

/// One online adaptation stream. Owns its network and optimizer state;
/// batches must be fed sequentially.
class Adapter {
 public:
  /// `batch_size` is the nominal stream batch size used to resolve Q.
  Adapter(Network source, AdaptationConfig config, std::size_t batch_size,
          Augmentation aug = flip_signals);

  /// Predicts on `batch` with the current parameters, then (strategy
  /// permitting) computes the loss and advances the accumulator. Returned
  /// outputs always precede any update made in the same call.
  AdaptOutput adapt_batch(const Matrix& batch);

  const Network& network() const noexcept { return net_; }
  const AdaptationConfig& config() const noexcept { return config_; }
  std::size_t q() const noexcept { return acc_.q(); }
  std::size_t batches_processed() const noexcept { return batches_; }
  std::size_t optimizer_steps() const noexcept { return opt_.steps_taken(); }

 private:
  Network net_;
  AdaptationConfig config_;
  Augmentation aug_;
  Optimizer opt_;
  GradientAccumulator acc_;
  std::size_t batches_ = 0;
};

}  // namespace ttc
