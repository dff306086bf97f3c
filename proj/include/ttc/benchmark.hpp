#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ttc/adaptation.hpp"
#include "ttc/network.hpp"
#include "ttc/numeric.hpp"

namespace ttc {

inline constexpr std::size_t kSignalLength = 32;
inline constexpr double kSignalNoise = 0.1;

/// Stateless 64-bit mixer for deriving independent seeds from (seed, stream,
/// index) triples.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Labelled 1-D signals on a kSignalLength-point grid.
struct SignalDataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const SignalDataset&, const SignalDataset&) = default;
};

/// Noise-free signal for class `c` of `k`: a Gaussian bump at a class
/// specific position. Bump positions are confined to the left half of the
/// grid so a class and its mirror image never collide with another class.
std::vector<double> class_template(std::size_t k, std::size_t c);

/// Balanced classes (counts differ by at most one) in seeded random order;
/// each signal is its class template plus i.i.d. N(0, noise_sigma^2).
/// Throws InvalidInput unless k >= 2 and m >= k.
SignalDataset generate_dataset(std::size_t k, std::size_t m, std::uint64_t seed,
                               double noise_sigma = kSignalNoise);

enum class CorruptionKind { None, GaussianNoise, ImpulseNoise, SmoothBlur, Contrast, Brightness };

struct Corruption {
  CorruptionKind kind = CorruptionKind::None;
  int severity = 0;
};

CorruptionKind parse_corruption_kind(std::string_view name);
std::string_view corruption_name(CorruptionKind kind);

/// The five benchmark corruptions, in report order.
std::span<const CorruptionKind> benchmark_corruptions();

/// Throws InvalidInput for severity outside 1..5 (kind None ignores it).
void validate_corruption(const Corruption& c);

/// Severity s:
///   gaussian_noise  x + N(0, (0.1 s)^2)
///   impulse_noise   each coordinate replaced by +-1 with probability 0.03 s
///   smooth_blur     moving average over a (2s + 1) window, truncated at edges
///   contrast        mean + (x - mean)(1 - 0.15 s)
///   brightness      x + 0.2 s
std::vector<double> apply_corruption(std::span<const double> x, const Corruption& c,
                                     std::uint64_t seed);

/// Row i is corrupted with derive_seed(seed, 0, i).
Matrix corrupt_inputs(const Matrix& inputs, const Corruption& c, std::uint64_t seed);

struct TrainOptions {
  std::size_t epochs = 12;
  std::size_t batch_size = 64;
  double lr = 5e-3;
  std::vector<std::size_t> hidden = {64, 64};
  /// Mirror each training signal with probability 1/2.
  bool random_flips = true;
};

struct TrainLogEntry {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<TrainLogEntry> log;
};

/// Adam on cross-entropy over every parameter, batch statistics in BN with
/// running statistics committed after each step. Throws TrainingDiverged on
/// a non-finite loss.
TrainResult train_source(const SignalDataset& data, const TrainOptions& options,
                         std::uint64_t seed);

/// Fraction of positions where predictions equal labels.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Argmax predictions of `net` in the given mode, in chunks of `chunk` rows.
std::vector<std::size_t> predict(const Network& net, const Matrix& inputs,
                                 BNMode mode = BNMode::EvalStats, std::size_t chunk = 500);

struct StreamProtocol {
  std::size_t batch_size = 100;
  std::uint64_t order_seed = 0;
};

/// Seeded permutation of [0, n) cut into consecutive batches of
/// `batch_size`. A trailing single-sample remainder joins the previous batch
/// so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, const StreamProtocol& protocol);

struct RunReport {
  std::string strategy;
  std::string corruption;
  int severity = 0;
  std::uint64_t seed = 0;
  std::size_t n_test = 0;
  double accuracy = 0.0;
  /// Running accuracy after each batch.
  std::vector<double> per_batch_accuracy;
  std::vector<std::size_t> batch_sizes;
  /// Per-sample predictions and labels in stream order.
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
  std::size_t samples_seen = 0;
  std::size_t optimizer_steps = 0;
  std::string params_digest;
  nlohmann::json config;
  /// Penultimate features in stream order; only filled on request.
  Matrix features;
};

struct StreamOptions {
  bool collect_features = false;
};

/// Corrupts `test` with `seed`, streams it once in protocol order through a
/// fresh Adapter initialized from `source`, and scores the pre-update
/// predictions.
RunReport stream_eval(const Network& source, const SignalDataset& test,
                      const Corruption& corruption, const StreamProtocol& protocol,
                      const AdaptationConfig& config, std::uint64_t seed,
                      const StreamOptions& options = {});

/// The final adapted network is returned through `adapted` when non-null.
RunReport stream_eval(const Network& source, const SignalDataset& test,
                      const Corruption& corruption, const StreamProtocol& protocol,
                      const AdaptationConfig& config, std::uint64_t seed,
                      const StreamOptions& options, Network* adapted);

nlohmann::json report_to_json(const RunReport& report);

/// `batch,batch_size,running_accuracy`.
void write_per_batch_csv(std::ostream& out, const RunReport& report);

/// Normalized 64-bin histogram of `values` over [lo, hi]; values outside
/// the range go to the edge bins.
std::vector<double> histogram(std::span<const double> values, double lo, double hi,
                              std::size_t bins = 64);

/// sum_b min(h1_b, h2_b) over normalized histograms; 1 for identical, 0 for
/// disjoint support.
double histogram_overlap(std::span<const double> h1, std::span<const double> h2);

}  // namespace ttc
