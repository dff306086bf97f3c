#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ttc/adaptation.hpp"
#include "ttc/benchmark.hpp"

namespace ttc::cli {

enum ExitCode : int {
  kOk = 0,
  kPropertyViolation = 1,
  kTrainingFailure = 2,
  kInputError = 3,
};

/// Dispatches `ttc <command> [flags]`; returns the process exit code.
int run(int argc, char** argv);

/// Shape of a benchmark instance shared by every command.
struct BenchmarkShape {
  std::size_t num_classes = 3;
  std::size_t n_train = 3000;
  std::size_t n_test = 3000;
  std::size_t epochs = TrainOptions{}.epochs;
};

/// Source model and clean test split for one seed.
struct SeedContext {
  std::uint64_t seed = 0;
  Network source;
  SignalDataset test;
  double clean_accuracy = 0.0;
  std::vector<TrainLogEntry> log;
};

SeedContext prepare_seed(std::uint64_t seed, const BenchmarkShape& shape);

/// Protocol used for a given seed: stream order is derived from the seed.
StreamProtocol protocol_for(std::uint64_t seed, std::size_t batch_size);

/// One grid cell.
struct Cell {
  AdaptationConfig config;
  Corruption corruption;
  std::size_t batch_size = 100;
  std::size_t context = 0;  // index into the contexts vector
};

/// Runs every cell (independent streams run concurrently on up to
/// `workers` threads; 0 picks the hardware concurrency). Results keep the
/// order of `cells`.
std::vector<RunReport> run_cells(const std::vector<SeedContext>& contexts,
                                 const std::vector<Cell>& cells, std::size_t workers = 0);

struct BatchSizeRow {
  std::string strategy;
  std::size_t batch_size = 0;
  bool ga = false;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
};

/// TENT and TTC, each with and without gradient accumulation, at every
/// batch size. Accuracy per seed is the mean over `corruptions`.
std::vector<BatchSizeRow> sweep_batch_size(const std::vector<SeedContext>& contexts,
                                           const std::vector<std::size_t>& batch_sizes,
                                           const std::vector<CorruptionKind>& corruptions,
                                           int severity, const AdaptationConfig& base);

struct TauRow {
  double tau = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  std::size_t non_finite = 0;
};

std::vector<TauRow> sweep_tau(const std::vector<SeedContext>& contexts,
                              const std::vector<double>& taus,
                              const std::vector<CorruptionKind>& corruptions, int severity,
                              std::size_t batch_size, const AdaptationConfig& base);

struct DensityResult {
  /// Per channel: [a_vs_b, a_vs_reference, b_vs_reference].
  std::vector<std::array<double, 3>> overlaps;
  /// Per channel histograms: reference, a, b.
  std::vector<std::array<std::vector<double>, 3>> histograms;
  std::vector<std::pair<double, double>> ranges;
};

/// Feature histograms of strategies `a` and `b` on a corrupted stream
/// against the source model on the clean stream.
DensityResult density(const SeedContext& ctx, const AdaptationConfig& a,
                      const AdaptationConfig& b, const Corruption& corruption,
                      std::size_t batch_size, std::size_t bins = 64);

std::string report_file_stem(const RunReport& report);

}  // namespace ttc::cli
