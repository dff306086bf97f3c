#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ttc/numeric.hpp"

namespace ttc {

/// Cluster centers, one row per cluster.
struct Centers {
  Matrix c;

  std::size_t count() const noexcept { return c.rows(); }
  friend bool operator==(const Centers&, const Centers&) = default;
};

/// Cluster index per sample.
using Assignment = std::vector<std::size_t>;

enum class CenterUpdate {
  FullBatch,         ///< each assigned center becomes the mean of its members
  MiniBatchRunning,  ///< per-center streaming mean with rate 1 / count
};

enum class CenterInit { FirstK, SeededRandom };

/// Nearest center by squared Euclidean distance; ties go to the lowest index.
Assignment assign_step(const Matrix& features, const Centers& centers);

/// Returns updated centers. Clusters without members keep their center.
/// `counts` carries per-center totals across calls and is only read and
/// written in MiniBatchRunning mode.
Centers update_step(const Matrix& features, const Assignment& assignment, const Centers& centers,
                    CenterUpdate mode, std::vector<std::size_t>& counts);

/// (1/N) sum_i ||z_i - C_{y_i}||^2.
double kmeans_objective(const Matrix& features, const Assignment& assignment,
                        const Centers& centers);

struct KMeansOptions {
  std::size_t k = 2;
  CenterInit init = CenterInit::FirstK;
  CenterUpdate update = CenterUpdate::MiniBatchRunning;
  std::uint64_t seed = 0;
};

struct KMeansRun {
  Centers centers;
  /// Objective of each batch under its assignment and the centers after
  /// that batch's update.
  std::vector<double> objective_trace;
};

/// Alternates assign/update over the batches in order. FirstK seeds from
/// the first k rows of the first batch; SeededRandom picks k distinct rows
/// of the first batch. Throws InvalidInput for k < 2 or a first batch with
/// fewer than k rows.
KMeansRun run_minibatch_kmeans(std::span<const Matrix> batches, const KMeansOptions& options);

/// Writes `batch,objective` rows.
void write_objective_csv(std::ostream& out, std::span<const double> trace);

}  // namespace ttc
