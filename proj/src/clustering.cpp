#include "ttc/clustering.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>

#include "ttc/error.hpp"

namespace ttc {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    d += diff * diff;
  }
  return d;
}

void check_dims(const Matrix& features, const Centers& centers) {
  if (centers.count() == 0) throw InvalidInput("no centers");
  if (features.cols() != centers.c.cols()) {
    throw InvalidInput("feature and center dimensions differ");
  }
}

}  // namespace

Assignment assign_step(const Matrix& features, const Centers& centers) {
  check_dims(features, centers);
  Assignment labels(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    std::size_t best = 0;
    double best_d = squared_distance(features.row(i), centers.c.row(0));
    for (std::size_t c = 1; c < centers.count(); ++c) {
      const double d = squared_distance(features.row(i), centers.c.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    labels[i] = best;
  }
  return labels;
}

Centers update_step(const Matrix& features, const Assignment& assignment, const Centers& centers,
                    CenterUpdate mode, std::vector<std::size_t>& counts) {
  check_dims(features, centers);
  if (assignment.size() != features.rows()) {
    throw InvalidInput("assignment length differs from sample count");
  }
  const std::size_t k = centers.count();
  const std::size_t d = features.cols();
  Centers out = centers;
  if (mode == CenterUpdate::FullBatch) {
    Matrix sums(k, d);
    std::vector<std::size_t> members(k, 0);
    for (std::size_t i = 0; i < features.rows(); ++i) {
      const std::size_t c = assignment[i];
      if (c >= k) throw InvalidInput("assignment label out of range");
      ++members[c];
      auto src = features.row(i);
      auto dst = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (members[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(members[c]);
      for (std::size_t j = 0; j < d; ++j) out.c(c, j) = sums(c, j) * inv;
    }
    return out;
  }
  if (counts.size() != k) counts.assign(k, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const std::size_t c = assignment[i];
    if (c >= k) throw InvalidInput("assignment label out of range");
    ++counts[c];
    const double eta = 1.0 / static_cast<double>(counts[c]);
    auto src = features.row(i);
    auto dst = out.c.row(c);
    for (std::size_t j = 0; j < d; ++j) dst[j] = (1.0 - eta) * dst[j] + eta * src[j];
  }
  return out;
}

double kmeans_objective(const Matrix& features, const Assignment& assignment,
                        const Centers& centers) {
  check_dims(features, centers);
  if (assignment.size() != features.rows()) {
    throw InvalidInput("assignment length differs from sample count");
  }
  if (features.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    if (assignment[i] >= centers.count()) throw InvalidInput("assignment label out of range");
    total += squared_distance(features.row(i), centers.c.row(assignment[i]));
  }
  return total / static_cast<double>(features.rows());
}

KMeansRun run_minibatch_kmeans(std::span<const Matrix> batches, const KMeansOptions& options) {
  if (options.k < 2) throw InvalidInput("k-means needs k >= 2");
  if (batches.empty()) throw InvalidInput("k-means needs at least one batch");
  const Matrix& first = batches.front();
  if (first.rows() < options.k) throw InvalidInput("first batch has fewer rows than k");

  std::vector<std::size_t> seeds(options.k);
  if (options.init == CenterInit::FirstK) {
    std::iota(seeds.begin(), seeds.end(), std::size_t{0});
  } else {
    std::vector<std::size_t> all(first.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = 0; i < options.k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
      seeds[i] = all[i];
    }
  }

  KMeansRun run;
  run.centers.c = first.gather_rows(seeds);
  std::vector<std::size_t> counts(options.k, 0);
  for (const Matrix& batch : batches) {
    const auto labels = assign_step(batch, run.centers);
    run.centers = update_step(batch, labels, run.centers, options.update, counts);
    run.objective_trace.push_back(kmeans_objective(batch, labels, run.centers));
  }
  return run;
}

void write_objective_csv(std::ostream& out, std::span<const double> trace) {
  out << "batch,objective\n";
  for (std::size_t b = 0; b < trace.size(); ++b) out << b << ',' << format_real(trace[b]) << '\n';
}

}  // namespace ttc
