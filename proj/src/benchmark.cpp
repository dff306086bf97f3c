#include "ttc/benchmark.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ttc/error.hpp"
#include "ttc/optimizer.hpp"

namespace ttc {
namespace {

constexpr double kBumpWidth = 1.5;
constexpr double kFirstBump = 2.0;
constexpr double kLastBump = 13.0;

constexpr std::array<CorruptionKind, 5> kBenchmarkCorruptions = {
    CorruptionKind::GaussianNoise, CorruptionKind::ImpulseNoise, CorruptionKind::SmoothBlur,
    CorruptionKind::Contrast, CorruptionKind::Brightness};

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL +
                    index * 0x94D049BB133111EBULL + 0x2545F4914F6CDD1DULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> class_template(std::size_t k, std::size_t c) {
  if (k < 2 || c >= k) throw InvalidInput("class_template: class index out of range");
  const double spacing = (kLastBump - kFirstBump) / static_cast<double>(k - 1);
  const double center = kFirstBump + spacing * static_cast<double>(c);
  std::vector<double> t(kSignalLength);
  for (std::size_t i = 0; i < kSignalLength; ++i) {
    const double d = static_cast<double>(i) - center;
    t[i] = std::exp(-d * d / (2.0 * kBumpWidth * kBumpWidth));
  }
  return t;
}

SignalDataset generate_dataset(std::size_t k, std::size_t m, std::uint64_t seed,
                               double noise_sigma) {
  if (k < 2) throw InvalidInput("generate_dataset: k must be >= 2");
  if (m < k) throw InvalidInput("generate_dataset: m must be >= k");
  if (!(noise_sigma >= 0.0)) throw InvalidInput("generate_dataset: noise must be >= 0");
  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < k; ++c) templates.push_back(class_template(k, c));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> labels(m);
  for (std::size_t i = 0; i < m; ++i) labels[i] = i % k;
  for (std::size_t i = m; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(labels[i - 1], labels[pick(rng)]);
  }
  SignalDataset ds;
  ds.num_classes = k;
  ds.seed = seed;
  ds.inputs = Matrix(m, kSignalLength);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = templates[labels[i]];
    auto row = ds.inputs.row(i);
    for (std::size_t j = 0; j < kSignalLength; ++j) row[j] = t[j] + noise_sigma * noise(rng);
  }
  ds.labels = std::move(labels);
  return ds;
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  if (name == "none") return CorruptionKind::None;
  if (name == "gaussian_noise") return CorruptionKind::GaussianNoise;
  if (name == "impulse_noise") return CorruptionKind::ImpulseNoise;
  if (name == "smooth_blur") return CorruptionKind::SmoothBlur;
  if (name == "contrast") return CorruptionKind::Contrast;
  if (name == "brightness") return CorruptionKind::Brightness;
  throw InvalidInput("unknown corruption '" + std::string(name) + "'");
}

std::string_view corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::None: return "none";
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::SmoothBlur: return "smooth_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
  }
  return "?";
}

std::span<const CorruptionKind> benchmark_corruptions() { return kBenchmarkCorruptions; }

void validate_corruption(const Corruption& c) {
  if (c.kind == CorruptionKind::None) return;
  if (c.severity < 1 || c.severity > 5) {
    throw InvalidInput("severity must be in 1..5, got " + std::to_string(c.severity));
  }
}

std::vector<double> apply_corruption(std::span<const double> x, const Corruption& c,
                                     std::uint64_t seed) {
  validate_corruption(c);
  const double s = static_cast<double>(c.severity);
  std::vector<double> y(x.begin(), x.end());
  std::mt19937_64 rng(seed);
  switch (c.kind) {
    case CorruptionKind::None:
      break;
    case CorruptionKind::GaussianNoise: {
      std::normal_distribution<double> noise(0.0, 0.1 * s);
      for (double& v : y) v += noise(rng);
      break;
    }
    case CorruptionKind::ImpulseNoise: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double p = 0.03 * s;
      for (double& v : y) {
        const double hit = u(rng);
        const double sign = u(rng);
        if (hit < p) v = sign < 0.5 ? -1.0 : 1.0;
      }
      break;
    }
    case CorruptionKind::SmoothBlur: {
      const auto radius = static_cast<std::ptrdiff_t>(c.severity);
      const auto n = static_cast<std::ptrdiff_t>(x.size());
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - radius);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + radius);
        double acc = 0.0;
        for (auto j = lo; j <= hi; ++j) acc += x[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
      }
      break;
    }
    case CorruptionKind::Contrast: {
      const double mean =
          x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      const double factor = 1.0 - 0.15 * s;
      for (double& v : y) v = mean + (v - mean) * factor;
      break;
    }
    case CorruptionKind::Brightness:
      for (double& v : y) v += 0.2 * s;
      break;
  }
  return y;
}

Matrix corrupt_inputs(const Matrix& inputs, const Corruption& c, std::uint64_t seed) {
  validate_corruption(c);
  Matrix out(inputs.rows(), inputs.cols());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto y = apply_corruption(inputs.row(i), c, derive_seed(seed, 0, i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

TrainResult train_source(const SignalDataset& data, const TrainOptions& options,
                         std::uint64_t seed) {
  const std::size_t m = data.inputs.rows();
  if (m < 2 || data.labels.size() != m) throw InvalidInput("train_source: bad dataset");
  if (options.batch_size < 2) throw InvalidInput("train_source: batch size must be >= 2");
  TrainResult result{Network::make_mlp(data.inputs.cols(), options.hidden, data.num_classes,
                                       derive_seed(seed, 10)),
                     {}};
  Network& net = result.net;
  net.meta().seed = seed;
  Optimizer opt(OptimizerKind::Adam, options.lr, net.all_params().size());
  std::mt19937_64 rng(derive_seed(seed, 11));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = m; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < m; start += options.batch_size) {
      std::size_t count = std::min(options.batch_size, m - start);
      if (count < 2) break;
      std::span<const std::size_t> idx(order.data() + start, count);
      Matrix x = data.inputs.gather_rows(idx);
      if (options.random_flips) {
        for (std::size_t i = 0; i < count; ++i) {
          if (coin(rng) < 0.5) {
            auto r = x.row(i);
            std::reverse(r.begin(), r.end());
          }
        }
      }
      auto fwd = forward(net, x, BNMode::TrainStats);
      if (!fwd.logits.all_finite()) {
        throw TrainingDiverged("logits became non-finite in epoch " + std::to_string(epoch + 1));
      }
      Matrix grad(count, net.num_classes());
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto p = softmax(fwd.logits.row(i));
        const std::size_t y = data.labels[idx[i]];
        loss_sum -= std::log(p[y]);
        if (argmax(p) == y) ++correct;
        for (std::size_t k = 0; k < p.size(); ++k) grad(i, k) = (p[k] - (k == y ? 1.0 : 0.0)) * inv;
      }
      if (!std::isfinite(loss_sum)) {
        throw TrainingDiverged("training loss became non-finite in epoch " +
                               std::to_string(epoch + 1));
      }
      const auto g = backward_all(net, fwd.cache, grad);
      auto params = net.all_params();
      opt.step(params, g);
      for (double v : params) {
        if (!std::isfinite(v)) throw TrainingDiverged("parameters became non-finite");
      }
      net.set_all_params(params);
      commit_running_stats(net, fwd.cache);
    }
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(m),
                          static_cast<double>(correct) / static_cast<double>(m)});
  }
  net.meta().trained_epochs = static_cast<std::int64_t>(options.epochs);
  return result;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) {
    throw InvalidInput("accuracy: prediction and label counts differ");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::size_t> predict(const Network& net, const Matrix& inputs, BNMode mode,
                                 std::size_t chunk) {
  std::vector<std::size_t> preds;
  preds.reserve(inputs.rows());
  for (std::size_t start = 0; start < inputs.rows(); start += chunk) {
    const auto count = std::min(chunk, inputs.rows() - start);
    const auto logits = forward(net, inputs.slice_rows(start, count), mode).logits;
    for (std::size_t i = 0; i < count; ++i) preds.push_back(argmax(logits.row(i)));
  }
  return preds;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, const StreamProtocol& protocol) {
  if (protocol.batch_size == 0) throw InvalidInput("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(protocol.order_seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += protocol.batch_size) {
    const auto end = std::min(n, start + protocol.batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1 && protocol.batch_size > 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

RunReport stream_eval(const Network& source, const SignalDataset& test,
                      const Corruption& corruption, const StreamProtocol& protocol,
                      const AdaptationConfig& config, std::uint64_t seed,
                      const StreamOptions& options) {
  return stream_eval(source, test, corruption, protocol, config, seed, options, nullptr);
}

RunReport stream_eval(const Network& source, const SignalDataset& test,
                      const Corruption& corruption, const StreamProtocol& protocol,
                      const AdaptationConfig& config, std::uint64_t seed,
                      const StreamOptions& options, Network* adapted) {
  if (test.inputs.cols() != source.input_dim()) {
    throw InvalidInput("stream_eval: test signals do not match the network input");
  }
  config.validate();
  const Matrix inputs = corrupt_inputs(test.inputs, corruption, derive_seed(seed, 1));
  const auto batches = make_batches(inputs.rows(), protocol);

  RunReport report;
  report.strategy = strategy_name(config.strategy);
  report.corruption = corruption_name(corruption.kind);
  report.severity = corruption.kind == CorruptionKind::None ? 0 : corruption.severity;
  report.seed = seed;
  report.n_test = inputs.rows();
  report.config = config_to_json(config, protocol.batch_size, source.num_classes());
  if (options.collect_features) report.features = Matrix(inputs.rows(), source.feature_dim());

  Adapter adapter(source, config, protocol.batch_size);
  std::size_t hits = 0;
  for (const auto& idx : batches) {
    const Matrix x = inputs.gather_rows(idx);
    const auto out = adapter.adapt_batch(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t label = test.labels[idx[i]];
      if (options.collect_features) {
        auto src = out.features.row(i);
        std::copy(src.begin(), src.end(), report.features.row(report.samples_seen).begin());
      }
      report.predictions.push_back(out.predictions[i]);
      report.labels.push_back(label);
      hits += out.predictions[i] == label ? 1 : 0;
      ++report.samples_seen;
    }
    report.batch_sizes.push_back(idx.size());
    report.per_batch_accuracy.push_back(static_cast<double>(hits) /
                                        static_cast<double>(report.samples_seen));
  }
  report.accuracy = accuracy(report.predictions, report.labels);
  report.optimizer_steps = adapter.optimizer_steps();
  report.params_digest = parameter_digest(adapter.network());
  if (adapted != nullptr) *adapted = adapter.network();
  return report;
}

std::vector<double> histogram(std::span<const double> values, double lo, double hi,
                              std::size_t bins) {
  if (bins == 0) throw InvalidInput("histogram needs at least one bin");
  std::vector<double> h(bins, 0.0);
  if (values.empty()) return h;
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 0.0;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      const double pos = std::floor((v - lo) / width);
      b = pos < 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    }
    h[b] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(values.size());
  return h;
}

double histogram_overlap(std::span<const double> h1, std::span<const double> h2) {
  if (h1.size() != h2.size()) throw InvalidInput("histograms differ in bin count");
  double total = 0.0;
  for (std::size_t b = 0; b < h1.size(); ++b) total += std::min(h1[b], h2[b]);
  return total;
}

}  // namespace ttc
