#include "ttc/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ttc/error.hpp"

namespace ttc {
namespace {

using nlohmann::json;

// sum_i w_i H_i and its logit gradient; TENT passes w_i = 1/N.
LossResult weighted_entropy_loss(const Matrix& logits, std::span<const double> entropies,
                                 std::span<const double> weights) {
  LossResult out;
  out.grad_logits = Matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    out.loss += weights[i] * entropies[i];
    if (weights[i] == 0.0) continue;
    const auto g = entropy_grad_logits(logits.row(i));
    auto dst = out.grad_logits.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] = weights[i] * g[k];
  }
  return out;
}

template <class T>
T field(const json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInput(std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace

Strategy parse_strategy(std::string_view name) {
  if (name == "source") return Strategy::Source;
  if (name == "norm") return Strategy::Norm;
  if (name == "tent") return Strategy::Tent;
  if (name == "tent-filtered") return Strategy::TentFiltered;
  if (name == "ttc") return Strategy::Ttc;
  throw InvalidInput("unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Source: return "source";
    case Strategy::Norm: return "norm";
    case Strategy::Tent: return "tent";
    case Strategy::TentFiltered: return "tent-filtered";
    case Strategy::Ttc: return "ttc";
  }
  return "?";
}

void AdaptationConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("lr: must be a positive number");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidInput("tau: must be >= 0");
  if (accumulation_q && *accumulation_q < 1) throw InvalidInput("accumulation_q: must be >= 1");
  if (filter_threshold && !(*filter_threshold > 0.0)) {
    throw InvalidInput("filter_threshold: must be > 0");
  }
}

std::size_t AdaptationConfig::effective_q(std::size_t batch_size) const {
  if (!ga()) return 1;
  if (accumulation_q) return *accumulation_q;
  if (batch_size == 0) return 1;
  const auto q = std::llround(200.0 / static_cast<double>(batch_size));
  return static_cast<std::size_t>(std::max<long long>(1, q));
}

double AdaptationConfig::effective_filter_threshold(std::size_t num_classes) const {
  return filter_threshold.value_or(0.4 * std::log(static_cast<double>(num_classes)));
}

AdaptationConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidInput("config must be a JSON object");
  static const char* const kKnown[] = {"strategy",    "lr",          "optimizer",
                                       "tau",         "accumulation_q", "rla_enabled",
                                       "wa_enabled",  "ga_enabled",  "filter_threshold",
                                       "freeze_bn_stats"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw InvalidInput("unknown config field '" + key + "'");
    }
  }
  AdaptationConfig cfg;
  if (doc.contains("strategy")) cfg.strategy = parse_strategy(field<std::string>(doc, "strategy"));
  if (doc.contains("lr")) cfg.lr = field<double>(doc, "lr");
  if (doc.contains("optimizer")) {
    cfg.optimizer = parse_optimizer(field<std::string>(doc, "optimizer"));
  }
  if (doc.contains("tau")) cfg.tau = field<double>(doc, "tau");
  if (doc.contains("accumulation_q")) {
    if (!doc.at("accumulation_q").is_number_integer()) {
      throw InvalidInput("config field 'accumulation_q' must be an integer");
    }
    const auto q = doc.at("accumulation_q").get<long long>();
    if (q < 1) throw InvalidInput("accumulation_q: must be >= 1");
    cfg.accumulation_q = static_cast<std::size_t>(q);
  }
  if (doc.contains("rla_enabled")) cfg.rla_enabled = field<bool>(doc, "rla_enabled");
  if (doc.contains("wa_enabled")) cfg.wa_enabled = field<bool>(doc, "wa_enabled");
  if (doc.contains("ga_enabled")) cfg.ga_enabled = field<bool>(doc, "ga_enabled");
  if (doc.contains("filter_threshold")) {
    cfg.filter_threshold = field<double>(doc, "filter_threshold");
  }
  if (doc.contains("freeze_bn_stats")) cfg.freeze_bn_stats = field<bool>(doc, "freeze_bn_stats");
  cfg.validate();
  return cfg;
}

AdaptationConfig config_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed config: ") + e.what(), e.byte);
  }
  return config_from_json(doc);
}

json config_to_json(const AdaptationConfig& cfg, std::size_t batch_size, std::size_t num_classes) {
  json doc = json::object();
  doc["strategy"] = strategy_name(cfg.strategy);
  doc["lr"] = cfg.lr;
  doc["optimizer"] = optimizer_name(cfg.optimizer);
  doc["tau"] = cfg.tau;
  doc["accumulation_q"] = cfg.effective_q(batch_size);
  doc["rla_enabled"] = cfg.rla();
  doc["wa_enabled"] = cfg.wa();
  doc["ga_enabled"] = cfg.ga();
  doc["filter_threshold"] = cfg.effective_filter_threshold(num_classes);
  doc["freeze_bn_stats"] = cfg.freeze_bn_stats;
  return doc;
}

std::vector<double> row_entropies(const Matrix& logits) {
  std::vector<double> h(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) h[i] = entropy(softmax(logits.row(i)));
  return h;
}

LossResult tent_loss(const Matrix& logits) {
  if (logits.rows() == 0) throw InvalidInput("tent_loss: empty batch");
  const auto h = row_entropies(logits);
  const std::vector<double> w(logits.rows(), 1.0 / static_cast<double>(logits.rows()));
  return weighted_entropy_loss(logits, h, w);
}

std::vector<double> sample_weights(std::span<const double> entropies, double tau, std::size_t n) {
  if (n == 0) throw InvalidInput("sample_weights: n must be positive");
  if (!(tau >= 0.0)) throw InvalidInput("sample_weights: tau must be >= 0");
  std::vector<double> w(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    w[i] = std::pow(std::max(entropies[i], kEntropyClamp), -tau) / static_cast<double>(n);
  }
  return w;
}

LossResult ttc_loss(const Matrix& combined_logits, double tau, std::size_t n) {
  if (combined_logits.rows() == 0) throw InvalidInput("ttc_loss: empty batch");
  const auto h = row_entropies(combined_logits);
  const auto w = sample_weights(h, tau, n);
  return weighted_entropy_loss(combined_logits, h, w);
}

std::vector<bool> entropy_filter(std::span<const double> entropies, double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("entropy_filter: threshold must be > 0");
  std::vector<bool> mask(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) mask[i] = entropies[i] < threshold;
  return mask;
}

FilteredLoss filtered_tent_loss(const Matrix& logits, double threshold) {
  const auto h = row_entropies(logits);
  const auto mask = entropy_filter(h, threshold);
  FilteredLoss out;
  out.accepted = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  std::vector<double> w(logits.rows(), 0.0);
  if (out.accepted > 0) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask[i]) w[i] = 1.0 / static_cast<double>(out.accepted);
    }
  }
  out.result = weighted_entropy_loss(logits, h, w);
  return out;
}

Matrix flip_signals(const Matrix& batch) {
  Matrix out(batch.rows(), batch.cols());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto src = batch.row(i);
    std::reverse_copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix identity_augmentation(const Matrix& batch) { return batch; }

RlaResult rla_forward(const Network& net, const Matrix& batch, const Augmentation& aug,
                      BNMode mode) {
  const Matrix augmented = aug(batch);
  if (augmented.rows() != batch.rows() || augmented.cols() != batch.cols()) {
    throw InvalidInput("rla_forward: augmentation changed the batch shape");
  }
  RlaResult out;
  out.plain = forward(net, batch, mode);
  out.aug_logits = forward(net, augmented, mode).logits;
  out.combined = Matrix(batch.rows(), net.num_classes());
  for (std::size_t i = 0; i < out.combined.size(); ++i) {
    out.combined.data()[i] = (out.plain.logits.data()[i] + out.aug_logits.data()[i]) / 2.0;
  }
  return out;
}

GradientAccumulator::GradientAccumulator(std::size_t q, const Network& net)
    : q_(q), accumulated_(GradientSet::zeros_like(net)) {
  if (q_ < 1) throw InvalidInput("accumulation window must be >= 1");
}

bool accumulate_and_maybe_step(GradientAccumulator& acc, const GradientSet& grads, Optimizer& opt,
                               Network& net) {
  acc.accumulated_.add_scaled(grads, 1.0);
  ++acc.batches_seen_;
  if (acc.batches_seen_ < acc.q_) return false;
  auto params = net.bn_affine_params();
  opt.step(params, acc.accumulated_.flatten());
  net.set_bn_affine_params(params);
  acc.accumulated_.scale(0.0);
  acc.batches_seen_ = 0;
  return true;
}

Adapter::Adapter(Network source, AdaptationConfig config, std::size_t batch_size, Augmentation aug)
    : net_(std::move(source)),
      config_(config),
      aug_(std::move(aug)),
      opt_(config.optimizer, config.lr, net_.bn_affine_params().size()),
      acc_(config.effective_q(batch_size), net_) {
  config_.validate();
}

AdaptOutput Adapter::adapt_batch(const Matrix& batch) {
  if (batch.rows() == 0) throw InvalidInput("adapt_batch: empty batch");
  ++batches_;
  AdaptOutput out;
  const Strategy s = config_.strategy;

  auto finish = [&](const Matrix& logits, const ForwardResult& plain) {
    out.probs = softmax_rows(logits);
    out.predictions.resize(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) out.predictions[i] = argmax(out.probs.row(i));
    out.features = plain.cache.layers.back().input;
  };

  if (s == Strategy::Source || s == Strategy::Norm) {
    const auto mode = s == Strategy::Source ? BNMode::EvalStats : BNMode::TestBatchStats;
    const auto plain = forward(net_, batch, mode);
    finish(plain.logits, plain);
    return out;
  }

  const auto mode = config_.freeze_bn_stats ? BNMode::EvalStats : BNMode::TestBatchStats;
  ForwardResult plain;
  Matrix combined;
  if (config_.rla()) {
    auto rla = rla_forward(net_, batch, aug_, mode);
    plain = std::move(rla.plain);
    combined = std::move(rla.combined);
  } else {
    plain = forward(net_, batch, mode);
    combined = plain.logits;
  }
  finish(combined, plain);

  LossResult loss;
  if (s == Strategy::TentFiltered) {
    auto filtered = filtered_tent_loss(combined, config_.effective_filter_threshold(net_.num_classes()));
    out.contributing = filtered.accepted;
    if (filtered.accepted == 0) return out;
    loss = std::move(filtered.result);
  } else if (config_.wa()) {
    loss = ttc_loss(combined, config_.tau, batch.rows());
    out.contributing = batch.rows();
  } else {
    loss = tent_loss(combined);
    out.contributing = batch.rows();
  }

  // loss / Q; the gradient w.r.t. the combined logits passes to the plain
  // branch unchanged.
  const double q = static_cast<double>(acc_.q());
  for (double& g : loss.grad_logits.data()) g /= q;
  const auto grads = backward_bn_affine(net_, plain.cache, loss.grad_logits);
  out.stepped = accumulate_and_maybe_step(acc_, grads, opt_, net_);
  return out;
}

}  // namespace ttc
