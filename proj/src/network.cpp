#include "ttc/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "ttc/error.hpp"

namespace ttc {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double activate(Activation act, double v) {
  return act == Activation::Relu ? std::max(v, 0.0) : v;
}

void apply_activation(Activation act, const Matrix& pre, Matrix& out) {
  out = pre;
  if (act == Activation::Relu) {
    for (double& v : out.data()) v = activate(act, v);
  }
}

// Chain rule through the activation, in place on `grad`.
void activation_backward(Activation act, const Matrix& pre, Matrix& grad) {
  if (act != Activation::Relu) return;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre.data()[i] > 0.0)) grad.data()[i] = 0.0;
  }
}

void check_cache(const Network& net, const ForwardCache& cache, const Matrix& grad_logits) {
  if (cache.layers.size() != net.layers().size()) {
    throw InvalidInput("backward: cache does not match network depth");
  }
  const std::size_t n = grad_logits.rows();
  if (grad_logits.cols() != net.num_classes()) {
    throw InvalidInput("backward: gradient has wrong class count");
  }
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& lc = cache.layers[l];
    const bool ok = std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              return lc.input.rows() == n && lc.input.cols() == d.in_features() &&
                     lc.pre_activation.cols() == d.out_features();
            },
            [&](const BatchNormLayer& b) {
              return lc.input.rows() == n && lc.input.cols() == b.features() &&
                     lc.normalized.rows() == n && lc.inv_std.size() == b.features();
            }},
        net.layers()[l]);
    if (!ok) throw InvalidInput("backward: cache does not match network or batch");
  }
}

// Shared reverse pass. Dense parameter gradients are only formed when
// `dense_out` is non-null.
void backward_impl(const Network& net, const ForwardCache& cache, const Matrix& grad_logits,
                   GradientSet& bn_out, std::vector<std::vector<double>>* dense_out) {
  check_cache(net, cache, grad_logits);
  const std::size_t n = grad_logits.rows();
  Matrix grad = grad_logits;
  std::size_t bn_slot = net.bn_count();
  for (std::size_t l = net.layers().size(); l-- > 0;) {
    const auto& lc = cache.layers[l];
    std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              activation_backward(d.activation, lc.pre_activation, grad);
              const std::size_t in = d.in_features();
              const std::size_t out = d.out_features();
              if (dense_out != nullptr) {
                auto& dw = (*dense_out)[2 * l];
                auto& db = (*dense_out)[2 * l + 1];
                dw.assign(out * in, 0.0);
                db.assign(out, 0.0);
                for (std::size_t i = 0; i < n; ++i) {
                  auto g = grad.row(i);
                  auto x = lc.input.row(i);
                  for (std::size_t o = 0; o < out; ++o) {
                    db[o] += g[o];
                    double* wrow = dw.data() + o * in;
                    for (std::size_t c = 0; c < in; ++c) wrow[c] += g[o] * x[c];
                  }
                }
              }
              if (l == 0) return;
              Matrix dx(n, in);
              for (std::size_t i = 0; i < n; ++i) {
                auto g = grad.row(i);
                auto dxi = dx.row(i);
                for (std::size_t o = 0; o < out; ++o) {
                  const double go = g[o];
                  if (go == 0.0) continue;
                  auto w = d.weight.row(o);
                  for (std::size_t c = 0; c < in; ++c) dxi[c] += go * w[c];
                }
              }
              grad = std::move(dx);
            },
            [&](const BatchNormLayer& b) {
              --bn_slot;
              activation_backward(b.activation, lc.pre_activation, grad);
              const std::size_t f = b.features();
              auto& dgamma = bn_out.gamma[bn_slot];
              auto& dbeta = bn_out.beta[bn_slot];
              std::fill(dgamma.begin(), dgamma.end(), 0.0);
              std::fill(dbeta.begin(), dbeta.end(), 0.0);
              for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < f; ++j) {
                  dgamma[j] += grad(i, j) * lc.normalized(i, j);
                  dbeta[j] += grad(i, j);
                }
              }
              if (dense_out != nullptr) {
                (*dense_out)[2 * l] = dgamma;
                (*dense_out)[2 * l + 1] = dbeta;
              }
              if (l == 0) return;
              Matrix dx(n, f);
              if (cache.mode == BNMode::EvalStats) {
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < f; ++j) {
                    dx(i, j) = grad(i, j) * b.gamma[j] * lc.inv_std[j];
                  }
                }
              } else {
                // Batch statistics depend on every row:
                // dx = inv_std / N * (N dxhat - sum dxhat - xhat * sum(dxhat * xhat))
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t j = 0; j < f; ++j) {
                  double sum_dxhat = 0.0;
                  double sum_dxhat_xhat = 0.0;
                  for (std::size_t i = 0; i < n; ++i) {
                    const double dxhat = grad(i, j) * b.gamma[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * lc.normalized(i, j);
                  }
                  for (std::size_t i = 0; i < n; ++i) {
                    const double dxhat = grad(i, j) * b.gamma[j];
                    dx(i, j) = lc.inv_std[j] * inv_n *
                               (static_cast<double>(n) * dxhat - sum_dxhat -
                                lc.normalized(i, j) * sum_dxhat_xhat);
                  }
                }
              }
              grad = std::move(dx);
            }},
        net.layers()[l]);
  }
}

}  // namespace

BatchNormLayer BatchNormLayer::identity(std::size_t features, Activation act) {
  BatchNormLayer b;
  b.gamma.assign(features, 1.0);
  b.beta.assign(features, 0.0);
  b.running_mean.assign(features, 0.0);
  b.running_var.assign(features, 1.0);
  b.activation = act;
  return b;
}

Network::Network(std::vector<Layer> layers, NetworkMeta meta)
    : layers_(std::move(layers)), meta_(meta) {
  if (layers_.empty()) throw SchemaError("network has no layers");
  if (!std::holds_alternative<DenseLayer>(layers_.back())) {
    throw SchemaError("final layer must be dense");
  }
  std::size_t width = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto where = "layer " + std::to_string(l) + ": ";
    std::visit(overloaded{
                   [&](const DenseLayer& d) {
                     if (d.weight.empty()) throw SchemaError(where + "empty weight");
                     if (d.bias.size() != d.out_features()) {
                       throw SchemaError(where + "bias length != output width");
                     }
                     if (l > 0 && d.in_features() != width) {
                       throw SchemaError(where + "input width mismatch");
                     }
                     if (l == 0) input_dim_ = d.in_features();
                     width = d.out_features();
                   },
                   [&](const BatchNormLayer& b) {
                     const std::size_t f = b.features();
                     if (f == 0 || b.beta.size() != f || b.running_mean.size() != f ||
                         b.running_var.size() != f) {
                       throw SchemaError(where + "batch-norm arrays differ in length");
                     }
                     if (!(b.eps > 0.0)) throw SchemaError(where + "eps must be positive");
                     if (!(b.momentum > 0.0 && b.momentum < 1.0)) {
                       throw SchemaError(where + "momentum must be in (0, 1)");
                     }
                     for (double v : b.running_var) {
                       if (!(v >= 0.0)) throw SchemaError(where + "negative running variance");
                     }
                     if (l > 0 && f != width) throw SchemaError(where + "width mismatch");
                     if (l == 0) input_dim_ = f;
                     width = f;
                     bn_index_.push_back(l);
                   }},
               layers_[l]);
  }
  if (bn_index_.empty()) throw SchemaError("network needs at least one batch-norm layer");
  const auto& head = std::get<DenseLayer>(layers_.back());
  num_classes_ = head.out_features();
  feature_dim_ = head.in_features();
  if (num_classes_ < 2) throw SchemaError("network must emit at least two logits");
}

Network Network::make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  std::size_t in = input_dim;
  auto dense = [&](std::size_t out) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    DenseLayer d;
    d.weight = Matrix(out, in);
    for (double& w : d.weight.data()) w = dist(rng);
    d.bias.assign(out, 0.0);
    in = out;
    return d;
  };
  for (std::size_t h : hidden) {
    layers.emplace_back(dense(h));
    layers.emplace_back(BatchNormLayer::identity(h, Activation::Relu));
  }
  layers.emplace_back(dense(num_classes));
  return Network(std::move(layers), NetworkMeta{seed, 0});
}

std::vector<double> Network::bn_affine_params() const {
  std::vector<double> flat;
  for (std::size_t i = 0; i < bn_count(); ++i) {
    const auto& b = bn(i);
    flat.insert(flat.end(), b.gamma.begin(), b.gamma.end());
    flat.insert(flat.end(), b.beta.begin(), b.beta.end());
  }
  return flat;
}

void Network::set_bn_affine_params(std::span<const double> flat) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < bn_count(); ++i) {
    auto& b = bn(i);
    if (pos + 2 * b.features() > flat.size()) throw InvalidInput("too few BN parameters");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), b.features(), b.gamma.begin());
    pos += b.features();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), b.features(), b.beta.begin());
    pos += b.features();
  }
  if (pos != flat.size()) throw InvalidInput("too many BN parameters");
}

std::vector<double> Network::all_params() const {
  std::vector<double> flat;
  for (const auto& layer : layers_) {
    std::visit(overloaded{[&](const DenseLayer& d) {
                            flat.insert(flat.end(), d.weight.data().begin(), d.weight.data().end());
                            flat.insert(flat.end(), d.bias.begin(), d.bias.end());
                          },
                          [&](const BatchNormLayer& b) {
                            flat.insert(flat.end(), b.gamma.begin(), b.gamma.end());
                            flat.insert(flat.end(), b.beta.begin(), b.beta.end());
                          }},
               layer);
  }
  return flat;
}

void Network::set_all_params(std::span<const double> flat) {
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& dst) {
    if (pos + dst.size() > flat.size()) throw InvalidInput("too few parameters");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
    pos += dst.size();
  };
  for (auto& layer : layers_) {
    std::visit(overloaded{[&](DenseLayer& d) {
                            take(d.weight.data());
                            take(d.bias);
                          },
                          [&](BatchNormLayer& b) {
                            take(b.gamma);
                            take(b.beta);
                          }},
               layer);
  }
  if (pos != flat.size()) throw InvalidInput("too many parameters");
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.weight == b.weight && a.bias == b.bias && a.activation == b.activation;
}

bool operator==(const BatchNormLayer& a, const BatchNormLayer& b) {
  return a.gamma == b.gamma && a.beta == b.beta && a.running_mean == b.running_mean &&
         a.running_var == b.running_var && a.eps == b.eps && a.momentum == b.momentum &&
         a.activation == b.activation;
}

bool operator==(const Network& a, const Network& b) {
  return a.layers_ == b.layers_ && a.meta_.seed == b.meta_.seed &&
         a.meta_.trained_epochs == b.meta_.trained_epochs;
}

ForwardResult forward(const Network& net, const Matrix& batch, BNMode mode) {
  const std::size_t n = batch.rows();
  if (n == 0) throw InvalidInput("forward: empty batch");
  if (batch.cols() != net.input_dim()) {
    throw InvalidInput("forward: batch has " + std::to_string(batch.cols()) +
                       " columns, network expects " + std::to_string(net.input_dim()));
  }
  const bool batch_stats = mode != BNMode::EvalStats;
  if (batch_stats && n < 2) {
    throw DegenerateBatch("forward: batch statistics need at least two samples");
  }
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.layers.resize(net.layers().size());
  Matrix x = batch;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& lc = result.cache.layers[l];
    lc.input = x;
    std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              const std::size_t in = d.in_features();
              const std::size_t out = d.out_features();
              Matrix pre(n, out);
              for (std::size_t i = 0; i < n; ++i) {
                auto xi = x.row(i);
                for (std::size_t o = 0; o < out; ++o) {
                  auto w = d.weight.row(o);
                  double acc = d.bias[o];
                  for (std::size_t c = 0; c < in; ++c) acc += w[c] * xi[c];
                  pre(i, o) = acc;
                }
              }
              lc.pre_activation = std::move(pre);
              apply_activation(d.activation, lc.pre_activation, x);
            },
            [&](const BatchNormLayer& b) {
              const std::size_t f = b.features();
              lc.mean.assign(f, 0.0);
              lc.var.assign(f, 0.0);
              lc.inv_std.assign(f, 0.0);
              if (batch_stats) {
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < f; ++j) lc.mean[j] += x(i, j);
                }
                for (double& m : lc.mean) m *= inv_n;
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < f; ++j) {
                    const double d = x(i, j) - lc.mean[j];
                    lc.var[j] += d * d;
                  }
                }
                for (double& v : lc.var) v *= inv_n;
              } else {
                lc.mean = b.running_mean;
                lc.var = b.running_var;
              }
              for (std::size_t j = 0; j < f; ++j) lc.inv_std[j] = 1.0 / std::sqrt(lc.var[j] + b.eps);
              lc.normalized = Matrix(n, f);
              lc.pre_activation = Matrix(n, f);
              for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < f; ++j) {
                  const double xhat = (x(i, j) - lc.mean[j]) * lc.inv_std[j];
                  lc.normalized(i, j) = xhat;
                  lc.pre_activation(i, j) = b.gamma[j] * xhat + b.beta[j];
                }
              }
              apply_activation(b.activation, lc.pre_activation, x);
            }},
        net.layers()[l]);
  }
  result.logits = std::move(x);
  return result;
}

void commit_running_stats(Network& net, const ForwardCache& cache) {
  if (cache.mode != BNMode::TrainStats) {
    throw InvalidInput("commit_running_stats: cache was not produced in TrainStats mode");
  }
  if (cache.layers.size() != net.layers().size()) {
    throw InvalidInput("commit_running_stats: cache does not match network");
  }
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (auto* b = std::get_if<BatchNormLayer>(&net.layers()[l])) {
      const auto& lc = cache.layers[l];
      if (lc.mean.size() != b->features()) {
        throw InvalidInput("commit_running_stats: cache does not match network");
      }
      for (std::size_t j = 0; j < b->features(); ++j) {
        b->running_mean[j] = (1.0 - b->momentum) * b->running_mean[j] + b->momentum * lc.mean[j];
        b->running_var[j] = (1.0 - b->momentum) * b->running_var[j] + b->momentum * lc.var[j];
      }
    }
  }
}

Matrix penultimate_features(const Network& net, const Matrix& batch, BNMode mode) {
  auto result = forward(net, batch, mode);
  return std::move(result.cache.layers.back().input);
}

GradientSet GradientSet::zeros_like(const Network& net) {
  GradientSet g;
  for (std::size_t i = 0; i < net.bn_count(); ++i) {
    g.gamma.emplace_back(net.bn(i).features(), 0.0);
    g.beta.emplace_back(net.bn(i).features(), 0.0);
  }
  return g;
}

void GradientSet::add_scaled(const GradientSet& other, double s) {
  if (other.gamma.size() != gamma.size()) throw InvalidInput("gradient sets differ in shape");
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    if (other.gamma[i].size() != gamma[i].size() || other.beta[i].size() != beta[i].size()) {
      throw InvalidInput("gradient sets differ in shape");
    }
    for (std::size_t j = 0; j < gamma[i].size(); ++j) gamma[i][j] += s * other.gamma[i][j];
    for (std::size_t j = 0; j < beta[i].size(); ++j) beta[i][j] += s * other.beta[i][j];
  }
}

void GradientSet::scale(double factor) {
  for (auto& v : gamma) {
    for (double& x : v) x *= factor;
  }
  for (auto& v : beta) {
    for (double& x : v) x *= factor;
  }
}

std::vector<double> GradientSet::flatten() const {
  std::vector<double> flat;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    flat.insert(flat.end(), gamma[i].begin(), gamma[i].end());
    flat.insert(flat.end(), beta[i].begin(), beta[i].end());
  }
  return flat;
}

bool GradientSet::is_zero() const {
  const auto flat = flatten();
  return std::all_of(flat.begin(), flat.end(), [](double v) { return v == 0.0; });
}

GradientSet backward_bn_affine(const Network& net, const ForwardCache& cache,
                               const Matrix& grad_logits) {
  auto grads = GradientSet::zeros_like(net);
  backward_impl(net, cache, grad_logits, grads, nullptr);
  return grads;
}

std::vector<double> backward_all(const Network& net, const ForwardCache& cache,
                                 const Matrix& grad_logits) {
  auto bn = GradientSet::zeros_like(net);
  std::vector<std::vector<double>> per_layer(2 * net.layers().size());
  backward_impl(net, cache, grad_logits, bn, &per_layer);
  std::vector<double> flat;
  for (const auto& part : per_layer) flat.insert(flat.end(), part.begin(), part.end());
  return flat;
}

std::string parameter_digest(const Network& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& layer : net.layers()) {
    std::visit(overloaded{[&](const DenseLayer& d) {
                            for (double v : d.weight.data()) mix(v);
                            for (double v : d.bias) mix(v);
                          },
                          [&](const BatchNormLayer& b) {
                            for (const auto* arr :
                                 {&b.gamma, &b.beta, &b.running_mean, &b.running_var}) {
                              for (double v : *arr) mix(v);
                            }
                          }},
               layer);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ttc
