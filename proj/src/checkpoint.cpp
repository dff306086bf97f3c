#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ttc/error.hpp"
#include "ttc/network.hpp"

namespace ttc {
namespace {

using nlohmann::json;

void write_array(std::ostream& out, std::span<const double> values) {
  out << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ',';
    out << format_real(values[i]);
  }
  out << ']';
}

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_activation(const json& layer) {
  if (!layer.contains("activation")) return Activation::Identity;
  const auto name = layer.at("activation").get<std::string>();
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  throw SchemaError("unknown activation '" + name + "'");
}

std::vector<double> real_array(const json& layer, const char* key) {
  if (!layer.contains(key)) throw SchemaError(std::string("layer is missing '") + key + "'");
  const auto& arr = layer.at(key);
  if (!arr.is_array()) throw SchemaError(std::string("'") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw SchemaError(std::string("'") + key + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<std::size_t> shape_of(const json& layer) {
  if (!layer.contains("shape") || !layer.at("shape").is_array()) {
    throw SchemaError("layer is missing 'shape'");
  }
  std::vector<std::size_t> shape;
  for (const auto& v : layer.at("shape")) {
    if (!v.is_number_unsigned()) throw SchemaError("'shape' must hold non-negative integers");
    shape.push_back(v.get<std::size_t>());
  }
  return shape;
}

Layer parse_layer(const json& layer, std::size_t index) {
  const auto where = "layer " + std::to_string(index) + ": ";
  try {
    if (!layer.is_object()) throw SchemaError("not an object");
    const auto kind = layer.at("kind").get<std::string>();
    const auto shape = shape_of(layer);
    if (kind == "dense") {
      if (shape.size() != 2) throw SchemaError("dense shape must be [out, in]");
      DenseLayer d;
      d.weight = Matrix(shape[0], shape[1], real_array(layer, "weight"));
      d.bias = real_array(layer, "bias");
      d.activation = parse_activation(layer);
      return d;
    }
    if (kind == "bn") {
      if (shape.size() != 1) throw SchemaError("bn shape must be [features]");
      BatchNormLayer b;
      b.gamma = real_array(layer, "gamma");
      b.beta = real_array(layer, "beta");
      b.running_mean = real_array(layer, "running_mean");
      b.running_var = real_array(layer, "running_var");
      b.eps = layer.at("eps").get<double>();
      b.momentum = layer.at("momentum").get<double>();
      b.activation = parse_activation(layer);
      if (b.gamma.size() != shape[0]) throw SchemaError("gamma length != shape");
      return b;
    }
    throw SchemaError("unknown layer kind '" + kind + "'");
  } catch (const SchemaError& e) {
    throw SchemaError(where + e.what());
  } catch (const InvalidInput& e) {
    throw SchemaError(where + e.what());
  } catch (const json::exception& e) {
    throw SchemaError(where + e.what());
  }
}

}  // namespace

std::string checkpoint_to_json(const Network& net) {
  for (double v : net.all_params()) {
    if (!std::isfinite(v)) throw InvalidInput("checkpoint: non-finite parameter");
  }
  std::ostringstream out;
  out << "{\"k\":" << net.num_classes() << ",\"layers\":[";
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (l > 0) out << ',';
    if (const auto* d = std::get_if<DenseLayer>(&net.layers()[l])) {
      out << "{\"kind\":\"dense\",\"shape\":[" << d->out_features() << ',' << d->in_features()
          << "],\"weight\":";
      write_array(out, d->weight.data());
      out << ",\"bias\":";
      write_array(out, d->bias);
      out << ",\"activation\":\"" << activation_name(d->activation) << "\"}";
    } else {
      const auto& b = std::get<BatchNormLayer>(net.layers()[l]);
      out << "{\"kind\":\"bn\",\"shape\":[" << b.features() << "],\"gamma\":";
      write_array(out, b.gamma);
      out << ",\"beta\":";
      write_array(out, b.beta);
      out << ",\"running_mean\":";
      write_array(out, b.running_mean);
      out << ",\"running_var\":";
      write_array(out, b.running_var);
      out << ",\"eps\":" << format_real(b.eps) << ",\"momentum\":" << format_real(b.momentum)
          << ",\"activation\":\"" << activation_name(b.activation) << "\"}";
    }
  }
  out << "],\"meta\":{\"seed\":" << net.meta().seed
      << ",\"trained_epochs\":" << net.meta().trained_epochs << "}}\n";
  return out.str();
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto text = checkpoint_to_json(net);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Network checkpoint_from_json(std::string_view text, std::optional<std::size_t> expected_classes) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) throw SchemaError("checkpoint must be a JSON object");
  if (!doc.contains("k") || !doc.at("k").is_number_unsigned()) {
    throw SchemaError("checkpoint is missing integer 'k'");
  }
  if (!doc.contains("layers") || !doc.at("layers").is_array()) {
    throw SchemaError("checkpoint is missing 'layers'");
  }
  const auto k = doc.at("k").get<std::size_t>();
  if (expected_classes && *expected_classes != k) {
    throw SchemaError("checkpoint has k=" + std::to_string(k) + ", expected " +
                      std::to_string(*expected_classes));
  }
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < doc.at("layers").size(); ++i) {
    layers.push_back(parse_layer(doc.at("layers")[i], i));
  }
  NetworkMeta meta;
  if (doc.contains("meta")) {
    try {
      const auto& m = doc.at("meta");
      meta.seed = m.value("seed", std::uint64_t{0});
      meta.trained_epochs = m.value("trained_epochs", std::int64_t{0});
    } catch (const json::exception& e) {
      throw SchemaError(std::string("bad 'meta': ") + e.what());
    }
  }
  Network net(std::move(layers), meta);
  if (net.num_classes() != k) {
    throw SchemaError("'k' disagrees with the final layer width");
  }
  return net;
}

Network load_checkpoint(const std::filesystem::path& path,
                        std::optional<std::size_t> expected_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), expected_classes);
}

}  // namespace ttc
