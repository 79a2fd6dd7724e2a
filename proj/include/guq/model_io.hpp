#pragma once

// Model files are JSON documents:
//
//   { "format": "guq-model", "version": 1,
//     "config": { "architecture": "mlp", "input_shape": [2],
//                 "conv": [{"filters": 32, "kernel": 4}], "hidden": [64, 64],
//                 "num_classes": 2, "dense_bias": true },
//     "layers": [ { "name": "dense1.weight", "layer_index": 1,
//                   "shape": [2, 64], "data": [...] }, ... ] }
//
// Doubles are written in shortest round-trip form, so save/load is
// bit-exact.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "guq/errors.hpp"
#include "guq/model.hpp"

namespace guq {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const ConvSpec& s : c.conv) {
    conv.push_back({{"filters", s.filters}, {"kernel", s.kernel}});
  }
  return {{"architecture", to_string(c.architecture)},
          {"input_shape", c.input_shape},
          {"conv", conv},
          {"hidden", c.hidden},
          {"num_classes", c.num_classes},
          {"dense_bias", c.dense_bias}};
}

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj,
                                         const std::string& key,
                                         const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  using detail::get_as;
  using detail::require_key;
  ModelConfig c;
  c.architecture = parse_architecture(
      get_as<std::string>(require_key(j, "architecture", "config"),
                          "config.architecture"));
  c.input_shape = get_as<Shape>(require_key(j, "input_shape", "config"),
                                "config.input_shape");
  if (j.contains("conv")) {
    for (const auto& s : j.at("conv")) {
      c.conv.push_back(
          {get_as<std::size_t>(require_key(s, "filters", "config.conv"),
                               "config.conv.filters"),
           get_as<std::size_t>(require_key(s, "kernel", "config.conv"),
                               "config.conv.kernel")});
    }
  }
  c.hidden = get_as<std::vector<std::size_t>>(
      require_key(j, "hidden", "config"), "config.hidden");
  c.num_classes = get_as<std::size_t>(require_key(j, "num_classes", "config"),
                                      "config.num_classes");
  if (j.contains("dense_bias")) {
    c.dense_bias = get_as<bool>(j.at("dense_bias"), "config.dense_bias");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

inline std::string serialize_model(const Model& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : model.parameters().entries()) {
    layers.push_back({{"name", e.name},
                      {"layer_index", e.layer_index},
                      {"shape", e.value.shape()},
                      {"data", e.value.values()}});
  }
  nlohmann::json doc = {{"format", "guq-model"},
                        {"version", kModelFormatVersion},
                        {"config", model_config_to_json(model.config())},
                        {"layers", layers}};
  return doc.dump(1) + "\n";
}

inline Model deserialize_model(const std::string& text) {
  using detail::get_as;
  using detail::require_key;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  const auto version =
      get_as<int>(require_key(doc, "version", "model"), "model.version");
  if (version != kModelFormatVersion) {
    throw FormatError("model.version: unsupported version " +
                      std::to_string(version));
  }
  ModelConfig config = model_config_from_json(require_key(doc, "config", "model"));
  const auto layout = parameter_layout(config);
  const auto& layers = require_key(doc, "layers", "model");
  if (!layers.is_array() || layers.size() != layout.size()) {
    throw FormatError("model.layers: expected " +
                      std::to_string(layout.size()) + " entries");
  }
  std::vector<NamedTensor> entries;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::string where = "model.layers[" + std::to_string(i) + "]";
    const auto& l = layers[i];
    auto name = get_as<std::string>(require_key(l, "name", where), where + ".name");
    auto index = get_as<std::size_t>(require_key(l, "layer_index", where),
                                     where + ".layer_index");
    auto shape = get_as<Shape>(require_key(l, "shape", where), where + ".shape");
    auto data = get_as<std::vector<double>>(require_key(l, "data", where),
                                            where + ".data");
    if (name != layout[i].name) {
      throw FormatError(where + ".name: expected '" + layout[i].name + "', got '" +
                        name + "'");
    }
    if (index != layout[i].layer_index) {
      throw FormatError(where + ".layer_index: expected " +
                        std::to_string(layout[i].layer_index));
    }
    if (shape != layout[i].shape) {
      throw FormatError(where + ".shape: expected " +
                        shape_string(layout[i].shape) + ", got " +
                        shape_string(shape));
    }
    if (data.size() != shape_size(shape)) {
      throw FormatError(where + ".data: expected " +
                        std::to_string(shape_size(shape)) + " values, got " +
                        std::to_string(data.size()));
    }
    entries.push_back({std::move(name), index, Tensor(shape, std::move(data))});
  }
  return Model(std::move(config), ParameterSet(std::move(entries)));
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << serialize_model(model);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace guq
