#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "ddhom/network.hpp"

namespace ddhom {

namespace detail {

inline void save_blob(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(sizeof(double) * t.data.size()));
}

inline Tensor load_blob(const std::filesystem::path& path, const std::vector<int>& shape) {
  Tensor t(shape);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path.string());
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(sizeof(double) * t.data.size()));
  if (!in) throw SchemaError("checkpoint blob truncated: " + path.string());
  return t;
}

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j;
  if (const auto* d = std::get_if<DenseSpec>(&l)) {
    j["type"] = "dense";
    j["units"] = d->units;
    j["activation"] = activation_name(d->act);
  } else if (const auto* c = std::get_if<Conv2DSpec>(&l)) {
    j["type"] = "conv2d";
    j["filters"] = c->filters;
    j["kernel"] = {c->geom.kh, c->geom.kw};
    j["stride"] = {c->geom.sh, c->geom.sw};
    j["padding"] = {c->geom.ph, c->geom.pw};
    j["activation"] = activation_name(c->act);
  } else if (const auto* m = std::get_if<MaxPool2DSpec>(&l)) {
    j["type"] = "maxpool2d";
    j["kernel"] = {m->geom.kh, m->geom.kw};
    j["stride"] = {m->geom.sh, m->geom.sw};
    j["padding"] = {m->geom.ph, m->geom.pw};
  } else if (std::holds_alternative<FlattenSpec>(l)) {
    j["type"] = "flatten";
  } else {
    j["type"] = "concat_extra";
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  std::string type = j["type"];
  if (type == "dense") return DenseSpec{j["units"], activation_from(j["activation"])};
  auto geom_of = [&](const nlohmann::json& jj) {
    ConvGeom g;
    g.kh = jj["kernel"][0];
    g.kw = jj["kernel"][1];
    g.sh = jj["stride"][0];
    g.sw = jj["stride"][1];
    g.ph = jj["padding"][0];
    g.pw = jj["padding"][1];
    return g;
  };
  if (type == "conv2d") return Conv2DSpec{j["filters"], geom_of(j), activation_from(j["activation"])};
  if (type == "maxpool2d") return MaxPool2DSpec{geom_of(j)};
  if (type == "flatten") return FlattenSpec{};
  if (type == "concat_extra") return ConcatExtraSpec{};
  throw SchemaError("unknown layer type: " + type);
}

}  // namespace detail

// Checkpoint = manifest.json (layer specs, shapes, normalization statistics,
// trainable flags, seed, training config echo, loss-history file name) plus
// one little-endian float64 blob per parameter tensor.
inline void save_network(const Network& net, const std::string& dir,
                         const nlohmann::json& training_config = {},
                         const std::string& loss_history_file = "") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = "ddhom-checkpoint-v1";
  const InputSpec& in = net.input();
  m["input"] = {{"image", in.image}, {"features", in.features}, {"h", in.h},
                {"w", in.w},         {"c", in.c},               {"extra_features", in.extra_features}};
  m["input_l2_factor"] = net.input_l2_factor;
  m["label_stats"] = {{"mean", net.label_stats.mean}, {"std", net.label_stats.stdev}};
  m["feature_stats"] = {{"mean", net.feature_stats.mean}, {"std", net.feature_stats.stdev}};
  m["extra_stats"] = {{"mean", net.extra_stats.mean}, {"std", net.extra_stats.stdev}};
  if (!training_config.is_null() && !training_config.empty()) m["training_config"] = training_config;
  if (!loss_history_file.empty()) m["loss_history"] = loss_history_file;
  m["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    nlohmann::json lj = detail::layer_to_json(net.layers()[l]);
    lj["trainable"] = static_cast<bool>(net.trainable()[l]);
    if (net.params()[l].has_params()) {
      std::string wname = "layer" + std::to_string(l) + "_W.bin";
      std::string bname = "layer" + std::to_string(l) + "_b.bin";
      lj["weights"] = wname;
      lj["bias"] = bname;
      lj["weights_shape"] = net.params()[l].W.shape;
      lj["bias_shape"] = net.params()[l].b.shape;
      detail::save_blob(fs::path(dir) / wname, net.params()[l].W);
      detail::save_blob(fs::path(dir) / bname, net.params()[l].b);
    }
    m["layers"].push_back(lj);
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error("cannot write checkpoint manifest in " + dir);
  out << m.dump(2) << "\n";
}

inline Network load_network(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw Error("cannot read checkpoint manifest in " + dir);
  nlohmann::json m = nlohmann::json::parse(in);
  if (m.value("format", "") != std::string("ddhom-checkpoint-v1"))
    throw SchemaError("not a network checkpoint: " + dir);
  InputSpec is;
  is.image = m["input"]["image"];
  is.features = m["input"]["features"];
  is.h = m["input"]["h"];
  is.w = m["input"]["w"];
  is.c = m["input"]["c"];
  is.extra_features = m["input"]["extra_features"];
  std::vector<LayerSpec> layers;
  for (const auto& lj : m["layers"]) layers.push_back(detail::layer_from_json(lj));
  Network net(is, std::move(layers));
  net.input_l2_factor = m["input_l2_factor"];
  net.label_stats.mean = m["label_stats"]["mean"];
  net.label_stats.stdev = m["label_stats"]["std"];
  net.feature_stats.mean = m["feature_stats"]["mean"].get<std::vector<double>>();
  net.feature_stats.stdev = m["feature_stats"]["std"].get<std::vector<double>>();
  net.extra_stats.mean = m["extra_stats"]["mean"].get<std::vector<double>>();
  net.extra_stats.stdev = m["extra_stats"]["std"].get<std::vector<double>>();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& lj = m["layers"][l];
    net.trainable()[l] = lj["trainable"];
    if (net.params()[l].has_params()) {
      std::vector<int> ws = lj["weights_shape"].get<std::vector<int>>();
      std::vector<int> bs = lj["bias_shape"].get<std::vector<int>>();
      if (ws != net.params()[l].W.shape || bs != net.params()[l].b.shape)
        throw SchemaError("checkpoint shape mismatch at layer " + std::to_string(l));
      net.params()[l].W = detail::load_blob(fs::path(dir) / lj["weights"].get<std::string>(), ws);
      net.params()[l].b = detail::load_blob(fs::path(dir) / lj["bias"].get<std::string>(), bs);
    }
  }
  return net;
}

}  // namespace ddhom
