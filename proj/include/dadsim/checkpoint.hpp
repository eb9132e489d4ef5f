#pragma once

#include "dadsim/common.hpp"
#include "dadsim/dataset.hpp"
#include "dadsim/losses.hpp"
#include "dadsim/lstm.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace dadsim {

inline constexpr int kCheckpointVersion = 1;

struct OptimizerMeta {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
};

struct TrainingMeta {
  std::string stage = "base";  // "base" or "improved"
  std::uint64_t seed = 0;
  Index epochs = 0;
  LossConfig loss;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json history = nlohmann::json::array();
};

struct ModelCheckpoint {
  ModelConfig config;
  ModelParams params;
  Scaler scaler;
  OptimizerMeta optimizer;
  TrainingMeta meta;
};

namespace detail {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

/// Field access with the dotted path in every error.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  Reader at(const std::string& key) const {
    if (!j_.is_object()) throw FormatError(path_ + ": expected an object");
    auto it = j_.find(key);
    if (it == j_.end()) throw FormatError(join(key) + ": missing field");
    return Reader(*it, join(key));
  }

  Reader at(std::size_t i) const {
    if (!j_.is_array() || i >= j_.size()) throw FormatError(path_ + "[" + std::to_string(i) + "]: missing element");
    return Reader(j_[i], path_ + "[" + std::to_string(i) + "]");
  }

  std::size_t size() const {
    if (!j_.is_array()) throw FormatError(path_ + ": expected an array");
    return j_.size();
  }

  double number() const {
    if (!j_.is_number()) throw FormatError(path_ + ": expected a number");
    return j_.get<double>();
  }

  Index integer() const {
    if (!j_.is_number_integer()) throw FormatError(path_ + ": expected an integer");
    return j_.get<Index>();
  }

  std::uint64_t uint64() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0))
      throw FormatError(path_ + ": expected a non-negative integer");
    return j_.get<std::uint64_t>();
  }

  std::string string() const {
    if (!j_.is_string()) throw FormatError(path_ + ": expected a string");
    return j_.get<std::string>();
  }

  Matrix matrix(Index rows, Index cols) const {
    const std::size_t n = size();
    if (n != static_cast<std::size_t>(rows * cols))
      throw FormatError(path_ + ": expected " + std::to_string(rows * cols) + " values (" + shape_str(rows, cols) +
                        "), got " + std::to_string(n));
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = at(static_cast<std::size_t>(r * cols + c)).number();
    return m;
  }

  Vector vector(Index len) const {
    const std::size_t n = size();
    if (n != static_cast<std::size_t>(len))
      throw FormatError(path_ + ": expected " + std::to_string(len) + " values, got " + std::to_string(n));
    Vector v(len);
    for (Index i = 0; i < len; ++i) v[i] = at(static_cast<std::size_t>(i)).number();
    return v;
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
};

inline void expect_dim(const Reader& r, Index expected, const std::string& what) {
  const Index got = r.integer();
  if (got != expected)
    throw FormatError(r.path() + ": " + std::to_string(got) + " does not match " + what + " " +
                      std::to_string(expected));
}

}  // namespace detail

inline nlohmann::json loss_config_to_json(const LossConfig& l) {
  return {{"kind", to_string(l.kind)}, {"alpha", l.alpha}, {"gamma", l.gamma}};
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},       {"state_dim", c.state_dim},           {"hidden_size", c.hidden_size},
          {"num_layers", c.num_layers},     {"dropout_rate", c.dropout_rate},     {"history_length", c.history_length},
          {"output_length", c.output_length}};
}

inline nlohmann::json checkpoint_to_json(const ModelCheckpoint& ck) {
  using nlohmann::json;
  check_shapes(ck.params, ck.config);
  json j;
  j["format_version"] = kCheckpointVersion;
  j["model_config"] = model_config_to_json(ck.config);
  j["optimizer_meta"] = {{"kind", "adam"},
                         {"learning_rate", ck.optimizer.learning_rate},
                         {"beta1", ck.optimizer.beta1},
                         {"beta2", ck.optimizer.beta2},
                         {"epsilon", ck.optimizer.epsilon},
                         {"clip_norm", ck.optimizer.clip_norm}};
  j["scaler"] = {{"mins", detail::vector_to_json(ck.scaler.mins)}, {"maxs", detail::vector_to_json(ck.scaler.maxs)}};
  json layers = json::array();
  for (const auto& L : ck.params.layers) {
    layers.push_back({{"shape", {{"hidden", L.w_recurrent.cols()}, {"input", L.w_input.cols()}}},
                      {"w_input", detail::matrix_to_json(L.w_input)},
                      {"w_recurrent", detail::matrix_to_json(L.w_recurrent)},
                      {"bias", detail::vector_to_json(L.bias)}});
  }
  j["layers"] = std::move(layers);
  j["head"] = {{"shape", {{"rows", ck.params.head_w.rows()}, {"cols", ck.params.head_w.cols()}}},
               {"w", detail::matrix_to_json(ck.params.head_w)},
               {"b", detail::vector_to_json(ck.params.head_b)}};
  j["training_meta"] = {{"stage", ck.meta.stage},
                        {"seed", ck.meta.seed},
                        {"epochs", ck.meta.epochs},
                        {"loss_config", loss_config_to_json(ck.meta.loss)},
                        {"metrics", ck.meta.metrics},
                        {"history", ck.meta.history}};
  return j;
}

inline ModelCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  detail::Reader root(j, "");
  const Index version = root.at("format_version").integer();
  if (version != kCheckpointVersion)
    throw FormatError("format_version: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  ModelCheckpoint ck;
  const auto mc = root.at("model_config");
  ck.config.input_dim = mc.at("input_dim").integer();
  ck.config.state_dim = mc.at("state_dim").integer();
  ck.config.hidden_size = mc.at("hidden_size").integer();
  ck.config.num_layers = mc.at("num_layers").integer();
  ck.config.dropout_rate = mc.at("dropout_rate").number();
  ck.config.history_length = mc.at("history_length").integer();
  ck.config.output_length = mc.at("output_length").integer();
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model_config: ") + e.what());
  }

  const auto om = root.at("optimizer_meta");
  if (om.at("kind").string() != "adam") throw FormatError("optimizer_meta.kind: expected \"adam\"");
  ck.optimizer.learning_rate = om.at("learning_rate").number();
  ck.optimizer.beta1 = om.at("beta1").number();
  ck.optimizer.beta2 = om.at("beta2").number();
  ck.optimizer.epsilon = om.at("epsilon").number();
  ck.optimizer.clip_norm = om.at("clip_norm").number();

  const auto sc = root.at("scaler");
  ck.scaler.mins = sc.at("mins").vector(ck.config.input_dim);
  ck.scaler.maxs = sc.at("maxs").vector(ck.config.input_dim);
  try {
    ck.scaler.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("scaler: ") + e.what());
  }

  const Index H = ck.config.hidden_size;
  const auto layers = root.at("layers");
  if (layers.size() != static_cast<std::size_t>(ck.config.num_layers))
    throw FormatError("layers: expected " + std::to_string(ck.config.num_layers) + " entries, got " +
                      std::to_string(layers.size()));
  for (Index l = 0; l < ck.config.num_layers; ++l) {
    const auto L = layers.at(static_cast<std::size_t>(l));
    const Index in = l == 0 ? ck.config.input_dim : H;
    detail::expect_dim(L.at("shape").at("hidden"), H, "model_config.hidden_size");
    detail::expect_dim(L.at("shape").at("input"), in, "layer input width");
    LayerParams p;
    p.w_input = L.at("w_input").matrix(4 * H, in);
    p.w_recurrent = L.at("w_recurrent").matrix(4 * H, H);
    p.bias = L.at("bias").vector(4 * H);
    ck.params.layers.push_back(std::move(p));
  }
  const auto head = root.at("head");
  detail::expect_dim(head.at("shape").at("rows"), ck.config.state_dim, "model_config.state_dim");
  detail::expect_dim(head.at("shape").at("cols"), H, "model_config.hidden_size");
  ck.params.head_w = head.at("w").matrix(ck.config.state_dim, H);
  ck.params.head_b = head.at("b").vector(ck.config.state_dim);

  const auto tm = root.at("training_meta");
  ck.meta.stage = tm.at("stage").string();
  ck.meta.seed = tm.at("seed").uint64();
  ck.meta.epochs = tm.at("epochs").integer();
  const auto lc = tm.at("loss_config");
  ck.meta.loss.kind = parse_loss_kind(lc.at("kind").string());
  ck.meta.loss.alpha = lc.at("alpha").number();
  ck.meta.loss.gamma = lc.at("gamma").number();
  ck.meta.metrics = tm.at("metrics").raw();
  ck.meta.history = tm.at("history").raw();
  if (!ck.meta.history.is_array()) throw FormatError("training_meta.history: expected an array");

  bool finite = true;
  for_each_block([&](const std::string&, auto v) { finite = finite && v.allFinite(); }, ck.params);
  if (!finite) throw FormatError("layers: non-finite parameter values");
  return ck;
}

inline void save_checkpoint(const ModelCheckpoint& ck, const std::string& path) {
  const std::string text = checkpoint_to_json(ck).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << text << '\n';
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("checkpoint '" + path + "' is not valid JSON (truncated?): " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace dadsim
