#pragma once

#include "dadsim/checkpoint.hpp"
#include "dadsim/dataset.hpp"
#include "dadsim/eval.hpp"
#include "dadsim/lstm.hpp"
#include "dadsim/simulator.hpp"
#include "dadsim/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dadsim::cli {

using nlohmann::json;

/// Every tunable of a run, grouped the way the JSON config file is.
struct RunConfig {
  std::uint64_t seed = 0;

  struct Data {
    Index state_dims = 3;
    Index control_dims = 1;
    Index validation_days = 5;
    Index test_days = 10;
    std::string origin = "2023-01-01";
  } data;

  SyntheticPlantConfig plant;

  struct Model {
    Index hidden_size = 64;
    Index num_layers = 2;
    double dropout_rate = 0.15;
    Index history_length = 30;
  } model;

  TrainConfig train;

  struct Improve {
    std::string experiment = "E1";
    Index min_el = 1440;
    Index max_el = 1440;
    Index episodes = 0;
    Index epochs = 50;
    std::string loss = "dilate";
    double alpha = 0.6;
    double gamma = 1e-2;
    Index test_horizon = 1440;
    Index test_episodes = 5;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    bool per_step = false;
  } improve;

  struct Eval {
    std::string split = "test";
    std::string bucket = "month";
  } eval;

  struct Paths {
    std::string data;
    std::string checkpoint;
    std::string out;
  } paths;
};

namespace detail {

template <class T>
void read_field(const json& section, const std::string& sec, const std::string& key, T& dst) {
  const auto& v = section.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    dst = v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config " + sec + "." + key + ": wrong type");
  }
}

/// Binds JSON keys of one section to fields; unknown keys are rejected.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    }
  }

  template <class T>
  Section& field(const std::string& key, T& dst) {
    known_.insert(key);
    if (node_ && node_->contains(key)) read_field(*node_, name_, key, dst);
    return *this;
  }

  void finish() const {
    if (!node_) return;
    for (auto it = node_->begin(); it != node_->end(); ++it)
      if (!known_.count(it.key())) throw ConfigError("config " + name_ + ": unknown key '" + it.key() + "'");
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> known_;
};

}  // namespace detail

inline void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  static const std::set<std::string> sections{"seed", "data", "plant", "model", "train", "improve", "eval", "paths"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!sections.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
  if (j.contains("seed")) detail::read_field(j, "root", "seed", c.seed);

  detail::Section(j, "data")
      .field("state_dims", c.data.state_dims)
      .field("control_dims", c.data.control_dims)
      .field("validation_days", c.data.validation_days)
      .field("test_days", c.data.test_days)
      .field("origin", c.data.origin)
      .finish();
  auto& p = c.plant;
  detail::Section(j, "plant")
      .field("days", p.days)
      .field("dt", p.dt)
      .field("q0", p.q0)
      .field("c_in", p.c_in)
      .field("k_r", p.k_r)
      .field("k_m", p.k_m)
      .field("k_out", p.k_out)
      .field("diurnal_amplitude", p.diurnal_amplitude)
      .field("aux_time_constant", p.aux_time_constant)
      .field("noise_std", p.noise_std)
      .field("initial_phosphate", p.initial_phosphate)
      .field("control_min", p.control_min)
      .field("control_max", p.control_max)
      .field("hold_min", p.hold_min)
      .field("hold_max", p.hold_max)
      .finish();
  detail::Section(j, "model")
      .field("hidden_size", c.model.hidden_size)
      .field("num_layers", c.model.num_layers)
      .field("dropout_rate", c.model.dropout_rate)
      .field("history_length", c.model.history_length)
      .finish();
  auto& t = c.train;
  detail::Section(j, "train")
      .field("epochs", t.epochs)
      .field("batch_size", t.batch_size)
      .field("learning_rate", t.learning_rate)
      .field("validation_fraction", t.validation_fraction)
      .field("pairs_per_epoch", t.pairs_per_epoch)
      .field("max_validation_pairs", t.max_validation_pairs)
      .field("clip_norm", t.clip_norm)
      .finish();
  auto& i = c.improve;
  detail::Section(j, "improve")
      .field("experiment", i.experiment)
      .field("min_el", i.min_el)
      .field("max_el", i.max_el)
      .field("episodes", i.episodes)
      .field("epochs", i.epochs)
      .field("loss", i.loss)
      .field("alpha", i.alpha)
      .field("gamma", i.gamma)
      .field("test_horizon", i.test_horizon)
      .field("test_episodes", i.test_episodes)
      .field("learning_rate", i.learning_rate)
      .field("clip_norm", i.clip_norm)
      .field("per_step", i.per_step)
      .finish();
  detail::Section(j, "eval").field("split", c.eval.split).field("bucket", c.eval.bucket).finish();
  detail::Section(j, "paths")
      .field("data", c.paths.data)
      .field("checkpoint", c.paths.checkpoint)
      .field("out", c.paths.out)
      .finish();
}

inline json to_json(const RunConfig& c) {
  const auto& p = c.plant;
  const auto& t = c.train;
  const auto& i = c.improve;
  return {
      {"seed", c.seed},
      {"data",
       {{"state_dims", c.data.state_dims},
        {"control_dims", c.data.control_dims},
        {"validation_days", c.data.validation_days},
        {"test_days", c.data.test_days},
        {"origin", c.data.origin}}},
      {"plant",
       {{"days", p.days},
        {"dt", p.dt},
        {"q0", p.q0},
        {"c_in", p.c_in},
        {"k_r", p.k_r},
        {"k_m", p.k_m},
        {"k_out", p.k_out},
        {"diurnal_amplitude", p.diurnal_amplitude},
        {"aux_time_constant", p.aux_time_constant},
        {"noise_std", p.noise_std},
        {"initial_phosphate", p.initial_phosphate},
        {"control_min", p.control_min},
        {"control_max", p.control_max},
        {"hold_min", p.hold_min},
        {"hold_max", p.hold_max}}},
      {"model",
       {{"hidden_size", c.model.hidden_size},
        {"num_layers", c.model.num_layers},
        {"dropout_rate", c.model.dropout_rate},
        {"history_length", c.model.history_length}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"validation_fraction", t.validation_fraction},
        {"pairs_per_epoch", t.pairs_per_epoch},
        {"max_validation_pairs", t.max_validation_pairs},
        {"clip_norm", t.clip_norm}}},
      {"improve",
       {{"experiment", i.experiment},
        {"min_el", i.min_el},
        {"max_el", i.max_el},
        {"episodes", i.episodes},
        {"epochs", i.epochs},
        {"loss", i.loss},
        {"alpha", i.alpha},
        {"gamma", i.gamma},
        {"test_horizon", i.test_horizon},
        {"test_episodes", i.test_episodes},
        {"learning_rate", i.learning_rate},
        {"clip_norm", i.clip_norm},
        {"per_step", i.per_step}}},
      {"eval", {{"split", c.eval.split}, {"bucket", c.eval.bucket}}},
      {"paths", {{"data", c.paths.data}, {"checkpoint", c.paths.checkpoint}, {"out", c.paths.out}}},
  };
}

inline RunConfig load_config_file(const std::string& path, bool* has_seed = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  try {
    const json j = json::parse(buf.str());
    apply_json(c, j);
    if (has_seed) *has_seed = j.is_object() && j.contains("seed");
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return c;
}

inline std::chrono::sys_seconds parse_origin(const std::string& s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3)
    throw ConfigError("data.origin '" + s + "' is not YYYY-MM-DD");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw ConfigError("data.origin '" + s + "' is not a valid date");
  return std::chrono::sys_seconds{std::chrono::sys_days{ymd}};
}

inline ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.input_dim = c.data.state_dims + c.data.control_dims;
  m.state_dim = c.data.state_dims;
  m.hidden_size = c.model.hidden_size;
  m.num_layers = c.model.num_layers;
  m.dropout_rate = c.model.dropout_rate;
  m.history_length = c.model.history_length;
  m.validate();
  return m;
}

inline ImprovementConfig improvement_config(const RunConfig& c) {
  ImprovementConfig ic;
  ic.regime.regime = parse_regime(c.improve.experiment);
  ic.regime.min_el = c.improve.min_el;
  ic.regime.max_el = c.improve.max_el;
  ic.regime.episodes = c.improve.episodes;
  ic.regime.seed = derive_seed(c.seed, {0xE9150DE});
  ic.epochs = c.improve.epochs;
  ic.loss = LossConfig{parse_loss_kind(c.improve.loss), c.improve.alpha, c.improve.gamma};
  ic.test_horizon = c.improve.test_horizon;
  ic.test_episodes = c.improve.test_episodes;
  ic.seed = c.seed;
  ic.learning_rate = c.improve.learning_rate;
  ic.clip_norm = c.improve.clip_norm;
  ic.per_step = c.improve.per_step;
  ic.validate();
  return ic;
}

inline void write_resolved(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << to_json(c).dump(2) << '\n';
}

inline TimeSeriesDataset load_data(const RunConfig& c, Index state_dims, Index control_dims) {
  auto ds = load_csv(c.paths.data, state_dims, control_dims);
  ds.origin = parse_origin(c.data.origin);
  ds.validate();
  return ds;
}

/// Rows of the chosen evaluation split as day-aligned episodes.
inline std::vector<EpisodePair> split_episodes(const TimeSeriesDataset& ds, const RunConfig& c, Index l) {
  const auto split = day_split(ds, c.data.validation_days, c.data.test_days);
  if (c.eval.split == "test") return day_episodes_in_rows(ds, l, split.validation_end, split.total);
  if (c.eval.split == "validation") return day_episodes_in_rows(ds, l, split.train_end, split.validation_end);
  if (c.eval.split == "all") return day_episodes_in_rows(ds, l, 0, split.total);
  throw ConfigError("eval.split must be test, validation or all");
}

// ---------------------------------------------------------------------------
// Subcommands

inline void run_gen_data(const RunConfig& c) {
  if (c.paths.out.empty()) throw ConfigError("--out is required");
  SyntheticPlantConfig p = c.plant;
  p.seed = c.seed;
  auto ds = gen_synthetic(p);
  write_csv(ds, c.paths.out);
  write_resolved(c, c.paths.out + ".config.json");
  std::cerr << "wrote " << ds.rows() << " rows to " << c.paths.out << '\n';
}

inline void run_train(const RunConfig& c) {
  if (c.paths.out.empty() || c.paths.data.empty()) throw ConfigError("--data and --out are required");
  const ModelConfig mcfg = model_config(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.validate();
  const auto raw = load_data(c, c.data.state_dims, c.data.control_dims);
  const auto split = day_split(raw, c.data.validation_days, c.data.test_days);
  const auto train_raw = slice_rows(raw, 0, split.train_end);
  const Scaler scaler = fit_scaler(train_raw);
  const auto scaled = apply_scaler(train_raw, scaler);
  auto ck = train_base(scaled, scaler, tc, mcfg, stderr_log());
  save_checkpoint(ck, c.paths.out);
  write_resolved(c, c.paths.out + ".config.json");
  std::cerr << "saved base checkpoint to " << c.paths.out << '\n';
}

inline void run_improve(const RunConfig& c) {
  if (c.paths.out.empty() || c.paths.data.empty() || c.paths.checkpoint.empty())
    throw ConfigError("--ckpt, --data and --out are required");
  const ImprovementConfig ic = improvement_config(c);
  const auto base = load_checkpoint(c.paths.checkpoint);
  const auto raw = load_data(c, base.config.state_dim, base.config.input_dim - base.config.state_dim);
  const auto scaled = apply_scaler(raw, base.scaler);
  const auto split = day_split(scaled, c.data.validation_days, c.data.test_days);
  ImproveObserver obs;
  obs.log = stderr_log();
  auto ck = improve_dad(base, scaled, split, ic, obs);
  save_checkpoint(ck, c.paths.out);
  write_resolved(c, c.paths.out + ".config.json");
  std::cerr << "saved improved checkpoint to " << c.paths.out << '\n';
}

inline void run_simulate(const RunConfig& c, Index t0, Index steps) {
  if (c.paths.out.empty() || c.paths.data.empty() || c.paths.checkpoint.empty())
    throw ConfigError("--ckpt, --data and --out are required");
  if (steps < 0) throw ConfigError("--steps must be >= 0");
  const auto ck = load_checkpoint(c.paths.checkpoint);
  const Index ds_dim = ck.config.state_dim;
  const Index as_dim = ck.config.input_dim - ds_dim;
  const auto raw = load_data(c, ds_dim, as_dim);
  const auto scaled = apply_scaler(raw, ck.scaler);
  if (t0 < ck.config.history_length - 1 || t0 + steps > scaled.rows() - 1)
    throw ConfigError("--t0/--steps fall outside the recorded data");
  const RowMatrix controls = scaled.values.block(t0 + 1, ds_dim, steps, as_dim);
  const auto traj = rollout(LstmPredictor{&ck.params, &ck.config}, scaled, t0, controls, ck.config.history_length);
  const RowMatrix states = invert_columns(traj.states, ck.scaler, 0);
  const RowMatrix acts = invert_columns(traj.controls, ck.scaler, ds_dim);
  auto out = csv::open_out(c.paths.out);
  out << "step";
  for (const auto& n : raw.names) out << ',' << n;
  out << '\n';
  for (Index j = 0; j < steps; ++j) {
    out << t0 + 1 + j;
    for (Index k = 0; k < ds_dim; ++k) out << ',' << csv::format_double(states(j, k));
    for (Index k = 0; k < as_dim; ++k) out << ',' << csv::format_double(acts(j, k));
    out << '\n';
  }
  if (!out) throw FormatError("failed writing '" + c.paths.out + "'");
  write_resolved(c, c.paths.out + ".config.json");
}

inline void run_evaluate(const RunConfig& c) {
  if (c.paths.out.empty() || c.paths.data.empty() || c.paths.checkpoint.empty())
    throw ConfigError("--ckpt, --data and --out are required");
  const BucketKind kind = parse_bucket_kind(c.eval.bucket);
  const auto ck = load_checkpoint(c.paths.checkpoint);
  const auto raw = load_data(c, ck.config.state_dim, ck.config.input_dim - ck.config.state_dim);
  const auto scaled = apply_scaler(raw, ck.scaler);
  const auto eps = split_episodes(scaled, c, ck.config.history_length);
  if (eps.empty()) throw ConfigError("no day episodes in the selected split");
  const auto rep = evaluate(ck.params, ck.config, scaled, eps, kind);
  write_episode_csv(rep, c.paths.out + "_episodes.csv");
  write_bucket_csv(rep, c.paths.out + "_buckets.csv");
  write_resolved(c, c.paths.out + "_config.json");
  std::cerr << "evaluated " << rep.episodes.size() << " episodes: mean mse " << csv::format_double(rep.mean_mse)
            << ", mean dtw " << csv::format_double(rep.mean_dtw) << ", diverged " << rep.diverged << '\n';
}

inline void run_compare(const RunConfig& c, const std::string& a, const std::string& b, const std::string& label_a,
                        const std::string& label_b) {
  if (c.paths.out.empty() || a.empty() || b.empty()) throw ConfigError("--a, --b and --out are required");
  const BucketKind kind = parse_bucket_kind(c.eval.bucket);
  const auto ra = read_episode_csv(a, kind);
  const auto rb = read_episode_csv(b, kind);
  const auto s = compare(ra, rb);
  write_comparison_csv(s, label_a, label_b, c.paths.out);
  const auto& o = s.overall();
  std::cerr << "overall: mse " << csv::format_double(o.mse_a) << " -> " << csv::format_double(o.mse_b) << " ("
            << csv::format_double(o.pct_mse) << "%), dtw " << csv::format_double(o.dtw_a) << " -> "
            << csv::format_double(o.dtw_b) << " (" << csv::format_double(o.pct_dtw) << "%)\n";
}

// ---------------------------------------------------------------------------
// Argument handling

using Applier = std::function<void(RunConfig&)>;

/// Registers a flag whose displayed default comes from RunConfig{} and which, when given,
/// overrides the config-file value.
template <class T, class Access>
void option(CLI::App* app, std::vector<Applier>& ap, const std::string& name, Access access, const std::string& desc) {
  RunConfig defaults;
  auto value = std::make_shared<T>(access(defaults));
  CLI::Option* opt = app->add_option(name, *value, desc)->capture_default_str();
  ap.push_back([opt, value, access](RunConfig& c) {
    if (opt->count() > 0) access(c) = *value;
  });
}

inline void path_options(CLI::App* app, std::vector<Applier>& ap, bool data, bool ckpt) {
  if (data) option<std::string>(app, ap, "--data", [](RunConfig& c) -> auto& { return c.paths.data; }, "input data CSV");
  if (ckpt)
    option<std::string>(app, ap, "--ckpt", [](RunConfig& c) -> auto& { return c.paths.checkpoint; }, "model checkpoint");
}

inline void data_options(CLI::App* app, std::vector<Applier>& ap) {
  option<Index>(app, ap, "--validation-days", [](RunConfig& c) -> auto& { return c.data.validation_days; },
                "whole days reserved for validation");
  option<Index>(app, ap, "--test-days", [](RunConfig& c) -> auto& { return c.data.test_days; },
                "whole days held out for testing");
  option<std::string>(app, ap, "--origin", [](RunConfig& c) -> auto& { return c.data.origin; },
                      "calendar date of row 0 (YYYY-MM-DD)");
}

inline std::uint64_t env_seed() {
  if (const char* s = std::getenv("RF_SEED")) {
    auto v = csv::parse_int(s);
    if (!v || *v < 0) throw ConfigError("RF_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(*v);
  }
  return 0;
}

/// Runs one subcommand. Returns 0 on success, 1 on validation errors, 2 on runtime failures.
inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Closed-loop LSTM simulator training with dataset aggregation", "dadsim"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string config_path;
  std::uint64_t seed_flag = 0;
  std::vector<Applier> ap;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config; flags override its values");
    sub->add_option("--seed", seed_flag, "random seed (defaults to config, then RF_SEED, then 0)")->capture_default_str();
    option<std::string>(sub, ap, "--out", [](RunConfig& c) -> auto& { return c.paths.out; }, "output path");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dosing-plant dataset");
  common(gen);
  option<Index>(gen, ap, "--days", [](RunConfig& c) -> auto& { return c.plant.days; }, "days of 1-minute data");
  option<double>(gen, ap, "--noise-std", [](RunConfig& c) -> auto& { return c.plant.noise_std; }, "process noise std");
  option<double>(gen, ap, "--diurnal-amplitude", [](RunConfig& c) -> auto& { return c.plant.diurnal_amplitude; },
                 "relative amplitude of the daily inflow cycle");
  option<double>(gen, ap, "--control-min", [](RunConfig& c) -> auto& { return c.plant.control_min; }, "lowest dosage");
  option<double>(gen, ap, "--control-max", [](RunConfig& c) -> auto& { return c.plant.control_max; }, "highest dosage");

  auto* train = app.add_subcommand("train", "teacher-forced base training");
  common(train);
  path_options(train, ap, true, false);
  data_options(train, ap);
  option<Index>(train, ap, "--state-dims", [](RunConfig& c) -> auto& { return c.data.state_dims; }, "state columns");
  option<Index>(train, ap, "--control-dims", [](RunConfig& c) -> auto& { return c.data.control_dims; }, "control columns");
  option<Index>(train, ap, "--hidden", [](RunConfig& c) -> auto& { return c.model.hidden_size; }, "LSTM units per layer");
  option<Index>(train, ap, "--layers", [](RunConfig& c) -> auto& { return c.model.num_layers; }, "LSTM layers");
  option<double>(train, ap, "--dropout", [](RunConfig& c) -> auto& { return c.model.dropout_rate; }, "inter-layer dropout");
  option<Index>(train, ap, "--history", [](RunConfig& c) -> auto& { return c.model.history_length; }, "window length l");
  option<Index>(train, ap, "--epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }, "training epochs");
  option<Index>(train, ap, "--batch-size", [](RunConfig& c) -> auto& { return c.train.batch_size; }, "pairs per batch");
  option<double>(train, ap, "--lr", [](RunConfig& c) -> auto& { return c.train.learning_rate; }, "Adam learning rate");
  option<double>(train, ap, "--val-fraction", [](RunConfig& c) -> auto& { return c.train.validation_fraction; },
                 "fraction of training pairs used for validation");
  option<Index>(train, ap, "--pairs-per-epoch", [](RunConfig& c) -> auto& { return c.train.pairs_per_epoch; },
                "random training pairs per epoch (0 = all)");

  auto* improve = app.add_subcommand("improve", "improve a checkpoint on its own rollouts");
  common(improve);
  path_options(improve, ap, true, true);
  data_options(improve, ap);
  option<std::string>(improve, ap, "--experiment", [](RunConfig& c) -> auto& { return c.improve.experiment; },
                      "episode regime: E1, E2, E3 or E4");
  option<Index>(improve, ap, "--min-el", [](RunConfig& c) -> auto& { return c.improve.min_el; }, "minimum episode length");
  option<Index>(improve, ap, "--max-el", [](RunConfig& c) -> auto& { return c.improve.max_el; }, "maximum episode length");
  option<Index>(improve, ap, "--episodes", [](RunConfig& c) -> auto& { return c.improve.episodes; },
                "episodes per epoch for E3/E4 (0 = cover the training rows once)");
  option<std::string>(improve, ap, "--loss", [](RunConfig& c) -> auto& { return c.improve.loss; }, "mse or dilate");
  option<double>(improve, ap, "--alpha", [](RunConfig& c) -> auto& { return c.improve.alpha; }, "DILATE shape weight");
  option<double>(improve, ap, "--gamma", [](RunConfig& c) -> auto& { return c.improve.gamma; }, "soft-DTW smoothing");
  option<Index>(improve, ap, "--epochs", [](RunConfig& c) -> auto& { return c.improve.epochs; }, "improvement epochs");
  option<double>(improve, ap, "--lr", [](RunConfig& c) -> auto& { return c.improve.learning_rate; }, "Adam learning rate");
  option<Index>(improve, ap, "--test-horizon", [](RunConfig& c) -> auto& { return c.improve.test_horizon; },
                "steps of the per-epoch test simulation");
  option<Index>(improve, ap, "--test-episodes", [](RunConfig& c) -> auto& { return c.improve.test_episodes; },
                "validation days used by the test simulation");
  auto per_step = std::make_shared<bool>(false);
  auto* per_step_opt =
      improve->add_flag("--per-step-dad", *per_step, "train one-step on aggregated pairs instead of whole rollouts");
  ap.push_back([per_step_opt, per_step](RunConfig& c) {
    if (per_step_opt->count() > 0) c.improve.per_step = *per_step;
  });

  auto* simulate = app.add_subcommand("simulate", "closed-loop rollout under recorded controls");
  common(simulate);
  path_options(simulate, ap, true, true);
  option<std::string>(simulate, ap, "--origin", [](RunConfig& c) -> auto& { return c.data.origin; },
                      "calendar date of row 0 (YYYY-MM-DD)");
  Index t0 = 1439, steps = 1440;
  simulate->add_option("--t0", t0, "index of the last recorded row before the rollout")->capture_default_str();
  simulate->add_option("--steps", steps, "rollout length")->capture_default_str();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "per-episode MSE/DTW over day-aligned rollouts");
  common(evaluate_cmd);
  path_options(evaluate_cmd, ap, true, true);
  data_options(evaluate_cmd, ap);
  option<std::string>(evaluate_cmd, ap, "--split", [](RunConfig& c) -> auto& { return c.eval.split; },
                      "test, validation or all");
  option<std::string>(evaluate_cmd, ap, "--bucket", [](RunConfig& c) -> auto& { return c.eval.bucket; },
                      "month or season");

  auto* compare_cmd = app.add_subcommand("compare", "compare two per-episode reports");
  common(compare_cmd);
  std::string rep_a, rep_b, label_a = "A", label_b = "B";
  compare_cmd->add_option("--a", rep_a, "reference per-episode CSV");
  compare_cmd->add_option("--b", rep_b, "candidate per-episode CSV");
  compare_cmd->add_option("--label-a", label_a, "column label for A")->capture_default_str();
  compare_cmd->add_option("--label-b", label_b, "column label for B")->capture_default_str();
  option<std::string>(compare_cmd, ap, "--bucket", [](RunConfig& c) -> auto& { return c.eval.bucket; },
                      "month or season");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    RunConfig cfg;
    bool seed_in_config = false;
    if (!config_path.empty()) cfg = load_config_file(config_path, &seed_in_config);
    if (!seed_in_config) cfg.seed = env_seed();
    if (sub->get_option("--seed")->count() > 0) cfg.seed = seed_flag;
    for (const auto& a : ap) a(cfg);

    const std::string name = sub->get_name();
    if (name == "gen-data") run_gen_data(cfg);
    else if (name == "train") run_train(cfg);
    else if (name == "improve") run_improve(cfg);
    else if (name == "simulate") run_simulate(cfg, t0, steps);
    else if (name == "evaluate") run_evaluate(cfg);
    else if (name == "compare") run_compare(cfg, rep_a, rep_b, label_a, label_b);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace dadsim::cli
