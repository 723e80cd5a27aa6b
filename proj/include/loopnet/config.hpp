#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "loopnet/common.hpp"

namespace loopnet {

using ordered_json = nlohmann::ordered_json;

// ----------------------------- model -----------------------------

struct ModelConfig {
  int64_t vocab_size = 256;
  int64_t context_len = 128;
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t n_layers = 1;
  bool tie_embeddings = true;
  double dropout = 0.0;

  void validate() const {
    if (vocab_size < 2) {
      throw ConfigError("model.vocab_size must be >= 2");
    }
    if (context_len < 1) {
      throw ConfigError("model.context_len must be >= 1");
    }
    if (d_model < 1) {
      throw ConfigError("model.d_model must be >= 1");
    }
    if (n_heads < 1) {
      throw ConfigError("model.n_heads must be >= 1");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("model.d_model must be divisible by model.n_heads");
    }
    if (n_layers < 1) {
      throw ConfigError("model.n_layers must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("model.dropout must lie in [0,1)");
    }
    if (dropout != 0.0) {
      throw ConfigError(
          "model.dropout > 0 is not supported by this build (deterministic "
          "training only); set it to 0");
    }
  }
};

// ----------------------------- loop -----------------------------

enum class LoopMode { baseline, loop };

inline std::string to_string(LoopMode m) {
  return m == LoopMode::baseline ? "baseline" : "loop";
}

struct LoopConfig {
  LoopMode mode = LoopMode::baseline;
  int64_t outer_loops = 1;
  int64_t inner_loops = 1;

  void validate() const {
    if (outer_loops < 1 || inner_loops < 1) {
      throw ConfigError("loop.outer_loops and loop.inner_loops must be >= 1");
    }
    if (mode == LoopMode::baseline &&
        (outer_loops != 1 || inner_loops != 1)) {
      throw ConfigError(
          "loop.mode 'baseline' requires outer_loops = inner_loops = 1 "
          "(baseline has no gated skips to repeat)");
    }
  }
};

// ----------------------------- train -----------------------------

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

struct TrainConfig {
  double lr_max = 3e-4;
  double lr_min = 3e-5;
  int64_t warmup_steps = 100;
  int64_t total_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  int64_t batch_size = 16;
  double grad_clip = 1.0;
  int64_t eval_interval = 50;
  int64_t eval_batches = 8;
  uint64_t seed = 1;
  Precision precision = Precision::f32;
  int64_t checkpoint_interval = 0;  // 0: checkpoint at the end only

  void validate() const {
    if (!(lr_max > 0.0)) {
      throw ConfigError("train.lr_max must be positive");
    }
    if (!(lr_min >= 0.0) || lr_min > lr_max) {
      throw ConfigError("train.lr_min must lie in [0, train.lr_max]");
    }
    if (warmup_steps < 0) {
      throw ConfigError("train.warmup_steps must be >= 0");
    }
    if (total_steps < 1) {
      throw ConfigError("train.total_steps must be >= 1");
    }
    if (warmup_steps > total_steps) {
      throw ConfigError("train.warmup_steps must be <= train.total_steps");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train.betas must lie in [0,1)");
    }
    if (!(weight_decay >= 0.0)) {
      throw ConfigError("train.weight_decay must be >= 0");
    }
    if (batch_size < 1) {
      throw ConfigError("train.batch_size must be >= 1");
    }
    if (!(grad_clip > 0.0)) {
      throw ConfigError("train.grad_clip must be positive");
    }
    if (eval_interval < 1) {
      throw ConfigError("train.eval_interval must be >= 1");
    }
    if (eval_batches < 1) {
      throw ConfigError("train.eval_batches must be >= 1");
    }
    if (checkpoint_interval < 0) {
      throw ConfigError("train.checkpoint_interval must be >= 0");
    }
  }
};

struct DataConfig {
  std::string dir;  // directory with train.bin / val.bin / manifest.json
  std::string out;  // run output directory
};

struct RunConfig {
  ModelConfig model;
  LoopConfig loop;
  TrainConfig train;
  DataConfig data;
  // Which sections the config file spelled out (drives preset-conflict
  // detection: a preset plus an explicit model/loop section is ambiguous).
  bool has_model_section = false;
  bool has_loop_section = false;
  bool has_train_section = false;
};

// ----------------------------- JSON parsing -----------------------------

namespace detail {

inline void expect_keys(const ordered_json& j, const std::string& where,
                        const std::vector<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError(where + " must be a JSON object");
  }
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const auto& k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

inline int64_t get_int(const ordered_json& j, const char* key,
                       const std::string& where, int64_t fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const auto& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(where + "." + key + " must be an integer");
  }
  return v.get<int64_t>();
}

inline double get_real(const ordered_json& j, const char* key,
                       const std::string& where, double fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const auto& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(where + "." + key + " must be a number");
  }
  return v.get<double>();
}

inline bool get_bool(const ordered_json& j, const char* key,
                     const std::string& where, bool fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const auto& v = j.at(key);
  if (!v.is_boolean()) {
    throw ConfigError(where + "." + key + " must be a boolean");
  }
  return v.get<bool>();
}

inline std::string get_string(const ordered_json& j, const char* key,
                              const std::string& where,
                              const std::string& fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const auto& v = j.at(key);
  if (!v.is_string()) {
    throw ConfigError(where + "." + key + " must be a string");
  }
  return v.get<std::string>();
}

}  // namespace detail

inline ModelConfig model_from_json(const ordered_json& j,
                                   const std::string& where = "model") {
  detail::expect_keys(j, where,
                      {"vocab_size", "context_len", "d_model", "n_heads",
                       "n_layers", "tie_embeddings", "dropout"});
  ModelConfig d;
  ModelConfig c;
  c.vocab_size = detail::get_int(j, "vocab_size", where, d.vocab_size);
  c.context_len = detail::get_int(j, "context_len", where, d.context_len);
  c.d_model = detail::get_int(j, "d_model", where, d.d_model);
  c.n_heads = detail::get_int(j, "n_heads", where, d.n_heads);
  c.n_layers = detail::get_int(j, "n_layers", where, d.n_layers);
  c.tie_embeddings =
      detail::get_bool(j, "tie_embeddings", where, d.tie_embeddings);
  c.dropout = detail::get_real(j, "dropout", where, d.dropout);
  c.validate();
  return c;
}

inline ordered_json model_to_json(const ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["context_len"] = c.context_len;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["tie_embeddings"] = c.tie_embeddings;
  j["dropout"] = c.dropout;
  return j;
}

inline LoopConfig loop_from_json(const ordered_json& j,
                                 const std::string& where = "loop") {
  detail::expect_keys(j, where, {"mode", "outer_loops", "inner_loops"});
  LoopConfig c;
  const std::string mode = detail::get_string(j, "mode", where, "baseline");
  if (mode == "baseline") {
    c.mode = LoopMode::baseline;
  } else if (mode == "loop") {
    c.mode = LoopMode::loop;
  } else {
    throw ConfigError(where + ".mode must be 'baseline' or 'loop', got '" +
                      mode + "'");
  }
  c.outer_loops = detail::get_int(j, "outer_loops", where, 1);
  c.inner_loops = detail::get_int(j, "inner_loops", where, 1);
  c.validate();
  return c;
}

inline ordered_json loop_to_json(const LoopConfig& c) {
  ordered_json j;
  j["mode"] = to_string(c.mode);
  j["outer_loops"] = c.outer_loops;
  j["inner_loops"] = c.inner_loops;
  return j;
}

inline TrainConfig train_from_json(const ordered_json& j,
                                   const std::string& where = "train") {
  detail::expect_keys(
      j, where,
      {"lr_max", "lr_min", "warmup_steps", "total_steps", "betas",
       "weight_decay", "batch_size", "grad_clip", "eval_interval",
       "eval_batches", "seed", "precision", "checkpoint_interval"});
  TrainConfig d;
  TrainConfig c;
  c.lr_max = detail::get_real(j, "lr_max", where, d.lr_max);
  c.lr_min = detail::get_real(j, "lr_min", where, d.lr_min);
  c.warmup_steps = detail::get_int(j, "warmup_steps", where, d.warmup_steps);
  c.total_steps = detail::get_int(j, "total_steps", where, d.total_steps);
  if (j.contains("betas")) {
    const auto& b = j.at("betas");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() ||
        !b[1].is_number()) {
      throw ConfigError(where + ".betas must be an array of two numbers");
    }
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  c.weight_decay =
      detail::get_real(j, "weight_decay", where, d.weight_decay);
  c.batch_size = detail::get_int(j, "batch_size", where, d.batch_size);
  c.grad_clip = detail::get_real(j, "grad_clip", where, d.grad_clip);
  c.eval_interval =
      detail::get_int(j, "eval_interval", where, d.eval_interval);
  c.eval_batches = detail::get_int(j, "eval_batches", where, d.eval_batches);
  c.seed = static_cast<uint64_t>(
      detail::get_int(j, "seed", where, static_cast<int64_t>(d.seed)));
  const std::string prec =
      detail::get_string(j, "precision", where, to_string(d.precision));
  if (prec == "f32") {
    c.precision = Precision::f32;
  } else if (prec == "f64") {
    c.precision = Precision::f64;
  } else {
    throw ConfigError(where + ".precision must be 'f32' or 'f64', got '" +
                      prec + "'");
  }
  c.checkpoint_interval = detail::get_int(j, "checkpoint_interval", where,
                                          d.checkpoint_interval);
  c.validate();
  return c;
}

inline ordered_json train_to_json(const TrainConfig& c) {
  ordered_json j;
  j["lr_max"] = c.lr_max;
  j["lr_min"] = c.lr_min;
  j["warmup_steps"] = c.warmup_steps;
  j["total_steps"] = c.total_steps;
  j["betas"] = ordered_json::array({c.beta1, c.beta2});
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["grad_clip"] = c.grad_clip;
  j["eval_interval"] = c.eval_interval;
  j["eval_batches"] = c.eval_batches;
  j["seed"] = c.seed;
  j["precision"] = to_string(c.precision);
  j["checkpoint_interval"] = c.checkpoint_interval;
  return j;
}

/// Parses a full run-config document. Unknown keys anywhere are an error;
/// every section is optional and falls back to defaults.
inline RunConfig parse_run_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  detail::expect_keys(j, "config root", {"model", "loop", "train", "data"});
  RunConfig rc;
  if (j.contains("model")) {
    rc.model = model_from_json(j.at("model"));
    rc.has_model_section = true;
  }
  if (j.contains("loop")) {
    rc.loop = loop_from_json(j.at("loop"));
    rc.has_loop_section = true;
  }
  if (j.contains("train")) {
    rc.train = train_from_json(j.at("train"));
    rc.has_train_section = true;
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::expect_keys(d, "data", {"dir", "out"});
    rc.data.dir = detail::get_string(d, "dir", "data", "");
    rc.data.out = detail::get_string(d, "out", "data", "");
  }
  return rc;
}

// ----------------------------- presets -----------------------------

struct Preset {
  std::string name;
  std::string description;
  ModelConfig model;
  LoopConfig loop;
  TrainConfig train;
};

/// Named architecture/training bundles. The gpt2-* presets carry the
/// full-width shapes used for parameter accounting; the exp*-* presets are
/// width- and context-scaled desk variants of the same arms, sized to train
/// in minutes on a CPU.
inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = [] {
    std::vector<Preset> v;

    const auto full = [](int64_t layers) {
      ModelConfig m;
      m.vocab_size = 50257;
      m.context_len = 1024;
      m.d_model = 768;
      m.n_heads = 12;
      m.n_layers = layers;
      return m;
    };
    const auto desk = [](int64_t layers) {
      ModelConfig m;
      m.vocab_size = 256;
      m.context_len = 128;
      m.d_model = 128;
      m.n_heads = 4;
      m.n_layers = layers;
      return m;
    };
    const auto loop_cfg = [](int64_t outer, int64_t inner) {
      LoopConfig l;
      l.mode = LoopMode::loop;
      l.outer_loops = outer;
      l.inner_loops = inner;
      return l;
    };
    const auto desk_train = [](int64_t steps) {
      TrainConfig t;
      t.total_steps = steps;
      t.batch_size = 16;
      t.eval_interval = 50;
      t.eval_batches = 8;
      return t;
    };

    v.push_back({"gpt2-base",
                 "12-layer GPT-2-class baseline at full width (d 768, ctx "
                 "1024, vocab 50257); one pass, no loops",
                 full(12), LoopConfig{}, TrainConfig{}});
    v.push_back({"gpt2-81m-loop",
                 "6-layer full-width stack looped 6 times over all layers "
                 "(outer 6, inner 1)",
                 full(6), loop_cfg(6, 1), TrainConfig{}});
    v.push_back({"gpt2-67m-loop",
                 "4-layer full-width stack, 6 outer loops and 2 inner loops "
                 "per layer (12 loops total)",
                 full(4), loop_cfg(6, 2), TrainConfig{}});
    {
      ModelConfig m = full(1);
      m.context_len = 256;  // keeps the 45M-class budget (ctx 1024 overshoots)
      v.push_back({"gpt2-45m",
                   "1-layer full-width baseline at ctx 256 (45M-class "
                   "parameter budget); one pass, no loops",
                   m, LoopConfig{}, TrainConfig{}});
      v.push_back({"gpt2-45m-loop",
                   "1-layer full-width model at ctx 256 looping each layer "
                   "twice (outer 1, inner 2)",
                   m, loop_cfg(1, 2), TrainConfig{}});
    }

    v.push_back({"exp1-baseline",
                 "desk-scale 12-layer baseline (d 128, ctx 128, byte vocab); "
                 "width and context are scaled far below GPT-2",
                 desk(12), LoopConfig{}, desk_train(800)});
    v.push_back({"exp1-loop6x6",
                 "desk-scale 6-layer stack looped 6 times over all layers "
                 "(outer 6, inner 1); scaled width/context",
                 desk(6), loop_cfg(6, 1), desk_train(800)});
    v.push_back({"exp1-loop4x6x2",
                 "desk-scale 4-layer stack, 6 outer loops and 2 inner loops "
                 "per layer; scaled width/context",
                 desk(4), loop_cfg(6, 2), desk_train(800)});
    v.push_back({"exp2-baseline",
                 "desk-scale 1-layer baseline (d 128, ctx 128, byte vocab); "
                 "one pass, no loops",
                 desk(1), LoopConfig{}, desk_train(800)});
    v.push_back({"exp2-loop",
                 "desk-scale 1-layer model looping the layer twice (outer 1, "
                 "inner 2); same width/data/optimizer as exp2-baseline",
                 desk(1), loop_cfg(1, 2), desk_train(800)});
    return v;
  }();
  return table;
}

inline const Preset* find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) {
      return &p;
    }
  }
  return nullptr;
}

}  // namespace loopnet
