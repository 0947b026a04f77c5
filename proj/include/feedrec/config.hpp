#pragma once

// Run configuration files: one JSON document with generator, training,
// evaluation and ablation sections. Unknown keys are rejected.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "feedrec/errors.hpp"
#include "feedrec/synthgen.hpp"
#include "feedrec/trainer.hpp"

namespace feedrec {

using nlohmann::json;

/// Reads fields of one JSON object; finish() fails on keys never asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename V>
  StrictObject& get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
    return *this;
  }

  /// Calls f(StrictObject&) for a nested object if present.
  template <typename F>
  StrictObject& section(const char* key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    StrictObject sub(*it, label(key));
    f(sub);
    sub.finish();
    return *this;
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key " + label(key));
    }
  }

  std::string label(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline GeneratorConfig generator_from_json(const json& j, const std::string& path = "generator") {
  GeneratorConfig c;
  StrictObject o(j, path);
  o.get("n_users", c.n_users)
      .get("n_news", c.n_news)
      .get("n_impressions", c.n_impressions)
      .get("topic_count", c.topic_count)
      .get("user_interest_dim", c.user_interest_dim)
      .section("dwell_mixture",
               [&](StrictObject& m) {
                 m.get("weight_fast", c.dwell_mixture.weight_fast)
                     .get("mean_fast", c.dwell_mixture.mean_fast)
                     .get("sd_fast", c.dwell_mixture.sd_fast)
                     .get("weight_slow", c.dwell_mixture.weight_slow)
                     .get("mean_slow", c.dwell_mixture.mean_slow)
                     .get("sd_slow", c.dwell_mixture.sd_slow);
               })
      .section("skip_count_lognormal",
               [&](StrictObject& m) {
                 m.get("mu", c.skip_count_lognormal.mu).get("sigma", c.skip_count_lognormal.sigma);
               })
      .get("share_prob", c.share_prob)
      .get("dislike_prob", c.dislike_prob)
      .get("seed", c.seed)
      .get("vocab_size", c.vocab_size)
      .get("title_len_min", c.title_len_min)
      .get("title_len_max", c.title_len_max)
      .get("shown_min", c.shown_min)
      .get("shown_max", c.shown_max)
      .get("bait_fraction", c.bait_fraction)
      .get("click_bias", c.click_bias)
      .get("click_affinity_scale", c.click_affinity_scale)
      .get("bait_click_boost", c.bait_click_boost)
      .get("dwell_affinity_slope", c.dwell_affinity_slope)
      .get("affinity_pivot", c.affinity_pivot)
      .get("finish_bias", c.finish_bias)
      .get("finish_affinity", c.finish_affinity)
      .get("finish_dwell", c.finish_dwell)
      .get("finish_min_dwell", c.finish_min_dwell)
      .get("explicit_slope", c.explicit_slope)
      .get("skip_dislike_factor", c.skip_dislike_factor)
      .get("quick_close_threshold", c.quick_close_threshold)
      .get("start_time", c.start_time)
      .get("span_days", c.span_days);
  o.finish();
  c.validate();
  return c;
}

inline ModelConfig model_from_json(StrictObject& o) {
  ModelConfig m;
  o.get("dim", m.dim)
      .get("heads", m.heads)
      .get("ffn_dim", m.ffn_dim)
      .get("vocab_size", m.vocab_size)
      .get("max_seq", m.max_seq)
      .get("title_len", m.title_len);
  return m;
}

namespace detail {

inline std::vector<std::string> string_list(const json* j, const std::string& label) {
  std::vector<std::string> out;
  if (j == nullptr) return out;
  if (!j->is_array()) throw ConfigError(label + " must be a list of strings");
  for (const auto& v : *j) {
    if (!v.is_string()) throw ConfigError(label + " must be a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline void to_json(json& j, const TrainConfig& c) {
  json drop = json::array();
  for (FeedbackType t : c.drop_feedback) drop.push_back(std::string(to_string(t)));
  json emb = json::array();
  if (c.options.disable_position) emb.push_back("position");
  if (c.options.disable_type) emb.push_back("type");
  if (c.options.disable_dwell) emb.push_back("dwell");
  if (c.options.disable_interval) emb.push_back("interval");
  json loss = json::array();
  if (c.disable_finish_loss) loss.push_back("finish");
  if (c.disable_dwell_loss) loss.push_back("dwell");
  if (c.disable_disentangle_loss) loss.push_back("disentangle");
  j = json{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"dropout", c.dropout},
           {"negatives", c.negatives},
           {"loss_weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}}},
           {"quick_close_threshold", c.quick_close_threshold},
           {"skip_subsample", c.skip_subsample},
           {"dwell_t_max", c.dwell_t_max},
           {"test_fraction", c.test_fraction},
           {"validation_fraction", c.validation_fraction},
           {"seed", c.seed},
           {"model", c.model},
           {"drop_feedback", drop},
           {"disable_hetero", c.options.disable_hetero},
           {"disable_homo", c.options.disable_homo},
           {"disable_strong_to_weak", c.options.disable_strong_to_weak},
           {"disable_embedding", emb},
           {"disable_loss", loss},
           {"track_train_loss", c.track_train_loss},
           {"validate_each_epoch", c.validate_each_epoch}};
}

inline TrainConfig train_from_json(const json& j, const std::string& path = "training") {
  TrainConfig c;
  StrictObject o(j, path);
  o.get("learning_rate", c.learning_rate)
      .get("batch_size", c.batch_size)
      .get("epochs", c.epochs)
      .get("dropout", c.dropout)
      .get("negatives", c.negatives)
      .section("loss_weights",
               [&](StrictObject& w) {
                 w.get("alpha", c.weights.alpha).get("beta", c.weights.beta).get("gamma", c.weights.gamma);
               })
      .get("quick_close_threshold", c.quick_close_threshold)
      .get("skip_subsample", c.skip_subsample)
      .get("dwell_t_max", c.dwell_t_max)
      .get("test_fraction", c.test_fraction)
      .get("validation_fraction", c.validation_fraction)
      .get("seed", c.seed)
      .section("model", [&](StrictObject& m) { c.model = model_from_json(m); })
      .get("disable_hetero", c.options.disable_hetero)
      .get("disable_homo", c.options.disable_homo)
      .get("disable_strong_to_weak", c.options.disable_strong_to_weak)
      .get("track_train_loss", c.track_train_loss)
      .get("validate_each_epoch", c.validate_each_epoch);
  for (const auto& name : detail::string_list(o.raw("drop_feedback"), o.label("drop_feedback"))) {
    try {
      c.drop_feedback.insert(parse_feedback_type(name));
    } catch (const Error& e) {
      throw ConfigError(o.label("drop_feedback") + ": " + e.what());
    }
  }
  for (const auto& name : detail::string_list(o.raw("disable_embedding"), o.label("disable_embedding"))) {
    if (name == "position") c.options.disable_position = true;
    else if (name == "type") c.options.disable_type = true;
    else if (name == "dwell") c.options.disable_dwell = true;
    else if (name == "interval") c.options.disable_interval = true;
    else throw ConfigError(o.label("disable_embedding") + ": unknown embedding '" + name + "'");
  }
  for (const auto& name : detail::string_list(o.raw("disable_loss"), o.label("disable_loss"))) {
    if (name == "finish") c.disable_finish_loss = true;
    else if (name == "dwell") c.disable_dwell_loss = true;
    else if (name == "disentangle") c.disable_disentangle_loss = true;
    else throw ConfigError(o.label("disable_loss") + ": unknown loss '" + name + "'");
  }
  o.finish();
  c.validate();
  return c;
}

struct EvaluationConfig {
  std::string split = "test";  // test | validation
  bool write_scores = true;

  void validate() const {
    if (split != "test" && split != "validation") {
      throw ConfigError("evaluation.split must be 'test' or 'validation'");
    }
  }
};

struct AblationConfig {
  std::vector<double> t_sweep = {3, 5, 10, 20, 30};
  bool components = true;   // hetero / homo / strong-to-weak
  bool embeddings = true;   // position / type / dwell / interval
};

struct RunConfig {
  GeneratorConfig generator;
  TrainConfig training;
  EvaluationConfig evaluation;
  AblationConfig ablation;
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"generator", c.generator},
           {"training", c.training},
           {"evaluation", {{"split", c.evaluation.split}, {"write_scores", c.evaluation.write_scores}}},
           {"ablation",
            {{"t_sweep", c.ablation.t_sweep},
             {"components", c.ablation.components},
             {"embeddings", c.ablation.embeddings}}}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  StrictObject o(j, "");
  if (const json* g = o.raw("generator")) c.generator = generator_from_json(*g);
  if (const json* t = o.raw("training")) c.training = train_from_json(*t);
  o.section("evaluation", [&](StrictObject& e) {
    e.get("split", c.evaluation.split).get("write_scores", c.evaluation.write_scores);
  });
  o.section("ablation", [&](StrictObject& a) {
    a.get("t_sweep", c.ablation.t_sweep)
        .get("components", c.ablation.components)
        .get("embeddings", c.ablation.embeddings);
  });
  o.finish();
  c.evaluation.validate();
  for (double t : c.ablation.t_sweep) {
    if (!(t > 0)) throw ConfigError("ablation.t_sweep values must be positive");
  }
  return c;
}

inline json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(parse_json_file(path));
}

/// crc32 of the compact, key-sorted serialization, as 8 hex digits.
inline std::string config_hash(const json& j) {
  const std::string s = j.dump();
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace feedrec
