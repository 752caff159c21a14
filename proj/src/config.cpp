#include "tspnet/config.hpp"

#include <concepts>
#include <set>

#include "tspnet/errors.hpp"

namespace tspnet {

using nlohmann::json;

namespace {

// Reads fields from a JSON object and rejects any key that was not read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <std::unsigned_integral T>
  void read(const char* key, T& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        throw ConfigError(field(key), "expected a non-negative integer");
      }
      out = v->get<T>();
    }
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }

  void read(const char* key, float& out) {
    double tmp = out;
    read(key, tmp);
    out = static_cast<float>(tmp);
  }

  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
      std::vector<std::size_t> values;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) {
          throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        }
        values.push_back(e.get<std::size_t>());
      }
      out = std::move(values);
    }
  }

  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void TrainConfig::validate() const {
  try {
    plan_layout(widths.empty() ? 1 : widths.front(), widths, stride);
  } catch (const ConfigError& e) {
    throw ConfigError("train." + e.path(), e.what());
  }
  if (model_dim == 0) throw ConfigError("train.model_dim", "must be positive");
  if (inter_dim == 0) throw ConfigError("train.inter_dim", "must be positive");
  if (intra_dim == 0) throw ConfigError("train.intra_dim", "must be positive");
  if (max_positions == 0) throw ConfigError("train.max_positions", "must be positive");
  if (decoder_heads == 0 || model_dim % decoder_heads != 0) {
    throw ConfigError("train.decoder_heads", "must divide model_dim");
  }
  if (max_target_length < 2) throw ConfigError("train.max_target_length", "must be at least 2");
  if (!(lr >= 0)) throw ConfigError("train.lr", "must be >= 0");
  if (weight_decay < 0) throw ConfigError("train.weight_decay", "must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps", "must be positive");
  if (epochs == 0) throw ConfigError("train.epochs", "must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be at least 1");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("train.label_smoothing", "must lie in [0, 1)");
  if (!(encoder_dropout >= 0 && encoder_dropout < 1)) throw ConfigError("train.encoder_dropout", "must lie in [0, 1)");
  if (!(decoder_dropout >= 0 && decoder_dropout < 1)) throw ConfigError("train.decoder_dropout", "must lie in [0, 1)");
  if (precision != kRealName) {
    throw ConfigError("train.precision", "this build computes in " + std::string(kRealName) + ", not '" + precision + "'");
  }
  if (beam_width == 0) throw ConfigError("train.beam_width", "must be at least 1");
  if (max_decode_length == 0) throw ConfigError("train.max_decode_length", "must be at least 1");
}

json to_json(const TrainConfig& c) {
  return json{{"widths", c.widths},
              {"stride", c.stride},
              {"mode", to_string(c.mode)},
              {"model_dim", c.model_dim},
              {"inter_dim", c.inter_dim},
              {"intra_dim", c.intra_dim},
              {"max_positions", c.max_positions},
              {"encoder_dropout", c.encoder_dropout},
              {"decoder_layers", c.decoder_layers},
              {"decoder_heads", c.decoder_heads},
              {"decoder_ff_dim", c.decoder_ff_dim},
              {"max_target_length", c.max_target_length},
              {"decoder_dropout", c.decoder_dropout},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"label_smoothing", c.label_smoothing},
              {"seed", c.seed},
              {"precision", c.precision},
              {"stop_at_accuracy", c.stop_at_accuracy},
              {"checkpoint_interval", c.checkpoint_interval},
              {"eval_interval", c.eval_interval},
              {"log_wall_time", c.log_wall_time},
              {"beam_width", c.beam_width},
              {"length_penalty", c.length_penalty},
              {"max_decode_length", c.max_decode_length}};
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  TrainConfig c;
  ObjectReader r(j, path);
  r.read("widths", c.widths);
  r.read("stride", c.stride);
  std::string mode = to_string(c.mode);
  r.read("mode", mode);
  try {
    c.mode = encoder_mode_from_string(mode);
  } catch (const ConfigError&) {
    throw ConfigError(r.field("mode"), "unknown encoder mode '" + mode + "'");
  }
  r.read("model_dim", c.model_dim);
  r.read("inter_dim", c.inter_dim);
  r.read("intra_dim", c.intra_dim);
  r.read("max_positions", c.max_positions);
  r.read("encoder_dropout", c.encoder_dropout);
  r.read("decoder_layers", c.decoder_layers);
  r.read("decoder_heads", c.decoder_heads);
  r.read("decoder_ff_dim", c.decoder_ff_dim);
  r.read("max_target_length", c.max_target_length);
  r.read("decoder_dropout", c.decoder_dropout);
  r.read("lr", c.lr);
  r.read("weight_decay", c.weight_decay);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("adam_eps", c.adam_eps);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("label_smoothing", c.label_smoothing);
  r.read("seed", c.seed);
  r.read("precision", c.precision);
  r.read("stop_at_accuracy", c.stop_at_accuracy);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.read("eval_interval", c.eval_interval);
  r.read("log_wall_time", c.log_wall_time);
  r.read("beam_width", c.beam_width);
  r.read("length_penalty", c.length_penalty);
  r.read("max_decode_length", c.max_decode_length);
  r.finish();
  return c;
}

json to_json(const SyntheticConfig& c) {
  return json{{"gesture_vocab_size", c.gesture_vocab_size},
              {"feature_dim", c.feature_dim},
              {"min_duration", c.min_duration},
              {"max_duration", c.max_duration},
              {"noise_sigma", c.noise_sigma},
              {"min_sentence_length", c.min_sentence_length},
              {"max_sentence_length", c.max_sentence_length},
              {"reorder", to_string(c.reorder)},
              {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const json& j, const std::string& path) {
  SyntheticConfig c;
  ObjectReader r(j, path);
  r.read("gesture_vocab_size", c.gesture_vocab_size);
  r.read("feature_dim", c.feature_dim);
  r.read("min_duration", c.min_duration);
  r.read("max_duration", c.max_duration);
  r.read("noise_sigma", c.noise_sigma);
  r.read("min_sentence_length", c.min_sentence_length);
  r.read("max_sentence_length", c.max_sentence_length);
  std::string reorder = to_string(c.reorder);
  r.read("reorder", reorder);
  try {
    c.reorder = reorder_rule_from_string(reorder);
  } catch (const ConfigError&) {
    throw ConfigError(r.field("reorder"), "unknown reorder rule '" + reorder + "'");
  }
  r.read("seed", c.seed);
  r.finish();
  if (c.gesture_vocab_size == 0) throw ConfigError(r.field("gesture_vocab_size"), "must be positive");
  if (c.feature_dim == 0) throw ConfigError(r.field("feature_dim"), "must be positive");
  if (c.min_duration == 0 || c.max_duration < c.min_duration) {
    throw ConfigError(r.field("min_duration"), "need 1 <= min_duration <= max_duration");
  }
  if (c.min_sentence_length == 0 || c.max_sentence_length < c.min_sentence_length) {
    throw ConfigError(r.field("min_sentence_length"), "need 1 <= min_sentence_length <= max_sentence_length");
  }
  if (!(c.noise_sigma >= 0)) throw ConfigError(r.field("noise_sigma"), "must be >= 0");
  return c;
}

EncoderConfig encoder_config(const TrainConfig& cfg, std::size_t input_dim) {
  EncoderConfig e;
  e.input_dim = input_dim;
  e.model_dim = cfg.model_dim;
  e.inter_dim = cfg.inter_dim;
  e.intra_dim = cfg.intra_dim;
  e.widths = cfg.widths;
  e.stride = cfg.stride;
  e.max_positions = cfg.max_positions;
  e.mode = cfg.mode;
  e.dropout = cfg.encoder_dropout;
  return e;
}

DecoderConfig decoder_config(const TrainConfig& cfg, std::size_t vocab_size) {
  DecoderConfig d;
  d.vocab_size = vocab_size;
  d.model_dim = cfg.model_dim;
  d.layers = cfg.decoder_layers;
  d.heads = cfg.decoder_heads;
  d.ff_dim = cfg.decoder_ff_dim;
  d.max_length = cfg.max_target_length;
  d.dropout = cfg.decoder_dropout;
  return d;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.read("seed", c.seed);
  if (const json* s = r.take("synth")) {
    if (!s->is_object()) throw ConfigError("synth", "expected an object");
    json synth = *s;
    if (synth.contains("sentences")) {
      const json& n = synth["sentences"];
      if (!n.is_number_integer() || n.get<long long>() <= 0) {
        throw ConfigError("synth.sentences", "expected a positive integer");
      }
      c.synth_sentences = n.get<std::size_t>();
      synth.erase("sentences");
    }
    if (synth.contains("seed")) throw ConfigError("synth.seed", "set the top-level seed instead");
    c.synth = synthetic_config_from_json(synth, "synth");
  }
  if (const json* t = r.take("train")) {
    if (t->is_object() && t->contains("seed")) throw ConfigError("train.seed", "set the top-level seed instead");
    c.train = train_config_from_json(*t, "train");
  }
  r.read("corpus", c.corpus);
  r.read("validation", c.validation);
  r.read("output_dir", c.output_dir);
  r.finish();
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  c.train.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json synth = to_json(c.synth);
  synth.erase("seed");
  synth["sentences"] = c.synth_sentences;
  json train = to_json(c.train);
  train.erase("seed");
  return json{{"seed", c.seed},       {"synth", synth},           {"train", train},
              {"corpus", c.corpus},   {"validation", c.validation}, {"output_dir", c.output_dir}};
}

}  // namespace tspnet
