// JSON (de)serialisation of model, loss, matching and training settings.
// Every key is optional; missing keys keep their defaults.
#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bit/data.hpp"
#include "bit/network.hpp"
#include "bit/supervision.hpp"

namespace bit {

using Json = nlohmann::json;

inline std::string to_string(MatchingMode m) {
  switch (m) {
    case MatchingMode::one_to_one: return "one-to-one";
    case MatchingMode::one_to_many: return "one-to-many";
    case MatchingMode::transcript: return "transcript";
  }
  return "one-to-one";
}

inline MatchingMode matching_mode_from_string(const std::string& s) {
  if (s == "one-to-one") return MatchingMode::one_to_one;
  if (s == "one-to-many") return MatchingMode::one_to_many;
  if (s == "transcript") return MatchingMode::transcript;
  throw UsageError("unknown matching mode: " + s);
}

inline void to_json(Json& j, const TransformerConfig& c) {
  j = Json{{"heads", c.heads},
           {"input_layers", c.input_layers},
           {"update_layers", c.update_layers},
           {"ff_mult", c.ff_mult},
           {"dropout", c.dropout}};
}

inline void from_json(const Json& j, TransformerConfig& c) {
  c.heads = j.value("heads", c.heads);
  c.input_layers = j.value("input_layers", c.input_layers);
  c.update_layers = j.value("update_layers", c.update_layers);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.dropout = j.value("dropout", c.dropout);
}

inline void to_json(Json& j, const BitConfig& c) {
  j = Json{{"input_dim", c.input_dim},
           {"num_classes", c.num_classes},
           {"num_blocks", c.num_blocks},
           {"num_tokens", c.num_tokens},
           {"hidden", c.hidden},
           {"matching", to_string(c.matching)},
           {"conv_layers", c.conv_layers},
           {"conv_dropout", c.conv_dropout},
           {"dilation_base", c.dilation_base},
           {"transformer", c.transformer}};
  Json flags = Json::array();
  for (int b = 0; b < c.num_blocks; ++b) flags.push_back(c.downsample_at(b));
  j["downsample"] = flags;
}

inline void from_json(const Json& j, BitConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.num_tokens = j.value("num_tokens", c.num_tokens);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("matching")) c.matching = matching_mode_from_string(j.at("matching").get<std::string>());
  c.conv_layers = j.value("conv_layers", c.conv_layers);
  c.conv_dropout = j.value("conv_dropout", c.conv_dropout);
  c.dilation_base = j.value("dilation_base", c.dilation_base);
  if (j.contains("transformer")) from_json(j.at("transformer"), c.transformer);
  if (j.contains("downsample")) c.downsample = j.at("downsample").get<std::vector<bool>>();
}

inline void to_json(Json& j, const LossConfig& c) {
  j = Json{{"smoothing_weight", c.smoothing_weight}, {"truncation", c.truncation}, {"log_floor", c.log_floor}};
}

inline void from_json(const Json& j, LossConfig& c) {
  c.smoothing_weight = j.value("smoothing_weight", c.smoothing_weight);
  c.truncation = j.value("truncation", c.truncation);
  c.log_floor = j.value("log_floor", c.log_floor);
  if (c.smoothing_weight < 0 || !(c.truncation > 0)) throw UsageError("loss: need smoothing_weight >= 0, truncation > 0");
}

inline void to_json(Json& j, const SyntheticSpec& s) {
  j = Json{{"num_videos", s.num_videos},
           {"num_classes", s.num_classes},
           {"min_segments", s.min_segments},
           {"max_segments", s.max_segments},
           {"min_segment_length", s.min_segment_length},
           {"max_segment_length", s.max_segment_length},
           {"feature_dim", s.feature_dim},
           {"separation", s.separation},
           {"noise", s.noise},
           {"seed", s.seed}};
}

inline void from_json(const Json& j, SyntheticSpec& s) {
  s.num_videos = j.value("num_videos", s.num_videos);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.min_segments = j.value("min_segments", s.min_segments);
  s.max_segments = j.value("max_segments", s.max_segments);
  s.min_segment_length = j.value("min_segment_length", s.min_segment_length);
  s.max_segment_length = j.value("max_segment_length", s.max_segment_length);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.separation = j.value("separation", s.separation);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
}

struct TrainConfig {
  int epochs = 120;
  double learning_rate = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  LossConfig loss;
  double beta = 1.0;  // matching cost balance; the mode lives in model.matching
  BitConfig model;
  std::string data_root;
  std::string split = "train.split1";
  std::string validation_split;  // empty: keep the last epoch

  MatchingConfig matching() const { return {model.matching, beta}; }

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (!(learning_rate > 0)) throw UsageError("learning rate must be > 0");
    if (!std::isfinite(beta) || beta < 0) throw UsageError("beta must be finite and >= 0");
    if (device != "cpu") throw UsageError("only the cpu device is available");
  }
};

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"grad_clip", c.grad_clip},
           {"seed", c.seed},
           {"device", c.device},
           {"loss", c.loss},
           {"beta", c.beta},
           {"model", c.model},
           {"data_root", c.data_root},
           {"split", c.split},
           {"validation_split", c.validation_split}};
}

inline void from_json(const Json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.device = j.value("device", c.device);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  c.beta = j.value("beta", c.beta);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  c.data_root = j.value("data_root", c.data_root);
  c.split = j.value("split", c.split);
  c.validation_split = j.value("validation_split", c.validation_split);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

// FNV-1a over the canonical JSON dump.
inline std::string digest(const Json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bit
