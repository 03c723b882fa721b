#include "flowsentry/config_json.hpp"

#include "flowsentry/error.hpp"

namespace flowsentry {

namespace {

const char* sort_key_name(SortKey k) {
  switch (k) {
    case SortKey::Bytes: return "bytes";
    case SortKey::Packets: return "packets";
    case SortKey::Pps: return "pps";
  }
  return "bytes";
}

SortKey parse_sort_key(const std::string& s) {
  if (s == "bytes") return SortKey::Bytes;
  if (s == "packets") return SortKey::Packets;
  if (s == "pps") return SortKey::Pps;
  throw Error(Errc::InvalidConfig, "unknown sort_key '" + s + "'");
}

template <class Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string(what) + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const SequencerConfig& c) {
  return {{"length", c.length},
          {"sort_key", sort_key_name(c.sort_key)},
          {"descending", c.descending},
          {"window_flows", c.window_flows}};
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"d_ff", c.d_ff},
          {"max_length", c.max_length},
          {"mask_mode", c.mask_mode == MaskMode::Causal ? "causal" : "bidirectional"},
          {"dropout_rate", c.dropout_rate}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

SequencerConfig sequencer_from_json(const nlohmann::json& j, SequencerConfig c) {
  return guarded("sequencer config", [&] {
    c.length = j.value("length", c.length);
    if (j.contains("sort_key")) c.sort_key = parse_sort_key(j.at("sort_key").get<std::string>());
    c.descending = j.value("descending", c.descending);
    c.window_flows = j.value("window_flows", c.window_flows);
    if (c.length == 0) throw Error(Errc::InvalidConfig, "sequencer length must be >= 1");
    return c;
  });
}

EncoderConfig encoder_from_json(const nlohmann::json& j, EncoderConfig c) {
  return guarded("encoder config", [&] {
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_length = j.value("max_length", c.max_length);
    if (j.contains("mask_mode")) {
      const auto m = j.at("mask_mode").get<std::string>();
      if (m == "causal") c.mask_mode = MaskMode::Causal;
      else if (m == "bidirectional") c.mask_mode = MaskMode::Bidirectional;
      else throw Error(Errc::InvalidConfig, "unknown mask_mode '" + m + "'");
    }
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.validate();
    return c;
  });
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig c) {
  return guarded("train config", [&] {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (c.batch_size == 0) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
    return c;
  });
}

}  // namespace flowsentry
