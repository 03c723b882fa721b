#include "flowsentry/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "flowsentry/config_json.hpp"
#include "flowsentry/error.hpp"

namespace flowsentry {

namespace {

constexpr const char* kFormatName = "flowsentry-checkpoint";

nlohmann::json normalizer_to_json(const Normalizer& n) {
  return {{"mean", std::vector<double>(n.mean.begin(), n.mean.end())},
          {"std", std::vector<double>(n.std.begin(), n.std.end())}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std = j.at("std").get<std::vector<double>>();
  if (mean.size() != kFeatureCount || std.size() != kFeatureCount) {
    throw Error(Errc::CorruptBlob, "normalizer must have " + std::to_string(kFeatureCount) + " features");
  }
  Normalizer n;
  std::copy(mean.begin(), mean.end(), n.mean.begin());
  std::copy(std.begin(), std.end(), n.std.begin());
  return n;
}

template <class Params>
nlohmann::json tensor_table(const Params& params, std::size_t& total) {
  nlohmann::json table = nlohmann::json::array();
  total = 0;
  for_each_tensor(params, "", [&](const std::string& name, const Matrix& m) {
    table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    total += static_cast<std::size_t>(m.size());
  });
  return table;
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

template <class Params>
void write_blob(std::ostream& out, const Params& params) {
  for_each_tensor(params, "", [&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) write_f64(out, m.data()[i]);
  });
}

void write_container(std::ostream& out, nlohmann::json header, std::size_t total, const auto& params) {
  header["total_elements"] = total;
  out << header.dump() << '\n';
  write_blob(out, params);
  if (!out) throw Error(Errc::Io, "checkpoint write failed");
}

nlohmann::json read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::CorruptBlob, "missing checkpoint header");
  auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() || header.value("format", "") != kFormatName) {
    throw Error(Errc::CorruptBlob, "not a flowsentry checkpoint");
  }
  const auto version = header.value("format_version", std::string());
  if (version != kCheckpointFormatVersion) {
    throw Error(Errc::FormatVersionMismatch,
                "checkpoint format version '" + version + "', expected '" + kCheckpointFormatVersion + "'");
  }
  return header;
}

/// Fills `params` (already shaped from the configs) from the blob after
/// checking the header's tensor table against those shapes.
template <class Params>
void read_blob(std::istream& in, const nlohmann::json& header, Params& params) {
  std::size_t expected = 0;
  const nlohmann::json want = tensor_table(params, expected);
  const auto& got = header.at("tensors");
  if (got != want) throw Error(Errc::CorruptBlob, "tensor table does not match the declared configuration");
  if (header.at("total_elements").get<std::size_t>() != expected) {
    throw Error(Errc::CorruptBlob, "declared element count " + header.at("total_elements").dump() +
                                       " differs from the tensor table's " + std::to_string(expected));
  }
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != expected * 8) {
    throw Error(Errc::CorruptBlob, "blob holds " + std::to_string(blob.size()) + " bytes, expected " +
                                       std::to_string(expected * 8));
  }
  std::size_t offset = 0;
  for_each_tensor(params, "", [&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[offset + static_cast<std::size_t>(b)]))
                << (8 * b);
      }
      m.data()[i] = std::bit_cast<double>(bits);
      offset += 8;
    }
  });
}

template <class Fn>
auto guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptBlob, std::string("malformed checkpoint header: ") + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path);
  return in;
}

const char* mode_name(PredictorMode m) { return m == PredictorMode::NextToken ? "next_token" : "masked"; }

}  // namespace

nlohmann::json read_checkpoint_header(std::istream& in) { return read_header(in); }

void write_checkpoint(const TrainedModel& model, std::ostream& out, const nlohmann::json& metadata) {
  std::size_t total = 0;
  nlohmann::json header = {{"format", kFormatName},
                           {"format_version", kCheckpointFormatVersion},
                           {"kind", "classifier"},
                           {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata},
                           {"sequencer", to_json(model.sequencer)},
                           {"encoder", to_json(model.config)},
                           {"normalizer", normalizer_to_json(model.normalizer)},
                           {"history", model.history},
                           {"tensors", tensor_table(model.params, total)}};
  write_container(out, std::move(header), total, model.params);
}

TrainedModel read_checkpoint(std::istream& in) {
  const auto header = read_header(in);
  return guarded([&] {
    if (header.at("kind") != "classifier") throw Error(Errc::CorruptBlob, "checkpoint does not hold a classifier");
    TrainedModel model;
    model.sequencer = sequencer_from_json(header.at("sequencer"));
    model.config = encoder_from_json(header.at("encoder"));
    model.normalizer = normalizer_from_json(header.at("normalizer"));
    model.history = header.at("history").get<std::vector<double>>();
    model.params = zero_classifier(model.config);
    read_blob(in, header, model.params);
    return model;
  });
}

void save_checkpoint(const TrainedModel& model, const std::string& path, const nlohmann::json& metadata) {
  auto out = open_out(path);
  write_checkpoint(model, out, metadata);
}

TrainedModel load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

void write_predictor_checkpoint(const PredictorCheckpoint& ckpt, std::ostream& out, const nlohmann::json& metadata) {
  const PredictorModel& m = ckpt.model;
  nlohmann::json centroids = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.codebook.centroids.rows(); ++r) {
    centroids.push_back(std::vector<double>(m.codebook.centroids.row(r).data(),
                                            m.codebook.centroids.row(r).data() + m.codebook.centroids.cols()));
  }
  nlohmann::json section = {{"mode", mode_name(m.predictor.mode)},
                            {"vocab", m.predictor.vocab},
                            {"mask_rate", m.predictor.mask_rate},
                            {"reduction", m.predictor.reduction == ScoreReduction::Mean ? "mean" : "max"},
                            {"codebook", centroids}};
  if (ckpt.threshold) {
    section["threshold"] = {{"score_threshold", ckpt.threshold->score_threshold},
                            {"quantile", ckpt.threshold->quantile}};
  }
  std::size_t total = 0;
  nlohmann::json header = {{"format", kFormatName},
                           {"format_version", kCheckpointFormatVersion},
                           {"kind", "predictor"},
                           {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata},
                           {"sequencer", to_json(m.sequencer)},
                           {"encoder", to_json(m.config)},
                           {"normalizer", normalizer_to_json(m.normalizer)},
                           {"history", m.history},
                           {"predictor", section},
                           {"tensors", tensor_table(m.params, total)}};
  write_container(out, std::move(header), total, m.params);
}

PredictorCheckpoint read_predictor_checkpoint(std::istream& in) {
  const auto header = read_header(in);
  return guarded([&] {
    if (header.at("kind") != "predictor") throw Error(Errc::CorruptBlob, "checkpoint does not hold a predictor");
    PredictorCheckpoint ckpt;
    PredictorModel& m = ckpt.model;
    m.sequencer = sequencer_from_json(header.at("sequencer"));
    m.config = encoder_from_json(header.at("encoder"));
    m.normalizer = normalizer_from_json(header.at("normalizer"));
    m.history = header.at("history").get<std::vector<double>>();
    const auto& p = header.at("predictor");
    m.predictor.mode = p.at("mode") == "masked" ? PredictorMode::Masked : PredictorMode::NextToken;
    m.predictor.vocab = p.at("vocab").get<std::size_t>();
    m.predictor.mask_rate = p.at("mask_rate").get<double>();
    m.predictor.reduction = p.at("reduction") == "max" ? ScoreReduction::Max : ScoreReduction::Mean;
    const auto rows = p.at("codebook").get<std::vector<std::vector<double>>>();
    if (rows.size() != m.predictor.vocab) throw Error(Errc::CorruptBlob, "codebook size differs from vocab");
    m.codebook.centroids = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kFeatureCount));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != kFeatureCount) throw Error(Errc::CorruptBlob, "codebook row has the wrong width");
      for (std::size_t c = 0; c < kFeatureCount; ++c) {
        m.codebook.centroids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    if (p.contains("threshold")) {
      ckpt.threshold = AnomalyThreshold{p.at("threshold").at("score_threshold").get<double>(),
                                        p.at("threshold").at("quantile").get<double>()};
    }
    m.params = zero_predictor(m.config, m.predictor.vocab);
    read_blob(in, header, m.params);
    return ckpt;
  });
}

void save_predictor_checkpoint(const PredictorCheckpoint& ckpt, const std::string& path,
                               const nlohmann::json& metadata) {
  auto out = open_out(path);
  write_predictor_checkpoint(ckpt, out, metadata);
}

PredictorCheckpoint load_predictor_checkpoint(const std::string& path) {
  auto in = open_in(path);
  return read_predictor_checkpoint(in);
}

}  // namespace flowsentry
