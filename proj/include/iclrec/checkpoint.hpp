#pragma once

// On-disk formats.
//
// Checkpoint (binary, little-endian):
//   bytes 0..7   magic "ICLRCKPT"
//   u32          format version (kCheckpointVersion)
//   u64          header length H
//   H bytes      UTF-8 JSON header:
//                  {"encoder": {hidden, max_len, blocks, heads, ffn_mult,
//                               dropout, init_std, vocab_rows},
//                   "adam": {"step", "lr", "beta1", "beta2", "eps"},
//                   "tensors": [{"name", "shape": [rows, cols]}, ...]}
//   f64 values   every tensor of "tensors" in order, row-major: the
//                parameters, then Adam first moments, then second moments.
//
// Intent model: JSON object {"format": "iclrec-intents", "version": 1, "k",
// "dim", "seed", "distortion", "centroids": [[...]], "assignments": [...],
// "user_ids": [...]}.
//
// Train report: one JSON object per line; "type" is "epoch" or "summary".

#include "iclrec/clustering.hpp"
#include "iclrec/encoder.hpp"
#include "iclrec/eval.hpp"
#include "iclrec/trainer.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace iclrec {

inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'L', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct Checkpoint {
  EncoderParams params;
  AdamState adam;
  AdamConfig adam_config;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"hidden", c.hidden},   {"max_len", c.max_len},   {"blocks", c.blocks},     {"heads", c.heads},
          {"ffn_mult", c.ffn_mult}, {"dropout", c.dropout}, {"init_std", c.init_std}, {"vocab_rows", c.vocab_rows}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.vocab_rows = j.at("vocab_rows").get<int>();
  return c;
}

inline void save_checkpoint(const std::string& path, const EncoderParams& params, const AdamState& adam,
                            const AdamConfig& adam_cfg) {
  nlohmann::json header;
  header["encoder"] = to_json(params.config);
  header["adam"] = {{"step", adam.step}, {"lr", adam_cfg.lr}, {"beta1", adam_cfg.beta1}, {"beta2", adam_cfg.beta2},
                    {"eps", adam_cfg.eps}};
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : named_tensors(params))
    header["tensors"].push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const EncoderParams* set : {&params, &adam.m, &adam.v})
    for (const auto& [name, m] : named_tensors(*set))
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("'" + path + "' is not an iclrec checkpoint (bad magic)");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw FormatError("checkpoint header is truncated or oversized");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint header is truncated");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.params = zero_params(encoder_config_from_json(header.at("encoder")));
    const auto& a = header.at("adam");
    ck.adam_config = AdamConfig{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                                a.at("eps").get<double>()};
    ck.adam = init_adam(ck.params);
    ck.adam.step = a.at("step").get<std::int64_t>();
    const auto tensors = named_tensors(ck.params);
    const auto& listed = header.at("tensors");
    if (listed.size() != tensors.size()) throw FormatError("checkpoint tensor list does not match its encoder config");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = listed[i];
      if (t.at("name").get<std::string>() != tensors[i].first ||
          t.at("shape")[0].get<Eigen::Index>() != tensors[i].second->rows() ||
          t.at("shape")[1].get<Eigen::Index>() != tensors[i].second->cols())
        throw FormatError("checkpoint tensor '" + t.at("name").get<std::string>() + "' has unexpected name or shape");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid encoder config in checkpoint: ") + e.what());
  }
  for (EncoderParams* set : {&ck.params, &ck.adam.m, &ck.adam.v})
    for (auto& [name, m] : named_tensors(*set)) {
      in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
      if (!in) throw FormatError("checkpoint data is truncated at tensor '" + name + "'");
    }
  return ck;
}

inline nlohmann::json to_json(const IntentModel& m, const std::vector<std::string>& user_ids) {
  nlohmann::json j;
  j["format"] = "iclrec-intents";
  j["version"] = 1;
  j["k"] = m.k();
  j["dim"] = m.centroids.cols();
  j["seed"] = m.seed;
  j["distortion"] = m.distortion;
  j["centroids"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.centroids.rows(); ++r)
    j["centroids"].push_back(std::vector<double>(m.centroids.row(r).begin(), m.centroids.row(r).end()));
  j["assignments"] = m.assignments;
  j["user_ids"] = user_ids;
  return j;
}

inline void save_intents(const std::string& path, const IntentModel& m, const std::vector<std::string>& user_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write intent model '" + path + "'");
  out << to_json(m, user_ids).dump() << '\n';
}

struct LoadedIntents {
  IntentModel model;
  std::vector<std::string> user_ids;
};

inline LoadedIntents load_intents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open intent model '" + path + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "iclrec-intents" || j.at("version").get<int>() != 1)
      throw FormatError("'" + path + "' is not a version-1 intent model");
    LoadedIntents out;
    const int k = j.at("k").get<int>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    out.model.centroids = Matrix(k, dim);
    for (int r = 0; r < k; ++r) {
      const auto row = j.at("centroids").at(static_cast<std::size_t>(r)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != dim) throw FormatError("intent centroid has wrong dimension");
      for (Eigen::Index c = 0; c < dim; ++c) out.model.centroids(r, c) = row[static_cast<std::size_t>(c)];
    }
    out.model.assignments = j.at("assignments").get<std::vector<int>>();
    out.model.seed = j.at("seed").get<std::uint64_t>();
    out.model.distortion = j.at("distortion").get<double>();
    out.user_ids = j.at("user_ids").get<std::vector<std::string>>();
    for (int a : out.model.assignments)
      if (a < 0 || a >= k) throw FormatError("intent assignment outside [0, K)");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed intent model: ") + e.what());
  }
}

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j;
  for (const auto& [k, v] : r.hr) j["HR@" + std::to_string(k)] = v;
  for (const auto& [k, v] : r.ndcg) j["NDCG@" + std::to_string(k)] = v;
  j["users"] = r.n_users;
  return j;
}

/// Epoch record without wall-clock fields, so reports of identical runs
/// compare equal byte for byte.
inline nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j;
  j["type"] = "epoch";
  j["epoch"] = e.epoch;
  j["loss"] = e.losses.total;
  j["next_item"] = e.losses.next_item;
  j["icl"] = e.losses.icl;
  j["seqcl"] = e.losses.seqcl;
  j["batches"] = e.losses.batches;
  j["distortion"] = e.distortion ? nlohmann::json(*e.distortion) : nlohmann::json(nullptr);
  j["valid"] = e.valid ? to_json(*e.valid) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json timing_json(const EpochRecord& e) {
  return {{"epoch", e.epoch}, {"estep_seconds", e.estep_seconds}, {"mstep_seconds", e.mstep_seconds},
          {"eval_seconds", e.eval_seconds}};
}

inline nlohmann::json summary_json(const TrainReport& r) {
  nlohmann::json j;
  j["type"] = "summary";
  j["run_label"] = r.run_label;
  j["epochs_run"] = r.epochs.size();
  j["best_epoch"] = r.best_epoch;
  j["valid"] = r.best_valid ? to_json(*r.best_valid) : nlohmann::json(nullptr);
  j["test"] = to_json(r.test);
  return j;
}

inline void write_report(std::ostream& out, const TrainReport& r) {
  for (const auto& e : r.epochs) out << to_json(e).dump() << '\n';
  out << summary_json(r).dump() << '\n';
}

}  // namespace iclrec
