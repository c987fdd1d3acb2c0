#include "contraj/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "contraj/errors.hpp"

namespace contraj::checkpoint {

namespace fs = std::filesystem;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'T', 'J', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian float64");

json learner_to_json(const dynamics::LearnerConfig& cfg) {
  json j;
  j["kind"] = cfg.kind == dynamics::LearnerKind::Snode ? "snode" : "node";
  j["state_dim"] = cfg.state_dim;
  j["time_input"] = cfg.time_input;
  j["cond_dim"] = cfg.cond_dim;
  j["f_hidden"] = cfg.f_hidden;
  j["v_hidden"] = cfg.v_hidden;
  j["alpha"] = cfg.alpha;
  j["grad_floor"] = cfg.grad_floor;
  j["lyap_eps"] = cfg.lyap_eps;
  j["sigma_knee"] = cfg.sigma_knee;
  j["form"] = cfg.form == dynamics::ProjectionForm::ReluOutside ? "relu_outside" : "relu_inside";
  j["projection_enabled"] = cfg.projection_enabled;
  return j;
}

dynamics::LearnerConfig learner_from_json(const json& j) {
  dynamics::LearnerConfig cfg;
  cfg.kind = j.at("kind").get<std::string>() == "snode" ? dynamics::LearnerKind::Snode
                                                        : dynamics::LearnerKind::Node;
  cfg.state_dim = j.at("state_dim").get<int>();
  cfg.time_input = j.at("time_input").get<bool>();
  cfg.cond_dim = j.at("cond_dim").get<int>();
  cfg.f_hidden = j.at("f_hidden").get<std::vector<int>>();
  cfg.v_hidden = j.at("v_hidden").get<std::vector<int>>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.grad_floor = j.at("grad_floor").get<double>();
  cfg.lyap_eps = j.at("lyap_eps").get<double>();
  cfg.sigma_knee = j.at("sigma_knee").get<double>();
  cfg.form = j.at("form").get<std::string>() == "relu_outside"
                 ? dynamics::ProjectionForm::ReluOutside
                 : dynamics::ProjectionForm::ReluInside;
  cfg.projection_enabled = j.at("projection_enabled").get<bool>();
  return cfg;
}

/// FNV-1a over the serialized learner description; a cheap integrity tag
/// that catches loading a checkpoint against the wrong architecture.
std::uint64_t spec_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct BlobWriter {
  std::vector<double> payload;
  json table = json::array();

  void add(const std::string& name, const VectorXd& values) {
    json entry;
    entry["name"] = name;
    entry["offset"] = payload.size();
    entry["count"] = values.size();
    table.push_back(entry);
    payload.insert(payload.end(), values.data(), values.data() + values.size());
  }
};

struct BlobReader {
  std::vector<double> payload;
  json table;

  VectorXd get(const std::string& name) const {
    for (const auto& entry : table) {
      if (entry.at("name").get<std::string>() != name) continue;
      const std::size_t off = entry.at("offset").get<std::size_t>();
      const std::size_t count = entry.at("count").get<std::size_t>();
      if (off + count > payload.size()) throw ParseError("checkpoint: blob out of range: " + name);
      VectorXd out(count);
      std::memcpy(out.data(), payload.data() + off, count * sizeof(double));
      return out;
    }
    throw ParseError("checkpoint: missing blob: " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& entry : table)
      if (entry.at("name").get<std::string>() == name) return true;
    return false;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (ckpt.models.size() != ckpt.norm_infos.size())
    throw ContractError("save_checkpoint: model/normalization count mismatch");

  json header;
  header["format"] = "contraj-checkpoint";
  header["version"] = 1;
  header["method"] = ckpt.method;
  header["learner"] = ckpt.learner;
  header["seed"] = ckpt.seed;
  header["n_tasks"] = ckpt.models.size();

  BlobWriter blobs;
  json tasks = json::array();
  for (std::size_t j = 0; j < ckpt.models.size(); ++j) {
    const continual::TaskModel& m = ckpt.models[j];
    const data::NormalizationInfo& ni = ckpt.norm_infos[j];
    json t;
    t["learner_config"] = learner_to_json(m.cfg);
    t["spec_hash"] = spec_hash(t["learner_config"]);
    blobs.add("task_" + std::to_string(j) + "/params", m.params.values);
    if (m.cond.size() > 0) blobs.add("task_" + std::to_string(j) + "/cond", m.cond);
    json norm;
    norm["kind"] = ni.kind == data::TaskKind::Pose ? "pose" : "euclidean";
    norm["global_scale"] = ni.global_scale;
    norm["tangent_scale"] = ni.tangent_scale;
    json offsets = json::array();
    for (const VectorXd& g : ni.goal_offsets)
      offsets.push_back(std::vector<double>(g.data(), g.data() + g.size()));
    norm["goal_offsets"] = offsets;
    json quats = json::array();
    for (const auto& q : ni.goal_quats) {
      const Eigen::Vector4d v = q.as_vector();
      quats.push_back(std::vector<double>(v.data(), v.data() + 4));
    }
    norm["goal_quats"] = quats;
    t["normalization"] = norm;
    tasks.push_back(t);
  }
  header["tasks"] = tasks;

  if (ckpt.hstate.has_value()) {
    const hypernet::HypernetState& hs = *ckpt.hstate;
    json h;
    h["mode"] = hs.spec.mode == hypernet::HypernetMode::Full ? "full" : "chunked";
    h["hidden"] = hs.spec.hidden_widths;
    h["task_emb_dim"] = hs.spec.task_emb_dim;
    h["chunk_size"] = hs.spec.chunk_size;
    h["chunk_emb_dim"] = hs.spec.chunk_emb_dim;
    h["target"] = learner_to_json(hs.spec.target);
    h["n_frozen"] = hs.frozen_embeddings.size();
    h["has_snapshot"] = hs.has_snapshot;
    header["hypernet"] = h;
    blobs.add("hypernet/core", hs.core);
    for (std::size_t l = 0; l < hs.frozen_embeddings.size(); ++l)
      blobs.add("hypernet/frozen_" + std::to_string(l), hs.frozen_embeddings[l]);
    if (hs.current_embedding.size() > 0) blobs.add("hypernet/current", hs.current_embedding);
    if (hs.has_snapshot) blobs.add("hypernet/snapshot", hs.snapshot);
  }

  header["blobs"] = blobs.table;
  const std::string header_str = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open for writing: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header_str.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  f.write(reinterpret_cast<const char*>(blobs.payload.data()),
          static_cast<std::streamsize>(blobs.payload.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open: " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError(path.string() + ": not a checkpoint file");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw ParseError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }

  BlobReader blobs;
  blobs.table = header.at("blobs");
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() % sizeof(double) != 0)
      throw ParseError(path.string() + ": payload is not a float64 array");
    blobs.payload.resize(raw.size() / sizeof(double));
    std::memcpy(blobs.payload.data(), raw.data(), raw.size());
  }

  Checkpoint out;
  try {
    out.method = header.at("method").get<std::string>();
    out.learner = header.at("learner").get<std::string>();
    out.seed = header.at("seed").get<std::uint64_t>();
    const auto& tasks = header.at("tasks");
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      const auto& t = tasks[j];
      continual::TaskModel m;
      m.cfg = learner_from_json(t.at("learner_config"));
      if (t.at("spec_hash").get<std::uint64_t>() != spec_hash(t.at("learner_config")))
        throw ParseError(path.string() + ": spec hash mismatch for task " + std::to_string(j));
      m.params.values = blobs.get("task_" + std::to_string(j) + "/params");
      if (blobs.has("task_" + std::to_string(j) + "/cond"))
        m.cond = blobs.get("task_" + std::to_string(j) + "/cond");
      out.models.push_back(std::move(m));

      const auto& norm = t.at("normalization");
      data::NormalizationInfo ni;
      ni.kind = norm.at("kind").get<std::string>() == "pose" ? data::TaskKind::Pose
                                                             : data::TaskKind::Euclidean;
      ni.global_scale = norm.at("global_scale").get<double>();
      ni.tangent_scale = norm.at("tangent_scale").get<double>();
      for (const auto& g : norm.at("goal_offsets")) {
        const std::vector<double> v = g.get<std::vector<double>>();
        ni.goal_offsets.push_back(Eigen::Map<const VectorXd>(v.data(), v.size()));
      }
      for (const auto& q : norm.at("goal_quats")) {
        const std::vector<double> v = q.get<std::vector<double>>();
        if (v.size() != 4) throw ParseError("checkpoint: malformed goal quaternion");
        orientation::UnitQuaternion uq{v[0], {v[1], v[2], v[3]}};
        ni.goal_quats.push_back(uq);
      }
      out.norm_infos.push_back(std::move(ni));
    }

    if (header.contains("hypernet")) {
      const auto& h = header.at("hypernet");
      hypernet::HypernetSpec spec;
      spec.mode = h.at("mode").get<std::string>() == "full" ? hypernet::HypernetMode::Full
                                                            : hypernet::HypernetMode::Chunked;
      spec.hidden_widths = h.at("hidden").get<std::vector<int>>();
      spec.task_emb_dim = h.at("task_emb_dim").get<int>();
      spec.chunk_size = h.at("chunk_size").get<int>();
      spec.chunk_emb_dim = h.at("chunk_emb_dim").get<int>();
      spec.target = learner_from_json(h.at("target"));
      hypernet::HypernetState hs;
      hs.spec = spec;
      hs.core = blobs.get("hypernet/core");
      const std::size_t n_frozen = h.at("n_frozen").get<std::size_t>();
      for (std::size_t l = 0; l < n_frozen; ++l)
        hs.frozen_embeddings.push_back(blobs.get("hypernet/frozen_" + std::to_string(l)));
      if (blobs.has("hypernet/current")) hs.current_embedding = blobs.get("hypernet/current");
      hs.has_snapshot = h.at("has_snapshot").get<bool>();
      if (hs.has_snapshot) hs.snapshot = blobs.get("hypernet/snapshot");
      out.hstate = std::move(hs);
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace contraj::checkpoint
