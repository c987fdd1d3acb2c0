#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "contraj/continual.hpp"
#include "contraj/data.hpp"
#include "contraj/hypernet.hpp"

namespace contraj::checkpoint {

/// Self-describing training artifact: the per-task models of one finished
/// sequence, their normalization info, and (for hypernetwork methods) the
/// full generator state. On disk: magic, version, a JSON header with the
/// blob table, then raw little-endian float64 payloads.
struct Checkpoint {
  std::string method;
  std::string learner;
  std::uint64_t seed = 0;
  std::vector<continual::TaskModel> models;
  std::vector<data::NormalizationInfo> norm_infos;
  std::optional<hypernet::HypernetState> hstate;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace contraj::checkpoint
