#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace contraj {

/// One evaluation record: after training train_task, task eval_task was
/// rolled out from every demonstration start. Error vectors hold one entry
/// per demonstration; quat_err is empty for euclidean tasks.
struct RunRecord {
  std::uint64_t seed = 0;
  std::string method;
  std::string learner;
  int train_task = 0;
  int eval_task = 0;
  std::vector<double> dtw;
  std::vector<double> quat_err;
  double wall_time_s = 0.0;  // training time of train_task
  long param_count = 0;
  long stored_bytes = 0;
};

struct RunLog {
  std::vector<RunRecord> records;

  void append(RunRecord r) { records.push_back(std::move(r)); }
  std::vector<std::uint64_t> seeds() const;
  RunLog filter_seed(std::uint64_t seed) const;
  int n_tasks() const;  // 1 + max train_task
};

void save_runlog_jsonl(const RunLog& log, const std::filesystem::path& path);
RunLog load_runlog_jsonl(const std::filesystem::path& path);
RunLog load_runlogs_jsonl(const std::vector<std::filesystem::path>& paths);

}  // namespace contraj
