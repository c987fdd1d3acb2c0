#include "contraj/runlog.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "contraj/errors.hpp"

namespace contraj {

using nlohmann::json;

std::vector<std::uint64_t> RunLog::seeds() const {
  std::vector<std::uint64_t> out;
  for (const RunRecord& r : records)
    if (std::find(out.begin(), out.end(), r.seed) == out.end()) out.push_back(r.seed);
  std::sort(out.begin(), out.end());
  return out;
}

RunLog RunLog::filter_seed(std::uint64_t seed) const {
  RunLog out;
  for (const RunRecord& r : records)
    if (r.seed == seed) out.records.push_back(r);
  return out;
}

int RunLog::n_tasks() const {
  int n = 0;
  for (const RunRecord& r : records) n = std::max(n, r.train_task + 1);
  return n;
}

void save_runlog_jsonl(const RunLog& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open for writing: " + path.string());
  for (const RunRecord& r : log.records) {
    json j;
    j["seed"] = r.seed;
    j["method"] = r.method;
    j["learner"] = r.learner;
    j["train_task"] = r.train_task;
    j["eval_task"] = r.eval_task;
    j["dtw"] = r.dtw;
    j["quat_err"] = r.quat_err;
    j["wall_time_s"] = r.wall_time_s;
    j["param_count"] = r.param_count;
    j["stored_bytes"] = r.stored_bytes;
    f << j.dump() << '\n';
  }
}

RunLog load_runlog_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open: " + path.string());
  RunLog log;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      RunRecord r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.method = j.at("method").get<std::string>();
      r.learner = j.at("learner").get<std::string>();
      r.train_task = j.at("train_task").get<int>();
      r.eval_task = j.at("eval_task").get<int>();
      // Non-finite errors (divergence) serialize as JSON null.
      auto read_errors = [](const json& arr) {
        std::vector<double> out;
        for (const auto& v : arr)
          out.push_back(v.is_number() ? v.get<double>()
                                      : std::numeric_limits<double>::infinity());
        return out;
      };
      r.dtw = read_errors(j.at("dtw"));
      if (j.contains("quat_err") && !j["quat_err"].is_null())
        r.quat_err = read_errors(j["quat_err"]);
      r.wall_time_s = j.at("wall_time_s").get<double>();
      r.param_count = j.at("param_count").get<long>();
      r.stored_bytes = j.at("stored_bytes").get<long>();
      log.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

RunLog load_runlogs_jsonl(const std::vector<std::filesystem::path>& paths) {
  RunLog merged;
  for (const auto& p : paths) {
    RunLog one = load_runlog_jsonl(p);
    merged.records.insert(merged.records.end(), one.records.begin(), one.records.end());
  }
  return merged;
}

}  // namespace contraj
