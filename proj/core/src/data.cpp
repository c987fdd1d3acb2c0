#include "contraj/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "contraj/errors.hpp"
#include "contraj/rng.hpp"

namespace contraj::data {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "task" : out;
}

void write_csv(const fs::path& path, const MatrixXd& rows) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open for writing: " + path.string());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (c > 0) f << ',';
      f << format_double(rows(r, c));
    }
    f << '\n';
  }
}

MatrixXd read_csv(const fs::path& path, int expect_cols, int expect_rows) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \t", used) != std::string::npos)
          throw std::invalid_argument("trailing garbage");
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": row " + std::to_string(lineno) + ": bad value '" +
                         cell + "'");
      }
    }
    if (expect_cols > 0 && static_cast<int>(vals.size()) != expect_cols)
      throw ParseError(path.string() + ": row " + std::to_string(lineno) + ": expected " +
                       std::to_string(expect_cols) + " columns, got " +
                       std::to_string(vals.size()));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError(path.string() + ": empty file");
  if (expect_rows > 0 && static_cast<int>(rows.size()) != expect_rows)
    throw ParseError(path.string() + ": expected " + std::to_string(expect_rows) + " rows, got " +
                     std::to_string(rows.size()));
  MatrixXd out(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size())
      throw ParseError(path.string() + ": row " + std::to_string(r + 1) + ": ragged columns");
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(r, c) = rows[r][c];
  }
  return out;
}

}  // namespace

int Task::length() const {
  if (kind == TaskKind::Pose) return pose_demos.empty() ? 0 : pose_demos.front().length();
  return demos.empty() ? 0 : demos.front().length();
}

int Task::dim() const {
  if (kind == TaskKind::Pose) return 6;
  return demos.empty() ? 0 : demos.front().dim();
}

long Task::bytes() const {
  const int cols = kind == TaskKind::Pose ? 7 : dim();
  return 8L * length() * cols * n_demos();
}

void Task::validate() const {
  if (kind == TaskKind::Euclidean) {
    if (demos.empty()) throw ContractError("Task '" + name + "': no demonstrations");
    const int T = demos.front().length();
    const int d = demos.front().dim();
    for (const auto& tr : demos) {
      tr.validate();
      if (tr.length() != T || tr.dim() != d)
        throw DataError("Task '" + name + "': demonstrations disagree in shape");
    }
  } else {
    if (pose_demos.empty()) throw ContractError("Task '" + name + "': no demonstrations");
    const int T = pose_demos.front().length();
    for (const auto& tr : pose_demos) {
      tr.validate();
      if (tr.length() != T)
        throw DataError("Task '" + name + "': demonstrations disagree in length");
    }
  }
}

long TaskDataset::total_bytes() const {
  long total = 0;
  for (const Task& t : tasks) total += t.bytes();
  return total;
}

void TaskDataset::validate() const {
  if (tasks.empty()) throw ContractError("TaskDataset: no tasks");
  for (const Task& t : tasks) t.validate();
}

NormalizedTask normalize(const Task& task, double tangent_scale) {
  task.validate();
  NormalizedTask out;
  out.info.kind = task.kind;
  out.info.tangent_scale = tangent_scale;

  if (task.kind == TaskKind::Euclidean) {
    for (const auto& demo : task.demos) {
      const VectorXd goal = demo.points.row(demo.length() - 1).transpose();
      out.info.goal_offsets.push_back(goal);
      dynamics::Trajectory shifted = demo;
      shifted.points.rowwise() -= goal.transpose();
      out.demos.push_back(std::move(shifted));
    }
  } else {
    for (const auto& demo : task.pose_demos) {
      out.info.goal_offsets.push_back(demo.positions.row(demo.length() - 1).transpose());
      out.info.goal_quats.push_back(demo.quaternions.back());
      out.demos.push_back(orientation::encode_pose(demo, tangent_scale));
    }
  }
  double scale = 0.0;
  for (const auto& demo : out.demos) scale = std::max(scale, demo.points.cwiseAbs().maxCoeff());
  if (scale < 1e-12) scale = 1.0;
  out.info.global_scale = scale;
  for (auto& demo : out.demos) demo.points /= scale;
  return out;
}

dynamics::Trajectory denormalize(const dynamics::Trajectory& pred, const NormalizationInfo& info,
                                 int demo_index) {
  if (info.kind != TaskKind::Euclidean)
    throw ContractError("denormalize: info belongs to a pose task");
  if (demo_index < 0 || demo_index >= static_cast<int>(info.goal_offsets.size()))
    throw ContractError("denormalize: demo index out of range");
  dynamics::Trajectory out = pred;
  out.points *= info.global_scale;
  out.points.rowwise() += info.goal_offsets[demo_index].transpose();
  return out;
}

orientation::PoseTrajectory denormalize_pose(const dynamics::Trajectory& pred,
                                             const NormalizationInfo& info, int demo_index) {
  if (info.kind != TaskKind::Pose) throw ContractError("denormalize_pose: info is not pose");
  if (demo_index < 0 || demo_index >= static_cast<int>(info.goal_offsets.size()))
    throw ContractError("denormalize_pose: demo index out of range");
  dynamics::Trajectory scaled = pred;
  scaled.points *= info.global_scale;
  return orientation::decode_pose(scaled, info.goal_offsets[demo_index],
                                  info.goal_quats[demo_index], info.tangent_scale);
}

void save_dataset(const TaskDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.tasks.size(); ++i) {
    const Task& task = ds.tasks[i];
    char prefix[16];
    std::snprintf(prefix, sizeof(prefix), "task_%03zu_", i);
    const fs::path tdir = dir / (prefix + sanitize(task.name));
    fs::create_directories(tdir);
    json manifest;
    manifest["name"] = task.name;
    manifest["kind"] = task.kind == TaskKind::Pose ? "pose" : "euclidean";
    manifest["dim"] = task.kind == TaskKind::Pose ? 7 : task.dim();
    manifest["T"] = task.length();
    manifest["n_demos"] = task.n_demos();
    std::ofstream mf(tdir / "manifest.json");
    mf << manifest.dump(2) << '\n';
    for (int j = 0; j < task.n_demos(); ++j) {
      const fs::path csv = tdir / ("demo_" + std::to_string(j) + ".csv");
      if (task.kind == TaskKind::Euclidean) {
        write_csv(csv, task.demos[j].points);
      } else {
        const auto& demo = task.pose_demos[j];
        MatrixXd rows(demo.length(), 7);
        for (int t = 0; t < demo.length(); ++t) {
          rows.row(t).head(3) = demo.positions.row(t);
          rows(t, 3) = demo.quaternions[t].w;
          rows.row(t).tail(3) = demo.quaternions[t].xyz.transpose();
        }
        write_csv(csv, rows);
      }
    }
  }
}

TaskDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParseError("not a directory: " + dir.string());
  std::vector<fs::path> task_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) task_dirs.push_back(e.path());
  std::sort(task_dirs.begin(), task_dirs.end());
  if (task_dirs.empty()) throw ParseError("no task directories under " + dir.string());

  TaskDataset ds;
  ds.name = dir.filename().string();
  for (const fs::path& tdir : task_dirs) {
    json manifest;
    {
      std::ifstream mf(tdir / "manifest.json");
      if (!mf) throw ParseError("cannot open " + (tdir / "manifest.json").string());
      try {
        mf >> manifest;
      } catch (const json::exception& e) {
        throw ParseError((tdir / "manifest.json").string() + ": " + e.what());
      }
    }
    Task task;
    try {
      task.name = manifest.at("name").get<std::string>();
      const std::string kind = manifest.at("kind").get<std::string>();
      if (kind == "pose") {
        task.kind = TaskKind::Pose;
      } else if (kind == "euclidean") {
        task.kind = TaskKind::Euclidean;
      } else {
        throw ParseError(tdir.string() + ": unknown kind '" + kind + "'");
      }
      const int dim = manifest.at("dim").get<int>();
      const int T = manifest.at("T").get<int>();
      const int n_demos = manifest.at("n_demos").get<int>();
      if (task.kind == TaskKind::Pose && dim != 7)
        throw ParseError(tdir.string() + ": pose tasks store 7 columns");
      const double dt = T > 1 ? 1.0 / (T - 1) : 1.0;
      for (int j = 0; j < n_demos; ++j) {
        const fs::path csv = tdir / ("demo_" + std::to_string(j) + ".csv");
        const MatrixXd rows = read_csv(csv, dim, T);
        if (task.kind == TaskKind::Euclidean) {
          task.demos.push_back(dynamics::Trajectory{rows, dt});
        } else {
          orientation::PoseTrajectory demo;
          demo.dt = dt;
          demo.positions = rows.leftCols(3);
          demo.quaternions.resize(T);
          for (int t = 0; t < T; ++t) {
            orientation::UnitQuaternion q{rows(t, 3), rows.row(t).tail(3).transpose()};
            if (std::abs(q.norm() - 1.0) > 1e-6)
              throw DataError(csv.string() + ": row " + std::to_string(t + 1) +
                              ": quaternion norm " + std::to_string(q.norm()) +
                              " outside tolerance");
            demo.quaternions[t] = orientation::normalized(q);
          }
          orientation::enforce_sign_continuity(demo.quaternions);
          task.pose_demos.push_back(std::move(demo));
        }
      }
    } catch (const json::exception& e) {
      throw ParseError(tdir.string() + ": manifest: " + e.what());
    }
    task.validate();
    ds.tasks.push_back(std::move(task));
  }
  return ds;
}

TaskDataset load_lasa_2d(const fs::path& dir) {
  TaskDataset ds = load_dataset(dir);
  for (const Task& t : ds.tasks)
    if (t.kind != TaskKind::Euclidean || t.dim() != 2)
      throw DataError("load_lasa_2d: task '" + t.name + "' is not 2-D euclidean");
  return ds;
}

TaskDataset load_pose_tasks(const fs::path& dir) {
  TaskDataset ds = load_dataset(dir);
  for (const Task& t : ds.tasks)
    if (t.kind != TaskKind::Pose)
      throw DataError("load_pose_tasks: task '" + t.name + "' is not a pose task");
  return ds;
}

TaskDataset synth_highd(const TaskDataset& source, int target_dim, int n_tasks,
                        std::uint64_t seed) {
  source.validate();
  if (target_dim < 4 || target_dim % 2 != 0)
    throw ContractError("synth_highd: target_dim must be even and at least 4");
  const int k = target_dim / 2;
  const int n_source = static_cast<int>(source.tasks.size());
  if (n_source < k)
    throw ContractError("synth_highd: need at least " + std::to_string(k) +
                        " unique source tasks");
  const int T = source.tasks.front().length();
  const int n_demos = source.tasks.front().n_demos();
  for (const Task& t : source.tasks) {
    if (t.kind != TaskKind::Euclidean || t.dim() != 2)
      throw ContractError("synth_highd: source must be 2-D euclidean");
    if (t.length() != T || t.n_demos() != n_demos)
      throw ContractError("synth_highd: source tasks must share T and demo count");
  }

  Rng rng(seed);
  TaskDataset out;
  out.name = source.name + "_" + std::to_string(target_dim) + "d";
  for (int i = 0; i < n_tasks; ++i) {
    const std::vector<int> picks = rng.distinct_indices(k, n_source);
    Task task;
    task.kind = TaskKind::Euclidean;
    task.name = "highd_" + std::to_string(i);
    for (int j = 0; j < n_demos; ++j) {
      dynamics::Trajectory tr;
      tr.dt = source.tasks.front().demos[j].dt;
      tr.points.resize(T, target_dim);
      for (int c = 0; c < k; ++c)
        tr.points.middleCols(2 * c, 2) = source.tasks[picks[c]].demos[j].points;
      task.demos.push_back(std::move(tr));
    }
    out.tasks.push_back(std::move(task));
  }
  return out;
}

namespace {

Eigen::Vector2d toy_base_point(ToyShape shape, double tau, double u1, double u2) {
  switch (shape) {
    case ToyShape::Sine: {
      const double amp = 12.0 * (1.0 + 0.15 * u1);
      const double omega = 2.5 * (1.0 + 0.1 * u2);
      return {40.0 * (1.0 - tau), amp * std::sin(omega * M_PI * (1.0 - tau))};
    }
    case ToyShape::Spiral: {
      const double rho = 35.0 * (1.0 + 0.1 * u1) * (1.0 - tau);
      const double theta = (1.5 + 0.2 * u2) * 2.0 * M_PI * (1.0 - tau);
      return {rho * std::cos(theta), rho * std::sin(theta)};
    }
    case ToyShape::Angle: {
      const Eigen::Vector2d p0{32.0 * (1.0 + 0.1 * u1), 28.0 * (1.0 + 0.1 * u2)};
      const Eigen::Vector2d p1{26.0 * (1.0 + 0.1 * u1), 3.0};
      if (tau < 0.45) {
        const double s = tau / 0.45;
        return p0 + s * (p1 - p0);
      }
      const double s = (tau - 0.45) / 0.55;
      return p1 * (1.0 - s);
    }
  }
  return Eigen::Vector2d::Zero();
}

Task make_toy_task(ToyShape shape, const std::string& name, Rng& rng) {
  constexpr int kPoints = 1000;
  constexpr int kDemos = 7;
  const double u1 = rng.uniform(-1.0, 1.0);
  const double u2 = rng.uniform(-1.0, 1.0);
  Task task;
  task.kind = TaskKind::Euclidean;
  task.name = name;
  for (int j = 0; j < kDemos; ++j) {
    const double ax = rng.uniform(0.05, 0.15);
    const double ay = rng.uniform(0.05, 0.15);
    const double px = rng.uniform(0.0, 2.0 * M_PI);
    const double py = rng.uniform(0.0, 2.0 * M_PI);
    dynamics::Trajectory tr;
    tr.dt = 1.0 / (kPoints - 1);
    tr.points.resize(kPoints, 2);
    for (int t = 0; t < kPoints; ++t) {
      const double tau = static_cast<double>(t) / (kPoints - 1);
      Eigen::Vector2d p = toy_base_point(shape, tau, u1, u2);
      p[0] += ax * std::sin(M_PI * tau + px) * (1.0 - tau);
      p[1] += ay * std::sin(M_PI * tau + py) * (1.0 - tau);
      tr.points.row(t) = p.transpose();
    }
    task.demos.push_back(std::move(tr));
  }
  return task;
}

const char* shape_name(ToyShape s) {
  switch (s) {
    case ToyShape::Sine:
      return "sine";
    case ToyShape::Spiral:
      return "spiral";
    case ToyShape::Angle:
      return "angle";
  }
  return "shape";
}

}  // namespace

TaskDataset synth_toy_shapes(ToyShape shape, int n_tasks, std::uint64_t seed) {
  if (n_tasks <= 0) throw ContractError("synth_toy_shapes: need at least one task");
  Rng rng(seed);
  TaskDataset ds;
  ds.name = std::string("toy_") + shape_name(shape);
  for (int i = 0; i < n_tasks; ++i)
    ds.tasks.push_back(
        make_toy_task(shape, std::string(shape_name(shape)) + "_" + std::to_string(i), rng));
  return ds;
}

TaskDataset synth_toy_sequence(int n_tasks, std::uint64_t seed) {
  if (n_tasks <= 0) throw ContractError("synth_toy_sequence: need at least one task");
  Rng rng(seed);
  TaskDataset ds;
  ds.name = "toy_sequence";
  const ToyShape cycle[3] = {ToyShape::Sine, ToyShape::Spiral, ToyShape::Angle};
  for (int i = 0; i < n_tasks; ++i) {
    const ToyShape shape = cycle[i % 3];
    ds.tasks.push_back(
        make_toy_task(shape, std::string(shape_name(shape)) + "_" + std::to_string(i), rng));
  }
  return ds;
}

}  // namespace contraj::data
