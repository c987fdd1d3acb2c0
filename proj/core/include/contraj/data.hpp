#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contraj/dynamics.hpp"
#include "contraj/orientation.hpp"

namespace contraj::data {

enum class TaskKind { Euclidean, Pose };

enum class ToyShape { Sine, Spiral, Angle };

struct Task {
  std::string name;
  TaskKind kind = TaskKind::Euclidean;
  std::vector<dynamics::Trajectory> demos;              // euclidean tasks
  std::vector<orientation::PoseTrajectory> pose_demos;  // pose tasks

  int n_demos() const {
    return static_cast<int>(kind == TaskKind::Pose ? pose_demos.size() : demos.size());
  }
  int length() const;
  /// State dimension seen by the learner (pose tasks train in the 6-D chart).
  int dim() const;
  long bytes() const;  // raw sample payload, 8 bytes per stored value
  void validate() const;
};

struct TaskDataset {
  std::string name;
  std::vector<Task> tasks;

  long total_bytes() const;
  void validate() const;
};

/// Inverse mapping from the model frame back to original units; stored per
/// task at normalization time and applied at evaluation.
struct NormalizationInfo {
  TaskKind kind = TaskKind::Euclidean;
  std::vector<Eigen::VectorXd> goal_offsets;  // per demo: goal point (or position goal)
  std::vector<orientation::UnitQuaternion> goal_quats;  // pose tasks, per demo
  double global_scale = 1.0;
  double tangent_scale = 1.0;
};

struct NormalizedTask {
  std::vector<dynamics::Trajectory> demos;  // model frame, goal at origin
  NormalizationInfo info;
};

/// Translates every demonstration so its final point is the origin, encodes
/// pose tasks into the 6-D tangent chart, and divides by a single max-abs
/// scale so coordinates are O(1).
NormalizedTask normalize(const Task& task, double tangent_scale = 5.0);

dynamics::Trajectory denormalize(const dynamics::Trajectory& pred, const NormalizationInfo& info,
                                 int demo_index);
orientation::PoseTrajectory denormalize_pose(const dynamics::Trajectory& pred,
                                             const NormalizationInfo& info, int demo_index);

/// Canonical on-disk layout: one subdirectory per task with manifest.json
/// and demo_<i>.csv (one row per timestep, no header). Tasks load in
/// lexicographic directory order.
void save_dataset(const TaskDataset& ds, const std::filesystem::path& dir);
TaskDataset load_dataset(const std::filesystem::path& dir);

/// Loader with 2-D euclidean validation (LASA-style directories).
TaskDataset load_lasa_2d(const std::filesystem::path& dir);
/// Loader with pose validation: 7 columns per row, unit quaternions within
/// 1e-6 (then renormalized), sign continuity enforced.
TaskDataset load_pose_tasks(const std::filesystem::path& dir);

/// High-dimensional synthesis: each new task stacks target_dim/2 distinct
/// source tasks drawn uniformly without replacement, demo d with demo d.
TaskDataset synth_highd(const TaskDataset& source, int target_dim, int n_tasks,
                        std::uint64_t seed);

/// Analytic 2-D shapes: 7 demos of 1000 points each, endpoint at the origin,
/// small seeded per-demo perturbations.
TaskDataset synth_toy_shapes(ToyShape shape, int n_tasks, std::uint64_t seed);
/// Task sequence cycling sine, spiral, angle with per-task variation.
TaskDataset synth_toy_sequence(int n_tasks, std::uint64_t seed);

}  // namespace contraj::data
