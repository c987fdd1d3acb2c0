#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "contraj/checkpoint.hpp"
#include "contraj/data.hpp"
#include "contraj/errors.hpp"
#include "contraj/experiment.hpp"
#include "contraj/plot.hpp"

namespace fs = std::filesystem;
using namespace contraj;

namespace {

// Interchange format for import: one CSV per task with a header row
// "demo,<c0>,<c1>,..."; rows grouped by demo index in timestep order.
void import_task_csv(const fs::path& file, data::TaskKind kind, data::TaskDataset& ds) {
  std::ifstream f(file);
  if (!f) throw ParseError("cannot open: " + file.string());
  std::string header;
  if (!std::getline(f, header)) throw ParseError(file.string() + ": empty file");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(file.string() + ": row " + std::to_string(lineno) + ": bad value '" +
                         cell + "'");
      }
    }
    if (vals.size() < 2)
      throw ParseError(file.string() + ": row " + std::to_string(lineno) + ": too few columns");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError(file.string() + ": no data rows");
  const int cols = static_cast<int>(rows.front().size()) - 1;
  const int expected_cols = kind == data::TaskKind::Pose ? 7 : cols;
  if (kind == data::TaskKind::Pose && cols != 7)
    throw ParseError(file.string() + ": pose import needs columns demo,px,py,pz,qw,qx,qy,qz");

  // Group rows by demo id, preserving order.
  std::vector<std::vector<std::vector<double>>> demos;
  for (const auto& r : rows) {
    const int id = static_cast<int>(r[0]);
    if (id < 0 || id > 10000) throw ParseError(file.string() + ": bad demo index");
    if (id >= static_cast<int>(demos.size())) demos.resize(id + 1);
    demos[id].push_back(std::vector<double>(r.begin() + 1, r.end()));
  }

  data::Task task;
  task.name = file.stem().string();
  task.kind = kind;
  for (const auto& demo_rows : demos) {
    if (demo_rows.empty()) throw ParseError(file.string() + ": demo indices must be contiguous");
    const int T = static_cast<int>(demo_rows.size());
    const double dt = T > 1 ? 1.0 / (T - 1) : 1.0;
    if (kind == data::TaskKind::Euclidean) {
      dynamics::Trajectory tr;
      tr.dt = dt;
      tr.points.resize(T, expected_cols);
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < expected_cols; ++c) tr.points(t, c) = demo_rows[t][c];
      task.demos.push_back(std::move(tr));
    } else {
      orientation::PoseTrajectory tr;
      tr.dt = dt;
      tr.positions.resize(T, 3);
      tr.quaternions.resize(T);
      for (int t = 0; t < T; ++t) {
        tr.positions.row(t) << demo_rows[t][0], demo_rows[t][1], demo_rows[t][2];
        orientation::UnitQuaternion q{demo_rows[t][3],
                                      {demo_rows[t][4], demo_rows[t][5], demo_rows[t][6]}};
        if (std::abs(q.norm() - 1.0) > 1e-6)
          throw DataError(file.string() + ": non-unit quaternion at row " + std::to_string(t));
        tr.quaternions[t] = orientation::normalized(q);
      }
      orientation::enforce_sign_continuity(tr.quaternions);
      task.pose_demos.push_back(std::move(tr));
    }
  }
  ds.tasks.push_back(std::move(task));
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Stable continual trajectory learning: datasets, training, metrics"};
  app.require_subcommand(1);

  // import
  auto* cmd_import = app.add_subcommand("import", "Convert interchange CSVs to a dataset");
  std::string import_from, import_to, import_kind = "euclidean";
  cmd_import->add_option("--from", import_from, "Directory of per-task CSV files")->required();
  cmd_import->add_option("--to", import_to, "Output dataset directory")->required();
  cmd_import->add_option("--kind", import_kind, "euclidean or pose");

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "Stack 2-D tasks into a high-dimensional set");
  std::string synth_source, synth_out;
  int synth_dim = 8, synth_tasks = 10;
  std::uint64_t synth_seed = 1;
  cmd_synth->add_option("--source", synth_source, "Source 2-D dataset")->required();
  cmd_synth->add_option("--dim", synth_dim, "Target dimension (even, >= 4)");
  cmd_synth->add_option("--tasks", synth_tasks, "Number of synthesized tasks");
  cmd_synth->add_option("--seed", synth_seed, "Seed");
  cmd_synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // synth-toy
  auto* cmd_toy = app.add_subcommand("synth-toy", "Generate analytic 2-D shape tasks");
  std::string toy_kind = "mix", toy_out;
  int toy_tasks = 3;
  std::uint64_t toy_seed = 1;
  cmd_toy->add_option("--kind", toy_kind, "sine, spiral, angle, or mix");
  cmd_toy->add_option("--tasks", toy_tasks, "Number of tasks");
  cmd_toy->add_option("--seed", toy_seed, "Seed");
  cmd_toy->add_option("--out", toy_out, "Output dataset directory")->required();

  // train
  auto* cmd_train = app.add_subcommand("train", "Run a continual training sequence");
  std::string train_config;
  std::vector<std::string> train_sets;
  cmd_train->add_option("--config", train_config, "Configuration file")->required();
  cmd_train->add_option("--set", train_sets, "Override key=value (repeatable)");

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_ds, eval_out = "eval.json";
  cmd_eval->add_option("--checkpoint", eval_ckpt)->required();
  cmd_eval->add_option("--dataset", eval_ds)->required();
  cmd_eval->add_option("--out", eval_out, "Output JSON");

  // metrics
  auto* cmd_metrics = app.add_subcommand("metrics", "Accuracy matrices and CL reports");
  std::vector<std::string> metrics_logs;
  std::string metrics_ds, metrics_out = "metrics";
  double metrics_dtw = -1.0, metrics_quat = -1.0;
  std::string metrics_sizes;
  cmd_metrics->add_option("--runlog", metrics_logs, "Runlog JSONL (repeatable)")->required();
  cmd_metrics->add_option("--dataset", metrics_ds)->required();
  cmd_metrics->add_option("--out", metrics_out, "Output directory");
  cmd_metrics->add_option("--dtw-threshold", metrics_dtw, "Override the DTW pass threshold");
  cmd_metrics->add_option("--quat-threshold", metrics_quat, "Override the rotation threshold");
  cmd_metrics->add_option("--sizes", metrics_sizes,
                          "JSON {method: final_size} cross-model table enabling FS");

  // stability
  auto* cmd_stab = app.add_subcommand("stability", "Perturbed-start and horizon probes");
  std::string stab_ckpt, stab_ds, stab_mode = "perturb", stab_out = "stability.json";
  int stab_task = -1, stab_samples = 100, stab_extra = 200;
  double stab_radius = 25.0;
  std::uint64_t stab_seed = 1;
  cmd_stab->add_option("--checkpoint", stab_ckpt)->required();
  cmd_stab->add_option("--dataset", stab_ds)->required();
  cmd_stab->add_option("--task", stab_task, "Task index (-1 = all)");
  cmd_stab->add_option("--mode", stab_mode, "perturb or horizon");
  cmd_stab->add_option("--radius", stab_radius, "Perturbation radius in dataset units");
  cmd_stab->add_option("--samples", stab_samples, "Starts per task");
  cmd_stab->add_option("--extra", stab_extra, "Extra integration steps (horizon mode)");
  cmd_stab->add_option("--seed", stab_seed, "Sampling seed");
  cmd_stab->add_option("--out", stab_out, "Output JSON");

  // plot
  auto* cmd_plot = app.add_subcommand("plot", "Static SVG/CSV figures from results");
  std::vector<std::string> plot_logs;
  std::vector<std::string> plot_metric_files;
  std::string plot_out = "plots";
  cmd_plot->add_option("--runlog", plot_logs, "Runlog JSONL (repeatable)");
  cmd_plot->add_option("--metrics", plot_metric_files, "metrics.json files (repeatable)");
  cmd_plot->add_option("--out", plot_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  if (cmd_import->parsed()) {
    const data::TaskKind kind =
        import_kind == "pose" ? data::TaskKind::Pose : data::TaskKind::Euclidean;
    data::TaskDataset ds;
    ds.name = fs::path(import_to).filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(import_from))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ParseError("no .csv files under " + import_from);
    for (const auto& f : files) import_task_csv(f, kind, ds);
    data::save_dataset(ds, import_to);
    std::cout << "imported " << ds.tasks.size() << " tasks into " << import_to << "\n";
  } else if (cmd_synth->parsed()) {
    const data::TaskDataset source = data::load_lasa_2d(synth_source);
    const data::TaskDataset ds = data::synth_highd(source, synth_dim, synth_tasks, synth_seed);
    data::save_dataset(ds, synth_out);
    std::cout << "wrote " << ds.tasks.size() << " tasks of dim " << synth_dim << " to "
              << synth_out << "\n";
  } else if (cmd_toy->parsed()) {
    data::TaskDataset ds;
    if (toy_kind == "mix") {
      ds = data::synth_toy_sequence(toy_tasks, toy_seed);
    } else if (toy_kind == "sine") {
      ds = data::synth_toy_shapes(data::ToyShape::Sine, toy_tasks, toy_seed);
    } else if (toy_kind == "spiral") {
      ds = data::synth_toy_shapes(data::ToyShape::Spiral, toy_tasks, toy_seed);
    } else if (toy_kind == "angle") {
      ds = data::synth_toy_shapes(data::ToyShape::Angle, toy_tasks, toy_seed);
    } else {
      throw ContractError("synth-toy: unknown kind '" + toy_kind + "'");
    }
    data::save_dataset(ds, toy_out);
    std::cout << "wrote " << ds.tasks.size() << " toy tasks to " << toy_out << "\n";
  } else if (cmd_train->parsed()) {
    experiment::ExperimentConfig cfg = experiment::parse_config_file(train_config);
    for (const std::string& kv : train_sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ContractError("--set expects key=value");
      experiment::apply_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (cfg.dataset_path.empty()) throw ContractError("config: dataset.path is required");
    if (cfg.output_dir.empty()) throw ContractError("config: output.dir is required");
    const experiment::TrainOutputs outs = experiment::run_train(cfg);
    for (const auto& p : outs.runlogs) std::cout << "runlog: " << p.string() << "\n";
    for (const auto& p : outs.checkpoints) std::cout << "checkpoint: " << p.string() << "\n";
  } else if (cmd_eval->parsed()) {
    experiment::run_eval(eval_ckpt, eval_ds, eval_out);
    std::cout << "wrote " << eval_out << "\n";
  } else if (cmd_metrics->parsed()) {
    experiment::MetricsOptions opt;
    if (metrics_dtw > 0.0) opt.dtw_threshold = metrics_dtw;
    if (metrics_quat > 0.0) opt.quat_threshold = metrics_quat;
    if (!metrics_sizes.empty()) {
      std::ifstream f(metrics_sizes);
      if (!f) throw ParseError("cannot open " + metrics_sizes);
      nlohmann::json j;
      f >> j;
      long max_size = 0;
      for (const auto& [k, v] : j.items()) max_size = std::max(max_size, v.get<long>());
      opt.cross_model_max_size = max_size;
    } else {
      std::cout << "notice: FS omitted (no cross-model size table; pass --sizes)\n";
    }
    std::vector<fs::path> paths(metrics_logs.begin(), metrics_logs.end());
    const experiment::MetricsOutputs out =
        experiment::run_metrics(paths, metrics_ds, metrics_out, opt);
    std::cout << "cl_score (median over seeds): " << out.median_report.cl_score
              << ", cl_stability: " << out.stability << "\n";
  } else if (cmd_stab->parsed()) {
    experiment::StabilityOptions opt;
    opt.mode = stab_mode == "horizon" ? experiment::StabilityMode::Horizon
                                      : experiment::StabilityMode::Perturb;
    opt.task = stab_task;
    opt.radius = stab_radius;
    opt.samples = stab_samples;
    opt.extra_steps = stab_extra;
    opt.seed = stab_seed;
    experiment::run_stability(stab_ckpt, stab_ds, opt, stab_out);
    std::cout << "wrote " << stab_out << "\n";
  } else if (cmd_plot->parsed()) {
    fs::create_directories(plot_out);
    if (plot_logs.empty() && plot_metric_files.empty())
      throw ContractError("plot: need --runlog or --metrics inputs");
    if (!plot_logs.empty()) {
      const RunLog first = load_runlog_jsonl(plot_logs.front());
      plot::error_vs_task(first, fs::path(plot_out) / "error_vs_task.svg",
                          fs::path(plot_out) / "error_vs_task.csv");
      plot::timing_bars(first, fs::path(plot_out) / "timing.svg",
                        fs::path(plot_out) / "timing.csv");
      std::vector<std::pair<std::string, RunLog>> named;
      for (const std::string& p : plot_logs)
        named.push_back({fs::path(p).stem().string(), load_runlog_jsonl(p)});
      plot::method_boxplot(named, fs::path(plot_out) / "methods_box.svg",
                           fs::path(plot_out) / "methods_box.csv");
    }
    if (!plot_metric_files.empty()) {
      std::vector<std::pair<std::string, metrics::CLReport>> reports;
      for (const std::string& p : plot_metric_files) {
        std::ifstream f(p);
        if (!f) throw ParseError("cannot open " + p);
        nlohmann::json j;
        f >> j;
        const auto& m = j.at("median");
        metrics::CLReport rep;
        rep.acc = m.at("acc").get<double>();
        rep.rem = m.at("rem").get<double>();
        rep.ms = m.at("ms").get<double>();
        rep.sss = m.at("sss").get<double>();
        rep.te = m.at("te").get<double>();
        if (m.contains("fs")) rep.fs = m.at("fs").get<double>();
        rep.cl_score = m.at("cl_score").get<double>();
        reports.push_back({fs::path(p).parent_path().filename().string(), rep});
      }
      plot::cl_radar(reports, fs::path(plot_out) / "cl_radar.svg");
    }
    std::cout << "wrote figures to " << plot_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
