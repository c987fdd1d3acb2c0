#include "contraj/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "contraj/errors.hpp"
#include "contraj/plot.hpp"

namespace contraj::experiment {

namespace fs = std::filesystem;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const std::string& s : split(v, ',')) out.push_back(std::stoi(s));
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ContractError("expected on/off, got '" + v + "'");
}

}  // namespace

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  continual::MethodConfig& m = cfg.method;
  if (key == "dataset.path") {
    cfg.dataset_path = value;
  } else if (key == "output.dir") {
    cfg.output_dir = value;
  } else if (key == "method") {
    m.method = continual::method_from_name(value);
  } else if (key == "learner") {
    if (value == "node") {
      m.learner = dynamics::LearnerKind::Node;
    } else if (value == "snode") {
      m.learner = dynamics::LearnerKind::Snode;
    } else {
      throw ContractError("learner must be node or snode, got '" + value + "'");
    }
  } else if (key == "seeds") {
    cfg.seeds.clear();
    for (const std::string& s : split(value, ',')) cfg.seeds.push_back(std::stoull(s));
    if (cfg.seeds.empty()) throw ContractError("seeds: need at least one seed");
  } else if (key == "train.iterations") {
    cfg.iterations = std::stoi(value);
  } else if (key == "train.lr") {
    cfg.lr = std::stod(value);
  } else if (key == "train.points") {
    m.train_points = std::stoi(value);
  } else if (key == "train.scheme") {
    if (value == "euler") {
      m.scheme = dynamics::Scheme::Euler;
    } else if (value == "rk4") {
      m.scheme = dynamics::Scheme::Rk4;
    } else {
      throw ContractError("train.scheme must be euler or rk4");
    }
  } else if (key == "reg.strategy") {
    if (value == "all") {
      m.strategy.kind = hypernet::RegStrategy::Kind::All;
    } else if (value == "single") {
      m.strategy.kind = hypernet::RegStrategy::Kind::Single;
    } else if (value.rfind("subset:", 0) == 0) {
      m.strategy.kind = hypernet::RegStrategy::Kind::Subset;
      m.strategy.k_size = std::stoi(value.substr(7));
    } else {
      throw ContractError("reg.strategy must be all, single, or subset:K");
    }
  } else if (key == "reg.beta") {
    m.strategy.beta = std::stod(value);
  } else if (key == "reg.lookahead") {
    m.lookahead = parse_bool(value);
  } else if (key == "si.c") {
    m.si_c = std::stod(value);
  } else if (key == "si.xi") {
    m.si_xi = std::stod(value);
  } else if (key == "mas.lambda") {
    m.mas_lambda = std::stod(value);
  } else if (key == "cond.emb_dim") {
    m.cond_emb_dim = std::stoi(value);
  } else if (key == "arch.f_hidden") {
    m.f_hidden = parse_int_list(value);
  } else if (key == "arch.v_hidden") {
    m.v_hidden = parse_int_list(value);
  } else if (key == "arch.alpha") {
    m.alpha = std::stod(value);
  } else if (key == "arch.time_input") {
    m.time_input = parse_bool(value);
  } else if (key == "arch.projection") {
    if (value == "relu_outside") {
      m.form = dynamics::ProjectionForm::ReluOutside;
    } else if (value == "relu_inside") {
      m.form = dynamics::ProjectionForm::ReluInside;
    } else {
      throw ContractError("arch.projection must be relu_outside or relu_inside");
    }
  } else if (key == "hypernet.hidden") {
    m.hn_hidden = parse_int_list(value);
  } else if (key == "hypernet.task_emb_dim") {
    m.task_emb_dim = std::stoi(value);
  } else if (key == "hypernet.chunk_size") {
    m.chunk_size = std::stoi(value);
  } else if (key == "hypernet.chunk_emb_dim") {
    m.chunk_emb_dim = std::stoi(value);
  } else if (key == "data.tangent_scale") {
    m.tangent_scale = std::stod(value);
  } else {
    throw ContractError("unknown configuration key '" + key + "'");
  }
  cfg.resolved_keys[key] = value;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ": line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw ContractError(origin + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig parse_config_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_dataset_defaults(ExperimentConfig& cfg, int dim, bool pose) {
  if (!cfg.iterations.has_value()) {
    int iters = 15000;
    if (pose) {
      iters = 40000;
    } else if (dim == 8) {
      iters = 60000;
    } else if (dim == 16) {
      iters = 70000;
    } else if (dim == 32) {
      iters = 80000;
    }
    cfg.iterations = iters;
  }
  if (!cfg.lr.has_value()) cfg.lr = (dim == 2 && !pose) ? 1e-4 : 5e-5;
  cfg.method.iterations = *cfg.iterations;
  cfg.method.lr = *cfg.lr;
}

void write_manifest(const ExperimentConfig& cfg, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open for writing: " + path.string());
  std::map<std::string, std::string> keys = cfg.resolved_keys;
  keys["dataset.path"] = cfg.dataset_path.string();
  keys["output.dir"] = cfg.output_dir.string();
  keys["method"] = continual::method_name(cfg.method.method);
  keys["learner"] = cfg.method.learner == dynamics::LearnerKind::Snode ? "snode" : "node";
  {
    std::string s;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      s += (i ? "," : "") + std::to_string(cfg.seeds[i]);
    keys["seeds"] = s;
  }
  if (cfg.iterations.has_value()) keys["train.iterations"] = std::to_string(*cfg.iterations);
  if (cfg.lr.has_value()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", *cfg.lr);
    keys["train.lr"] = buf;
  }
  for (const auto& [k, v] : keys) f << k << " = " << v << '\n';
}

TrainOutputs run_train(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  const data::TaskDataset ds = data::load_dataset(cfg.dataset_path);
  const bool pose = ds.tasks.front().kind == data::TaskKind::Pose;
  apply_dataset_defaults(cfg, ds.tasks.front().dim(), pose);
  cfg.method.validate();
  fs::create_directories(cfg.output_dir);

  TrainOutputs out;
  out.manifest = cfg.output_dir / "manifest.txt";
  write_manifest(cfg, out.manifest);

  const char* workers_env = std::getenv("CONTRAJ_WORKERS");
  const int n_workers = std::max(1, workers_env ? std::atoi(workers_env) : 1);

  out.runlogs.resize(cfg.seeds.size());
  out.checkpoints.resize(cfg.seeds.size());
  std::vector<std::string> errors(cfg.seeds.size());

  auto run_one = [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    try {
      const continual::SequenceResult res = continual::train_sequence(ds, cfg.method, seed);
      const fs::path logp = cfg.output_dir / ("runlog_seed" + std::to_string(seed) + ".jsonl");
      save_runlog_jsonl(res.log, logp);
      checkpoint::Checkpoint ck;
      ck.method = continual::method_name(cfg.method.method);
      ck.learner = cfg.method.learner == dynamics::LearnerKind::Snode ? "snode" : "node";
      ck.seed = seed;
      ck.models = res.final_models;
      ck.norm_infos = res.norm_infos;
      const fs::path ckp = cfg.output_dir / ("checkpoint_seed" + std::to_string(seed) + ".ckpt");
      checkpoint::save_checkpoint(ck, ckp);
      out.runlogs[i] = logp;
      out.checkpoints[i] = ckp;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };

  if (n_workers <= 1 || cfg.seeds.size() <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    for (int w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = w; i < cfg.seeds.size(); i += n_workers) run_one(i);
      });
    }
    (void)next;
    for (auto& t : pool) t.join();
  }
  for (const std::string& e : errors)
    if (!e.empty()) throw std::runtime_error("run_train: " + e);
  return out;
}

std::vector<continual::EvalErrors> run_eval(const fs::path& checkpoint_path,
                                            const fs::path& dataset_path,
                                            const fs::path& out_json) {
  const checkpoint::Checkpoint ck = checkpoint::load_checkpoint(checkpoint_path);
  const data::TaskDataset ds = data::load_dataset(dataset_path);
  if (ds.tasks.size() < ck.models.size())
    throw ContractError("run_eval: dataset has fewer tasks than the checkpoint");

  std::vector<continual::EvalErrors> all;
  json j = json::array();
  for (std::size_t t = 0; t < ck.models.size(); ++t) {
    const data::NormalizedTask nt =
        data::normalize(ds.tasks[t], ck.norm_infos[t].tangent_scale);
    const continual::EvalErrors errs =
        continual::evaluate_model_on_task(ck.models[t], ds.tasks[t], nt);
    json entry;
    entry["task"] = t;
    entry["dtw"] = errs.dtw;
    entry["quat_err"] = errs.quat;
    j.push_back(entry);
    all.push_back(errs);
  }
  std::ofstream f(out_json);
  if (!f) throw ParseError("cannot open for writing: " + out_json.string());
  f << j.dump(2) << '\n';
  return all;
}

MetricsOutputs run_metrics(const std::vector<fs::path>& runlogs, const fs::path& dataset_path,
                           const fs::path& out_dir, const MetricsOptions& opt) {
  const RunLog merged = load_runlogs_jsonl(runlogs);
  if (merged.records.empty()) throw ContractError("run_metrics: no records");
  const data::TaskDataset ds = data::load_dataset(dataset_path);
  const bool pose = ds.tasks.front().kind == data::TaskKind::Pose;

  metrics::Thresholds th = metrics::default_thresholds(pose ? 6 : ds.tasks.front().dim(), pose);
  if (opt.dtw_threshold.has_value()) th.dtw = *opt.dtw_threshold;
  if (opt.quat_threshold.has_value()) th.quat_rad = *opt.quat_threshold;

  fs::create_directories(out_dir);
  MetricsOutputs out;
  json per_seed_json = json::array();
  for (std::uint64_t seed : merged.seeds()) {
    const RunLog one = merged.filter_seed(seed);
    const metrics::AccuracyMatrix am = metrics::accuracy_matrix(one, th);
    {
      std::ofstream f(out_dir / ("accuracy_matrix_seed" + std::to_string(seed) + ".csv"));
      for (int i = 0; i < am.n(); ++i) {
        for (int j = 0; j <= i; ++j) f << (j ? "," : "") << am.r(i, j);
        f << '\n';
      }
    }
    const metrics::CLInputs in =
        metrics::cl_inputs_from_log(one, ds.total_bytes(), opt.cross_model_max_size);
    const metrics::CLReport rep = metrics::cl_metrics(am, in);
    out.per_seed.push_back(rep);
    json r;
    r["seed"] = seed;
    r["acc"] = rep.acc;
    r["rem"] = rep.rem;
    r["ms"] = rep.ms;
    r["sss"] = rep.sss;
    r["te"] = rep.te;
    if (rep.fs.has_value()) r["fs"] = *rep.fs;
    r["cl_score"] = rep.cl_score;
    per_seed_json.push_back(r);
  }
  out.stability = metrics::cl_stability(out.per_seed);

  // Median report across seeds, metric by metric.
  auto med = [&](auto pick) {
    std::vector<double> v;
    for (const auto& r : out.per_seed) v.push_back(pick(r));
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  metrics::CLReport median;
  median.acc = med([](const auto& r) { return r.acc; });
  median.rem = med([](const auto& r) { return r.rem; });
  median.ms = med([](const auto& r) { return r.ms; });
  median.sss = med([](const auto& r) { return r.sss; });
  median.te = med([](const auto& r) { return r.te; });
  if (out.per_seed.front().fs.has_value())
    median.fs = med([](const auto& r) { return *r.fs; });
  {
    const auto vals = median.values();
    median.cl_score = 0.0;
    for (double v : vals) median.cl_score += v;
    median.cl_score /= vals.size();
  }
  out.median_report = median;

  json top;
  top["thresholds"] = {{"dtw", th.dtw}};
  if (th.quat_rad.has_value()) top["thresholds"]["quat_rad"] = *th.quat_rad;
  top["per_seed"] = per_seed_json;
  top["cl_stability"] = out.stability;
  json mj;
  mj["acc"] = median.acc;
  mj["rem"] = median.rem;
  mj["ms"] = median.ms;
  mj["sss"] = median.sss;
  mj["te"] = median.te;
  if (median.fs.has_value()) {
    mj["fs"] = *median.fs;
  } else {
    top["fs_notice"] = "FS omitted: no cross-model size table supplied";
  }
  mj["cl_score"] = median.cl_score;
  top["median"] = mj;
  {
    std::ofstream f(out_dir / "metrics.json");
    f << top.dump(2) << '\n';
  }
  {
    std::ofstream f(out_dir / "metrics.csv");
    f << "metric,median\n";
    f << "acc," << median.acc << "\nrem," << median.rem << "\nms," << median.ms << "\nsss,"
      << median.sss << "\nte," << median.te << '\n';
    if (median.fs.has_value()) f << "fs," << *median.fs << '\n';
    f << "cl_score," << median.cl_score << "\ncl_stability," << out.stability << '\n';
  }
  return out;
}

std::vector<double> stability_deltas(const continual::TaskModel& model, const data::Task& task,
                                     const data::NormalizedTask& nt,
                                     const StabilityOptions& opt) {
  const int T = task.length();
  const double dt = 1.0 / (T - 1);
  const double scale = nt.info.global_scale;
  const int d = task.dim();
  // Distances are measured in original units; for pose tasks the position
  // block carries the goal distance.
  const int dist_dims = task.kind == data::TaskKind::Pose ? 3 : d;

  metrics::RolloutFn rollout = [&](const VectorXd& start, int n_steps) {
    return model.rollout(start, n_steps, dt);
  };

  const VectorXd start = nt.demos[0].points.row(0).transpose();
  const VectorXd goal = VectorXd::Zero(d);

  std::vector<double> deltas_norm;
  if (opt.mode == StabilityMode::Perturb) {
    deltas_norm = metrics::stability_perturbed_start(rollout, start, goal, opt.radius / scale,
                                                     T - 1, opt.samples, opt.seed);
  } else {
    deltas_norm.push_back(
        metrics::stability_extended_horizon(rollout, start, goal, T - 1, opt.extra_steps));
  }
  // Distances computed on the full normalized state; rescale and, for pose,
  // recompute on the position block only.
  if (task.kind == data::TaskKind::Pose) {
    // Redo with position-only distance for correctness.
    deltas_norm.clear();
    Rng rng(opt.seed);
    const int n = opt.mode == StabilityMode::Perturb ? opt.samples : 1;
    for (int i = 0; i < n; ++i) {
      VectorXd s = start;
      if (opt.mode == StabilityMode::Perturb && opt.radius > 0.0) {
        // perturb the position block only; orientation starts on-demo
        s.head(3) += rng.in_ball(3, opt.radius / scale);
      }
      const int steps = T - 1 + (opt.mode == StabilityMode::Horizon ? opt.extra_steps : 0);
      double delta = std::numeric_limits<double>::infinity();
      try {
        const Eigen::MatrixXd traj = model.rollout(s, steps, dt);
        const VectorXd end = traj.row(traj.rows() - 1).transpose();
        if (end.allFinite()) delta = end.head(dist_dims).norm();
      } catch (const DivergenceError&) {
      }
      deltas_norm.push_back(delta);
    }
  }
  for (double& v : deltas_norm) v *= scale;
  return deltas_norm;
}

std::vector<StabilityResult> run_stability(const fs::path& checkpoint_path,
                                           const fs::path& dataset_path,
                                           const StabilityOptions& opt,
                                           const fs::path& out_json) {
  const checkpoint::Checkpoint ck = checkpoint::load_checkpoint(checkpoint_path);
  const data::TaskDataset ds = data::load_dataset(dataset_path);
  if (ds.tasks.size() < ck.models.size())
    throw ContractError("run_stability: dataset has fewer tasks than the checkpoint");

  std::vector<StabilityResult> results;
  json j = json::array();
  for (int t = 0; t < static_cast<int>(ck.models.size()); ++t) {
    if (opt.task >= 0 && t != opt.task) continue;
    const data::NormalizedTask nt = data::normalize(ds.tasks[t], ck.norm_infos[t].tangent_scale);
    StabilityResult r;
    r.task = t;
    r.deltas = stability_deltas(ck.models[t], ds.tasks[t], nt, opt);
    json entry;
    entry["task"] = t;
    entry["mode"] = opt.mode == StabilityMode::Perturb ? "perturb" : "horizon";
    entry["radius"] = opt.radius;
    entry["samples"] = opt.samples;
    entry["extra_steps"] = opt.extra_steps;
    entry["deltas"] = r.deltas;
    j.push_back(entry);
    results.push_back(std::move(r));
  }
  if (results.empty()) throw ContractError("run_stability: no matching task");
  std::ofstream f(out_json);
  if (!f) throw ParseError("cannot open for writing: " + out_json.string());
  f << j.dump(2) << '\n';
  return results;
}

}  // namespace contraj::experiment
