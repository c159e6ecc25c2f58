#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "denpg/config.hpp"
#include "denpg/errors.hpp"
#include "denpg/optimizer.hpp"
#include "denpg/svg.hpp"

namespace denpg {

inline constexpr const char* kMetricsCsvHeader =
    "iteration,avg_return,consensus_err,tracker_err,consensus_residual,stationarity_gap,clip_events,solver_iters";

inline void write_metrics_csv(std::ostream& os, const SwarmMetrics& metrics) {
  os << kMetricsCsvHeader << "\n";
  for (const auto& r : metrics.rows) {
    os << r.iteration << "," << cfg::format_double(r.avg_return) << "," << cfg::format_double(r.consensus_err) << ","
       << cfg::format_double(r.tracker_err) << "," << cfg::format_double(r.consensus_residual) << ",";
    if (r.stationarity_gap) os << cfg::format_double(*r.stationarity_gap);
    os << "," << r.clip_events << "," << r.solver_iters << "\n";
  }
}

struct RunOutcome {
  std::string name;  // <algo>_<topology>_seed<seed>
  Algo algo{};
  TopologyKind topology{};
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string csv_path;
  SwarmMetrics metrics;
};

struct BatteryReport {
  std::vector<RunOutcome> runs;
  std::vector<std::string> aggregate_files;
  std::vector<std::string> plot_files;
  bool all_ok = true;
};

inline int battery_threads(std::size_t jobs) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("DENPG_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = v;
  }
  return std::min<int>(cap, static_cast<int>(jobs));
}

namespace detail {

inline std::vector<double> column(const SwarmMetrics& m, int which) {
  std::vector<double> out;
  for (const auto& r : m.rows) {
    switch (which) {
      case 0: out.push_back(r.avg_return); break;
      case 1: out.push_back(r.consensus_err); break;
      case 2: out.push_back(r.tracker_err); break;
      case 3: out.push_back(r.consensus_residual); break;
      case 4: out.push_back(r.stationarity_gap.value_or(0.0)); break;
      case 5: out.push_back(static_cast<double>(r.clip_events)); break;
      default: out.push_back(static_cast<double>(r.solver_iters)); break;
    }
  }
  return out;
}

inline void mean_std(const std::vector<std::vector<double>>& runs, std::size_t row, double* mean, double* sd) {
  bool all_equal = true;
  for (const auto& r : runs) all_equal = all_equal && r[row] == runs.front()[row];
  if (all_equal) {  // bitwise-identical runs report an exact zero spread
    *mean = runs.front()[row];
    *sd = 0.0;
    return;
  }
  const double n = static_cast<double>(runs.size());
  double m = 0.0;
  for (const auto& r : runs) m += r[row];
  m /= n;
  double s2 = 0.0;
  for (const auto& r : runs) s2 += (r[row] - m) * (r[row] - m);
  *mean = m;
  *sd = std::sqrt(s2 / (n - 1.0));
}

}  // namespace detail

// Runs the full battery (algorithms x topologies x seeds), one CSV per run
// plus per-(algorithm, topology) mean/std aggregates over seeds and optional
// SVG plots. Individual run failures are recorded and the battery continues.
inline BatteryReport run_battery(const ExperimentConfig& config) {
  config.validate();
  std::filesystem::create_directories(config.out_dir);

  struct Job {
    RunConfig rc;
    std::string name;
  };
  std::vector<Job> jobs;
  for (Algo algo : config.algos)
    for (TopologyKind topo : config.topologies)
      for (std::uint64_t seed : config.seeds) {
        RunConfig rc = config.base;
        rc.algo = algo;
        rc.topology = topo;
        rc.seed = seed;
        jobs.push_back({rc, to_string(algo) + "_" + to_string(topo) + "_seed" + std::to_string(seed)});
      }

  BatteryReport report;
  report.runs.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      RunOutcome& out = report.runs[k];
      out.name = jobs[k].name;
      out.algo = jobs[k].rc.algo;
      out.topology = jobs[k].rc.topology;
      out.seed = jobs[k].rc.seed;
      try {
        Swarm swarm(jobs[k].rc);
        const RunResult res = swarm.run();
        out.metrics = res.metrics;
        const std::string base = config.out_dir + "/" + out.name;
        out.csv_path = base + ".csv";
        std::ofstream csv(out.csv_path);
        write_metrics_csv(csv, res.metrics);
        res.policy.save(base + "_mean.policy");
        res.policy.with_params(res.theta_out).save(base + "_out.policy");
        std::ofstream manifest(base + "_manifest.txt");
        manifest << "algo = " << to_string(out.algo) << "\n"
                 << "topology = " << to_string(out.topology) << "\n"
                 << "seed = " << out.seed << "\n"
                 << "iterations = " << jobs[k].rc.T << "\n"
                 << "eval_period = " << jobs[k].rc.eval_period << "\n";
        out.ok = true;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };
  const int nthreads = battery_threads(jobs.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& r : report.runs) report.all_ok = report.all_ok && r.ok;

  // aggregates over seeds, per (algorithm, topology)
  static const char* metric_names[] = {"avg_return",      "consensus_err", "tracker_err", "consensus_residual",
                                       "stationarity_gap", "clip_events",   "solver_iters"};
  std::map<std::pair<Algo, TopologyKind>, std::vector<const RunOutcome*>> groups;
  for (const auto& r : report.runs)
    if (r.ok) groups[{r.algo, r.topology}].push_back(&r);

  for (const auto& [key, members] : groups) {
    const std::size_t rows = members.front()->metrics.rows.size();
    bool aligned = true;
    for (const auto* m : members) aligned = aligned && m->metrics.rows.size() == rows;
    if (!aligned) continue;  // failed runs can leave ragged groups behind
    const bool has_gap = !members.front()->metrics.rows.empty() && members.front()->metrics.rows.front().stationarity_gap.has_value();

    const std::string path = config.out_dir + "/" + to_string(key.first) + "_" + to_string(key.second) + "_agg.csv";
    std::ofstream os(path);
    os << "iteration";
    for (const char* name : metric_names) os << "," << name << "_mean," << name << "_std";
    os << "\n";
    std::vector<std::vector<std::vector<double>>> cols(7);
    for (int c = 0; c < 7; ++c)
      for (const auto* m : members) cols[static_cast<std::size_t>(c)].push_back(detail::column(m->metrics, c));
    for (std::size_t row = 0; row < rows; ++row) {
      os << members.front()->metrics.rows[row].iteration;
      for (int c = 0; c < 7; ++c) {
        if (c == 4 && !has_gap) {
          os << ",,";
          continue;
        }
        double mean = 0.0, sd = 0.0;
        detail::mean_std(cols[static_cast<std::size_t>(c)], row, &mean, &sd);
        os << "," << cfg::format_double(mean) << "," << cfg::format_double(sd);
      }
      os << "\n";
    }
    report.aggregate_files.push_back(path);
  }

  if (config.plots) {
    for (TopologyKind topo : config.topologies) {
      std::vector<PlotSeries> series;
      for (Algo algo : config.algos) {
        auto it = groups.find({algo, topo});
        if (it == groups.end()) continue;
        PlotSeries s;
        s.label = to_string(algo);
        const auto& members = it->second;
        const std::size_t rows = members.front()->metrics.rows.size();
        for (std::size_t row = 0; row < rows; ++row) {
          std::vector<std::vector<double>> returns;
          for (const auto* m : members) returns.push_back(detail::column(m->metrics, 0));
          double mean = 0.0, sd = 0.0;
          detail::mean_std(returns, row, &mean, &sd);
          s.x.push_back(members.front()->metrics.rows[row].iteration);
          s.y.push_back(mean);
          s.band_lo.push_back(mean - sd);
          s.band_hi.push_back(mean + sd);
        }
        series.push_back(std::move(s));
      }
      if (series.empty()) continue;
      const std::string path = config.out_dir + "/" + to_string(topo) + ".svg";
      std::ofstream os(path);
      write_line_plot(os, "average return (" + to_string(topo) + ")", "iteration", "average return", series);
      report.plot_files.push_back(path);
    }
  }
  return report;
}

// Cross-evaluation grid: rows are trained policies, columns environments,
// cells the mean return over the evaluation episodes, plus a row-sum column.
struct EvalGrid {
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;  // environment names, sum column excluded
  Eigen::MatrixXd cells;               // rows x (cols + 1), last column = row sum

  std::string to_csv() const {
    std::ostringstream os;
    os << "policy";
    for (const auto& c : col_names) os << "," << c;
    os << ",sum\n";
    for (std::size_t r = 0; r < row_names.size(); ++r) {
      os << row_names[r];
      for (Eigen::Index c = 0; c < cells.cols(); ++c) os << "," << cfg::format_double(cells(static_cast<Eigen::Index>(r), c));
      os << "\n";
    }
    return os.str();
  }
};

inline EvalGrid eval_grid(const std::vector<std::pair<std::string, Policy>>& policies,
                          const std::vector<std::pair<std::string, EnvSpec>>& envs, int episodes,
                          std::uint64_t seed) {
  if (policies.empty() || envs.empty()) throw ValidationError("eval grid needs at least one policy and one environment");
  if (episodes < 1) throw ValidationError("episodes >= 1");
  EvalGrid grid;
  grid.cells.setZero(static_cast<Eigen::Index>(policies.size()), static_cast<Eigen::Index>(envs.size()) + 1);
  for (const auto& [name, env] : envs) grid.col_names.push_back(name);
  for (std::size_t r = 0; r < policies.size(); ++r) {
    grid.row_names.push_back(policies[r].first);
    double row_sum = 0.0;
    for (std::size_t c = 0; c < envs.size(); ++c) {
      const EnvSpec& env = envs[c].second;
      double total = 0.0;
      for (int e = 0; e < episodes; ++e) {
        // streams keyed by (environment, episode) only: policies are compared
        // on common random numbers, and identical policies give identical rows
        RngStream rng = make_stream(seed, stream::eval_grid, static_cast<std::uint64_t>(c),
                                    static_cast<std::uint64_t>(e));
        const Trajectory tau = sample_trajectory(env, policies[r].second, env.horizon, rng);
        total += tau.discounted_return(env.gamma, 0);
      }
      const double mean = total / static_cast<double>(episodes);
      grid.cells(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = mean;
      row_sum += mean;
    }
    grid.cells(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(envs.size())) = row_sum;
  }
  return grid;
}

}  // namespace denpg
