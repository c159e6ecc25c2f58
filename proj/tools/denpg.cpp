#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "denpg/denpg.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir, bool plots) {
  denpg::ExperimentConfig config = denpg::parse_config(config_path);
  if (!out_dir.empty()) config.out_dir = out_dir;
  if (plots) config.plots = true;
  const denpg::BatteryReport report = denpg::run_battery(config);
  for (const auto& run : report.runs) {
    if (run.ok)
      std::cout << "ok    " << run.name << " -> " << run.csv_path << "\n";
    else
      std::cout << "fail  " << run.name << ": " << run.error << "\n";
  }
  for (const auto& f : report.aggregate_files) std::cout << "agg   " << f << "\n";
  for (const auto& f : report.plot_files) std::cout << "plot  " << f << "\n";
  return report.all_ok ? 0 : 2;
}

int cmd_eval(const std::string& checkpoints, const std::string& envs_path, int episodes, std::uint64_t seed,
             const std::string& out_file) {
  std::vector<std::pair<std::string, denpg::Policy>> policies;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(checkpoints))
    if (entry.is_regular_file() && entry.path().extension() == ".policy") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) policies.emplace_back(f.stem().string(), denpg::Policy::load(f.string()));
  if (policies.empty()) throw denpg::ValidationError("no .policy files in " + checkpoints);

  const denpg::ExperimentConfig config = denpg::parse_config(envs_path);
  std::vector<std::pair<std::string, denpg::EnvSpec>> envs;
  if (config.base.env.kind == denpg::EnvKind::multitask_gridworld) {
    const auto suite = denpg::make_multitask_suite(config.base.env, config.base.env.tasks, config.base.env.task_seed);
    for (std::size_t i = 0; i < suite.size(); ++i) envs.emplace_back("grid_" + std::to_string(i + 1), suite[i]);
  } else {
    envs.emplace_back(denpg::to_string(config.base.env.kind), config.base.env);
  }

  const denpg::EvalGrid grid = denpg::eval_grid(policies, envs, episodes, seed);
  if (out_file.empty()) {
    std::cout << grid.to_csv();
  } else {
    std::ofstream os(out_file);
    os << grid.to_csv();
    std::cout << "wrote " << out_file << "\n";
  }
  return 0;
}

int cmd_topology(const std::string& kind, int n, const std::string& file, bool print_matrix) {
  denpg::EdgeList edges;
  if (!file.empty()) edges = denpg::load_edge_list(file);
  const denpg::CommNetwork net = denpg::build_topology(denpg::topology_from_string(kind), n, edges);
  if (print_matrix) {
    for (int i = 0; i < net.n; ++i) {
      for (int j = 0; j < net.n; ++j) std::cout << (j ? " " : "") << denpg::cfg::format_double(net.weights(i, j));
      std::cout << "\n";
    }
  }
  std::cout << "rho = " << denpg::cfg::format_double(denpg::spectral_rho(net.weights)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralized natural policy gradient experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a seeded experiment battery from a config file");
  std::string config_path, out_dir;
  bool plots = false;
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory (overrides out.dir)");
  run->add_flag("--plots", plots, "emit SVG plots");

  auto* eval = app.add_subcommand("eval", "cross-evaluate checkpointed policies over environments");
  std::string checkpoints, envs_path, eval_out;
  int episodes = 100;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoints", checkpoints, "directory of .policy files")->required();
  eval->add_option("--envs", envs_path, "config file naming the environments")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes per cell (default 100)");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--out", eval_out, "write the grid CSV here instead of stdout");

  auto* topo = app.add_subcommand("topology", "build a topology and print its mixing matrix and rho");
  std::string kind = "ring", topo_file;
  int n = 5;
  bool print_matrix = false;
  topo->add_option("--kind", kind, "ring | fully_connected | bipartite | custom");
  topo->add_option("--n", n, "agent count");
  topo->add_option("--file", topo_file, "adjacency file for custom topologies");
  topo->add_flag("--print", print_matrix, "print the mixing matrix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, plots);
    if (eval->parsed()) return cmd_eval(checkpoints, envs_path, episodes, eval_seed, eval_out);
    if (topo->parsed()) return cmd_topology(kind, n, topo_file, print_matrix);
  } catch (const denpg::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const denpg::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const denpg::InvalidTopology& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const denpg::DisconnectedGraph& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const denpg::SpaceMismatch& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
