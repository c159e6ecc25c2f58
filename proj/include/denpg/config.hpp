#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "denpg/env.hpp"
#include "denpg/errors.hpp"
#include "denpg/optimizer.hpp"

namespace denpg {

namespace cfg {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Nested numeric array literal: scalar or [item, item, ...].
struct ArrayNode {
  bool scalar = false;
  double value = 0.0;
  std::vector<ArrayNode> items;

  int depth() const {
    if (scalar) return 0;
    return items.empty() ? 1 : 1 + items.front().depth();
  }
};

namespace detail {

inline void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
}

inline ArrayNode parse_node(const std::string& s, std::size_t& i, int line) {
  skip_ws(s, i);
  if (i >= s.size()) throw ParseError("line " + std::to_string(line) + ": unexpected end of array literal");
  ArrayNode node;
  if (s[i] == '[') {
    ++i;
    skip_ws(s, i);
    if (i < s.size() && s[i] == ']') {
      ++i;
      return node;
    }
    while (true) {
      node.items.push_back(parse_node(s, i, line));
      skip_ws(s, i);
      if (i < s.size() && s[i] == ',') {
        ++i;
        continue;
      }
      if (i < s.size() && s[i] == ']') {
        ++i;
        return node;
      }
      throw ParseError("line " + std::to_string(line) + ": expected ',' or ']' in array literal");
    }
  }
  std::size_t start = i;
  while (i < s.size() && s[i] != ',' && s[i] != ']' && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  const std::string tok = s.substr(start, i - start);
  try {
    std::size_t used = 0;
    node.value = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": '" + tok + "' is not a number");
  }
  node.scalar = true;
  return node;
}

}  // namespace detail

inline ArrayNode parse_array(const std::string& s, int line) {
  std::size_t i = 0;
  ArrayNode node = detail::parse_node(s, i, line);
  detail::skip_ws(s, i);
  if (i != s.size()) throw ParseError("line " + std::to_string(line) + ": trailing characters after array literal");
  return node;
}

inline Eigen::VectorXd as_vector(const ArrayNode& n, int line) {
  if (n.scalar) throw ParseError("line " + std::to_string(line) + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n.items.size()));
  for (std::size_t i = 0; i < n.items.size(); ++i) {
    if (!n.items[i].scalar) throw ParseError("line " + std::to_string(line) + ": expected a flat array of numbers");
    v[static_cast<Eigen::Index>(i)] = n.items[i].value;
  }
  return v;
}

inline Eigen::MatrixXd as_matrix(const ArrayNode& n, int line) {
  if (n.scalar || n.items.empty()) throw ParseError("line " + std::to_string(line) + ": expected a 2-level array");
  const Eigen::Index rows = static_cast<Eigen::Index>(n.items.size());
  Eigen::MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::VectorXd row = as_vector(n.items[static_cast<std::size_t>(r)], line);
    if (r == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) throw ParseError("line " + std::to_string(line) + ": ragged array rows");
    m.row(r) = row;
  }
  return m;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Parsed key/value file with consumption tracking; unconsumed keys are
// reported as errors (strict mode).
class KeyValues {
 public:
  void insert(const std::string& key, const std::string& value, int line) {
    if (entries_.count(key)) throw ParseError("line " + std::to_string(line) + ": duplicate key '" + key + "'");
    entries_[key] = {value, line};
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError("missing required key '" + key + "'");
    consumed_.insert(key);
    return it->second.value;
  }

  int line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  std::string get_string(const std::string& key) { return raw(key); }
  std::string get_string(const std::string& key, const std::string& fallback) { return has(key) ? raw(key) : fallback; }

  long get_int(const std::string& key) {
    const std::string v = raw(key);
    try {
      std::size_t used = 0;
      const long r = std::stol(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_of(key)) + ": key '" + key + "' expects an integer, got '" + v + "'");
    }
  }
  long get_int(const std::string& key, long fallback) { return has(key) ? get_int(key) : fallback; }

  std::uint64_t get_u64(const std::string& key) {
    const std::string v = raw(key);
    try {
      std::size_t used = 0;
      const unsigned long long r = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_of(key)) + ": key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) { return has(key) ? get_u64(key) : fallback; }

  double get_double(const std::string& key) {
    const std::string v = raw(key);
    try {
      std::size_t used = 0;
      const double r = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_of(key)) + ": key '" + key + "' expects a number, got '" + v + "'");
    }
  }
  double get_double(const std::string& key, double fallback) { return has(key) ? get_double(key) : fallback; }

  bool get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("line " + std::to_string(line_of(key)) + ": key '" + key + "' expects a boolean, got '" + v + "'");
  }

  ArrayNode get_array(const std::string& key) { return parse_array(raw(key), line_of(key)); }

  std::vector<std::string> get_list(const std::string& key) {
    std::vector<std::string> out;
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  void check_all_consumed() const {
    for (const auto& [key, entry] : entries_)
      if (!consumed_.count(key))
        throw ParseError("line " + std::to_string(entry.line) + ": unknown key '" + key + "'");
  }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, Entry> entries_;
  std::set<std::string> consumed_;
};

inline KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
    kv.insert(key, value, lineno);
  }
  return kv;
}

}  // namespace cfg

// One experiment battery: a RunConfig template expanded over seeds,
// algorithms, and topologies.
struct ExperimentConfig {
  RunConfig base;
  std::vector<std::uint64_t> seeds;
  std::vector<Algo> algos;
  std::vector<TopologyKind> topologies;
  std::string topology_file;
  std::string out_dir = "out";
  bool plots = false;

  void validate() const {
    if (seeds.empty()) throw ValidationError("seed list must be non-empty");
    if (algos.empty()) throw ValidationError("algorithm list must be non-empty");
    if (topologies.empty()) throw ValidationError("topology list must be non-empty");
    for (Algo a : algos)
      for (TopologyKind t : topologies) {
        RunConfig rc = base;
        rc.algo = a;
        rc.topology = t;
        rc.validate();
      }
  }
};

namespace cfg {

inline EnvSpec parse_env(KeyValues& kv, int horizon) {
  EnvSpec env;
  env.kind = env_kind_from_string(kv.get_string("env.kind"));
  env.gamma = kv.get_double("env.gamma", 0.99);
  env.horizon = horizon;
  switch (env.kind) {
    case EnvKind::tiny_mdp: {
      if (kv.has("env.tiny_seed")) {
        const int s = static_cast<int>(kv.get_int("env.num_states"));
        const int a = static_cast<int>(kv.get_int("env.num_actions"));
        const int c = static_cast<int>(kv.get_int("env.channels", 1));
        env = make_random_tiny(s, a, c, kv.get_u64("env.tiny_seed"), env.gamma, horizon);
        break;
      }
      auto& m = env.tiny;
      m.num_states = static_cast<int>(kv.get_int("env.num_states"));
      m.num_actions = static_cast<int>(kv.get_int("env.num_actions"));
      const ArrayNode pn = kv.get_array("env.P");
      for (const auto& item : pn.items) m.P.push_back(as_matrix(item, kv.line_of("env.P")));
      const ArrayNode rn = kv.get_array("env.R");
      if (rn.depth() == 3) {
        m.R.resize(1);
        for (const auto& item : rn.items) m.R[0].push_back(as_matrix(item, kv.line_of("env.R")));
      } else if (rn.depth() == 4) {
        for (const auto& chan : rn.items) {
          std::vector<Eigen::MatrixXd> tables;
          for (const auto& item : chan.items) tables.push_back(as_matrix(item, kv.line_of("env.R")));
          m.R.push_back(std::move(tables));
        }
      } else {
        throw ParseError("line " + std::to_string(kv.line_of("env.R")) + ": env.R must be a 3- or 4-level array");
      }
      m.rho0 = as_vector(kv.get_array("env.rho0"), kv.line_of("env.rho0"));
      if (kv.has("env.agent_actions")) {
        const Eigen::VectorXd aa = as_vector(kv.get_array("env.agent_actions"), kv.line_of("env.agent_actions"));
        for (Eigen::Index i = 0; i < aa.size(); ++i) m.agent_actions.push_back(static_cast<int>(aa[i]));
      }
      break;
    }
    case EnvKind::gridworld:
    case EnvKind::multitask_gridworld: {
      auto& g = env.grid;
      g.size = static_cast<int>(kv.get_int("env.size"));
      const Eigen::VectorXd goal = as_vector(kv.get_array("env.goal"), kv.line_of("env.goal"));
      if (goal.size() != 2) throw ParseError("env.goal must be [row, col]");
      g.goal = static_cast<int>(goal[0]) * g.size + static_cast<int>(goal[1]);
      if (kv.has("env.obstacles")) {
        const ArrayNode on = kv.get_array("env.obstacles");
        for (const auto& item : on.items) {
          const Eigen::VectorXd cell = as_vector(item, kv.line_of("env.obstacles"));
          if (cell.size() != 2) throw ParseError("env.obstacles entries must be [row, col]");
          g.obstacles.push_back(static_cast<int>(cell[0]) * g.size + static_cast<int>(cell[1]));
        }
      }
      const std::string metric = kv.get_string("env.metric", "manhattan");
      if (metric == "manhattan") g.metric = GridMetric::manhattan;
      else if (metric == "euclidean") g.metric = GridMetric::euclidean;
      else throw ParseError("env.metric must be manhattan or euclidean");
      if (env.kind == EnvKind::multitask_gridworld) {
        env.tasks = static_cast<int>(kv.get_int("env.tasks"));
        env.task_seed = kv.get_u64("env.task_seed", 0);
      }
      break;
    }
    case EnvKind::coop_nav: {
      const int agents = static_cast<int>(kv.get_int("env.agents"));
      if (kv.has("env.landmarks")) {
        env.nav.agents = agents;
        const ArrayNode ln = kv.get_array("env.landmarks");
        for (const auto& item : ln.items) {
          const Eigen::VectorXd lm = as_vector(item, kv.line_of("env.landmarks"));
          if (lm.size() != 2) throw ParseError("env.landmarks entries must be [x, y]");
          env.nav.landmarks.push_back({lm[0], lm[1]});
        }
      } else {
        env = make_coop_nav(agents, kv.get_u64("env.landmark_seed"), env.gamma, horizon);
      }
      env.nav.step_size = kv.get_double("env.step_size", 0.1);
      env.nav.collision_radius = kv.get_double("env.collision_radius", 0.1);
      break;
    }
  }
  env.validate();
  return env;
}

}  // namespace cfg

inline ExperimentConfig parse_config(std::istream& in) {
  cfg::KeyValues kv = cfg::read_key_values(in);
  ExperimentConfig ec;

  ec.base.T = static_cast<int>(kv.get_int("run.T"));
  ec.base.H = static_cast<int>(kv.get_int("run.H"));
  ec.base.B = static_cast<int>(kv.get_int("run.B", 1));
  ec.base.eta = kv.get_double("run.eta", 0.01);
  ec.base.beta = kv.get_double("run.beta", 0.2);
  ec.base.epsilon = kv.get_double("run.epsilon", 1e-3);
  ec.base.eval_period = static_cast<int>(kv.get_int("run.eval_period", 10));
  ec.base.eval_episodes = static_cast<int>(kv.get_int("run.eval_episodes", 5));
  ec.base.baseline_alpha = kv.get_double("run.baseline_alpha", 0.05);
  ec.base.fim_trajectories = static_cast<int>(kv.get_int("run.fim_trajectories", 1));
  ec.base.agent_threads = static_cast<int>(kv.get_int("run.agent_threads", 1));

  for (const std::string& a : kv.get_list("run.algos")) ec.algos.push_back(algo_from_string(a));
  for (const std::string& s : kv.get_list("run.seeds")) {
    try {
      ec.seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ParseError("run.seeds entries must be unsigned integers, got '" + s + "'");
    }
  }

  ec.base.n = static_cast<int>(kv.get_int("topology.n", 1));
  for (const std::string& t : kv.get_list("topology.kinds")) ec.topologies.push_back(topology_from_string(t));
  if (kv.has("topology.file")) ec.topology_file = kv.get_string("topology.file");
  const bool wants_custom = std::find(ec.topologies.begin(), ec.topologies.end(), TopologyKind::custom) != ec.topologies.end();
  if (wants_custom) {
    if (ec.topology_file.empty()) throw ValidationError("custom topology requires topology.file");
    ec.base.custom_edges = load_edge_list(ec.topology_file);
  }

  ec.base.policy_family = policy_family_from_string(kv.get_string("policy.family", "tabular_softmax"));
  ec.base.hidden = static_cast<int>(kv.get_int("policy.hidden", 16));

  ec.base.env = cfg::parse_env(kv, ec.base.H);
  ec.base.gamma = ec.base.env.gamma;

  ec.out_dir = kv.get_string("out.dir", "out");
  ec.plots = kv.get_bool("plots", false);

  if (!ec.algos.empty()) ec.base.algo = ec.algos.front();
  if (!ec.topologies.empty()) ec.base.topology = ec.topologies.front();
  if (!ec.seeds.empty()) ec.base.seed = ec.seeds.front();

  kv.check_all_consumed();
  ec.validate();
  return ec;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path);
  return parse_config(in);
}

// EnvSpec back to the config key/value format (tiny tables inline).
inline std::string env_to_config(const EnvSpec& env) {
  std::ostringstream os;
  os << "env.kind = " << to_string(env.kind) << "\n";
  os << "env.gamma = " << cfg::format_double(env.gamma) << "\n";
  switch (env.kind) {
    case EnvKind::tiny_mdp: {
      const auto& m = env.tiny;
      os << "env.num_states = " << m.num_states << "\n";
      os << "env.num_actions = " << m.num_actions << "\n";
      auto emit_matrix = [&os](const Eigen::MatrixXd& t) {
        os << "[";
        for (Eigen::Index a = 0; a < t.rows(); ++a) {
          os << (a ? ",[" : "[");
          for (Eigen::Index s = 0; s < t.cols(); ++s) os << (s ? "," : "") << cfg::format_double(t(a, s));
          os << "]";
        }
        os << "]";
      };
      os << "env.P = [";
      for (std::size_t s = 0; s < m.P.size(); ++s) {
        if (s) os << ",";
        emit_matrix(m.P[s]);
      }
      os << "]\n";
      os << "env.R = [";
      for (std::size_t c = 0; c < m.R.size(); ++c) {
        if (c) os << ",";
        os << "[";
        for (std::size_t s = 0; s < m.R[c].size(); ++s) {
          if (s) os << ",";
          emit_matrix(m.R[c][s]);
        }
        os << "]";
      }
      os << "]\n";
      os << "env.rho0 = [";
      for (Eigen::Index s = 0; s < m.rho0.size(); ++s) os << (s ? "," : "") << cfg::format_double(m.rho0[s]);
      os << "]\n";
      if (!m.agent_actions.empty()) {
        os << "env.agent_actions = [";
        for (std::size_t i = 0; i < m.agent_actions.size(); ++i) os << (i ? "," : "") << m.agent_actions[i];
        os << "]\n";
      }
      break;
    }
    case EnvKind::gridworld:
    case EnvKind::multitask_gridworld: {
      const auto& g = env.grid;
      os << "env.size = " << g.size << "\n";
      os << "env.goal = [" << g.goal / g.size << "," << g.goal % g.size << "]\n";
      if (!g.obstacles.empty()) {
        os << "env.obstacles = [";
        for (std::size_t i = 0; i < g.obstacles.size(); ++i)
          os << (i ? ",[" : "[") << g.obstacles[i] / g.size << "," << g.obstacles[i] % g.size << "]";
        os << "]\n";
      }
      os << "env.metric = " << (g.metric == GridMetric::manhattan ? "manhattan" : "euclidean") << "\n";
      if (env.kind == EnvKind::multitask_gridworld) {
        os << "env.tasks = " << env.tasks << "\n";
        os << "env.task_seed = " << env.task_seed << "\n";
      }
      break;
    }
    case EnvKind::coop_nav: {
      os << "env.agents = " << env.nav.agents << "\n";
      os << "env.landmarks = [";
      for (std::size_t i = 0; i < env.nav.landmarks.size(); ++i)
        os << (i ? ",[" : "[") << cfg::format_double(env.nav.landmarks[i].x()) << ","
           << cfg::format_double(env.nav.landmarks[i].y()) << "]";
      os << "]\n";
      os << "env.step_size = " << cfg::format_double(env.nav.step_size) << "\n";
      os << "env.collision_radius = " << cfg::format_double(env.nav.collision_radius) << "\n";
      break;
    }
  }
  return os.str();
}

}  // namespace denpg
