#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "denpg/errors.hpp"
#include "denpg/rng.hpp"

namespace denpg {

using Edge = std::pair<int, int>;
using EdgeList = std::vector<Edge>;

// n blocks of length d stored contiguously; block i is the local vector of
// agent i.
struct StackedVector {
  int n = 0;
  int d = 0;
  Eigen::VectorXd data;

  StackedVector() = default;
  StackedVector(int n_, int d_) : n(n_), d(d_), data(Eigen::VectorXd::Zero(n_ * d_)) {}

  Eigen::VectorBlock<Eigen::VectorXd> block(int i) { return data.segment(i * d, d); }
  Eigen::VectorBlock<const Eigen::VectorXd> block(int i) const { return data.segment(i * d, d); }

  Eigen::VectorXd mean_block() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) m += block(i);
    return m / static_cast<double>(n);
  }

  // ||x - 1 (x) xbar||_2, the deviation of the stacked vector from consensus.
  double consensus_error() const {
    const Eigen::VectorXd m = mean_block();
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (block(i) - m).squaredNorm();
    return std::sqrt(s);
  }
};

enum class TopologyKind { ring, fully_connected, bipartite, custom };

inline std::string to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::ring: return "ring";
    case TopologyKind::fully_connected: return "fully_connected";
    case TopologyKind::bipartite: return "bipartite";
    case TopologyKind::custom: return "custom";
  }
  return "?";
}

inline TopologyKind topology_from_string(const std::string& s) {
  if (s == "ring") return TopologyKind::ring;
  if (s == "fully_connected") return TopologyKind::fully_connected;
  if (s == "bipartite") return TopologyKind::bipartite;
  if (s == "custom") return TopologyKind::custom;
  throw ValidationError("unknown topology kind '" + s + "'");
}

// Undirected communication graph together with its doubly stochastic mixing
// matrix. Immutable after construction.
struct CommNetwork {
  int n = 0;
  EdgeList edges;          // normalized: i < j, sorted, unique
  Eigen::MatrixXd weights; // n x n, symmetric, doubly stochastic
};

namespace detail {

inline EdgeList normalize_edges(int n, const EdgeList& edges) {
  std::set<Edge> seen;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw InvalidTopology("edge endpoint out of range");
    if (a == b) throw InvalidTopology("self loop not allowed");
    seen.insert({std::min(a, b), std::max(a, b)});
  }
  return EdgeList(seen.begin(), seen.end());
}

inline bool connected(int n, const EdgeList& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<char> vis(n, 0);
  std::vector<int> stack{0};
  vis[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : adj[u])
      if (!vis[v]) {
        vis[v] = 1;
        ++count;
        stack.push_back(v);
      }
  }
  return count == n;
}

}  // namespace detail

// Metropolis-Hastings weights: W_ij = 1/(1 + max(deg_i, deg_j)) on edges,
// diagonal absorbs the slack. Symmetric and doubly stochastic for any simple
// undirected graph, connected or not.
inline Eigen::MatrixXd metropolis_weights(int n, const EdgeList& edges) {
  const EdgeList norm = detail::normalize_edges(n, edges);
  std::vector<int> deg(n, 0);
  for (auto [a, b] : norm) {
    ++deg[a];
    ++deg[b];
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (auto [a, b] : norm) {
    const double wab = 1.0 / (1.0 + static_cast<double>(std::max(deg[a], deg[b])));
    w(a, b) = wab;
    w(b, a) = wab;
  }
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) off += w(i, j);
    w(i, i) = 1.0 - off;
  }
  return w;
}

inline CommNetwork build_topology(TopologyKind kind, int n, const EdgeList& custom_edges = {}) {
  if (n < 1) throw InvalidTopology("agent count must be >= 1");
  EdgeList edges;
  switch (kind) {
    case TopologyKind::ring:
      if (n < 3) throw InvalidTopology("ring requires n >= 3");
      for (int i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n});
      break;
    case TopologyKind::fully_connected:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) edges.push_back({i, j});
      break;
    case TopologyKind::bipartite: {
      if (n < 2) throw InvalidTopology("bipartite requires n >= 2");
      const int left = (n + 1) / 2;  // balanced split, all cross edges
      for (int i = 0; i < left; ++i)
        for (int j = left; j < n; ++j) edges.push_back({i, j});
      break;
    }
    case TopologyKind::custom:
      edges = custom_edges;
      break;
  }
  CommNetwork net;
  net.n = n;
  net.edges = detail::normalize_edges(n, edges);
  if (!detail::connected(n, net.edges)) throw DisconnectedGraph(to_string(kind) + " graph on " + std::to_string(n) + " agents");
  if (kind == TopologyKind::fully_connected) {
    // uniform averaging is the Metropolis result for the complete graph;
    // building it directly keeps W - J/n exactly zero
    net.weights = Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  } else {
    net.weights = metropolis_weights(n, net.edges);
  }
  return net;
}

inline void check_doubly_stochastic(const Eigen::MatrixXd& w, double tol) {
  if (w.rows() != w.cols()) throw NotDoublyStochastic("matrix not square");
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > tol)
      throw NotDoublyStochastic("row " + std::to_string(i) + " sums to " + std::to_string(w.row(i).sum()));
    if (std::abs(w.col(i).sum() - 1.0) > tol)
      throw NotDoublyStochastic("column " + std::to_string(i) + " sums to " + std::to_string(w.col(i).sum()));
    if (w.col(i).minCoeff() < -tol) throw NotDoublyStochastic("negative entry in column " + std::to_string(i));
  }
}

// rho = ||W - (1/n) 1 1^T||_2, the per-round contraction factor of consensus
// error. Symmetric eigendecomposition up to n = 64, power iteration beyond.
inline double spectral_rho(const Eigen::MatrixXd& w) {
  check_doubly_stochastic(w, 1e-9);
  const Eigen::Index n = w.rows();
  Eigen::MatrixXd m = w;
  m.array() -= 1.0 / static_cast<double>(n);
  if (n <= 64) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  // power iteration on the symmetric deviation matrix
  RngStream rng(0x9d5f1c2ull);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 20000; ++it) {
    Eigen::VectorXd mv = m * v;
    const double nrm = mv.norm();
    if (nrm == 0.0) return 0.0;
    v = mv / nrm;
    if (std::abs(nrm - lambda) <= 1e-12 * std::max(1.0, nrm) && it > 2) return nrm;
    lambda = nrm;
  }
  return lambda;
}

// One consensus round: block i of the result is sum_j W_ij x_j, i.e.
// (W (x) I_d) x. Preserves the blockwise mean exactly up to rounding.
inline StackedVector mix(const Eigen::MatrixXd& w, const StackedVector& x) {
  if (w.rows() != x.n || w.cols() != x.n)
    throw DimensionMismatch("mixing matrix is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                            " but stacked vector has " + std::to_string(x.n) + " blocks");
  StackedVector out(x.n, x.d);
  for (int i = 0; i < x.n; ++i) {
    auto bi = out.block(i);
    for (int j = 0; j < x.n; ++j) {
      const double wij = w(i, j);
      if (wij != 0.0) bi += wij * x.block(j);
    }
  }
  return out;
}

// Plain-text adjacency format: one edge per line as two zero-based agent
// indices, '#' starts a comment line.
inline EdgeList load_edge_list(std::istream& in) {
  EdgeList edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long a = -1, b = -1;
    if (!(ls >> a >> b)) throw InvalidTopology("line " + std::to_string(lineno) + ": expected two integers");
    std::string rest;
    if (ls >> rest && !rest.empty() && rest[0] != '#')
      throw InvalidTopology("line " + std::to_string(lineno) + ": trailing tokens");
    edges.push_back({static_cast<int>(a), static_cast<int>(b)});
  }
  return edges;
}

inline EdgeList load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTopology("cannot open adjacency file " + path);
  return load_edge_list(in);
}

}  // namespace denpg
