#pragma once

// KNN similarity graphs and two-level map-equation clustering.

#include "gaitsf/common.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace gaitsf {

inline constexpr int kOutlier = -1;

struct Edge {
  int i = 0;  // i < j
  int j = 0;
  double w = 0.0;
  bool operator==(const Edge&) const = default;
};

/// Undirected weighted graph over sequence indices 0..n-1. Edges are unique,
/// stored with i < j and sorted lexicographically.
struct KnnGraph {
  int n_nodes = 0;
  int neighbor_cap = 0;
  std::vector<Edge> edges;
  bool operator==(const KnnGraph&) const = default;
};

/// Cluster assignment per sequence; kOutlier marks sequences that take no
/// part in training. Ids are dense in [0, num_clusters).
struct PseudoLabels {
  std::vector<int> assignment;
  int num_clusters = 0;

  size_t size() const { return assignment.size(); }
  int operator[](size_t i) const { return assignment[i]; }
  int outlier_count() const {
    return static_cast<int>(std::count(assignment.begin(), assignment.end(), kOutlier));
  }
  std::vector<std::vector<int>> members() const {
    std::vector<std::vector<int>> m(static_cast<size_t>(num_clusters));
    for (size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != kOutlier) m[static_cast<size_t>(assignment[i])].push_back(static_cast<int>(i));
    return m;
  }
  bool operator==(const PseudoLabels&) const = default;
};

/// Relabel so that clusters are numbered by their smallest member index;
/// negative entries become outliers.
inline PseudoLabels densify(const std::vector<int>& raw) {
  PseudoLabels out;
  out.assignment.assign(raw.size(), kOutlier);
  std::map<int, int> ids;
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0) continue;
    auto [it, inserted] = ids.try_emplace(raw[i], out.num_clusters);
    if (inserted) ++out.num_clusters;
    out.assignment[i] = it->second;
  }
  return out;
}

/// Top-n cosine neighbours per column of `embeddings` (unit-norm columns),
/// symmetrized by union, or by intersection when `mutual` is set.
inline KnnGraph knn_graph(const Mat& embeddings, int n, bool mutual = false) {
  if (n < 1) throw ValidationError("knn neighbour count must be >= 1");
  const int N = static_cast<int>(embeddings.cols());
  if (N < 2) throw ValidationError("knn_graph needs at least 2 embeddings");
  const Mat sim = embeddings.transpose() * embeddings;
  const int k = std::min(n, N - 1);
  std::vector<std::vector<char>> picked(static_cast<size_t>(N), std::vector<char>(static_cast<size_t>(N), 0));
  std::vector<int> order(static_cast<size_t>(N - 1));
  for (int i = 0; i < N; ++i) {
    order.clear();
    for (int j = 0; j < N; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
      return a < b;
    });
    for (int t = 0; t < k; ++t) picked[static_cast<size_t>(i)][static_cast<size_t>(order[static_cast<size_t>(t)])] = 1;
  }
  KnnGraph g;
  g.n_nodes = N;
  g.neighbor_cap = n;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      const bool a = picked[static_cast<size_t>(i)][static_cast<size_t>(j)] != 0;
      const bool b = picked[static_cast<size_t>(j)][static_cast<size_t>(i)] != 0;
      if (mutual ? (a && b) : (a || b)) g.edges.push_back({i, j, std::clamp(sim(i, j), -1.0, 1.0)});
    }
  return g;
}

/// Keep edges with weight >= s_up.
inline KnnGraph prune(const KnnGraph& graph, double s_up) {
  KnnGraph out;
  out.n_nodes = graph.n_nodes;
  out.neighbor_cap = graph.neighbor_cap;
  for (const auto& e : graph.edges)
    if (e.w >= s_up) out.edges.push_back(e);
  return out;
}

inline void write_edge_list(const std::filesystem::path& path, const KnnGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out.precision(17);
  for (const auto& e : g.edges) out << e.i << ' ' << e.j << ' ' << e.w << '\n';
}

namespace detail {

inline double plogp(double p) { return p > 0.0 ? p * std::log2(p) : 0.0; }

// Per-node visit rates and per-edge flows of the undirected random walk.
// Only positive weights carry flow.
struct FlowGraph {
  int n = 0;
  std::vector<double> node_flow;
  std::vector<std::vector<std::pair<int, double>>> adj;  // (neighbour, edge flow), no self loops
  std::vector<double> out_flow;                          // sum of edge flows to other nodes
  double node_entropy_term = 0.0;                        // sum plogp(p_alpha) over original nodes
};

inline FlowGraph make_flow_graph(const KnnGraph& g) {
  FlowGraph fg;
  fg.n = g.n_nodes;
  fg.node_flow.assign(static_cast<size_t>(fg.n), 0.0);
  fg.adj.assign(static_cast<size_t>(fg.n), {});
  fg.out_flow.assign(static_cast<size_t>(fg.n), 0.0);
  double total = 0.0;
  for (const auto& e : g.edges)
    if (e.w > 0.0 && e.i != e.j) total += e.w;
  if (total <= 0.0) return fg;
  for (const auto& e : g.edges) {
    if (!(e.w > 0.0) || e.i == e.j) continue;
    const double f = e.w / (2.0 * total);
    fg.adj[static_cast<size_t>(e.i)].push_back({e.j, f});
    fg.adj[static_cast<size_t>(e.j)].push_back({e.i, f});
    fg.node_flow[static_cast<size_t>(e.i)] += f;
    fg.node_flow[static_cast<size_t>(e.j)] += f;
  }
  fg.out_flow = fg.node_flow;
  for (double p : fg.node_flow) fg.node_entropy_term += plogp(p);
  return fg;
}

}  // namespace detail

/// Two-level map equation, in bits, for an undirected teleportation-free walk:
///   L = q H(Q) + sum_i p_i H(P^i)
/// with node visit rates strength/(2W) and module exit rates cut/(2W).
/// Non-positive edges carry no flow; isolated nodes contribute nothing.
inline double map_equation(const KnnGraph& graph, const std::vector<int>& modules) {
  if (graph.n_nodes <= 0) throw ValidationError("map_equation: empty graph");
  if (static_cast<int>(modules.size()) != graph.n_nodes)
    throw ValidationError("map_equation: partition does not cover every node");
  const detail::FlowGraph fg = detail::make_flow_graph(graph);
  // Module ids may be arbitrary integers.
  std::vector<int> keys(modules);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  auto idx = [&](int m) { return static_cast<size_t>(std::lower_bound(keys.begin(), keys.end(), m) - keys.begin()); };
  std::vector<double> exit(keys.size(), 0.0), flow(keys.size(), 0.0);
  for (int v = 0; v < fg.n; ++v) {
    const size_t mv = idx(modules[static_cast<size_t>(v)]);
    flow[mv] += fg.node_flow[static_cast<size_t>(v)];
    for (auto [u, f] : fg.adj[static_cast<size_t>(v)])
      if (idx(modules[static_cast<size_t>(u)]) != mv) exit[mv] += f;
  }
  double sum_exit = 0.0, exit_log = 0.0, total_log = 0.0;
  for (size_t m = 0; m < keys.size(); ++m) {
    sum_exit += exit[m];
    exit_log += detail::plogp(exit[m]);
    total_log += detail::plogp(exit[m] + flow[m]);
  }
  const double L = detail::plogp(sum_exit) - 2.0 * exit_log - fg.node_entropy_term + total_log;
  return std::max(0.0, L);
}

struct InfomapOptions {
  /// Independent greedy runs with shuffled sweep orders; the first trial
  /// uses node order. The lowest codelength wins, earlier trials on ties.
  int trials = 4;
  int max_sweeps = 200;
  double min_improvement = 1e-10;
};

struct InfomapResult {
  PseudoLabels labels;
  double codelength = 0.0;
  double singleton_codelength = 0.0;
  /// Codelength after every accepted move of the winning trial.
  std::vector<double> move_log;
};

namespace detail {

class MapOptimizer {
 public:
  MapOptimizer(const FlowGraph& base, double min_improvement, int max_sweeps)
      : base_(base), eps_(min_improvement), max_sweeps_(max_sweeps) {}

  // Runs the coarse/fine loop from singletons; returns module per original node.
  std::vector<int> run(Rng* shuffle_rng, std::vector<double>& log) {
    std::vector<int> modules(static_cast<size_t>(base_.n));
    std::iota(modules.begin(), modules.end(), 0);
    double best = codelength_of(modules);
    for (int round = 0; round < 50; ++round) {
      std::vector<int> next = modules;
      // Fine pass on original nodes, then recursive aggregation.
      optimize_level(base_, next, shuffle_rng, log);
      next = coarse_tune(next, shuffle_rng, log);
      const double L = codelength_of(next);
      const bool improved = L < best - eps_;
      if (improved) {
        best = L;
        modules = std::move(next);
      }
      if (!improved) break;
    }
    return modules;
  }

  double codelength_of(const std::vector<int>& modules) const {
    State st = make_state(base_, modules);
    return st.codelength(base_.node_entropy_term);
  }

 private:
  struct State {
    std::vector<double> exit, flow;
    std::vector<int> size;
    double sum_exit = 0, exit_log = 0, total_log = 0;

    double codelength(double node_term) const {
      return plogp(sum_exit) - 2.0 * exit_log - node_term + total_log;
    }
  };

  static State make_state(const FlowGraph& g, const std::vector<int>& modules) {
    State st;
    const size_t n = static_cast<size_t>(g.n);
    st.exit.assign(n, 0.0);
    st.flow.assign(n, 0.0);
    st.size.assign(n, 0);
    for (size_t v = 0; v < n; ++v) {
      const size_t m = static_cast<size_t>(modules[v]);
      st.flow[m] += g.node_flow[v];
      st.size[m] += 1;
      for (auto [u, f] : g.adj[v])
        if (modules[static_cast<size_t>(u)] != modules[v]) st.exit[m] += f;
    }
    for (size_t m = 0; m < n; ++m) {
      st.sum_exit += st.exit[m];
      st.exit_log += plogp(st.exit[m]);
      st.total_log += plogp(st.exit[m] + st.flow[m]);
    }
    return st;
  }

  // Greedy single-node moves over `g` (whose nodes may be super-nodes).
  // `modules` holds ids in [0, g.n). Returns whether any move happened.
  bool optimize_level(const FlowGraph& g, std::vector<int>& modules, Rng* rng, std::vector<double>& log) {
    State st = make_state(g, modules);
    const double node_term = base_.node_entropy_term;
    const size_t n = static_cast<size_t>(g.n);
    std::vector<int> empty;
    for (size_t m = n; m-- > 0;)
      if (st.size[m] == 0) empty.push_back(static_cast<int>(m));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> link(n, 0.0);
    std::vector<int> touched;
    bool any = false;
    for (int sweep = 0; sweep < max_sweeps_; ++sweep) {
      if (rng) std::shuffle(order.begin(), order.end(), *rng);
      bool moved = false;
      for (int v : order) {
        const size_t vs = static_cast<size_t>(v);
        const double pv = g.node_flow[vs];
        if (pv <= 0.0) continue;
        const int from = modules[vs];
        touched.clear();
        for (auto [u, f] : g.adj[vs]) {
          const int mu = modules[static_cast<size_t>(u)];
          if (link[static_cast<size_t>(mu)] == 0.0) touched.push_back(mu);
          link[static_cast<size_t>(mu)] += f;
        }
        const double dv = g.out_flow[vs];
        const double w_from = link[static_cast<size_t>(from)];
        const double exit_from_new = st.exit[static_cast<size_t>(from)] - dv + 2.0 * w_from;
        const double flow_from_new = st.flow[static_cast<size_t>(from)] - pv;
        const double current = st.codelength(node_term);

        auto eval = [&](int to, double w_to, double& out_exit_to) {
          const size_t t = static_cast<size_t>(to);
          const size_t fr = static_cast<size_t>(from);
          const double exit_to_new = st.exit[t] + dv - 2.0 * w_to;
          out_exit_to = exit_to_new;
          const double sum_exit = st.sum_exit - st.exit[fr] - st.exit[t] + exit_from_new + exit_to_new;
          const double exit_log = st.exit_log - plogp(st.exit[fr]) - plogp(st.exit[t]) +
                                  plogp(exit_from_new) + plogp(exit_to_new);
          const double total_log = st.total_log - plogp(st.exit[fr] + st.flow[fr]) -
                                   plogp(st.exit[t] + st.flow[t]) + plogp(exit_from_new + flow_from_new) +
                                   plogp(exit_to_new + st.flow[t] + pv);
          return plogp(sum_exit) - 2.0 * exit_log - node_term + total_log - current;
        };

        int best_to = -1;
        double best_delta = -eps_;
        std::sort(touched.begin(), touched.end());
        for (int to : touched) {
          if (to == from) continue;
          double unused;
          const double d = eval(to, link[static_cast<size_t>(to)], unused);
          if (d < best_delta) {
            best_delta = d;
            best_to = to;
          }
        }
        if (st.size[static_cast<size_t>(from)] > 1 && !empty.empty()) {
          double unused;
          const double d = eval(empty.back(), 0.0, unused);
          if (d < best_delta) {
            best_delta = d;
            best_to = empty.back();
          }
        }
        if (best_to >= 0) {
          const size_t fr = static_cast<size_t>(from), t = static_cast<size_t>(best_to);
          const double w_to = link[t];
          double exit_to_new;
          eval(best_to, w_to, exit_to_new);
          st.sum_exit += exit_from_new + exit_to_new - st.exit[fr] - st.exit[t];
          st.exit_log += plogp(exit_from_new) + plogp(exit_to_new) - plogp(st.exit[fr]) - plogp(st.exit[t]);
          st.total_log += plogp(exit_from_new + flow_from_new) + plogp(exit_to_new + st.flow[t] + pv) -
                          plogp(st.exit[fr] + st.flow[fr]) - plogp(st.exit[t] + st.flow[t]);
          st.exit[fr] = exit_from_new;
          st.flow[fr] = flow_from_new;
          st.exit[t] = exit_to_new;
          st.flow[t] += pv;
          if (st.size[t] == 0) empty.pop_back();
          st.size[fr] -= 1;
          st.size[t] += 1;
          if (st.size[fr] == 0) {
            st.exit[fr] = 0.0;
            st.flow[fr] = 0.0;
            empty.push_back(from);
          }
          modules[vs] = best_to;
          moved = any = true;
          log.push_back(st.codelength(node_term));
        }
        for (int m : touched) link[static_cast<size_t>(m)] = 0.0;
      }
      if (!moved) break;
    }
    return any;
  }

  // Repeatedly aggregates modules into super-nodes and moves those.
  std::vector<int> coarse_tune(std::vector<int> modules, Rng* rng, std::vector<double>& log) {
    for (int level = 0; level < 64; ++level) {
      // Dense ids for current modules.
      std::vector<int> dense(static_cast<size_t>(base_.n), -1);
      int count = 0;
      for (int& m : modules) {
        if (dense[static_cast<size_t>(m)] < 0) dense[static_cast<size_t>(m)] = count++;
        m = dense[static_cast<size_t>(m)];
      }
      if (count <= 1) break;
      FlowGraph sg;
      sg.n = count;
      sg.node_flow.assign(static_cast<size_t>(count), 0.0);
      sg.out_flow.assign(static_cast<size_t>(count), 0.0);
      sg.adj.assign(static_cast<size_t>(count), {});
      std::vector<std::map<int, double>> w(static_cast<size_t>(count));
      for (int v = 0; v < base_.n; ++v) {
        const size_t a = static_cast<size_t>(modules[static_cast<size_t>(v)]);
        sg.node_flow[a] += base_.node_flow[static_cast<size_t>(v)];
        for (auto [u, f] : base_.adj[static_cast<size_t>(v)]) {
          const int b = modules[static_cast<size_t>(u)];
          if (static_cast<int>(a) != b) w[a][b] += f;
        }
      }
      for (size_t a = 0; a < static_cast<size_t>(count); ++a)
        for (auto [b, f] : w[a]) {
          sg.adj[a].push_back({b, f});
          sg.out_flow[a] += f;
        }
      std::vector<int> super(static_cast<size_t>(count));
      std::iota(super.begin(), super.end(), 0);
      if (!optimize_level(sg, super, rng, log)) break;
      for (int& m : modules) m = super[static_cast<size_t>(m)];
    }
    return modules;
  }

  const FlowGraph& base_;
  double eps_;
  int max_sweeps_;
};

}  // namespace detail

/// Greedy two-level map-equation minimization. Each trial starts from
/// singletons, moves nodes to the neighbouring (or an empty) module with the
/// largest codelength decrease, then aggregates modules into super-nodes and
/// repeats until no move improves. Nodes without positive edges stay
/// singleton clusters.
inline InfomapResult infomap_partition(const KnnGraph& graph, std::uint64_t seed,
                                       const InfomapOptions& opts = {}) {
  if (graph.n_nodes <= 0) throw ValidationError("infomap_partition: empty graph");
  const detail::FlowGraph fg = detail::make_flow_graph(graph);
  detail::MapOptimizer opt(fg, opts.min_improvement, opts.max_sweeps);
  std::vector<int> singletons(static_cast<size_t>(graph.n_nodes));
  std::iota(singletons.begin(), singletons.end(), 0);

  InfomapResult best;
  best.singleton_codelength = opt.codelength_of(singletons);
  best.codelength = std::numeric_limits<double>::infinity();
  std::vector<int> best_modules = singletons;
  Rng rng(seed);
  for (int t = 0; t < std::max(1, opts.trials); ++t) {
    std::vector<double> log;
    std::vector<int> modules = opt.run(t == 0 ? nullptr : &rng, log);
    const double L = opt.codelength_of(modules);
    if (L < best.codelength - opts.min_improvement) {
      best.codelength = L;
      best_modules = std::move(modules);
      best.move_log = std::move(log);
    }
  }
  best.labels = densify(best_modules);
  best.codelength = std::max(0.0, best.codelength);
  return best;
}

/// Mean of each cluster's member columns, renormalized. Outliers are skipped.
inline Mat compute_centroids(const Mat& embeddings, const PseudoLabels& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.cols())
    throw ValidationError("compute_centroids: label count does not match embedding count");
  Mat sums = Mat::Zero(embeddings.rows(), labels.num_clusters);
  std::vector<int> counts(static_cast<size_t>(labels.num_clusters), 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k == kOutlier) continue;
    if (k < 0 || k >= labels.num_clusters) throw ValidationError("compute_centroids: label out of range");
    sums.col(k) += embeddings.col(static_cast<Eigen::Index>(i));
    counts[static_cast<size_t>(k)] += 1;
  }
  for (int k = 0; k < labels.num_clusters; ++k) {
    if (counts[static_cast<size_t>(k)] == 0)
      throw ValidationError("compute_centroids: cluster " + std::to_string(k) + " is empty (labels not dense)");
    const double norm = sums.col(k).norm() / counts[static_cast<size_t>(k)];
    if (norm < 1e-8)
      throw DegenerateCentroidError(k, "cluster " + std::to_string(k) + " has a degenerate (zero-mean) centroid");
    sums.col(k).normalize();
  }
  return sums;
}

}  // namespace gaitsf
