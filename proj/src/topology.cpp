#include "apportion/topology.hpp"

#include <algorithm>
#include <queue>

namespace apportion {

Graph::Graph(int node_count, std::vector<std::pair<int, int>> edges,
             std::optional<int> diameter_bound)
    : node_count_(node_count),
      edges_(std::move(edges)),
      diameter_bound_(diameter_bound) {
  if (node_count_ < 1) throw ValidationError("graph: node_count must be >= 1");
  for (const auto& [from, to] : edges_) {
    if (from < 0 || from >= node_count_ || to < 0 || to >= node_count_)
      throw ValidationError("graph: edge endpoint out of range");
    if (from == to) throw ValidationError("graph: self loops are not allowed");
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  if (diameter_bound_ && *diameter_bound_ < 1)
    throw ValidationError("graph: diameter_bound must be >= 1");

  out_.resize(node_count_);
  in_.resize(node_count_);
  for (const auto& [from, to] : edges_) {
    out_[from].push_back(to);
    in_[to].push_back(from);
  }
}

bool Graph::has_edge(int from, int to) const {
  return std::binary_search(edges_.begin(), edges_.end(),
                            std::make_pair(from, to));
}

int Graph::edge_index(int from, int to) const {
  auto it = std::lower_bound(edges_.begin(), edges_.end(),
                             std::make_pair(from, to));
  if (it == edges_.end() || *it != std::make_pair(from, to))
    throw ValidationError("graph: no such edge");
  return static_cast<int>(it - edges_.begin());
}

namespace {

// Hop distances from `source` along out-edges; -1 for unreachable.
std::vector<int> bfs_distances(const Graph& g, int source) {
  std::vector<int> dist(g.node_count(), -1);
  std::queue<int> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    int node = frontier.front();
    frontier.pop();
    for (int next : g.out_neighbors(node)) {
      if (dist[next] < 0) {
        dist[next] = dist[node] + 1;
        frontier.push(next);
      }
    }
  }
  return dist;
}

}  // namespace

bool validate_strong_connectivity(const Graph& graph) {
  const int n = graph.node_count();
  if (n == 1) return true;
  // Forward reachability from node 0, then reachability of node 0 from
  // everyone (walk in-edges). Together these cover all ordered pairs.
  auto forward = bfs_distances(graph, 0);
  for (int d : forward)
    if (d < 0) return false;

  std::vector<char> seen(n, 0);
  std::queue<int> frontier;
  seen[0] = 1;
  frontier.push(0);
  while (!frontier.empty()) {
    int node = frontier.front();
    frontier.pop();
    for (int prev : graph.in_neighbors(node)) {
      if (!seen[prev]) {
        seen[prev] = 1;
        frontier.push(prev);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

WeightAssignment synthesize_weights(const Graph& graph) {
  if (!validate_strong_connectivity(graph))
    throw ValidationError("weights: graph is not strongly connected");
  WeightAssignment assignment;
  assignment.out_weight.resize(graph.node_count());
  for (int i = 0; i < graph.node_count(); ++i)
    assignment.out_weight[i] = 1.0 / (graph.out_degree(i) + 1);
  return assignment;
}

int exact_diameter(const Graph& graph) {
  int diameter = 0;
  for (int source = 0; source < graph.node_count(); ++source) {
    auto dist = bfs_distances(graph, source);
    for (int d : dist) {
      if (d < 0)
        throw ValidationError("diameter: graph is not strongly connected");
      diameter = std::max(diameter, d);
    }
  }
  return diameter;
}

long epoch_length(int diameter_bound, int max_delay) {
  if (diameter_bound < 1)
    throw ValidationError("epoch_length: diameter bound must be >= 1");
  if (max_delay < 0)
    throw ValidationError("epoch_length: max_delay must be >= 0");
  return static_cast<long>(diameter_bound) * (1 + max_delay) + max_delay;
}

Graph random_strongly_connected(int node_count, int extra_edges,
                                std::uint64_t seed) {
  if (node_count < 1)
    throw ValidationError("generator: node_count must be >= 1");
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < node_count; ++i) edges.emplace_back(i, i + 1);
  if (node_count > 1) edges.emplace_back(node_count - 1, 0);

  std::uint64_t state = seed;
  int added = 0;
  int attempts = 0;
  while (added < extra_edges && attempts < extra_edges * 64 + 64) {
    ++attempts;
    state = splitmix64(state);
    int from = static_cast<int>(state % node_count);
    int to = static_cast<int>(splitmix64(state) % node_count);
    if (from == to) continue;
    std::pair<int, int> e{from, to};
    if (std::find(edges.begin(), edges.end(), e) != edges.end()) continue;
    edges.push_back(e);
    ++added;
  }
  return Graph(node_count, std::move(edges));
}

Graph generate_with_diameter(int node_count, int target_diameter,
                             std::uint64_t seed) {
  if (node_count < 3)
    throw ValidationError("generator: need at least 3 nodes");
  if (target_diameter < 1)
    throw ValidationError("generator: target diameter must be >= 1");

  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < node_count; ++i) {
    int j = (i + 1) % node_count;
    edges.emplace_back(i, j);
    edges.emplace_back(j, i);
  }
  Graph graph(node_count, edges);
  int diameter = exact_diameter(graph);
  if (diameter < target_diameter)
    throw ValidationError("generator: ring diameter already below target");

  std::uint64_t state = seed;
  long rejects = 0;
  const long reject_limit = 20000;
  while (diameter > target_diameter) {
    int from, to;
    if (rejects < reject_limit) {
      state = splitmix64(state);
      from = static_cast<int>(state % node_count);
      to = static_cast<int>(splitmix64(state) % node_count);
    } else {
      // Random long chords keep overshooting; fall back to shortest chords,
      // which change the diameter by at most one.
      state = splitmix64(state);
      from = static_cast<int>(state % node_count);
      to = (from + 2) % node_count;
    }
    if (from == to || graph.has_edge(from, to)) {
      ++rejects;
      continue;
    }
    auto trial_edges = graph.edges();
    trial_edges.emplace_back(from, to);
    trial_edges.emplace_back(to, from);
    Graph trial(node_count, std::move(trial_edges));
    int trial_diameter = exact_diameter(trial);
    if (trial_diameter < target_diameter) {
      ++rejects;
      if (rejects > 4 * reject_limit)
        throw ValidationError("generator: cannot hit target diameter");
      continue;
    }
    graph = std::move(trial);
    diameter = trial_diameter;
  }
  return Graph(node_count, graph.edges(), target_diameter);
}

}  // namespace apportion
