#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apportion {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every random draw in the project flows through splitmix64 so that runs are
// reproducible bit-for-bit across platforms. std::* distributions are
// implementation-defined and must not be used.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Bounded integer draw on {0..bound} keyed by (seed, key). Stateless, so the
// draw for a given key is independent of evaluation order.
inline int keyed_draw(std::uint64_t seed, std::uint64_t key, int bound) {
  if (bound <= 0) return 0;
  return static_cast<int>(splitmix64(splitmix64(seed) ^ key) %
                          static_cast<std::uint64_t>(bound + 1));
}

// Directed communication graph. Node ids are 0..N-1; no self loops. The
// self-weight a node applies to its own state is implicit in the weight
// assignment, never an edge.
class Graph {
 public:
  Graph() : Graph(1, {}) {}  // single node, no edges
  Graph(int node_count, std::vector<std::pair<int, int>> edges,
        std::optional<int> diameter_bound = std::nullopt);

  int node_count() const { return node_count_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  std::optional<int> diameter_bound() const { return diameter_bound_; }

  const std::vector<int>& out_neighbors(int node) const { return out_[node]; }
  const std::vector<int>& in_neighbors(int node) const { return in_[node]; }
  int out_degree(int node) const { return static_cast<int>(out_[node].size()); }
  bool has_edge(int from, int to) const;

  // Index of (from,to) in the sorted edge list; used to key per-edge delay
  // streams. Throws if the edge does not exist.
  int edge_index(int from, int to) const;

 private:
  int node_count_ = 0;
  std::vector<std::pair<int, int>> edges_;  // sorted, duplicates removed
  std::optional<int> diameter_bound_;
  std::vector<std::vector<int>> out_;
  std::vector<std::vector<int>> in_;
};

// Common weight each node assigns to itself and to every out-neighbor,
// 1/(out_degree+1). The implied matrix is column stochastic by construction.
struct WeightAssignment {
  std::vector<double> out_weight;

  double self_weight(int node) const { return out_weight[node]; }
};

// True iff every ordered node pair is connected by a directed path.
bool validate_strong_connectivity(const Graph& graph);

// Throws ValidationError unless the graph is strongly connected.
WeightAssignment synthesize_weights(const Graph& graph);

// Longest shortest directed path. Returns 0 for a single node; throws
// ValidationError when some pair is unreachable.
int exact_diameter(const Graph& graph);

// Rounds per epoch: D*(1+max_delay) + max_delay. The worst-case horizon for
// any value to traverse the network under bounded delays.
long epoch_length(int diameter_bound, int max_delay);

// Directed ring 0->1->...->0 plus `extra_edges` seeded random directed
// chords. Strongly connected by construction. n = 1 yields the edgeless
// single-node graph.
Graph random_strongly_connected(int node_count, int extra_edges,
                                std::uint64_t seed);

// Bidirectional ring plus seeded bidirectional chords, accepted only while
// they keep the exact diameter at or above `target_diameter`; stops when the
// diameter lands on the target exactly.
Graph generate_with_diameter(int node_count, int target_diameter,
                             std::uint64_t seed);

}  // namespace apportion
