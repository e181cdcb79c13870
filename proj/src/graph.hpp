#pragma once

#include "common.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cocn {

// Undirected graph. Edges are stored with i < j, sorted and deduplicated;
// self-loops are stripped on construction.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
  Matrix features;  // n x d, 0x0 when absent
  std::optional<int> label;
  std::vector<int> node_labels;  // empty when absent

  bool has_features() const { return features.size() > 0; }
  std::vector<int> degrees() const;
  std::vector<std::vector<int>> adjacency_list() const;
  Matrix dense_adjacency() const;
  SpMat sparse_adjacency() const;
};

// Canonicalize an edge set: undirected, i < j, sorted, unique, loop-free.
// Throws DataError if an endpoint falls outside [0, n).
std::vector<std::pair<int, int>> normalize_edges(
    int n, std::vector<std::pair<int, int>> edges);

enum class Task { GraphClassification, NodeClassification, IsomorphismPairs };

struct Dataset {
  std::vector<Graph> graphs;
  Task task = Task::GraphClassification;
  int num_classes = 0;
  int feature_dim = 0;
};

struct DistanceMatrix {
  Matrix d;  // scaled hop counts, symmetric, zero diagonal
  double scale = 1.0;
};

// Text edge list: optional "n=<count>" header, then one "i j" pair per line
// (0-based). Blank lines ignored.
Graph load_edge_list(const std::string& path);
void save_edge_list(const Graph& g, const std::string& path);

// TU-style directory: <DS>_A.txt (comma-separated pairs, 1-based),
// <DS>_graph_indicator.txt, <DS>_graph_labels.txt, optional
// <DS>_node_labels.txt. Node labels become one-hot features in label-sorted
// order; graph labels are remapped to [0, num_classes).
Dataset load_tu_dataset(const std::string& dir);

// graph6 file, one graph per line, n <= 62.
std::vector<Graph> load_graph6(const std::string& path);

// Dispatch on path shape: TU directory, directory of edge lists, .g6 file,
// or a single edge-list file.
Dataset open_dataset(const std::string& path);

// Entry (i,j) = 1/sqrt(deg_i * deg_j) for every edge; zero rows for isolated
// nodes.
SpMat normalized_adjacency(const Graph& g);
Matrix normalized_adjacency_dense(const Graph& g);

// All-pairs BFS hop counts times `scale`; unreachable pairs get the sentinel
// scale * n. scale <= 0 selects the default 1/n.
DistanceMatrix shortest_path_distances(const Graph& g, double scale);

// Row i one-hot at column deg(i). Throws ConfigError when a degree exceeds
// max_degree.
Matrix degree_onehot_features(const Graph& g, int max_degree);

}  // namespace cocn
