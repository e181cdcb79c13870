#include "graph.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace cocn {

std::vector<std::pair<int, int>> normalize_edges(
    int n, std::vector<std::pair<int, int>> edges) {
  std::vector<std::pair<int, int>> out;
  out.reserve(edges.size());
  for (auto [a, b] : edges) {
    if (a < 0 || a >= n || b < 0 || b >= n)
      throw DataError("edge endpoint (" + std::to_string(a) + "," +
                      std::to_string(b) + ") outside [0," + std::to_string(n) +
                      ")");
    if (a == b) continue;  // strip self-loops
    out.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(n, 0);
  for (auto [a, b] : edges) {
    deg[a]++;
    deg[b]++;
  }
  return deg;
}

std::vector<std::vector<int>> Graph::adjacency_list() const {
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

Matrix Graph::dense_adjacency() const {
  Matrix a = Matrix::Zero(n, n);
  for (auto [i, j] : edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

SpMat Graph::sparse_adjacency() const {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(edges.size() * 2);
  for (auto [i, j] : edges) {
    trips.emplace_back(i, j, 1.0);
    trips.emplace_back(j, i, 1.0);
  }
  SpMat a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

namespace {

bool parse_int(const std::string& tok, long& out) {
  try {
    size_t pos = 0;
    out = std::stol(tok, &pos);
    return pos == tok.size();
  } catch (...) {
    return false;
  }
}

}  // namespace

Graph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list: " + path);
  std::string line;
  int line_no = 0;
  long header_n = -1;
  std::vector<std::pair<int, int>> edges;
  long max_idx = -1;
  while (std::getline(in, line)) {
    line_no++;
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
    trimmed.erase(trimmed.find_last_not_of(" \t\r") + 1);
    if (trimmed.empty()) continue;
    if (trimmed.rfind("n=", 0) == 0) {
      if (!parse_int(trimmed.substr(2), header_n) || header_n < 1)
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": malformed header '" + trimmed + "'");
      continue;
    }
    std::istringstream ls(trimmed);
    std::string ta, tb, extra;
    ls >> ta >> tb;
    long a, b;
    if (!parse_int(ta, a) || !parse_int(tb, b) || (ls >> extra) || a < 0 ||
        b < 0)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": malformed edge line '" + trimmed + "'");
    edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
    max_idx = std::max({max_idx, a, b});
  }
  Graph g;
  if (header_n >= 0) {
    if (max_idx >= header_n)
      throw DataError(path + ": edge index " + std::to_string(max_idx) +
                      " out of bounds for declared n=" +
                      std::to_string(header_n));
    g.n = static_cast<int>(header_n);
  } else {
    if (max_idx < 0) throw DataError(path + ": no edges and no n= header");
    g.n = static_cast<int>(max_idx + 1);
  }
  g.edges = normalize_edges(g.n, std::move(edges));
  return g;
}

void save_edge_list(const Graph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write edge list: " + path);
  out << "n=" << g.n << "\n";
  for (auto [a, b] : g.edges) out << a << " " << b << "\n";
  if (!out) throw DataError("write failed: " + path);
}

namespace {

std::vector<long> read_int_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing dataset file: " + path);
  std::vector<long> vals;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    std::string t = line;
    t.erase(0, t.find_first_not_of(" \t\r"));
    t.erase(t.find_last_not_of(" \t\r") + 1);
    if (t.empty()) continue;
    long v;
    if (!parse_int(t, v))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected an integer, got '" + t + "'");
    vals.push_back(v);
  }
  return vals;
}

}  // namespace

Dataset load_tu_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::string prefix;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.size() > 6 && name.substr(name.size() - 6) == "_A.txt") {
      prefix = name.substr(0, name.size() - 6);
      break;
    }
  }
  if (prefix.empty())
    throw DataError("missing dataset file: " + dir + "/<DS>_A.txt");
  auto file = [&](const std::string& suffix) {
    return (fs::path(dir) / (prefix + suffix)).string();
  };

  // Edges (1-based, comma separated).
  std::ifstream ain(file("_A.txt"));
  if (!ain) throw DataError("missing dataset file: " + file("_A.txt"));
  std::vector<std::pair<long, long>> raw_edges;
  std::string line;
  int line_no = 0;
  while (std::getline(ain, line)) {
    line_no++;
    std::string t = line;
    t.erase(std::remove_if(t.begin(), t.end(),
                           [](char c) { return c == ' ' || c == '\r'; }),
            t.end());
    if (t.empty()) continue;
    auto comma = t.find(',');
    long a, b;
    if (comma == std::string::npos || !parse_int(t.substr(0, comma), a) ||
        !parse_int(t.substr(comma + 1), b))
      throw DataError(file("_A.txt") + ":" + std::to_string(line_no) +
                      ": malformed edge '" + line + "'");
    raw_edges.emplace_back(a, b);
  }

  std::vector<long> indicator = read_int_column(file("_graph_indicator.txt"));
  std::vector<long> graph_labels = read_int_column(file("_graph_labels.txt"));
  size_t total_nodes = indicator.size();
  if (total_nodes == 0)
    throw DataError(file("_graph_indicator.txt") + ": empty");

  std::vector<long> node_labels;
  bool have_node_labels = fs::exists(file("_node_labels.txt"));
  if (have_node_labels) {
    node_labels = read_int_column(file("_node_labels.txt"));
    if (node_labels.size() != total_nodes)
      throw DataError(file("_node_labels.txt") + ": has " +
                      std::to_string(node_labels.size()) + " rows, expected " +
                      std::to_string(total_nodes));
  }

  long num_graphs = *std::max_element(indicator.begin(), indicator.end());
  if (static_cast<long>(graph_labels.size()) != num_graphs)
    throw DataError(file("_graph_labels.txt") + ": has " +
                    std::to_string(graph_labels.size()) + " rows, expected " +
                    std::to_string(num_graphs));

  // Node id (1-based global) -> (graph, local index).
  std::vector<int> graph_of(total_nodes), local_of(total_nodes);
  std::vector<int> counts(num_graphs, 0);
  for (size_t v = 0; v < total_nodes; v++) {
    long gidx = indicator[v];
    if (gidx < 1 || gidx > num_graphs)
      throw DataError(file("_graph_indicator.txt") + ": bad graph id " +
                      std::to_string(gidx));
    graph_of[v] = static_cast<int>(gidx - 1);
    local_of[v] = counts[gidx - 1]++;
  }

  std::vector<std::vector<std::pair<int, int>>> per_graph_edges(num_graphs);
  for (auto [a, b] : raw_edges) {
    if (a < 1 || b < 1 || a > static_cast<long>(total_nodes) ||
        b > static_cast<long>(total_nodes))
      throw DataError(file("_A.txt") + ": node id out of range: " +
                      std::to_string(a) + "," + std::to_string(b));
    int ga = graph_of[a - 1], gb = graph_of[b - 1];
    if (ga != gb)
      throw DataError(file("_A.txt") + ": edge (" + std::to_string(a) + "," +
                      std::to_string(b) + ") crosses graphs " +
                      std::to_string(ga + 1) + " and " + std::to_string(gb + 1));
    per_graph_edges[ga].emplace_back(local_of[a - 1], local_of[b - 1]);
  }

  // Remap labels to [0, C) in sorted order.
  std::set<long> label_set(graph_labels.begin(), graph_labels.end());
  std::map<long, int> label_map;
  for (long l : label_set) label_map[l] = static_cast<int>(label_map.size());

  std::map<long, int> node_label_map;
  if (have_node_labels) {
    std::set<long> nl_set(node_labels.begin(), node_labels.end());
    for (long l : nl_set) node_label_map[l] = static_cast<int>(node_label_map.size());
  }
  int nl_dim = static_cast<int>(node_label_map.size());

  Dataset ds;
  ds.task = Task::GraphClassification;
  ds.num_classes = static_cast<int>(label_map.size());
  ds.feature_dim = nl_dim;
  ds.graphs.resize(num_graphs);
  for (long gi = 0; gi < num_graphs; gi++) {
    Graph& g = ds.graphs[gi];
    g.n = counts[gi];
    if (g.n == 0)
      throw DataError(file("_graph_indicator.txt") + ": graph " +
                      std::to_string(gi + 1) + " has no nodes");
    g.edges = normalize_edges(g.n, std::move(per_graph_edges[gi]));
    g.label = label_map.at(graph_labels[gi]);
    if (have_node_labels) g.features = Matrix::Zero(g.n, nl_dim);
  }
  if (have_node_labels) {
    for (size_t v = 0; v < total_nodes; v++) {
      Graph& g = ds.graphs[graph_of[v]];
      int cls = node_label_map.at(node_labels[v]);
      g.features(local_of[v], cls) = 1.0;
      g.node_labels.push_back(cls);
    }
  }
  return ds;
}

std::vector<Graph> load_graph6(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph6 file: " + path);
  std::vector<Graph> graphs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    std::string t = line;
    t.erase(t.find_last_not_of(" \t\r") + 1);
    if (t.empty()) continue;
    if (t.rfind(">>graph6<<", 0) == 0) t = t.substr(10);
    if (t.empty()) continue;
    auto err = [&](const std::string& msg) {
      return DataError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    size_t pos = 0;
    int c0 = t[pos] - 63;
    if (c0 < 0 || c0 > 62) throw err("graphs with n > 62 unsupported");
    int n = c0;
    pos++;
    Graph g;
    g.n = n;
    long need_bits = static_cast<long>(n) * (n - 1) / 2;
    long need_bytes = (need_bits + 5) / 6;
    if (static_cast<long>(t.size() - pos) < need_bytes)
      throw err("truncated graph6 record");
    std::vector<std::pair<int, int>> edges;
    long bit = 0;
    for (int j = 1; j < n; j++) {
      for (int i = 0; i < j; i++) {
        int byte = t[pos + bit / 6] - 63;
        if (byte < 0 || byte > 63) throw err("invalid graph6 byte");
        if ((byte >> (5 - bit % 6)) & 1) edges.emplace_back(i, j);
        bit++;
      }
    }
    g.edges = normalize_edges(n, std::move(edges));
    graphs.push_back(std::move(g));
  }
  return graphs;
}

Dataset open_dataset(const std::string& path) {
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      std::string name = e.path().filename().string();
      if (name.size() > 6 && name.substr(name.size() - 6) == "_A.txt")
        return load_tu_dataset(path);
    }
    // Directory of .g6 and/or edge-list files.
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Dataset ds;
    bool any_g6 = false;
    for (const auto& f : files) {
      if (f.extension() == ".g6") {
        auto gs = load_graph6(f.string());
        ds.graphs.insert(ds.graphs.end(), gs.begin(), gs.end());
        any_g6 = true;
      } else if (f.extension() == ".txt" || f.extension() == ".edges") {
        ds.graphs.push_back(load_edge_list(f.string()));
      }
    }
    if (ds.graphs.empty())
      throw DataError("no loadable graph files in directory: " + path);
    ds.task = any_g6 ? Task::IsomorphismPairs : Task::GraphClassification;
    return ds;
  }
  if (!fs::exists(path)) throw DataError("dataset path does not exist: " + path);
  fs::path p(path);
  Dataset ds;
  if (p.extension() == ".g6") {
    ds.graphs = load_graph6(path);
    ds.task = Task::IsomorphismPairs;
  } else {
    ds.graphs.push_back(load_edge_list(path));
  }
  return ds;
}

SpMat normalized_adjacency(const Graph& g) {
  auto deg = g.degrees();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.edges.size() * 2);
  for (auto [i, j] : g.edges) {
    double v = 1.0 / std::sqrt(static_cast<double>(deg[i]) * deg[j]);
    trips.emplace_back(i, j, v);
    trips.emplace_back(j, i, v);
  }
  SpMat a(g.n, g.n);
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

Matrix normalized_adjacency_dense(const Graph& g) {
  return Matrix(normalized_adjacency(g));
}

DistanceMatrix shortest_path_distances(const Graph& g, double scale) {
  if (scale <= 0) scale = 1.0 / g.n;
  auto adj = g.adjacency_list();
  Matrix d = Matrix::Constant(g.n, g.n, scale * g.n);  // unreachable sentinel
  std::vector<int> hops(g.n);
  for (int s = 0; s < g.n; s++) {
    std::fill(hops.begin(), hops.end(), -1);
    hops[s] = 0;
    std::deque<int> q{s};
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int v : adj[u])
        if (hops[v] < 0) {
          hops[v] = hops[u] + 1;
          q.push_back(v);
        }
    }
    for (int v = 0; v < g.n; v++)
      if (hops[v] >= 0) d(s, v) = scale * hops[v];
  }
  return DistanceMatrix{std::move(d), scale};
}

Matrix degree_onehot_features(const Graph& g, int max_degree) {
  auto deg = g.degrees();
  int observed = deg.empty() ? 0 : *std::max_element(deg.begin(), deg.end());
  if (observed > max_degree)
    throw ConfigError("observed degree " + std::to_string(observed) +
                      " exceeds max_degree " + std::to_string(max_degree));
  Matrix f = Matrix::Zero(g.n, max_degree + 1);
  for (int i = 0; i < g.n; i++) f(i, deg[i]) = 1.0;
  return f;
}

}  // namespace cocn
