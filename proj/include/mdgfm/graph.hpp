#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdgfm/csr.hpp"
#include "mdgfm/dense.hpp"

namespace mdgfm {

// Undirected node-attributed graph. The adjacency is symmetric, has unit
// weights, and carries no self-loops.
struct Graph {
  Csr adjacency;
  DenseMatrix features;
  std::optional<std::vector<int>> labels;
  std::string domain_id;
  std::string name;

  std::size_t num_nodes() const { return adjacency.rows(); }
  // Undirected edges, each counted once.
  std::size_t num_undirected_edges() const;
  // max label + 1, or 0 without labels.
  int num_classes() const;

  // Checks the structural invariants; throws ShapeError / BoundsError.
  void validate() const;
};

struct DatasetStats {
  std::string name;
  std::size_t n_nodes = 0;
  std::size_t directed_entries = 0;
  std::size_t undirected_edges = 0;
  std::size_t feature_dim = 0;
  int n_classes = 0;
  double homophily_ratio = 1.0;
};

// File names used inside a dataset directory.
inline constexpr const char* kEdgeFile = "edges.tsv";
inline constexpr const char* kFeatureFile = "features.csv";
inline constexpr const char* kLabelFile = "labels.txt";

// Builds a canonical undirected adjacency from an edge list: self-loops are
// dropped, duplicates collapse to weight 1, and (u,v) implies (v,u).
Csr adjacency_from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

// Undirected edge list (u < v) in row-major CSR order.
std::vector<std::pair<std::size_t, std::size_t>> undirected_edges(const Csr& adjacency);

Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                 const std::optional<std::filesystem::path>& label_path, std::string domain_id);

// Loads <dir>/edges.tsv, <dir>/features.csv and, when present, <dir>/labels.txt.
Graph load_dataset_dir(const std::filesystem::path& dir, std::string domain_id);

// Writes the three dataset files into `dir` (created if missing).
void save_dataset_dir(const Graph& g, const std::filesystem::path& dir);

// Edge homophily: fraction of undirected edges joining equally-labelled
// nodes. An edgeless graph has ratio 1.0 by convention.
double homophily_ratio(const Graph& g);

DatasetStats dataset_stats(const Graph& g);

std::string stats_csv_header();
std::string stats_csv_row(const DatasetStats& s);

}  // namespace mdgfm
