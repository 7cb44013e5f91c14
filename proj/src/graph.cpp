#include "mdgfm/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mdgfm {
namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if constexpr (std::is_floating_point_v<T>) {
    // strtod accepts the full range of textual doubles including exponents.
    std::string buf(s);
    char* end = nullptr;
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size();
  } else {
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
  }
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  return in;
}

DenseMatrix read_features(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::size_t count = 0;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      double v = 0.0;
      if (!parse_number(rest.substr(0, comma), v)) {
        throw ParseError(where(path, line_no) + ": malformed feature value");
      }
      data.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw ParseError(where(path, line_no) + ": expected " + std::to_string(cols) +
                       " columns, found " + std::to_string(count));
    }
    ++rows;
  }
  DenseMatrix out(static_cast<Index>(rows), static_cast<Index>(cols));
  std::copy(data.begin(), data.end(), out.data());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> read_edges(const std::filesystem::path& path,
                                                            std::size_t n) {
  auto in = open_or_throw(path);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tab = body.find('\t');
    std::size_t u = 0;
    std::size_t v = 0;
    if (tab == std::string_view::npos || !parse_number(body.substr(0, tab), u) ||
        !parse_number(body.substr(tab + 1), v)) {
      throw ParseError(where(path, line_no) + ": expected \"u<TAB>v\"");
    }
    if (u >= n || v >= n) {
      throw BoundsError(where(path, line_no) + ": edge (" + std::to_string(u) + "," +
                        std::to_string(v) + ") references a node >= " + std::to_string(n));
    }
    edges.emplace_back(u, v);
  }
  return edges;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    int y = 0;
    if (!parse_number(std::string_view(line), y) || y < 0) {
      throw ParseError(where(path, line_no) + ": expected a non-negative class id");
    }
    labels.push_back(y);
  }
  return labels;
}

}  // namespace

std::size_t Graph::num_undirected_edges() const { return adjacency.nnz() / 2; }

int Graph::num_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

void Graph::validate() const {
  if (!adjacency.is_square() || adjacency.rows() != static_cast<std::size_t>(features.rows())) {
    throw ShapeError("graph '" + name + "': adjacency is " + std::to_string(adjacency.rows()) +
                     "x" + std::to_string(adjacency.cols()) + " but features have " +
                     std::to_string(features.rows()) + " rows");
  }
  if (!adjacency.all_nonnegative()) throw PreconditionError("graph '" + name + "': negative edge weight");
  if (labels) {
    if (labels->size() != adjacency.rows()) {
      throw ShapeError("graph '" + name + "': " + std::to_string(labels->size()) +
                       " labels for " + std::to_string(adjacency.rows()) + " nodes");
    }
    for (int y : *labels) {
      if (y < 0) throw BoundsError("graph '" + name + "': negative label");
    }
  }
}

Csr adjacency_from_edges(std::size_t n,
                         const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<Triplet<double>> trips;
  trips.reserve(2 * edges.size());
  for (const auto& [u, v] : edges) {
    if (u == v) continue;
    trips.push_back({u, v, 1.0});
    trips.push_back({v, u, 1.0});
  }
  return Csr::from_triplets(n, n, std::move(trips), DuplicatePolicy::keep_first);
}

std::vector<std::pair<std::size_t, std::size_t>> undirected_edges(const Csr& adjacency) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(adjacency.nnz() / 2);
  for (std::size_t r = 0; r < adjacency.rows(); ++r) {
    for (std::size_t e = adjacency.row_begin(r); e < adjacency.row_end(r); ++e) {
      if (adjacency.col_idx()[e] > r) out.emplace_back(r, adjacency.col_idx()[e]);
    }
  }
  return out;
}

Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                 const std::optional<std::filesystem::path>& label_path, std::string domain_id) {
  Graph g;
  g.features = read_features(feature_path);
  const auto n = static_cast<std::size_t>(g.features.rows());
  g.adjacency = adjacency_from_edges(n, read_edges(edge_path, n));
  if (label_path) {
    auto labels = read_labels(*label_path);
    if (labels.size() != n) {
      throw ParseError(label_path->string() + ": " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(n) + " nodes");
    }
    g.labels = std::move(labels);
  }
  g.name = domain_id;
  g.domain_id = std::move(domain_id);
  g.validate();
  return g;
}

Graph load_dataset_dir(const std::filesystem::path& dir, std::string domain_id) {
  std::optional<std::filesystem::path> labels;
  if (std::filesystem::exists(dir / kLabelFile)) labels = dir / kLabelFile;
  Graph g = load_graph(dir / kEdgeFile, dir / kFeatureFile, labels, std::move(domain_id));
  g.name = dir.filename().string();
  if (g.name.empty()) g.name = dir.parent_path().filename().string();
  return g;
}

void save_dataset_dir(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kEdgeFile);
    out << "# " << g.name << "\n";
    for (const auto& [u, v] : undirected_edges(g.adjacency)) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(dir / kFeatureFile);
    char buf[32];
    for (Index i = 0; i < g.features.rows(); ++i) {
      for (Index j = 0; j < g.features.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", g.features(i, j));
        out << (j ? "," : "") << buf;
      }
      out << '\n';
    }
  }
  if (g.labels) {
    std::ofstream out(dir / kLabelFile);
    for (int y : *g.labels) out << y << '\n';
  }
  if (!std::filesystem::exists(dir / kEdgeFile)) throw LoadError("cannot write " + dir.string());
}

double homophily_ratio(const Graph& g) {
  if (!g.labels) throw PreconditionError("homophily_ratio: graph '" + g.name + "' has no labels");
  const auto& y = *g.labels;
  std::size_t same = 0;
  std::size_t total = 0;
  for (const auto& [u, v] : undirected_edges(g.adjacency)) {
    ++total;
    if (y[u] == y[v]) ++same;
  }
  if (total == 0) return 1.0;
  return static_cast<double>(same) / static_cast<double>(total);
}

DatasetStats dataset_stats(const Graph& g) {
  DatasetStats s;
  s.name = g.name;
  s.n_nodes = g.num_nodes();
  s.directed_entries = g.adjacency.nnz();
  s.undirected_edges = g.num_undirected_edges();
  s.feature_dim = static_cast<std::size_t>(g.features.cols());
  s.n_classes = g.num_classes();
  s.homophily_ratio = g.labels ? homophily_ratio(g) : 1.0;
  return s;
}

std::string stats_csv_header() {
  return "name,n_nodes,directed_entries,undirected_edges,feature_dim,n_classes,homophily_ratio";
}

std::string stats_csv_row(const DatasetStats& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s.homophily_ratio);
  std::ostringstream os;
  os << s.name << ',' << s.n_nodes << ',' << s.directed_entries << ',' << s.undirected_edges << ','
     << s.feature_dim << ',' << s.n_classes << ',' << buf;
  return os.str();
}

}  // namespace mdgfm
