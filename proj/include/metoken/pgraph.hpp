#pragma once

#include <string>
#include <vector>

#include "metoken/geometry.hpp"
#include "metoken/ingest.hpp"

namespace metoken::pgraph {

struct GraphConfig {
  int d_s = 2;        // sequence-separation cutoff
  double d_r = 10.0;  // CA-CA radius cutoff, Angstrom
  int k = 30;         // spatial nearest-neighbor count
  int k_hop = 1;      // hop count for the K-nearest micro-env criterion
  // Micro-env membership defaults to the union of the three criteria;
  // this switches it to their conjunction for comparison runs.
  bool strict_intersection = false;
  void validate() const;
};

enum class EdgeType { Sequential = 0, Radius = 1, KNearest = 2 };
const char* edge_type_name(EdgeType t);

struct Edge {
  int i;  // frame owner; edge features live in residue i's frame
  int j;
  EdgeType type;
  bool operator==(const Edge&) const = default;
};

// Directed typed residue graph with precomputed features. The same ordered
// pair (i, j) may appear once per edge type.
struct ResidueGraph {
  int n = 0;
  int node_dim = 0;
  int edge_dim = 0;
  std::vector<double> node_feat;  // n * node_dim, row-major
  std::vector<Edge> edges;
  std::vector<double> edge_feat;  // edges.size() * edge_dim, row-major
  std::vector<int> labels;        // empty when unlabeled
  std::vector<Eigen::Vector3d> ca;

  const double* node_row(int i) const { return node_feat.data() + size_t(i) * size_t(node_dim); }
  const double* edge_row(int e) const { return edge_feat.data() + size_t(e) * size_t(edge_dim); }
};

struct MicroEnv {
  int center = 0;
  std::vector<int> member_nodes;  // sorted, includes center
  std::vector<int> member_edges;  // indices into graph.edges, sorted
};

// Node features for every residue plus the union of the three typed edge
// sets. Edges are emitted per source residue in ascending j, Sequential
// then Radius then KNearest; K-nearest ties break toward the lower index.
ResidueGraph build_graph(const ingest::Protein& p, const GraphConfig& cfg,
                         const geom::FeatureConfig& fcfg);
ResidueGraph build_graph(const ingest::AnnotatedProtein& ap, const GraphConfig& cfg,
                         const geom::FeatureConfig& fcfg);

MicroEnv micro_env(const ResidueGraph& g, int i, const GraphConfig& cfg);

// Debug dump: nodes, typed edge lists, FNV checksums of the feature buffers.
std::string graph_to_json(const ResidueGraph& g);

}  // namespace metoken::pgraph
