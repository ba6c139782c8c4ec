#include "metoken/pgraph.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "metoken/common.hpp"
#include "metoken/kdtree.hpp"

namespace metoken::pgraph {

void GraphConfig::validate() const {
  if (d_s < 0) throw ConfigError("graph.d_s must be >= 0");
  if (d_r <= 0) throw ConfigError("graph.d_r must be > 0");
  if (k < 1) throw ConfigError("graph.k must be >= 1");
  if (k_hop < 1) throw ConfigError("graph.k_hop must be >= 1");
}

const char* edge_type_name(EdgeType t) {
  switch (t) {
    case EdgeType::Sequential: return "sequential";
    case EdgeType::Radius: return "radius";
    case EdgeType::KNearest: return "knearest";
  }
  return "?";
}

ResidueGraph build_graph(const ingest::Protein& p, const GraphConfig& cfg,
                         const geom::FeatureConfig& fcfg) {
  cfg.validate();
  fcfg.validate();
  p.validate();

  ResidueGraph g;
  g.n = p.size();
  g.node_dim = fcfg.node_dim();
  g.edge_dim = fcfg.edge_dim();
  g.node_feat.resize(size_t(g.n) * size_t(g.node_dim));
  g.ca.reserve(size_t(g.n));
  for (int i = 0; i < g.n; ++i) {
    geom::node_features(p, i, fcfg, g.node_feat.data() + size_t(i) * size_t(g.node_dim));
    g.ca.push_back(p.atom(i, ingest::ATOM_CA));
  }

  if (g.n > 1) {
    KnnIndex index(g.ca);
    int k_eff = std::min(cfg.k, g.n - 1);
    for (int i = 0; i < g.n; ++i) {
      for (int j = std::max(0, i - cfg.d_s); j <= std::min(g.n - 1, i + cfg.d_s); ++j)
        if (j != i) g.edges.push_back({i, j, EdgeType::Sequential});
      for (int j : index.in_radius(i, cfg.d_r))
        g.edges.push_back({i, j, EdgeType::Radius});
      std::vector<int> nn = index.k_nearest(i, k_eff);
      std::sort(nn.begin(), nn.end());
      for (int j : nn) g.edges.push_back({i, j, EdgeType::KNearest});
    }
  }

  g.edge_feat.resize(g.edges.size() * size_t(g.edge_dim));
  for (size_t e = 0; e < g.edges.size(); ++e)
    geom::edge_features(p, g.edges[e].i, g.edges[e].j, fcfg,
                        g.edge_feat.data() + e * size_t(g.edge_dim));
  return g;
}

ResidueGraph build_graph(const ingest::AnnotatedProtein& ap, const GraphConfig& cfg,
                         const geom::FeatureConfig& fcfg) {
  ResidueGraph g = build_graph(ap.protein, cfg, fcfg);
  if (ap.labels.size() != size_t(g.n))
    throw DatasetError("labels length does not match residue count");
  g.labels = ap.labels;
  return g;
}

MicroEnv micro_env(const ResidueGraph& g, int i, const GraphConfig& cfg) {
  if (i < 0 || i >= g.n) throw IndexError("micro_env: residue index out of range");

  // K-nearest criterion: nodes reachable from i within k_hop KNearest edges.
  std::set<int> khop;
  std::vector<int> frontier{i};
  for (int hop = 0; hop < cfg.k_hop; ++hop) {
    std::vector<int> next;
    for (const Edge& e : g.edges) {
      if (e.type != EdgeType::KNearest) continue;
      if (std::find(frontier.begin(), frontier.end(), e.i) == frontier.end()) continue;
      if (e.j != i && khop.insert(e.j).second) next.push_back(e.j);
    }
    frontier = std::move(next);
    if (frontier.empty()) break;
  }

  MicroEnv env;
  env.center = i;
  double d_r2 = cfg.d_r * cfg.d_r;
  for (int j = 0; j < g.n; ++j) {
    if (j == i) {
      env.member_nodes.push_back(j);
      continue;
    }
    bool seq = std::abs(i - j) <= cfg.d_s;
    bool rad = (g.ca[size_t(i)] - g.ca[size_t(j)]).squaredNorm() <= d_r2;
    bool knn = khop.count(j) > 0;
    bool member = cfg.strict_intersection ? (seq && rad && knn) : (seq || rad || knn);
    if (member) env.member_nodes.push_back(j);
  }
  for (size_t e = 0; e < g.edges.size(); ++e) {
    const Edge& ed = g.edges[e];
    bool touches_center = ed.i == i || ed.j == i;
    if (!touches_center) continue;
    int other = ed.i == i ? ed.j : ed.i;
    if (std::binary_search(env.member_nodes.begin(), env.member_nodes.end(), other))
      env.member_edges.push_back(int(e));
  }
  return env;
}

std::string graph_to_json(const ResidueGraph& g) {
  nlohmann::json j;
  j["n"] = g.n;
  j["node_dim"] = g.node_dim;
  j["edge_dim"] = g.edge_dim;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                (unsigned long long)fnv1a(g.node_feat.data(), g.node_feat.size() * sizeof(double)));
  j["node_feat_checksum"] = buf;
  std::snprintf(buf, sizeof(buf), "%016llx",
                (unsigned long long)fnv1a(g.edge_feat.data(), g.edge_feat.size() * sizeof(double)));
  j["edge_feat_checksum"] = buf;
  nlohmann::json by_type;
  for (EdgeType t : {EdgeType::Sequential, EdgeType::Radius, EdgeType::KNearest}) {
    nlohmann::json list = nlohmann::json::array();
    for (const Edge& e : g.edges)
      if (e.type == t) list.push_back({e.i, e.j});
    by_type[edge_type_name(t)] = std::move(list);
  }
  j["edges"] = std::move(by_type);
  if (!g.labels.empty()) j["labels"] = g.labels;
  return j.dump();
}

}  // namespace metoken::pgraph
