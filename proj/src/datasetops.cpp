#include "metoken/datasetops.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "metoken/common.hpp"
#include "metoken/geometry.hpp"
#include "metoken/rng.hpp"

namespace metoken::dataops {

// ---------------------------------------------------------------------------
// class reduction

ClassMap reduce_classes(const std::map<std::string, long>& counts, long threshold) {
  if (counts.empty()) throw DatasetError("reduce_classes: empty count table");
  const std::string kNoMod = "No modification";
  const std::string kRare = "rare sites";

  std::vector<std::pair<std::string, long>> kept;
  bool any_rare = false;
  for (const auto& [name, count] : counts) {
    if (name == kNoMod) continue;
    if (name != kRare && count < threshold) {
      any_rare = true;
      continue;
    }
    kept.emplace_back(name, count);
  }
  // "rare sites" stays last even when already present in the input
  bool had_rare_in = std::any_of(kept.begin(), kept.end(),
                                 [&](auto& kv) { return kv.first == kRare; });
  kept.erase(std::remove_if(kept.begin(), kept.end(),
                            [&](auto& kv) { return kv.first == kRare; }),
             kept.end());
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second || (a.second == b.second && a.first < b.first);
  });

  ClassMap cm;
  cm.id_to_name.push_back(kNoMod);
  for (auto& [name, count] : kept) cm.id_to_name.push_back(name);
  if (any_rare || had_rare_in) cm.id_to_name.push_back(kRare);

  for (size_t id = 0; id < cm.id_to_name.size(); ++id) cm.name_to_id[cm.id_to_name[id]] = int(id);
  int rare_id = (any_rare || had_rare_in) ? int(cm.id_to_name.size()) - 1 : -1;
  for (const auto& [name, count] : counts) {
    if (cm.name_to_id.count(name)) continue;
    cm.name_to_id[name] = rare_id;
  }
  return cm;
}

std::string ClassMap::to_json() const {
  nlohmann::json j;
  j["id_to_name"] = id_to_name;
  j["name_to_id"] = name_to_id;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// global alignment identity (Needleman-Wunsch with Gotoh affine gaps)

namespace {

constexpr double kMatch = 1.0;
constexpr double kMismatch = 0.0;
constexpr double kGapOpen = -10.0;  // first gap column
constexpr double kGapExtend = -1.0; // each further column
constexpr double kNegInf = -1e18;

enum State : unsigned char { M = 0, GapA = 1, GapB = 2 };  // GapA: gap in a, GapB: gap in b

}  // namespace

double seq_identity(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) throw DatasetError("seq_identity: empty sequence");
  size_t m = a.size(), n = b.size();
  size_t w = n + 1;
  auto idx = [w](size_t i, size_t j) { return i * w + j; };

  std::vector<double> sm((m + 1) * w, kNegInf), sx((m + 1) * w, kNegInf),
      sy((m + 1) * w, kNegInf);
  std::vector<unsigned char> pm((m + 1) * w), px((m + 1) * w), py((m + 1) * w);

  sm[idx(0, 0)] = 0.0;
  for (size_t i = 1; i <= m; ++i) {
    sx[idx(i, 0)] = kGapOpen + kGapExtend * double(i - 1);  // b-side gaps
    px[idx(i, 0)] = i == 1 ? M : GapB;
  }
  for (size_t j = 1; j <= n; ++j) {
    sy[idx(0, j)] = kGapOpen + kGapExtend * double(j - 1);
    py[idx(0, j)] = j == 1 ? M : GapA;
  }

  // Tie preference M > GapB > GapA keeps the traceback deterministic.
  auto best3 = [](double vm, double vx, double vy, unsigned char& state) {
    double best = vm;
    state = M;
    if (vx > best) {
      best = vx;
      state = GapB;
    }
    if (vy > best) {
      best = vy;
      state = GapA;
    }
    return best;
  };

  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      double s = a[i - 1] == b[j - 1] ? kMatch : kMismatch;
      unsigned char st;
      double prev = best3(sm[idx(i - 1, j - 1)], sx[idx(i - 1, j - 1)], sy[idx(i - 1, j - 1)], st);
      sm[idx(i, j)] = prev + s;
      pm[idx(i, j)] = st;

      prev = best3(sm[idx(i - 1, j)] + kGapOpen, sx[idx(i - 1, j)] + kGapExtend,
                   sy[idx(i - 1, j)] + kGapOpen, st);
      sx[idx(i, j)] = prev;
      px[idx(i, j)] = st;

      prev = best3(sm[idx(i, j - 1)] + kGapOpen, sx[idx(i, j - 1)] + kGapOpen,
                   sy[idx(i, j - 1)] + kGapExtend, st);
      sy[idx(i, j)] = prev;
      py[idx(i, j)] = st;
    }
  }

  unsigned char state;
  best3(sm[idx(m, n)], sx[idx(m, n)], sy[idx(m, n)], state);

  size_t i = m, j = n;
  long matches = 0, columns = 0;
  while (i > 0 || j > 0) {
    ++columns;
    if (state == M) {
      if (a[i - 1] == b[j - 1]) ++matches;
      state = pm[idx(i, j)];
      --i;
      --j;
    } else if (state == GapB) {
      state = px[idx(i, j)];
      --i;
    } else {
      state = py[idx(i, j)];
      --j;
    }
  }
  return double(matches) / double(columns);
}

double identity_upper_bound(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) throw DatasetError("identity_upper_bound: empty sequence");
  size_t m = a.size(), n = b.size();
  size_t mx = std::max(m, n);

  // Character composition: matched columns pair equal characters one-to-one,
  // and any global alignment spans at least max(m, n) columns.
  long shared = 0;
  std::array<long, 256> ca{}, cb{};
  for (unsigned char c : a) ++ca[c];
  for (unsigned char c : b) ++cb[c];
  for (int c = 0; c < 256; ++c) shared += std::min(ca[size_t(c)], cb[size_t(c)]);
  double bound = double(shared) / double(mx);

  // q-gram (Ukkonen) bound via 5-mers: an alignment with e non-match columns
  // implies at least max(m,n) - q + 1 - q*e shared q-grams, and the identity
  // of that alignment is 1 - e / columns with columns <= m + n.
  constexpr size_t q = 5;
  if (m >= q && n >= q) {
    std::map<uint64_t, long> grams;
    auto key = [&](const std::string& s, size_t at) {
      uint64_t k = 0;
      for (size_t t = 0; t < q; ++t) k = (k << 8) | uint64_t((unsigned char)s[at + t]);
      return k;
    };
    for (size_t at = 0; at + q <= m; ++at) ++grams[key(a, at)];
    long common = 0;
    std::map<uint64_t, long> used;
    for (size_t at = 0; at + q <= n; ++at) {
      uint64_t k = key(b, at);
      auto it = grams.find(k);
      if (it != grams.end() && used[k] < it->second) {
        ++used[k];
        ++common;
      }
    }
    double e_min = (double(mx) - double(q) + 1.0 - double(common)) / double(q);
    if (e_min > 0) bound = std::min(bound, 1.0 - e_min / double(m + n));
  }
  return std::min(1.0, bound);
}

// ---------------------------------------------------------------------------
// cluster split

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    int ra = find(a), rb = find(b);
    if (ra != rb) parent[size_t(std::max(ra, rb))] = std::min(ra, rb);
  }
};

}  // namespace

SplitManifest cluster_split(const std::vector<ingest::Protein>& proteins, double threshold,
                            std::array<double, 3> ratios, uint64_t seed) {
  if (proteins.size() < 3) throw SplitError("cluster_split: need at least 3 proteins");
  double rsum = ratios[0] + ratios[1] + ratios[2];
  if (!(rsum > 0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw SplitError("cluster_split: bad ratios");

  size_t n = proteins.size();
  UnionFind uf(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (uf.find(int(i)) == uf.find(int(j))) continue;
      if (identity_upper_bound(proteins[i].sequence, proteins[j].sequence) < threshold) continue;
      if (seq_identity(proteins[i].sequence, proteins[j].sequence) >= threshold)
        uf.unite(int(i), int(j));
    }
  }

  // cluster ids by first occurrence
  std::map<int, int> root_to_cluster;
  std::vector<int> cluster_of(n);
  std::vector<long> cluster_residues;
  std::vector<std::vector<size_t>> cluster_members;
  for (size_t i = 0; i < n; ++i) {
    int root = uf.find(int(i));
    auto it = root_to_cluster.find(root);
    int cid;
    if (it == root_to_cluster.end()) {
      cid = int(cluster_residues.size());
      root_to_cluster[root] = cid;
      cluster_residues.push_back(0);
      cluster_members.emplace_back();
    } else {
      cid = it->second;
    }
    cluster_of[i] = cid;
    cluster_residues[size_t(cid)] += proteins[i].size();
    cluster_members[size_t(cid)].push_back(i);
  }

  size_t n_clusters = cluster_residues.size();
  if (n_clusters < 3)
    throw SplitError("cluster_split: only " + std::to_string(n_clusters) +
                     " clusters, cannot form 3 splits");

  std::vector<int> order(n_clusters);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  long total_residues = 0;
  for (long r : cluster_residues) total_residues += r;
  std::array<double, 3> target{};
  for (int s = 0; s < 3; ++s) target[size_t(s)] = double(total_residues) * ratios[size_t(s)] / rsum;

  static const char* kSplitNames[3] = {"train", "val", "test"};
  std::array<double, 3> assigned{0, 0, 0};
  std::array<long, 3> count{0, 0, 0};
  std::vector<int> split_of_cluster(n_clusters, -1);
  for (size_t t = 0; t < order.size(); ++t) {
    size_t remaining = order.size() - t;
    size_t empty = 0;
    for (int s = 0; s < 3; ++s)
      if (count[size_t(s)] == 0) ++empty;
    int pick = -1;
    if (remaining <= empty) {
      // just enough clusters left to cover the empty splits
      double best = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < 3; ++s)
        if (count[size_t(s)] == 0 && target[size_t(s)] - assigned[size_t(s)] > best) {
          best = target[size_t(s)] - assigned[size_t(s)];
          pick = s;
        }
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < 3; ++s) {
        double deficit = target[size_t(s)] - assigned[size_t(s)];
        if (deficit > best) {
          best = deficit;
          pick = s;
        }
      }
    }
    int cid = order[t];
    split_of_cluster[size_t(cid)] = pick;
    assigned[size_t(pick)] += double(cluster_residues[size_t(cid)]);
    count[size_t(pick)] += 1;
  }

  SplitManifest out;
  out.threshold = threshold;
  out.ratios = ratios;
  out.seed = seed;
  for (size_t i = 0; i < n; ++i) {
    out.cluster_of[proteins[i].id] = cluster_of[i];
    out.split_of[proteins[i].id] = kSplitNames[split_of_cluster[size_t(cluster_of[i])]];
  }
  return out;
}

std::string SplitManifest::to_json() const {
  nlohmann::json j;
  j["threshold"] = threshold;
  j["ratios"] = ratios;
  j["seed"] = seed;
  j["cluster_of"] = cluster_of;
  j["split_of"] = split_of;
  return j.dump(2);
}

SplitManifest SplitManifest::from_json(const std::string& text) {
  SplitManifest m;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    m.threshold = j.at("threshold").get<double>();
    auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw SplitError("manifest: ratios must have 3 entries");
    m.ratios = {r[0], r[1], r[2]};
    m.seed = j.at("seed").get<uint64_t>();
    m.cluster_of = j.at("cluster_of").get<std::map<std::string, int>>();
    m.split_of = j.at("split_of").get<std::map<std::string, std::string>>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw SplitError(std::string("manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// synthetic long-tail generator

namespace {

constexpr double kCaDist = 3.8;       // CA-CA virtual bond, Angstrom
constexpr double kMinSeparation = 3.5;  // self-avoidance for |i-j| >= 3
constexpr double kDeg = M_PI / 180.0;
const std::string kBucketAlphabet = "ACDEFGHIKLMNPQRSTVWY";

Eigen::Vector3d place_next(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                           const Eigen::Vector3d& c, double bend, double torsion) {
  Eigen::Vector3d x = (c - b).normalized();
  Eigen::Vector3d n1 = (b - a).cross(c - b);
  double nn = n1.norm();
  if (nn < 1e-9) throw GeometryError("place_next: collinear support points");
  n1 /= nn;
  Eigen::Vector3d y = n1.cross(x);
  Eigen::Vector3d d = -std::cos(bend) * x +
                      std::sin(bend) * (std::cos(torsion) * y + std::sin(torsion) * n1);
  return c + kCaDist * d;
}

int draw_weighted(Rng& rng, const std::vector<double>& cumulative) {
  double u = rng.uniform();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  size_t k = size_t(it - cumulative.begin());
  if (k >= cumulative.size()) k = cumulative.size() - 1;
  return int(k);
}

}  // namespace

int SynthRule::torsion_bucket(double torsion) const {
  double width = (torsion_hi - torsion_lo) / double(torsion_buckets);
  int g = int(std::floor((torsion - torsion_lo) / width));
  return std::clamp(g, 0, torsion_buckets - 1);
}

int SynthRule::bend_bucket(double bend) const { return bend < bend_split ? 0 : 1; }

int SynthRule::label_of(const ingest::Protein& p, int i) const {
  int n = p.size();
  if (i < 0 || i >= n) throw IndexError("SynthRule::label_of: index out of range");
  if (i == 0 || i >= n - 2) return 0;
  const auto CA = [&](int r) { return p.atom(r, ingest::ATOM_CA); };
  double torsion = geom::dihedral(CA(i - 1), CA(i), CA(i + 1), CA(i + 2));
  double bend = geom::bond_angle(CA(i - 1), CA(i), CA(i + 1));
  int label = 2 * torsion_bucket(torsion) + bend_bucket(bend);
  return std::min(label, num_classes - 1);
}

std::string SynthRule::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["torsion_buckets"] = torsion_buckets;
  j["torsion_lo"] = torsion_lo;
  j["torsion_hi"] = torsion_hi;
  j["bend_lo"] = bend_lo;
  j["bend_hi"] = bend_hi;
  j["bend_split"] = bend_split;
  j["bucket_alphabet"] = bucket_alphabet;
  j["terminal_rule"] = "residues 0, N-2, N-1 are class 0";
  return j.dump(2);
}

ingest::Protein backbone_from_ca_trace(const std::vector<Eigen::Vector3d>& ca,
                                       const std::string& sequence, const std::string& id) {
  if (ca.empty()) throw DatasetError("backbone_from_ca_trace: empty trace");
  if (sequence.size() != ca.size())
    throw DatasetError("backbone_from_ca_trace: sequence length mismatch");
  ingest::Protein p;
  p.id = id;
  p.sequence = sequence;
  int n = int(ca.size());
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d u_in, u_out;
    if (n == 1) {
      u_in = Eigen::Vector3d(1, 0, 0);
      u_out = u_in;
    } else {
      u_out = i < n - 1 ? (ca[size_t(i + 1)] - ca[size_t(i)]).normalized()
                        : (ca[size_t(i)] - ca[size_t(i - 1)]).normalized();
      u_in = i > 0 ? (ca[size_t(i)] - ca[size_t(i - 1)]).normalized() : u_out;
    }
    Eigen::Vector3d f1 = u_in + u_out;
    f1 = f1.norm() > 1e-6 ? Eigen::Vector3d(f1.normalized()) : u_out;
    Eigen::Vector3d f2 = u_out - u_in;
    if (f2.norm() < 1e-6) {
      Eigen::Vector3d e = std::abs(f1.z()) < 0.9 ? Eigen::Vector3d(0, 0, 1)
                                                 : Eigen::Vector3d(1, 0, 0);
      f2 = e - e.dot(f1) * f1;
    }
    f2 = (f2 - f2.dot(f1) * f1).normalized();
    Eigen::Vector3d f3 = f1.cross(f2);

    std::array<Eigen::Vector3d, 4> atoms;
    atoms[ingest::ATOM_CA] = ca[size_t(i)];
    atoms[ingest::ATOM_N] = ca[size_t(i)] - 0.57 * f1 + 1.33 * f2 + 0.12 * f3;
    atoms[ingest::ATOM_C] = ca[size_t(i)] + 0.76 * f1 - 1.20 * f2 + 0.55 * f3;
    atoms[ingest::ATOM_O] = atoms[ingest::ATOM_C] + 0.25 * f1 - 0.42 * f2 - 1.10 * f3;
    p.coords.push_back(atoms);
  }
  return p;
}

SynthResult synth_longtail(uint64_t seed, int n_proteins, const std::vector<double>& weights,
                           int min_len, int max_len) {
  size_t K = weights.size();
  if (K < 1) throw DatasetError("synth_longtail: empty class weights");
  if (K > 2 * kBucketAlphabet.size())
    throw DatasetError("synth_longtail: more classes than encodable buckets");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0 || !std::isfinite(w)) throw DatasetError("synth_longtail: negative or bad weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-6) throw DatasetError("synth_longtail: weights must sum to 1");
  if (min_len < 8 || max_len < min_len) throw DatasetError("synth_longtail: bad length range");
  if (n_proteins < 0) throw DatasetError("synth_longtail: negative protein count");

  int G = int((K + 1) / 2);
  SynthRule rule;
  rule.num_classes = int(K);
  rule.torsion_buckets = G;
  rule.torsion_lo = -175.0 * kDeg;
  rule.torsion_hi = 175.0 * kDeg;
  rule.bend_lo = 70.0 * kDeg;
  rule.bend_hi = 145.0 * kDeg;
  rule.bend_split = 107.5 * kDeg;
  rule.bucket_alphabet = kBucketAlphabet.substr(0, size_t(G));

  SynthResult out;
  out.rule = rule;
  if (n_proteins == 0) return out;

  Rng master(seed);
  Rng len_rng = master.fork(1);
  std::vector<int> lengths(static_cast<size_t>(n_proteins));
  long total = 0;
  for (int& L : lengths) {
    L = int(len_rng.uniform_int(min_len, max_len));
    total += L;
  }
  long terminals = 3L * n_proteins;
  long free_res = total - terminals;

  // Interior labels are drawn from weights adjusted for the residues the
  // terminal rule forces into class 0.
  double need0 = weights[0] * double(total) - double(terminals);
  if (need0 < 0)
    throw DatasetError("synth_longtail: class 0 weight below the structural terminal fraction");
  std::vector<double> cumulative(K);
  double acc = 0.0;
  for (size_t k = 0; k < K; ++k) {
    double w = k == 0 ? need0 / double(free_res) : weights[k] * double(total) / double(free_res);
    acc += w;
    cumulative[k] = acc;
  }
  cumulative[K - 1] = 1.0;

  double slot = (rule.torsion_hi - rule.torsion_lo) / double(G);
  double slot_margin = 0.1 * slot;
  double bend_margin = 3.5 * kDeg;

  for (int pi = 0; pi < n_proteins; ++pi) {
    int n = lengths[size_t(pi)];
    Rng prng = master.fork(1000 + uint64_t(pi));
    ingest::AnnotatedProtein ap;
    bool placed = false;
    for (int restart = 0; restart < 200 && !placed; ++restart) {
      std::vector<int> labels(size_t(n), 0);
      for (int j = 1; j <= n - 3; ++j) labels[size_t(j)] = draw_weighted(prng, cumulative);

      auto draw_bend = [&](int vertex) {
        // vertex in [1, n-2]; interior vertices encode their label's bend bit
        if (vertex >= 1 && vertex <= n - 3) {
          int b = labels[size_t(vertex)] % 2;
          return b == 0 ? prng.uniform(rule.bend_lo + bend_margin, rule.bend_split - bend_margin)
                        : prng.uniform(rule.bend_split + bend_margin, rule.bend_hi - bend_margin);
        }
        return prng.uniform(rule.bend_lo + bend_margin, rule.bend_hi - bend_margin);
      };
      auto draw_torsion = [&](int residue) {
        int g = labels[size_t(residue)] / 2;
        double lo = rule.torsion_lo + slot * double(g);
        return prng.uniform(lo + slot_margin, lo + slot - slot_margin);
      };

      std::vector<Eigen::Vector3d> ca;
      ca.reserve(size_t(n));
      ca.emplace_back(0, 0, 0);
      ca.emplace_back(kCaDist, 0, 0);
      bool dead_end = false;
      for (int m = 2; m < n && !dead_end; ++m) {
        bool ok = false;
        for (int attempt = 0; attempt < 120 && !ok; ++attempt) {
          double bend = draw_bend(m - 1);
          Eigen::Vector3d cand;
          if (m == 2) {
            cand = ca[1] + kCaDist * Eigen::Vector3d(std::cos(M_PI - bend),
                                                     std::sin(M_PI - bend), 0.0);
          } else {
            double torsion = draw_torsion(m - 2);
            cand = place_next(ca[size_t(m - 3)], ca[size_t(m - 2)], ca[size_t(m - 1)], bend,
                              torsion);
          }
          ok = true;
          for (int j = 0; j <= m - 3; ++j) {
            if ((cand - ca[size_t(j)]).norm() < kMinSeparation) {
              ok = false;
              break;
            }
          }
          if (ok) ca.push_back(cand);
        }
        if (!ok) dead_end = true;
      }
      if (dead_end) continue;

      std::string seq(size_t(n), rule.bucket_alphabet[0]);
      for (int j = 1; j <= n - 3; ++j)
        seq[size_t(j)] = rule.bucket_alphabet[size_t(labels[size_t(j)] / 2)];
      ap.protein = backbone_from_ca_trace(ca, seq, "synth_" + std::to_string(pi));
      ap.labels = labels;
      placed = true;
    }
    if (!placed)
      throw DatasetError("synth_longtail: could not place a self-avoiding chain (protein " +
                         std::to_string(pi) + ")");
    out.proteins.push_back(std::move(ap));
  }
  return out;
}

}  // namespace metoken::dataops
