#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metoken/ingest.hpp"

namespace metoken::dataops {

// Rare-class consolidation: classes under the sample threshold collapse into
// "rare sites"; "No modification" is always kept as its own class. Reduced
// ids: 0 = "No modification", kept classes by descending count (ties by
// name), "rare sites" last.
struct ClassMap {
  std::map<std::string, int> name_to_id;
  std::vector<std::string> id_to_name;
  std::string to_json() const;
};

ClassMap reduce_classes(const std::map<std::string, long>& counts, long threshold = 100);

// Global alignment identity: Needleman-Wunsch-Gotoh with match +1,
// mismatch 0, affine gaps (first gap column -10, each further column -1);
// identity = matches / alignment length (gap columns included).
double seq_identity(const std::string& a, const std::string& b);

// Sound upper bound on seq_identity, cheap to evaluate. Combines a
// character-composition bound with a 5-mer count bound; never below the
// true identity, so filtering on it cannot drop a qualifying pair.
double identity_upper_bound(const std::string& a, const std::string& b);

struct SplitManifest {
  double threshold = 0.4;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  uint64_t seed = 0;
  std::map<std::string, int> cluster_of;          // protein id -> cluster id
  std::map<std::string, std::string> split_of;    // protein id -> train|val|test
  std::string to_json() const;
  static SplitManifest from_json(const std::string& text);
};

// Single-linkage clusters (identity >= threshold links two proteins), then
// clusters are shuffled by seed and assigned to splits to approximate the
// ratios by residue count. Every cluster lands whole inside one split.
SplitManifest cluster_split(const std::vector<ingest::Protein>& proteins, double threshold = 0.40,
                            std::array<double, 3> ratios = {0.8, 0.1, 0.1}, uint64_t seed = 0);

// Recorded generating rule of the synthetic task. Labels are a deterministic
// function of backbone geometry: the CA-trace torsion bucket at a residue
// (mirrored into its amino-acid letter) crossed with the CA bend-angle
// bucket; the first and last two residues are always class 0.
struct SynthRule {
  int num_classes = 0;
  int torsion_buckets = 0;            // G = ceil(num_classes / 2)
  double torsion_lo = 0, torsion_hi = 0;  // radians, slot margins excluded
  double bend_lo = 0, bend_hi = 0;        // radians
  double bend_split = 0;                  // boundary between the two bend buckets
  std::string bucket_alphabet;            // letter g encodes torsion bucket g

  int torsion_bucket(double torsion) const;
  int bend_bucket(double bend) const;
  // Recomputes the label from coordinates alone; matches the generated labels.
  int label_of(const ingest::Protein& p, int i) const;
  std::string to_json() const;
};

struct SynthResult {
  std::vector<ingest::AnnotatedProtein> proteins;
  SynthRule rule;
};

// Self-avoiding random backbones (CA-CA 3.8 A) whose per-residue labels are
// drawn i.i.d. from `class_weights` and then realized in the local geometry
// so that the recorded rule reproduces them exactly.
SynthResult synth_longtail(uint64_t seed, int n_proteins, const std::vector<double>& class_weights,
                           int min_len = 24, int max_len = 60);

// Places N, C, O atoms around a CA trace with fixed local offsets; used by
// the synthetic generator and test fixtures.
ingest::Protein backbone_from_ca_trace(const std::vector<Eigen::Vector3d>& ca,
                                       const std::string& sequence, const std::string& id);

}  // namespace metoken::dataops
