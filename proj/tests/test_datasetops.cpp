#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "metoken/common.hpp"
#include "metoken/datasetops.hpp"
#include "test_util.hpp"

using namespace metoken;

namespace {

std::string random_sequence(Rng& rng, int n) {
  static const char* alpha = "ACDEFGHIKLMNPQRSTVWY";
  std::string s(size_t(n), 'A');
  for (int i = 0; i < n; ++i) s[size_t(i)] = alpha[rng.uniform_int(0, 19)];
  return s;
}

std::string mutate(Rng& rng, std::string s, double rate) {
  static const char* alpha = "ACDEFGHIKLMNPQRSTVWY";
  for (char& c : s)
    if (rng.uniform() < rate) c = alpha[rng.uniform_int(0, 19)];
  return s;
}

ingest::Protein sequence_only_protein(const std::string& seq, const std::string& id) {
  std::vector<Eigen::Vector3d> ca;
  for (size_t i = 0; i < seq.size(); ++i) ca.emplace_back(3.8 * double(i), 0.0, 0.0);
  return dataops::backbone_from_ca_trace(ca, seq, id);
}

}  // namespace

TEST_SUITE_BEGIN("datasetops");

TEST_CASE("reduce_classes threshold semantics") {
  std::map<std::string, long> counts{{"Phosphorylation", 500000},
                                     {"Tiny", 99},
                                     {"No modification", 1000000}};
  dataops::ClassMap cm = dataops::reduce_classes(counts);
  CHECK(cm.id_to_name.front() == "No modification");
  CHECK(cm.id_to_name.back() == "rare sites");
  CHECK(cm.name_to_id.at("Tiny") == cm.name_to_id.at("rare sites"));
  CHECK(cm.name_to_id.at("Phosphorylation") == 1);

  // exactly at the threshold is kept ("fewer than" is strict)
  std::map<std::string, long> edge{{"A", 100}, {"B", 99}, {"No modification", 5}};
  dataops::ClassMap cm2 = dataops::reduce_classes(edge);
  CHECK(cm2.name_to_id.at("A") != cm2.name_to_id.at("rare sites"));
  CHECK(cm2.name_to_id.at("B") == cm2.name_to_id.at("rare sites"));
  // "No modification" is never merged regardless of count
  CHECK(cm2.name_to_id.at("No modification") == 0);
}

TEST_CASE("a 73-class table with 48 rare classes reduces to 26") {
  std::map<std::string, long> counts;
  counts["No modification"] = 1000000;
  for (int i = 0; i < 24; ++i) counts["Common" + std::to_string(i)] = 1000 + 10 * i;
  for (int i = 0; i < 48; ++i) counts["Rare" + std::to_string(i)] = 1 + i;
  REQUIRE(counts.size() == 73);
  dataops::ClassMap cm = dataops::reduce_classes(counts);
  CHECK(cm.id_to_name.size() == 26);
  std::set<int> ids;
  for (auto& [name, id] : cm.name_to_id) ids.insert(id);
  CHECK(ids.size() == 26);
  for (int i = 0; i < 48; ++i)
    CHECK(cm.name_to_id.at("Rare" + std::to_string(i)) == 25);
  CHECK(cm.to_json().find("rare sites") != std::string::npos);
}

TEST_CASE("reduce_classes is idempotent on already-reduced counts") {
  std::map<std::string, long> counts;
  counts["No modification"] = 900;
  counts["Phosphorylation"] = 800;
  counts["Acetylation"] = 500;
  for (int i = 0; i < 7; ++i) counts["Small" + std::to_string(i)] = 5 + i;
  dataops::ClassMap first = dataops::reduce_classes(counts);

  std::map<std::string, long> reduced_counts;
  for (auto& [name, count] : counts) {
    auto id = first.name_to_id.at(name);
    reduced_counts[first.id_to_name[size_t(id)]] += count;
  }
  dataops::ClassMap second = dataops::reduce_classes(reduced_counts);
  CHECK(second.id_to_name == first.id_to_name);
  for (const std::string& name : first.id_to_name)
    CHECK(second.name_to_id.at(name) == first.name_to_id.at(name));
}

TEST_CASE("seq_identity fixtures") {
  CHECK(dataops::seq_identity("ACDEFG", "ACDEFG") == 1.0);
  CHECK(dataops::seq_identity("AAAA", "CCCC") == 0.0);
  CHECK(dataops::seq_identity("ACDEFG", "ACDEYG") == doctest::Approx(5.0 / 6.0));
  CHECK_THROWS_AS(dataops::seq_identity("", "AA"), DatasetError);
}

TEST_CASE("seq_identity handles gaps and stays symmetric") {
  // one interior deletion: 7 matched columns of 8
  CHECK(dataops::seq_identity("ACDEFGHI", "ACDFGHI") == doctest::Approx(7.0 / 8.0));
  Rng rng(3);
  for (int t = 0; t < 60; ++t) {
    std::string a = random_sequence(rng, 10 + int(rng.uniform_int(0, 40)));
    std::string b = mutate(rng, a, rng.uniform(0.0, 0.8));
    if (rng.uniform() < 0.5) b = b.substr(0, b.size() - rng.uniform_int(0, 5));
    double ab = dataops::seq_identity(a, b);
    double ba = dataops::seq_identity(b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("identity prefilter bound is sound") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::string a = random_sequence(rng, 8 + int(rng.uniform_int(0, 60)));
    std::string b;
    double mode = rng.uniform();
    if (mode < 0.4) b = mutate(rng, a, rng.uniform(0.0, 0.6));
    else if (mode < 0.7) b = random_sequence(rng, 8 + int(rng.uniform_int(0, 60)));
    else {
      b = a.substr(size_t(rng.uniform_int(0, int(a.size()) / 2)));
      if (b.empty()) b = "A";
    }
    double bound = dataops::identity_upper_bound(a, b);
    double exact = dataops::seq_identity(a, b);
    CHECK(bound >= exact - 1e-12);
  }
}

TEST_CASE("cluster_split fixtures") {
  Rng rng(7);
  // all-identical sequences collapse into one cluster: not splittable
  std::vector<ingest::Protein> same;
  std::string seq = random_sequence(rng, 30);
  for (int i = 0; i < 6; ++i) same.push_back(sequence_only_protein(seq, "p" + std::to_string(i)));
  CHECK_THROWS_AS(dataops::cluster_split(same), SplitError);
  CHECK_THROWS_AS(dataops::cluster_split({same[0], same[1]}), SplitError);

  // three mutually dissimilar proteins: three clusters, one per split
  std::vector<ingest::Protein> three{sequence_only_protein(random_sequence(rng, 40), "a"),
                                     sequence_only_protein(random_sequence(rng, 40), "b"),
                                     sequence_only_protein(random_sequence(rng, 40), "c")};
  dataops::SplitManifest m = dataops::cluster_split(three, 0.40, {0.8, 0.1, 0.1}, 1);
  std::set<int> clusters;
  std::set<std::string> splits;
  for (auto& [id, cid] : m.cluster_of) clusters.insert(cid);
  for (auto& [id, s] : m.split_of) splits.insert(s);
  CHECK(clusters.size() == 3);
  CHECK(splits == std::set<std::string>{"train", "val", "test"});
}

TEST_CASE("cluster_split keeps mutated families together; audit finds no leaks") {
  Rng rng(11);
  std::vector<ingest::Protein> proteins;
  int id = 0;
  for (int fam = 0; fam < 12; ++fam) {
    std::string base = random_sequence(rng, 50);
    int members = 2 + int(rng.uniform_int(0, 3));
    for (int mem = 0; mem < members; ++mem)
      proteins.push_back(
          sequence_only_protein(mutate(rng, base, 0.15), "f" + std::to_string(id++)));
  }
  dataops::SplitManifest m = dataops::cluster_split(proteins, 0.40, {0.8, 0.1, 0.1}, 3);

  // exhaustive pairwise audit: no cross-split pair at or above the threshold
  for (size_t i = 0; i < proteins.size(); ++i)
    for (size_t j = i + 1; j < proteins.size(); ++j) {
      const std::string& si = m.split_of.at(proteins[i].id);
      const std::string& sj = m.split_of.at(proteins[j].id);
      if (si == sj) continue;
      CHECK(dataops::seq_identity(proteins[i].sequence, proteins[j].sequence) < 0.40);
    }

  // same-family members always land in the same split
  for (size_t i = 0; i < proteins.size(); ++i)
    for (size_t j = i + 1; j < proteins.size(); ++j)
      if (dataops::seq_identity(proteins[i].sequence, proteins[j].sequence) >= 0.40)
        CHECK(m.split_of.at(proteins[i].id) == m.split_of.at(proteins[j].id));

  // round-trip through JSON
  dataops::SplitManifest back = dataops::SplitManifest::from_json(m.to_json());
  CHECK(back.split_of == m.split_of);
  CHECK(back.cluster_of == m.cluster_of);
  CHECK(back.threshold == m.threshold);
}

TEST_CASE("synth_longtail determinism and degenerate weights") {
  std::vector<double> all_zero(26, 0.0);
  all_zero[0] = 1.0;
  dataops::SynthResult a = dataops::synth_longtail(5, 8, all_zero, 12, 20);
  for (const auto& ap : a.proteins)
    for (int lab : ap.labels) CHECK(lab == 0);

  std::vector<double> w(26, 0.70 / 25.0);
  w[0] = 0.30;
  dataops::SynthResult r1 = dataops::synth_longtail(9, 10, w, 12, 24);
  dataops::SynthResult r2 = dataops::synth_longtail(9, 10, w, 12, 24);
  REQUIRE(r1.proteins.size() == r2.proteins.size());
  for (size_t i = 0; i < r1.proteins.size(); ++i) {
    CHECK(r1.proteins[i].labels == r2.proteins[i].labels);
    CHECK(r1.proteins[i].protein.sequence == r2.proteins[i].protein.sequence);
    for (int res = 0; res < r1.proteins[i].protein.size(); ++res)
      for (int at = 0; at < 4; ++at)
        CHECK((r1.proteins[i].protein.coords[size_t(res)][size_t(at)] -
               r2.proteins[i].protein.coords[size_t(res)][size_t(at)])
                  .norm() == 0.0);
  }

  std::vector<double> bad(26, 1.0 / 26.0);
  bad[3] += 0.5;
  CHECK_THROWS_AS(dataops::synth_longtail(1, 3, bad), DatasetError);
  std::vector<double> infeasible(26, 0.0);
  infeasible[1] = 1.0;  // class 0 cannot absorb the structural terminal residues
  CHECK_THROWS_AS(dataops::synth_longtail(1, 3, infeasible, 12, 20), DatasetError);
  CHECK_THROWS_AS(dataops::synth_longtail(1, 3, std::vector<double>(60, 1.0 / 60.0)),
                  DatasetError);
}

TEST_CASE("synth_longtail labels follow the recorded rule exactly") {
  std::vector<double> w(26, 0.0);
  w[0] = 0.45;
  double rest = 0.55 / 25.0;
  for (int k = 1; k < 26; ++k) w[size_t(k)] = rest;
  dataops::SynthResult res = dataops::synth_longtail(17, 40, w, 16, 40);
  CHECK(res.proteins.size() == 40);
  for (const auto& ap : res.proteins) {
    int n = ap.protein.size();
    CHECK(ap.labels[0] == 0);
    CHECK(ap.labels[size_t(n - 1)] == 0);
    CHECK(ap.labels[size_t(n - 2)] == 0);
    for (int i = 0; i < n; ++i)
      CHECK(ap.labels[size_t(i)] == res.rule.label_of(ap.protein, i));
    // amino-acid letters mirror the torsion bucket of the label
    for (int i = 1; i <= n - 3; ++i) {
      int g = ap.labels[size_t(i)] / 2;
      CHECK(ap.protein.sequence[size_t(i)] == res.rule.bucket_alphabet[size_t(g)]);
    }
  }
  // chains are self-avoiding at the generator's separation for |i-j| >= 3
  for (const auto& ap : res.proteins) {
    for (int i = 0; i < ap.protein.size(); ++i)
      for (int j = i + 3; j < ap.protein.size(); ++j)
        CHECK((ap.protein.atom(i, ingest::ATOM_CA) - ap.protein.atom(j, ingest::ATOM_CA)).norm() >=
              3.5 - 1e-9);
  }
}

TEST_CASE("synth_longtail hits requested class frequencies within 2% at 1e5 residues") {
  std::vector<double> w(26);
  w[0] = 0.40;
  double mass = 0.0, cur = 1.0;
  for (int k = 1; k < 26; ++k) {
    w[size_t(k)] = cur;
    mass += cur;
    cur *= 0.85;
  }
  for (int k = 1; k < 26; ++k) w[size_t(k)] *= 0.60 / mass;

  int n_proteins = 2900;  // ~1e5 residues at mean length 36
  dataops::SynthResult res = dataops::synth_longtail(23, n_proteins, w, 24, 48);
  std::vector<long> counts(26, 0);
  long total = 0;
  for (const auto& ap : res.proteins)
    for (int lab : ap.labels) {
      ++counts[size_t(lab)];
      ++total;
    }
  CHECK(total >= 70000);
  for (int k = 0; k < 26; ++k) {
    double freq = double(counts[size_t(k)]) / double(total);
    CHECK(std::abs(freq - w[size_t(k)]) < 0.02);
  }
}

TEST_CASE("backbone_from_ca_trace produces valid proteins with plausible bonds") {
  Rng rng(29);
  ingest::Protein p = testutil::random_chain_protein(rng, 25);
  p.validate();
  for (int i = 0; i < p.size(); ++i) {
    CHECK((p.atom(i, ingest::ATOM_N) - p.atom(i, ingest::ATOM_CA)).norm() ==
          doctest::Approx(1.452).epsilon(0.02));
    CHECK((p.atom(i, ingest::ATOM_C) - p.atom(i, ingest::ATOM_CA)).norm() ==
          doctest::Approx(1.523).epsilon(0.02));
    if (i + 1 < p.size())
      CHECK((p.atom(i + 1, ingest::ATOM_CA) - p.atom(i, ingest::ATOM_CA)).norm() ==
            doctest::Approx(3.8).epsilon(1e-9));
  }
}

TEST_SUITE_END();
