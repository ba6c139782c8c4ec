#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

namespace metoken::ingest {

// Backbone atom slots, fixed order.
enum Atom { ATOM_N = 0, ATOM_CA = 1, ATOM_C = 2, ATOM_O = 3 };

// One chain with per-residue backbone coordinates. Only residues with all
// four backbone atoms present are ever stored.
struct Protein {
  std::string id;
  std::string sequence;  // one-letter codes, 20 canonical + 'X'
  std::vector<std::array<Eigen::Vector3d, 4>> coords;  // [N][N,CA,C,O]
  std::string chain_id = "A";

  int size() const { return int(coords.size()); }
  const Eigen::Vector3d& atom(int residue, Atom a) const {
    return coords[size_t(residue)][size_t(a)];
  }
  void validate() const;  // throws DatasetError on invariant violation
};

struct AnnotatedProtein {
  Protein protein;
  std::vector<int> labels;  // per residue, 0 = "No modification"
};

struct ParseResult {
  Protein protein;
  int dropped_residues = 0;  // residues missing one of N/CA/C/O
};

// Parse fixed-column PDB text. Consumes ATOM records for atoms N/CA/C/O with
// altLoc blank or 'A'; other records (HEADER, REMARK, HETATM, ...) are
// ignored. Residues are emitted in ascending residue-sequence-number order;
// incomplete residues are dropped and counted. If `chain` is empty the chain
// of the first ATOM record is used. Stops at the first ENDMDL.
ParseResult parse_backbone(const std::string& pdb_text, const std::string& chain = "");

// JSON-Lines dataset, one object per protein:
//   {"id": ..., "sequence": ..., "coords": [[..4x3..]...], "labels": [...],
//    "chain_id": ...}
// Floats are written with 17 significant digits so read(write(x)) == x.
std::vector<AnnotatedProtein> read_dataset(const std::string& path);
void write_dataset(const std::vector<AnnotatedProtein>& data, const std::string& path);

char three_to_one(const std::string& res_name);

}  // namespace metoken::ingest
