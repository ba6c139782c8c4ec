#include "metoken/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "metoken/common.hpp"

namespace metoken::ingest {

namespace {

const std::map<std::string, char> kThreeToOne = {
    {"ALA", 'A'}, {"ARG", 'R'}, {"ASN", 'N'}, {"ASP", 'D'}, {"CYS", 'C'},
    {"GLN", 'Q'}, {"GLU", 'E'}, {"GLY", 'G'}, {"HIS", 'H'}, {"ILE", 'I'},
    {"LEU", 'L'}, {"LYS", 'K'}, {"MET", 'M'}, {"PHE", 'F'}, {"PRO", 'P'},
    {"SER", 'S'}, {"THR", 'T'}, {"TRP", 'W'}, {"TYR", 'Y'}, {"VAL", 'V'}};

bool valid_code(char c) {
  return c == 'X' || kThreeToOne.end() !=
                         std::find_if(kThreeToOne.begin(), kThreeToOne.end(),
                                      [c](auto& kv) { return kv.second == c; });
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_coord(const std::string& field, int line_no) {
  std::string t = trim(field);
  if (t.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty coordinate field");
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad coordinate '" + t + "'");
  if (!std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ": non-finite coordinate");
  return v;
}

struct ResidueAccum {
  std::string res_name;
  std::array<Eigen::Vector3d, 4> xyz;
  std::array<bool, 4> seen = {false, false, false, false};
  bool complete() const { return seen[0] && seen[1] && seen[2] && seen[3]; }
};

}  // namespace

char three_to_one(const std::string& res_name) {
  auto it = kThreeToOne.find(res_name);
  return it == kThreeToOne.end() ? 'X' : it->second;
}

void Protein::validate() const {
  if (coords.empty()) throw DatasetError("protein '" + id + "': empty");
  if (sequence.size() != coords.size())
    throw DatasetError("protein '" + id + "': sequence length " +
                       std::to_string(sequence.size()) + " != residue count " +
                       std::to_string(coords.size()));
  for (char c : sequence)
    if (!valid_code(c))
      throw DatasetError("protein '" + id + "': invalid amino-acid code '" + std::string(1, c) + "'");
  for (const auto& res : coords)
    for (const auto& a : res)
      for (int k = 0; k < 3; ++k)
        if (!std::isfinite(a[k]))
          throw DatasetError("protein '" + id + "': non-finite coordinate");
}

ParseResult parse_backbone(const std::string& pdb_text, const std::string& chain) {
  if (trim(pdb_text).empty()) throw ParseError("empty input");

  // key = (resSeq, insertion code); atoms keep the first occurrence.
  std::map<std::pair<int, char>, ResidueAccum> residues;
  std::string want_chain = chain;

  std::istringstream in(pdb_text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("ENDMDL", 0) == 0) break;
    if (line.rfind("ATOM", 0) != 0 || line.size() < 6 || line.substr(0, 6) != "ATOM  ") continue;
    if (line.size() < 54)
      throw ParseError("line " + std::to_string(line_no) + ": ATOM record too short");

    std::string atom_name = trim(line.substr(12, 4));
    int slot = -1;
    if (atom_name == "N") slot = ATOM_N;
    else if (atom_name == "CA") slot = ATOM_CA;
    else if (atom_name == "C") slot = ATOM_C;
    else if (atom_name == "O") slot = ATOM_O;
    if (slot < 0) continue;

    char alt_loc = line[16];
    if (alt_loc != ' ' && alt_loc != 'A') continue;

    std::string chain_here(1, line[21]);
    if (want_chain.empty()) want_chain = chain_here;
    if (chain_here != want_chain) continue;

    std::string res_seq_str = trim(line.substr(22, 4));
    int res_seq = 0;
    auto [p, ec] = std::from_chars(res_seq_str.data(), res_seq_str.data() + res_seq_str.size(), res_seq);
    if (ec != std::errc() || p != res_seq_str.data() + res_seq_str.size())
      throw ParseError("line " + std::to_string(line_no) + ": bad residue number '" + res_seq_str + "'");
    char icode = line.size() > 26 ? line[26] : ' ';

    Eigen::Vector3d xyz(parse_coord(line.substr(30, 8), line_no),
                        parse_coord(line.substr(38, 8), line_no),
                        parse_coord(line.substr(46, 8), line_no));

    ResidueAccum& acc = residues[{res_seq, icode}];
    if (acc.res_name.empty()) acc.res_name = trim(line.substr(17, 3));
    if (!acc.seen[size_t(slot)]) {
      acc.xyz[size_t(slot)] = xyz;
      acc.seen[size_t(slot)] = true;
    }
  }

  ParseResult out;
  out.protein.chain_id = want_chain.empty() ? "A" : want_chain;
  for (auto& [key, acc] : residues) {  // std::map iterates in ascending key order
    if (!acc.complete()) {
      ++out.dropped_residues;
      continue;
    }
    out.protein.sequence.push_back(three_to_one(acc.res_name));
    out.protein.coords.push_back(acc.xyz);
  }
  if (out.protein.coords.empty()) throw ParseError("no complete residues found");
  out.protein.validate();
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_json_string(std::string& out, const std::string& s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

}  // namespace

void write_dataset(const std::vector<AnnotatedProtein>& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot open '" + path + "' for writing");
  for (const auto& ap : data) {
    const Protein& p = ap.protein;
    std::string line = "{\"id\":";
    append_json_string(line, p.id);
    line += ",\"chain_id\":";
    append_json_string(line, p.chain_id);
    line += ",\"sequence\":";
    append_json_string(line, p.sequence);
    line += ",\"coords\":[";
    for (int i = 0; i < p.size(); ++i) {
      if (i) line += ",";
      line += "[";
      for (int a = 0; a < 4; ++a) {
        if (a) line += ",";
        line += "[";
        for (int k = 0; k < 3; ++k) {
          if (k) line += ",";
          line += fmt_double(p.coords[size_t(i)][size_t(a)][k]);
        }
        line += "]";
      }
      line += "]";
    }
    line += "],\"labels\":[";
    for (size_t i = 0; i < ap.labels.size(); ++i) {
      if (i) line += ",";
      line += std::to_string(ap.labels[i]);
    }
    line += "]}";
    out << line << "\n";
    if (!out) throw DatasetError("write failure on '" + path + "'");
  }
}

std::vector<AnnotatedProtein> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path + "'");
  std::vector<AnnotatedProtein> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::string where = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DatasetError(where + ": " + e.what());
    }
    for (const char* key : {"id", "sequence", "coords", "labels"})
      if (!j.contains(key)) throw DatasetError(where + ": missing key '" + key + "'");

    AnnotatedProtein ap;
    try {
      ap.protein.id = j["id"].get<std::string>();
      ap.protein.sequence = j["sequence"].get<std::string>();
      ap.protein.chain_id = j.value("chain_id", std::string("A"));
      const auto& coords = j["coords"];
      for (const auto& res : coords) {
        if (!res.is_array() || res.size() != 4)
          throw DatasetError(where + ": residue entry is not 4 atoms");
        std::array<Eigen::Vector3d, 4> xyz;
        for (size_t a = 0; a < 4; ++a) {
          if (!res[a].is_array() || res[a].size() != 3)
            throw DatasetError(where + ": atom entry is not a 3-vector");
          for (size_t k = 0; k < 3; ++k) xyz[a][Eigen::Index(k)] = res[a][k].get<double>();
        }
        ap.protein.coords.push_back(xyz);
      }
      ap.labels = j["labels"].get<std::vector<int>>();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetError(where + ": " + e.what());
    }
    if (ap.labels.size() != ap.protein.coords.size())
      throw DatasetError(where + ": labels length " + std::to_string(ap.labels.size()) +
                         " != residue count " + std::to_string(ap.protein.coords.size()));
    for (int lab : ap.labels)
      if (lab < 0) throw DatasetError(where + ": negative class id");
    try {
      ap.protein.validate();
    } catch (const Error& e) {
      throw DatasetError(where + ": " + e.what());
    }
    out.push_back(std::move(ap));
  }
  return out;
}

}  // namespace metoken::ingest
