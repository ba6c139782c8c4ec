#pragma once

#include <Eigen/Core>
#include <vector>

#include "metoken/ingest.hpp"

namespace metoken::geom {

// Residue-local orthonormal frame built from the N, CA, C atoms.
struct LocalFrame {
  Eigen::Matrix3d rotation;  // columns (e1, e2, e3), det +1
  Eigen::Vector3d origin;    // CA position
};

struct FeatureConfig {
  int rbf_count = 16;
  double rbf_min = 2.0;   // Angstrom
  double rbf_max = 22.0;  // Angstrom
  double noise_sigma = 0.0005;

  int node_dim() const { return 12 + 3 * rbf_count + 9; }
  int edge_dim() const { return 4 + 4 * rbf_count + 12; }
  void validate() const;
};

// e1 = normalize(c - ca), e2 = Gram-Schmidt of (n - ca) against e1, e3 = e1 x e2.
LocalFrame local_frame(const Eigen::Vector3d& n, const Eigen::Vector3d& ca,
                       const Eigen::Vector3d& c);

// Angle at vertex b, in [0, pi].
double bond_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                  const Eigen::Vector3d& c);

// Signed torsion in (-pi, pi], right-hand rule about p3 - p2.
double dihedral(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3, const Eigen::Vector3d& p4);

// Gaussian RBF bank: centers linearly spaced on [rbf_min, rbf_max],
// sigma = (rbf_max - rbf_min) / rbf_count.
void rbf_encode(double d, const FeatureConfig& cfg, double* out);
std::vector<double> rbf_encode(double d, const FeatureConfig& cfg);

// Unit quaternion (w, x, y, z), sign fixed by w >= 0 (if w == 0, first
// nonzero of x, y, z positive). Input must be a proper rotation within 1e-6.
Eigen::Vector4d rotation_to_quaternion(const Eigen::Matrix3d& r);
Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q);

// Node feature layout (node_dim() total):
//   [sin/cos of alpha, beta, gamma, phi, psi, omega]                (12)
//   [RBF(|w_i - CA_i|) for w in {C, N, O}]                  (3*rbf_count)
//   [Q_i^T (w_i - CA_i)/|..| for w in {C, N, O}]                     (9)
// Boundary residues use raw angle 0.0 for the undefined inter-residue
// angles (beta/phi at i = 0; gamma/psi/omega at i = N-1).
void node_features(const ingest::Protein& p, int i, const FeatureConfig& cfg, double* out);

// Edge feature layout (edge_dim() total), frame of residue i:
//   [quaternion of Q_i^T Q_j]                                        (4)
//   [RBF(|w_i - w_j|) for w in {CA, C, N, O}]               (4*rbf_count)
//   [Q_i^T (w_i - w_j)/|..| for w in {CA, C, N, O}]                 (12)
void edge_features(const ingest::Protein& p, int i, int j, const FeatureConfig& cfg, double* out);

// Gaussian coordinate noise, stddev cfg.noise_sigma, deterministic per seed.
ingest::Protein perturb_coords(const ingest::Protein& p, const FeatureConfig& cfg, uint64_t seed);

}  // namespace metoken::geom
