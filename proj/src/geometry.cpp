#include "metoken/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>

#include "metoken/common.hpp"
#include "metoken/rng.hpp"

namespace metoken::geom {

namespace {
constexpr double kDegenerate = 1e-9;
}

void FeatureConfig::validate() const {
  if (rbf_count < 2) throw ConfigError("feature.rbf_count must be >= 2");
  if (!(rbf_min < rbf_max)) throw ConfigError("feature.rbf_min must be < feature.rbf_max");
  if (noise_sigma < 0) throw ConfigError("feature.noise_sigma must be >= 0");
}

LocalFrame local_frame(const Eigen::Vector3d& n, const Eigen::Vector3d& ca,
                       const Eigen::Vector3d& c) {
  Eigen::Vector3d u = c - ca;
  double un = u.norm();
  if (un < kDegenerate) throw GeometryError("local_frame: C coincides with CA");
  Eigen::Vector3d e1 = u / un;
  Eigen::Vector3d v = (n - ca) - (n - ca).dot(e1) * e1;
  double vn = v.norm();
  if (vn < kDegenerate) throw GeometryError("local_frame: N, CA, C are collinear");
  Eigen::Vector3d e2 = v / vn;
  Eigen::Vector3d e3 = e1.cross(e2);
  LocalFrame f;
  f.rotation.col(0) = e1;
  f.rotation.col(1) = e2;
  f.rotation.col(2) = e3;
  f.origin = ca;
  return f;
}

double bond_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                  const Eigen::Vector3d& c) {
  Eigen::Vector3d u = a - b;
  Eigen::Vector3d v = c - b;
  if (u.norm() < kDegenerate || v.norm() < kDegenerate)
    throw GeometryError("bond_angle: zero-length arm");
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

double dihedral(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3, const Eigen::Vector3d& p4) {
  Eigen::Vector3d b1 = p2 - p1;
  Eigen::Vector3d b2 = p3 - p2;
  Eigen::Vector3d b3 = p4 - p3;
  double b2n = b2.norm();
  if (b2n < kDegenerate) throw GeometryError("dihedral: middle bond has zero length");
  Eigen::Vector3d n1 = b1.cross(b2);
  Eigen::Vector3d n2 = b2.cross(b3);
  if (n1.norm() < kDegenerate || n2.norm() < kDegenerate)
    throw GeometryError("dihedral: degenerate plane");
  double x = n1.dot(n2);
  double y = n1.cross(n2).dot(b2) / b2n;
  double a = std::atan2(y, x);
  if (a <= -M_PI) a = M_PI;  // range (-pi, pi]
  return a;
}

void rbf_encode(double d, const FeatureConfig& cfg, double* out) {
  double sigma = (cfg.rbf_max - cfg.rbf_min) / cfg.rbf_count;
  double denom = 2.0 * sigma * sigma;
  double step = (cfg.rbf_max - cfg.rbf_min) / (cfg.rbf_count - 1);
  for (int k = 0; k < cfg.rbf_count; ++k) {
    double mu = cfg.rbf_min + step * k;
    out[k] = std::exp(-(d - mu) * (d - mu) / denom);
  }
}

std::vector<double> rbf_encode(double d, const FeatureConfig& cfg) {
  std::vector<double> out(size_t(cfg.rbf_count));
  rbf_encode(d, cfg, out.data());
  return out;
}

Eigen::Vector4d rotation_to_quaternion(const Eigen::Matrix3d& r) {
  Eigen::Matrix3d err = r.transpose() * r - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6)
    throw GeometryError("rotation_to_quaternion: input is not a proper rotation");

  double w, x, y, z;
  double t = r.trace();
  if (t > 0.0) {
    double s = std::sqrt(t + 1.0) * 2.0;
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  Eigen::Vector4d q(w, x, y, z);
  q /= q.norm();
  // Sign convention: w >= 0; at w == 0 the first nonzero of (x, y, z) is positive.
  bool flip = q[0] < 0.0;
  if (q[0] == 0.0) {
    if (q[1] != 0.0) flip = q[1] < 0.0;
    else if (q[2] != 0.0) flip = q[2] < 0.0;
    else flip = q[3] < 0.0;
  }
  if (flip) q = -q;
  return q;
}

Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

namespace {

Eigen::Vector3d unit_or_throw(const Eigen::Vector3d& v, const char* what) {
  double n = v.norm();
  if (n < kDegenerate) throw GeometryError(std::string("zero direction vector: ") + what);
  return v / n;
}

}  // namespace

void node_features(const ingest::Protein& p, int i, const FeatureConfig& cfg, double* out) {
  const int n = p.size();
  if (i < 0 || i >= n) throw IndexError("node_features: residue index out of range");
  const auto N = [&](int r) { return p.atom(r, ingest::ATOM_N); };
  const auto CA = [&](int r) { return p.atom(r, ingest::ATOM_CA); };
  const auto C = [&](int r) { return p.atom(r, ingest::ATOM_C); };
  const auto O = [&](int r) { return p.atom(r, ingest::ATOM_O); };

  double alpha = bond_angle(N(i), CA(i), C(i));
  double beta = i > 0 ? bond_angle(C(i - 1), N(i), CA(i)) : 0.0;
  double gamma = i < n - 1 ? bond_angle(CA(i), C(i), N(i + 1)) : 0.0;
  double phi = i > 0 ? dihedral(C(i - 1), N(i), CA(i), C(i)) : 0.0;
  double psi = i < n - 1 ? dihedral(N(i), CA(i), C(i), N(i + 1)) : 0.0;
  double omega = i < n - 1 ? dihedral(CA(i), C(i), N(i + 1), CA(i + 1)) : 0.0;

  int k = 0;
  for (double a : {alpha, beta, gamma, phi, psi, omega}) {
    out[k++] = std::sin(a);
    out[k++] = std::cos(a);
  }
  LocalFrame f = local_frame(N(i), CA(i), C(i));
  for (const Eigen::Vector3d& atom : {C(i), N(i), O(i)}) {
    rbf_encode((atom - CA(i)).norm(), cfg, out + k);
    k += cfg.rbf_count;
  }
  for (const Eigen::Vector3d& atom : {C(i), N(i), O(i)}) {
    Eigen::Vector3d d = f.rotation.transpose() * unit_or_throw(atom - CA(i), "node direction");
    out[k++] = d[0];
    out[k++] = d[1];
    out[k++] = d[2];
  }
}

void edge_features(const ingest::Protein& p, int i, int j, const FeatureConfig& cfg, double* out) {
  const int n = p.size();
  if (i < 0 || i >= n || j < 0 || j >= n) throw IndexError("edge_features: index out of range");
  if (i == j) throw IndexError("edge_features: self edge");

  LocalFrame fi = local_frame(p.atom(i, ingest::ATOM_N), p.atom(i, ingest::ATOM_CA),
                              p.atom(i, ingest::ATOM_C));
  LocalFrame fj = local_frame(p.atom(j, ingest::ATOM_N), p.atom(j, ingest::ATOM_CA),
                              p.atom(j, ingest::ATOM_C));
  Eigen::Vector4d q = rotation_to_quaternion(fi.rotation.transpose() * fj.rotation);

  int k = 0;
  for (int c = 0; c < 4; ++c) out[k++] = q[c];
  static const ingest::Atom kOrder[4] = {ingest::ATOM_CA, ingest::ATOM_C, ingest::ATOM_N,
                                         ingest::ATOM_O};
  for (ingest::Atom a : kOrder) {
    rbf_encode((p.atom(i, a) - p.atom(j, a)).norm(), cfg, out + k);
    k += cfg.rbf_count;
  }
  for (ingest::Atom a : kOrder) {
    Eigen::Vector3d d =
        fi.rotation.transpose() * unit_or_throw(p.atom(i, a) - p.atom(j, a), "edge direction");
    out[k++] = d[0];
    out[k++] = d[1];
    out[k++] = d[2];
  }
}

ingest::Protein perturb_coords(const ingest::Protein& p, const FeatureConfig& cfg, uint64_t seed) {
  ingest::Protein out = p;
  if (cfg.noise_sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& res : out.coords)
    for (auto& atom : res)
      for (int k = 0; k < 3; ++k) atom[k] += rng.normal(0.0, cfg.noise_sigma);
  return out;
}

}  // namespace metoken::geom
