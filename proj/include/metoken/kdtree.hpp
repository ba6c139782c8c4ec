#pragma once

#include <Eigen/Core>
#include <vector>

namespace metoken::pgraph {

// Exact 3-d spatial index over a fixed point set. Query results are defined
// to match a brute-force scan, distance ties broken by lower point index.
// Queries by point index exclude the query point itself.
class KnnIndex {
 public:
  explicit KnnIndex(std::vector<Eigen::Vector3d> points);  // throws IndexError if empty

  int size() const { return int(points_.size()); }
  const Eigen::Vector3d& point(int i) const { return points_[size_t(i)]; }

  // k nearest neighbors of points_[query], ordered by (distance, index).
  // Returns fewer than k when the set is small.
  std::vector<int> k_nearest(int query, int k) const;

  // All j != query with |p_j - p_query| <= radius, ascending index.
  std::vector<int> in_radius(int query, double radius) const;

  // Same queries for an arbitrary point; no self exclusion.
  std::vector<int> k_nearest(const Eigen::Vector3d& q, int k, int exclude = -1) const;
  std::vector<int> in_radius(const Eigen::Vector3d& q, double radius, int exclude = -1) const;

 private:
  struct KdNode {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  int build(int begin, int end, int depth);
  void search_knn(int node, const Eigen::Vector3d& q, int k, int exclude,
                  std::vector<std::pair<double, int>>& heap) const;
  void search_radius(int node, const Eigen::Vector3d& q, double r2, int exclude,
                     std::vector<int>& out) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;  // permutation, leaves own contiguous ranges
  std::vector<KdNode> nodes_;
  int root_ = -1;
};

}  // namespace metoken::pgraph
