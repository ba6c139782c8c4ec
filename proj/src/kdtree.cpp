#include "metoken/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metoken/common.hpp"

namespace metoken::pgraph {

namespace {
constexpr int kLeafSize = 16;

// Candidate ordering: smaller distance first, lower index breaks ties.
inline bool closer(const std::pair<double, int>& a, const std::pair<double, int>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}
}  // namespace

KnnIndex::KnnIndex(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  if (points_.empty()) throw IndexError("KnnIndex: empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  root_ = build(0, int(points_.size()), 0);
}

int KnnIndex::build(int begin, int end, int depth) {
  KdNode node;
  node.begin = begin;
  node.end = end;
  if (end - begin <= kLeafSize) {
    nodes_.push_back(node);
    return int(nodes_.size()) - 1;
  }
  int axis = depth % 3;
  int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     double va = points_[size_t(a)][axis], vb = points_[size_t(b)][axis];
                     return va < vb || (va == vb && a < b);
                   });
  node.axis = axis;
  node.split = points_[size_t(order_[size_t(mid)])][axis];
  int self = int(nodes_.size());
  nodes_.push_back(node);
  int left = build(begin, mid, depth + 1);
  int right = build(mid, end, depth + 1);
  nodes_[size_t(self)].left = left;
  nodes_[size_t(self)].right = right;
  return self;
}

void KnnIndex::search_knn(int node_id, const Eigen::Vector3d& q, int k, int exclude,
                          std::vector<std::pair<double, int>>& heap) const {
  const KdNode& node = nodes_[size_t(node_id)];
  if (node.axis < 0) {
    for (int t = node.begin; t < node.end; ++t) {
      int idx = order_[size_t(t)];
      if (idx == exclude) continue;
      double d2 = (points_[size_t(idx)] - q).squaredNorm();
      std::pair<double, int> cand{d2, idx};
      if (int(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  double delta = q[node.axis] - node.split;
  int near = delta <= 0.0 ? node.left : node.right;
  int far = delta <= 0.0 ? node.right : node.left;
  search_knn(near, q, k, exclude, heap);
  // The far side may still hold an equal-distance candidate with a lower
  // index, so prune only on strict inequality.
  if (int(heap.size()) < k || delta * delta <= heap.front().first)
    search_knn(far, q, k, exclude, heap);
}

void KnnIndex::search_radius(int node_id, const Eigen::Vector3d& q, double r2, int exclude,
                             std::vector<int>& out) const {
  const KdNode& node = nodes_[size_t(node_id)];
  if (node.axis < 0) {
    for (int t = node.begin; t < node.end; ++t) {
      int idx = order_[size_t(t)];
      if (idx == exclude) continue;
      if ((points_[size_t(idx)] - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  double delta = q[node.axis] - node.split;
  int near = delta <= 0.0 ? node.left : node.right;
  int far = delta <= 0.0 ? node.right : node.left;
  search_radius(near, q, r2, exclude, out);
  if (delta * delta <= r2) search_radius(far, q, r2, exclude, out);
}

std::vector<int> KnnIndex::k_nearest(const Eigen::Vector3d& q, int k, int exclude) const {
  std::vector<std::pair<double, int>> heap;
  if (k <= 0) return {};
  heap.reserve(size_t(k) + 1);
  search_knn(root_, q, k, exclude, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  std::vector<int> out;
  out.reserve(heap.size());
  for (auto& [d2, idx] : heap) out.push_back(idx);
  return out;
}

std::vector<int> KnnIndex::in_radius(const Eigen::Vector3d& q, double radius, int exclude) const {
  std::vector<int> out;
  if (radius < 0) return out;
  search_radius(root_, q, radius * radius, exclude, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> KnnIndex::k_nearest(int query, int k) const {
  if (query < 0 || query >= size()) throw IndexError("KnnIndex::k_nearest: bad query index");
  return k_nearest(points_[size_t(query)], k, query);
}

std::vector<int> KnnIndex::in_radius(int query, double radius) const {
  if (query < 0 || query >= size()) throw IndexError("KnnIndex::in_radius: bad query index");
  return in_radius(points_[size_t(query)], radius, query);
}

}  // namespace metoken::pgraph
