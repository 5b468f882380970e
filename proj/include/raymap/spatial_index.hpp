#pragma once

#include <cstdint>
#include <vector>

#include "raymap/geo.hpp"

namespace raymap {

struct Neighbor {
  int id = -1;
  double dist2 = 0.0;
};

// Exact k-nearest-neighbor index over 2D points (kd-tree).  Results are
// sorted by ascending squared distance with ties broken by ascending id,
// which makes queries independent of insertion order and identical to a
// brute-force scan using the same comparator.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  explicit SpatialIndex(const std::vector<Point>& points);

  // Up to k neighbors of q; `exclude` removes one id from consideration
  // (pass -1 to keep all).  Returns fewer than k when the index is small.
  std::vector<Neighbor> knn(const Point& q, int k, int exclude = -1) const;

  std::size_t size() const { return points_.size(); }
  const Point& point(int id) const { return points_[static_cast<std::size_t>(id)]; }

 private:
  struct Node {
    int begin = 0;
    int end = 0;    // leaf covers ids_[begin, end)
    int axis = -1;  // -1 for leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end, int depth);
  void search(int node, const Point& q, int k, int exclude,
              std::vector<Neighbor>& heap) const;

  std::vector<Point> points_;
  std::vector<int> ids_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace raymap
