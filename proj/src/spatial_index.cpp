#include "raymap/spatial_index.hpp"

#include <algorithm>
#include <numeric>

#include "raymap/errors.hpp"

namespace raymap {

namespace {

constexpr int kLeafSize = 16;

inline bool better(const Neighbor& a, const Neighbor& b) {
  if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
  return a.id < b.id;
}

}  // namespace

SpatialIndex::SpatialIndex(const std::vector<Point>& points) : points_(points) {
  if (points_.empty()) throw ValidationError("SpatialIndex: at least one point required");
  ids_.resize(points_.size());
  std::iota(ids_.begin(), ids_.end(), 0);
  if (!ids_.empty()) root_ = build(0, static_cast<int>(ids_.size()), 0);
}

int SpatialIndex::build(int begin, int end, int depth) {
  Node node;
  node.begin = begin;
  node.end = end;
  if (end - begin <= kLeafSize) {
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  const int axis = depth % 2;
  const int mid = begin + (end - begin) / 2;
  auto coord = [&](int id) {
    return axis == 0 ? points_[static_cast<std::size_t>(id)].x
                     : points_[static_cast<std::size_t>(id)].y;
  };
  std::nth_element(ids_.begin() + begin, ids_.begin() + mid, ids_.begin() + end,
                   [&](int a, int b) {
                     const double ca = coord(a);
                     const double cb = coord(b);
                     if (ca != cb) return ca < cb;
                     return a < b;
                   });
  node.axis = axis;
  node.split = coord(ids_[static_cast<std::size_t>(mid)]);
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[static_cast<std::size_t>(self)].left = left;
  nodes_[static_cast<std::size_t>(self)].right = right;
  return self;
}

void SpatialIndex::search(int node_id, const Point& q, int k, int exclude,
                          std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int id = ids_[static_cast<std::size_t>(i)];
      if (id == exclude) continue;
      const Point& p = points_[static_cast<std::size_t>(id)];
      const double dx = q.x - p.x;
      const double dy = q.y - p.y;
      const Neighbor cand{id, dx * dx + dy * dy};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), better);
      } else if (better(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), better);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), better);
      }
    }
    return;
  }
  const double qc = node.axis == 0 ? q.x : q.y;
  const double diff = qc - node.split;
  const int near = diff <= 0.0 ? node.left : node.right;
  const int far = diff <= 0.0 ? node.right : node.left;
  search(near, q, k, exclude, heap);
  // Descend into the far half on exact ties too: an equally distant point
  // with a smaller id must still displace the current worst candidate.
  if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().dist2) {
    search(far, q, k, exclude, heap);
  }
}

std::vector<Neighbor> SpatialIndex::knn(const Point& q, int k, int exclude) const {
  std::vector<Neighbor> heap;
  if (k <= 0 || root_ < 0) return heap;
  heap.reserve(static_cast<std::size_t>(k));
  search(root_, q, k, exclude, heap);
  std::sort(heap.begin(), heap.end(), better);
  return heap;
}

}  // namespace raymap
