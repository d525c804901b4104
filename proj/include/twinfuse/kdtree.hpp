#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse {

// Exact nearest-neighbor index over a fixed point set. Holds a copy of the
// points, so the source may go away after construction.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }

  struct Neighbor {
    std::size_t index;
    double squared_distance;
  };

  // Ties are broken toward the lower point index.
  Neighbor nearest(const Vec3& query) const;

  // Up to k neighbors sorted by (distance, index).
  std::vector<Neighbor> k_nearest(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    std::size_t begin;
    std::size_t end;
    int axis;  // -1 for leaves
    double split;
    int left;
    int right;
  };

  int build(std::size_t begin, std::size_t end, int depth);
  void search(int node, const Vec3& q, std::size_t k,
              std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace twinfuse
