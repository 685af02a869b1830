#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <vector>

#include "vmr/geom.hpp"

namespace vmr {

/// Static 3-D k-d tree with exact k-nearest-neighbour and bounded
/// nearest-neighbour queries. Results are ordered by (squared distance, index),
/// so equidistant neighbours are always resolved toward the lower index.
class KdTree {
 public:
  struct Neighbor {
    std::size_t index;
    double dist2;
    friend bool operator<(const Neighbor& a, const Neighbor& b) {
      return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
    }
  };

  KdTree() = default;

  explicit KdTree(std::vector<Vec3> points, std::size_t leaf_size = 12)
      : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
      build(0, static_cast<std::uint32_t>(points_.size()));
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const std::vector<Vec3>& points() const noexcept { return points_; }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// The k nearest points to `query`, optionally skipping one index.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k,
                            std::optional<std::size_t> exclude = std::nullopt) const {
    std::vector<Neighbor> heap;
    if (k == 0 || points_.empty()) return heap;
    heap.reserve(k + 1);
    const std::size_t skip = exclude.value_or(std::numeric_limits<std::size_t>::max());
    search(0, query, k, skip, std::numeric_limits<double>::infinity(), heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// Nearest point within `max_dist` (inclusive), if any.
  std::optional<Neighbor> nearest(const Vec3& query, double max_dist) const {
    std::vector<Neighbor> heap;
    if (points_.empty()) return std::nullopt;
    heap.reserve(2);
    search(0, query, 1, std::numeric_limits<std::size_t>::max(), max_dist * max_dist, heap);
    if (heap.empty()) return std::nullopt;
    return heap.front();
  }

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    int axis;  // -1 for leaves
    double split;
    std::int32_t left;
    std::int32_t right;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end, -1, 0.0, -1, -1});
    if (end - begin <= leaf_size_) return id;

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (auto i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::int32_t node_id, const Vec3& q, std::size_t k, std::size_t skip, double bound2,
              std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == skip) continue;
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 > bound2) continue;
        const Neighbor cand{idx, d2};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const auto near = diff < 0.0 ? node.left : node.right;
    const auto far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, skip, bound2, heap);
    const double worst = heap.size() < k ? bound2 : heap.front().dist2;
    if (diff * diff <= worst) search(far, q, k, skip, bound2, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 12;
};

}  // namespace vmr
