#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace relrefine {

using Point2 = std::array<double, 2>;

/// Undirected radius graph in compressed adjacency form. Each node's
/// neighbor list is sorted ascending and excludes the node itself.
struct SparseGraph {
  std::size_t n = 0;
  double radius_m = 0.0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t edge_count() const { return indices.size() / 2; }
  std::size_t directed_edge_count() const { return indices.size(); }
  double average_degree() const {
    return n == 0 ? 0.0 : static_cast<double>(indices.size()) / static_cast<double>(n);
  }
};

/// Returns N(i) in ascending order.
std::span<const std::size_t> neighbors(const SparseGraph& g, std::size_t i);

/// Uniform grid hash keyed by floor(center / cell_size).
class GridIndex {
 public:
  GridIndex(std::span<const Point2> centers, double cell_size);

  std::array<std::int64_t, 2> cell_of(const Point2& p) const;
  /// Members of one cell, or an empty span.
  std::span<const std::size_t> cell_members(std::int64_t cx, std::int64_t cy) const;
  double cell_size() const { return cell_size_; }
  std::size_t cell_count() const { return cells_.size(); }

 private:
  struct KeyHash {
    std::size_t operator()(std::uint64_t k) const noexcept {
      k ^= k >> 33;
      k *= 0xff51afd7ed558ccdULL;
      k ^= k >> 33;
      return static_cast<std::size_t>(k);
    }
  };
  static std::uint64_t pack(std::int64_t cx, std::int64_t cy);

  double cell_size_;
  std::vector<std::size_t> order_;
  std::unordered_map<std::uint64_t, std::array<std::size_t, 2>, KeyHash> cells_;
};

/// Edge (i, j) iff i != j and BEV distance <= r (boundary kept).
SparseGraph build_radius_graph(std::span<const Point2> centers, double r);

/// Debug dump, one "i j dist" line per undirected edge (i < j).
std::string dump_edges(const SparseGraph& g, std::span<const Point2> centers);

}  // namespace relrefine
