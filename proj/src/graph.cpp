#include "relrefine/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "relrefine/scene_io.hpp"

namespace relrefine {

std::span<const std::size_t> neighbors(const SparseGraph& g, std::size_t i) {
  if (i >= g.n) {
    throw std::out_of_range("neighbors: node " + std::to_string(i) + " out of range for " +
                            std::to_string(g.n) + " nodes");
  }
  return {g.indices.data() + g.offsets[i], g.offsets[i + 1] - g.offsets[i]};
}

std::uint64_t GridIndex::pack(std::int64_t cx, std::int64_t cy) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
         static_cast<std::uint32_t>(cy);
}

GridIndex::GridIndex(std::span<const Point2> centers, double cell_size)
    : cell_size_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("GridIndex: cell size must be positive");
  std::vector<std::uint64_t> keys(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto c = cell_of(centers[i]);
    keys[i] = pack(c[0], c[1]);
  }
  order_.resize(centers.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
  });
  cells_.reserve(centers.size());
  for (std::size_t s = 0; s < order_.size();) {
    std::size_t e = s + 1;
    while (e < order_.size() && keys[order_[e]] == keys[order_[s]]) ++e;
    cells_.emplace(keys[order_[s]], std::array<std::size_t, 2>{s, e});
    s = e;
  }
}

std::array<std::int64_t, 2> GridIndex::cell_of(const Point2& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell_size_)),
          static_cast<std::int64_t>(std::floor(p[1] / cell_size_))};
}

std::span<const std::size_t> GridIndex::cell_members(std::int64_t cx, std::int64_t cy) const {
  auto it = cells_.find(pack(cx, cy));
  if (it == cells_.end()) return {};
  return {order_.data() + it->second[0], it->second[1] - it->second[0]};
}

SparseGraph build_radius_graph(std::span<const Point2> centers, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("build_radius_graph: radius must be positive");
  SparseGraph g;
  g.n = centers.size();
  g.radius_m = r;
  g.offsets.assign(g.n + 1, 0);
  if (g.n == 0) return g;

  const GridIndex grid(centers, r);
  const double r2 = r * r;
  std::vector<std::size_t> scratch;
  for (std::size_t i = 0; i < g.n; ++i) {
    const auto c = grid.cell_of(centers[i]);
    scratch.clear();
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::size_t j : grid.cell_members(c[0] + dx, c[1] + dy)) {
          if (j == i) continue;
          const double ex = centers[j][0] - centers[i][0];
          const double ey = centers[j][1] - centers[i][1];
          if (ex * ex + ey * ey <= r2) scratch.push_back(j);
        }
      }
    }
    std::sort(scratch.begin(), scratch.end());
    g.indices.insert(g.indices.end(), scratch.begin(), scratch.end());
    g.offsets[i + 1] = g.indices.size();
  }
  return g;
}

std::string dump_edges(const SparseGraph& g, std::span<const Point2> centers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j : neighbors(g, i)) {
      if (j <= i) continue;
      const double d = std::hypot(centers[j][0] - centers[i][0], centers[j][1] - centers[i][1]);
      os << i << ' ' << j << ' ' << format_real(d) << '\n';
    }
  }
  return os.str();
}

}  // namespace relrefine
