#pragma once

// Independent reference implementations the tests compare against.

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "relrefine/core.hpp"
#include "relrefine/graph.hpp"
#include "relrefine/numkit/tensor.hpp"

namespace oracle {

using relrefine::Box3D;
using relrefine::nk::Tensor2D;

inline bool inside(const Box3D& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * b.length && std::abs(v) <= 0.5 * b.width;
}

// Jittered-grid area sampling over box a; `side`^2 samples.
inline double monte_carlo_iou(const Box3D& a, const Box3D& b, int side = 1000,
                              std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  std::int64_t hits = 0;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double u = ((i + jitter(rng)) / side - 0.5) * a.length;
      const double v = ((j + jitter(rng)) / side - 0.5) * a.width;
      const double x = a.cx + c * u - s * v;
      const double y = a.cy + s * u + c * v;
      if (inside(b, x, y)) ++hits;
    }
  }
  const double area_a = a.length * a.width;
  const double area_b = b.length * b.width;
  const double inter = area_a * static_cast<double>(hits) / (static_cast<double>(side) * side);
  return inter / (area_a + area_b - inter);
}

inline std::set<std::pair<std::size_t, std::size_t>> brute_force_edges(
    const std::vector<relrefine::Point2>& pts, double r) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[i][0] - pts[j][0], dy = pts[i][1] - pts[j][1];
      if (std::sqrt(dx * dx + dy * dy) <= r) out.insert({i, j});
    }
  }
  return out;
}

inline std::set<std::pair<std::size_t, std::size_t>> graph_edges(const relrefine::SparseGraph& g) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j : relrefine::neighbors(g, i)) {
      if (i < j) out.insert({i, j});
    }
  }
  return out;
}

inline Tensor2D naive_matmul(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

inline Tensor2D random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng,
                              double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor2D t(r, c);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

inline double lrelu(double v) { return v > 0 ? v : 0.01 * v; }

// Multi-head scaled dot-product attention written as plain loops.
inline Tensor2D dense_attention(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                                std::size_t heads) {
  const std::size_t n = q.rows(), c = q.cols(), dh = c / heads;
  Tensor2D out(n, c);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < dh; ++d) acc += q(i, h * dh + d) * k(j, h * dh + d);
        s[j] = acc / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v(j, h * dh + d);
        out(i, h * dh + d) = acc;
      }
    }
  }
  return out;
}

inline Box3D random_box(std::mt19937_64& rng, double spread = 2.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> sz(0.5, 5.0);
  Box3D b;
  b.cx = spread * u(rng);
  b.cy = spread * u(rng);
  b.cz = u(rng);
  b.length = sz(rng);
  b.width = sz(rng);
  b.height = sz(rng);
  b.yaw = relrefine::kPi * u(rng);
  return b;
}

// Detection with consistent basic features and a random map-view feature.
inline relrefine::Detection make_detection(const Box3D& box, double score,
                                           relrefine::ClassLabel label, std::mt19937_64& rng,
                                           double dt = 0.0) {
  relrefine::Detection d;
  d.box = box;
  d.score = score;
  d.label = label;
  d.basic = relrefine::make_basic_features(box, score, label, dt);
  std::normal_distribution<double> g(0.0, 0.2);
  d.bev.resize(relrefine::kBevDim);
  for (double& v : d.bev) v = g(rng);
  return d;
}

inline std::vector<relrefine::Detection> random_frame_detections(std::size_t n, double extent,
                                                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-extent / 2, extent / 2);
  std::uniform_real_distribution<double> sc(0.05, 0.95);
  std::vector<relrefine::Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    Box3D b = random_box(rng);
    b.cx = u(rng);
    b.cy = u(rng);
    out.push_back(make_detection(b, sc(rng), relrefine::kAllClasses[i % 3], rng));
  }
  return out;
}

}  // namespace oracle
