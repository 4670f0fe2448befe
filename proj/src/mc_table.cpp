// Marching-cubes configuration table, generated at first use.
//
// Instead of a hand-typed triangle table, each of the 256 corner
// configurations is resolved face by face. On every cube face the corners
// that are inside are cut off by segments joining the crossed edges; on an
// ambiguous face (two diagonal inside corners) each inside corner is cut off
// separately, i.e. inside corners never connect across a face. The rule
// depends only on the face's own four corners, so adjacent cubes always
// agree on the shared face and the assembled surface is closed. Segments are
// oriented so the chained loops wind counter-clockwise when seen from the
// outside (low-value) region.

#include <array>
#include <stdexcept>
#include <vector>

#include "atriamap/geometry.hpp"

namespace atriamap {
namespace detail {

// Corner k sits at (kCorner[k][0], kCorner[k][1], kCorner[k][2]).
extern const int kCorner[8][3];
extern const int kEdge[12][2];

const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                           {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
const int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                          {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace detail

namespace {

using detail::kCorner;
using detail::kEdge;

struct Face {
  int corners[4];  // cyclic
  int normal[3];   // outward
};

constexpr Face kFaces[6] = {
    {{0, 1, 2, 3}, {0, 0, -1}}, {{4, 5, 6, 7}, {0, 0, 1}},  {{0, 1, 5, 4}, {0, -1, 0}},
    {{3, 2, 6, 7}, {0, 1, 0}},  {{0, 3, 7, 4}, {-1, 0, 0}}, {{1, 2, 6, 5}, {1, 0, 0}},
};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
  throw std::logic_error("corners not adjacent");
}

std::array<double, 3> corner_pos(int c) {
  return {double(kCorner[c][0]), double(kCorner[c][1]), double(kCorner[c][2])};
}

std::array<double, 3> edge_mid(int e) {
  const auto a = corner_pos(kEdge[e][0]), b = corner_pos(kEdge[e][1]);
  return {(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2};
}

// Orients segment (a, b) on `face` so that, with h pointing from the segment
// towards the inside corners, (b - a) . (n x h) > 0.
void orient_segment(const Face& face, int& a, int& b, const std::array<double, 3>& inside_point) {
  const auto pa = edge_mid(a), pb = edge_mid(b);
  const double h[3] = {inside_point[0] - (pa[0] + pb[0]) / 2, inside_point[1] - (pa[1] + pb[1]) / 2,
                       inside_point[2] - (pa[2] + pb[2]) / 2};
  const int* n = face.normal;
  const double nxh[3] = {n[1] * h[2] - n[2] * h[1], n[2] * h[0] - n[0] * h[2], n[0] * h[1] - n[1] * h[0]};
  const double t = (pb[0] - pa[0]) * nxh[0] + (pb[1] - pa[1]) * nxh[1] + (pb[2] - pa[2]) * nxh[2];
  if (t < 0) std::swap(a, b);
}

std::vector<std::vector<int>> build_case(int config) {
  auto inside = [config](int c) { return (config >> c) & 1; };
  int next[12];
  std::fill(std::begin(next), std::end(next), -1);

  for (const Face& f : kFaces) {
    const int* c = f.corners;
    int in_count = 0;
    for (int i = 0; i < 4; ++i) in_count += inside(c[i]);
    if (in_count == 0 || in_count == 4) continue;
    const bool ambiguous = in_count == 2 && inside(c[0]) == inside(c[2]);
    if (ambiguous) {
      for (int i = 0; i < 4; ++i) {
        if (!inside(c[i])) continue;
        int a = edge_between(c[(i + 3) % 4], c[i]);
        int b = edge_between(c[i], c[(i + 1) % 4]);
        orient_segment(f, a, b, corner_pos(c[i]));
        next[a] = b;
      }
    } else {
      int crossed[2], k = 0;
      std::array<double, 3> centroid{0, 0, 0};
      for (int i = 0; i < 4; ++i) {
        if (inside(c[i]) != inside(c[(i + 1) % 4])) crossed[k++] = edge_between(c[i], c[(i + 1) % 4]);
        if (inside(c[i]))
          for (int d = 0; d < 3; ++d) centroid[d] += corner_pos(c[i])[d] / in_count;
      }
      int a = crossed[0], b = crossed[1];
      orient_segment(f, a, b, centroid);
      next[a] = b;
    }
  }

  std::vector<std::vector<int>> loops;
  bool used[12] = {};
  for (int start = 0; start < 12; ++start) {
    if (next[start] < 0 || used[start]) continue;
    std::vector<int> loop;
    for (int e = start; !used[e]; e = next[e]) {
      if (next[e] < 0) throw std::logic_error("open marching-cubes loop");
      used[e] = true;
      loop.push_back(e);
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

const std::vector<std::vector<std::vector<int>>>& table() {
  static const auto t = [] {
    std::vector<std::vector<std::vector<int>>> out(256);
    for (int c = 0; c < 256; ++c) out[c] = build_case(c);
    return out;
  }();
  return t;
}

}  // namespace

const std::vector<std::vector<int>>& marching_cubes_loops(std::uint8_t config) { return table()[config]; }

}  // namespace atriamap
