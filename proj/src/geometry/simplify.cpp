#include "polyseq/geometry.hpp"

#include <stdexcept>
#include <utility>

namespace polyseq::geometry {

std::vector<Vertex2> douglas_peucker(std::span<const Vertex2> line, double epsilon) {
  if (line.size() < 2) throw std::invalid_argument("douglas_peucker needs at least 2 points");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("douglas_peucker: epsilon must be >= 0");

  std::vector<bool> keep(line.size(), false);
  keep.front() = true;
  keep.back() = true;

  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, line.size() - 1}};
  while (!stack.empty()) {
    const auto [first, last] = stack.back();
    stack.pop_back();
    if (last <= first + 1) continue;
    double dmax = -1.0;
    std::size_t split = first;
    for (std::size_t i = first + 1; i < last; ++i) {
      const double d = point_segment_distance(line[i], line[first], line[last]);
      if (d > dmax) {
        dmax = d;
        split = i;
      }
    }
    if (dmax >= epsilon) {
      keep[split] = true;
      stack.emplace_back(first, split);
      stack.emplace_back(split, last);
    }
  }

  std::vector<Vertex2> out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (keep[i]) out.push_back(line[i]);
  }
  return out;
}

Polygon simplify_polygon(const Polygon& p, double epsilon) {
  const auto& v = p.vertices();
  const std::size_t n = v.size();
  std::size_t far = 0;
  double dmax = -1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = point_segment_distance(v[i], v[0], v[0]);
    if (d > dmax) {
      dmax = d;
      far = i;
    }
  }

  std::vector<Vertex2> first(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(far) + 1);
  std::vector<Vertex2> second(v.begin() + static_cast<std::ptrdiff_t>(far), v.end());
  second.push_back(v[0]);

  std::vector<Vertex2> a = douglas_peucker(first, epsilon);
  std::vector<Vertex2> b = douglas_peucker(second, epsilon);
  std::vector<Vertex2> ring(a.begin(), a.end());
  // b starts at v[far] (already present) and ends at v[0]
  ring.insert(ring.end(), b.begin() + 1, b.end() - 1);

  if (!is_valid_ring(ring)) return p;
  return Polygon(std::move(ring));
}

}  // namespace polyseq::geometry
