#include "rblod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace rblod {

double Mesh::signed_area(int element) const {
  const auto& t = elements[element];
  const Point& a = nodes[t[0]];
  const Point& b = nodes[t[1]];
  const Point& c = nodes[t[2]];
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

Point Mesh::barycenter(int element) const {
  const auto& t = elements[element];
  return (nodes[t[0]] + nodes[t[1]] + nodes[t[2]]) / 3.0;
}

Mesh make_mesh(std::vector<Point> nodes, std::vector<Triangle> elements) {
  Mesh mesh;
  mesh.nodes = std::move(nodes);
  mesh.elements = std::move(elements);
  const int nn = mesh.node_count();
  mesh.node_elements.assign(nn, {});
  std::unordered_map<std::uint64_t, int> edge_count;
  edge_count.reserve(mesh.elements.size() * 3);
  double diameter = 0.0;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    for (int v : t) {
      if (v < 0 || v >= nn) throw std::invalid_argument("element references unknown node");
    }
    if (!(mesh.signed_area(e) > 0.0)) {
      throw std::invalid_argument("element " + std::to_string(e) + " is degenerate or clockwise");
    }
    for (int i = 0; i < 3; ++i) {
      const int a = t[i];
      const int b = t[(i + 1) % 3];
      mesh.node_elements[a].push_back(e);
      const auto key = (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint32_t>(std::max(a, b));
      ++edge_count[key];
      diameter = std::max(diameter, (mesh.nodes[a] - mesh.nodes[b]).norm());
    }
  }
  mesh.mesh_size = diameter;
  mesh.on_boundary.assign(nn, 0);
  for (const auto& [key, count] : edge_count) {
    if (count == 1) {
      mesh.on_boundary[static_cast<int>(key >> 32)] = 1;
      mesh.on_boundary[static_cast<int>(key & 0xffffffffu)] = 1;
    }
  }
  for (int v = 0; v < nn; ++v) {
    if (!mesh.on_boundary[v]) mesh.interior_nodes.push_back(v);
  }
  return mesh;
}

Mesh build_unit_square_mesh(int n, const Point& origin, double side) {
  if (n < 1) throw std::invalid_argument("subdivision count must be at least 1");
  if (!(side > 0.0)) throw std::invalid_argument("side length must be positive");
  std::vector<Point> nodes;
  nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      nodes.emplace_back(origin.x() + side * i / n, origin.y() + side * j / n);
    }
  }
  std::vector<Triangle> elements;
  elements.reserve(2 * static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int v00 = j * (n + 1) + i;
      const int v10 = v00 + 1;
      const int v01 = v00 + n + 1;
      const int v11 = v01 + 1;
      elements.push_back({v00, v10, v11});
      elements.push_back({v00, v11, v01});
    }
  }
  return make_mesh(std::move(nodes), std::move(elements));
}

MeshHierarchy refine_uniform(const Mesh& mesh, int levels) {
  if (levels < 0) throw std::invalid_argument("refinement levels must be nonnegative");
  MeshHierarchy hier;
  hier.coarse = mesh;
  hier.refinement_levels = levels;

  std::vector<Point> nodes = mesh.nodes;
  std::vector<Triangle> elements = mesh.elements;
  std::vector<int> ancestor(elements.size());
  std::iota(ancestor.begin(), ancestor.end(), 0);

  for (int level = 0; level < levels; ++level) {
    std::unordered_map<std::uint64_t, int> midpoint;
    midpoint.reserve(elements.size() * 2);
    auto mid = [&](int a, int b) {
      const auto key = (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint32_t>(std::max(a, b));
      auto [it, inserted] = midpoint.try_emplace(key, static_cast<int>(nodes.size()));
      if (inserted) nodes.push_back(0.5 * (nodes[a] + nodes[b]));
      return it->second;
    };
    std::vector<Triangle> refined;
    std::vector<int> refined_ancestor;
    refined.reserve(elements.size() * 4);
    refined_ancestor.reserve(elements.size() * 4);
    for (std::size_t e = 0; e < elements.size(); ++e) {
      const auto [a, b, c] = elements[e];
      const int ab = mid(a, b);
      const int bc = mid(b, c);
      const int ca = mid(c, a);
      refined.push_back({a, ab, ca});
      refined.push_back({ab, b, bc});
      refined.push_back({ca, bc, c});
      refined.push_back({ab, bc, ca});
      for (int i = 0; i < 4; ++i) refined_ancestor.push_back(ancestor[e]);
    }
    elements = std::move(refined);
    ancestor = std::move(refined_ancestor);
  }

  // Row-major relabelling by (y, x) keeps indices independent of the
  // refinement history.
  std::vector<int> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (nodes[a].y() != nodes[b].y()) return nodes[a].y() < nodes[b].y();
    return nodes[a].x() < nodes[b].x();
  });
  std::vector<int> new_index(nodes.size());
  std::vector<Point> sorted_nodes(nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    new_index[order[i]] = static_cast<int>(i);
    sorted_nodes[i] = nodes[order[i]];
  }
  for (auto& t : elements) {
    for (int& v : t) v = new_index[v];
  }
  hier.coarse_node_in_fine.resize(mesh.nodes.size());
  for (int v = 0; v < mesh.node_count(); ++v) hier.coarse_node_in_fine[v] = new_index[v];

  hier.fine = make_mesh(std::move(sorted_nodes), std::move(elements));
  hier.fine_to_coarse_element = std::move(ancestor);
  hier.coarse_element_children.assign(mesh.elements.size(), {});
  for (int e = 0; e < hier.fine.element_count(); ++e) {
    hier.coarse_element_children[hier.fine_to_coarse_element[e]].push_back(e);
  }
  return hier;
}

std::vector<int> grow_elements(const Mesh& mesh, std::vector<int> elements, int k) {
  if (k < 0) throw std::invalid_argument("patch order must be nonnegative");
  std::vector<std::uint8_t> in(mesh.element_count(), 0);
  for (int e : elements) in[e] = 1;
  std::vector<int> frontier = elements;
  for (int step = 0; step < k && !frontier.empty(); ++step) {
    std::vector<int> added;
    for (int e : frontier) {
      for (int v : mesh.elements[e]) {
        for (int t : mesh.node_elements[v]) {
          if (!in[t]) {
            in[t] = 1;
            added.push_back(t);
          }
        }
      }
    }
    frontier = std::move(added);
  }
  std::vector<int> result;
  for (int e = 0; e < mesh.element_count(); ++e) {
    if (in[e]) result.push_back(e);
  }
  return result;
}

Patch make_patch(const MeshHierarchy& hier, std::vector<int> coarse_elements) {
  std::sort(coarse_elements.begin(), coarse_elements.end());
  coarse_elements.erase(std::unique(coarse_elements.begin(), coarse_elements.end()), coarse_elements.end());
  Patch patch;
  patch.coarse_elements = std::move(coarse_elements);

  const Mesh& coarse = hier.coarse;
  const Mesh& fine = hier.fine;
  std::vector<std::uint8_t> coarse_in(coarse.element_count(), 0);
  for (int e : patch.coarse_elements) coarse_in[e] = 1;

  std::vector<int> coarse_nodes;
  for (int e : patch.coarse_elements) {
    for (int v : coarse.elements[e]) coarse_nodes.push_back(v);
    for (int c : hier.coarse_element_children[e]) patch.fine_elements.push_back(c);
  }
  std::sort(coarse_nodes.begin(), coarse_nodes.end());
  coarse_nodes.erase(std::unique(coarse_nodes.begin(), coarse_nodes.end()), coarse_nodes.end());
  for (int v : coarse_nodes) {
    if (!coarse.is_interior(v)) continue;
    bool all = true;
    for (int t : coarse.node_elements[v]) all = all && coarse_in[t];
    if (all) patch.coarse_interior_nodes.push_back(v);
  }

  std::sort(patch.fine_elements.begin(), patch.fine_elements.end());
  for (int e : patch.fine_elements) {
    for (int v : fine.elements[e]) patch.fine_closure_nodes.push_back(v);
  }
  std::sort(patch.fine_closure_nodes.begin(), patch.fine_closure_nodes.end());
  patch.fine_closure_nodes.erase(std::unique(patch.fine_closure_nodes.begin(), patch.fine_closure_nodes.end()),
                                 patch.fine_closure_nodes.end());
  for (int v : patch.fine_closure_nodes) {
    if (!fine.is_interior(v)) continue;
    bool all = true;
    for (int t : fine.node_elements[v]) all = all && coarse_in[hier.fine_to_coarse_element[t]];
    if (all) patch.fine_interior_nodes.push_back(v);
  }
  return patch;
}

Patch element_patch(const MeshHierarchy& hier, int element, int k) {
  if (element < 0 || element >= hier.coarse.element_count()) {
    throw std::invalid_argument("coarse element index out of range");
  }
  Patch patch = make_patch(hier, grow_elements(hier.coarse, {element}, k));
  patch.center_element = element;
  patch.k = k;
  return patch;
}

std::vector<int> node_support(const Mesh& mesh, int z) {
  if (z < 0 || z >= mesh.node_count()) throw std::invalid_argument("node index out of range");
  if (!mesh.is_interior(z)) throw std::invalid_argument("node " + std::to_string(z) + " lies on the boundary");
  std::vector<int> support = mesh.node_elements[z];
  std::sort(support.begin(), support.end());
  return support;
}

Patch node_patch_union(const MeshHierarchy& hier, int z, int k) {
  std::vector<int> elements;
  for (int element : node_support(hier.coarse, z)) {
    for (int e : grow_elements(hier.coarse, {element}, k)) elements.push_back(e);
  }
  Patch patch = make_patch(hier, std::move(elements));
  patch.k = k;
  return patch;
}

int sorted_index(std::span<const int> sorted, int value) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), value);
  if (it == sorted.end() || *it != value) return -1;
  return static_cast<int>(it - sorted.begin());
}

}  // namespace rblod
