#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace rblod {

using Point = Eigen::Vector2d;
using Triangle = std::array<int, 3>;

// Conforming triangulation. Elements are counterclockwise node triples.
struct Mesh {
  std::vector<Point> nodes;
  std::vector<Triangle> elements;
  std::vector<int> interior_nodes;
  std::vector<std::uint8_t> on_boundary;
  std::vector<std::vector<int>> node_elements;
  double mesh_size = 0.0;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int element_count() const { return static_cast<int>(elements.size()); }
  bool is_interior(int node) const { return on_boundary[node] == 0; }
  double signed_area(int element) const;
  double area(int element) const { return signed_area(element); }
  Point barycenter(int element) const;
};

// Builds adjacency, boundary flags and the mesh size; rejects degenerate
// or clockwise elements.
Mesh make_mesh(std::vector<Point> nodes, std::vector<Triangle> elements);

Mesh build_unit_square_mesh(int n, const Point& origin = Point(0.0, 0.0), double side = 1.0);

struct MeshHierarchy {
  Mesh coarse;
  Mesh fine;
  int refinement_levels = 0;
  std::vector<int> fine_to_coarse_element;
  std::vector<int> coarse_node_in_fine;
  std::vector<std::vector<int>> coarse_element_children;
};

MeshHierarchy refine_uniform(const Mesh& mesh, int levels);

struct Patch {
  int center_element = -1;  // -1 for unions of patches
  int k = 0;
  std::vector<int> coarse_elements;
  std::vector<int> fine_elements;
  std::vector<int> fine_interior_nodes;
  std::vector<int> fine_closure_nodes;
  std::vector<int> coarse_interior_nodes;
};

// k-fold vertex-adjacency closure of a set of coarse elements.
std::vector<int> grow_elements(const Mesh& mesh, std::vector<int> elements, int k);

Patch element_patch(const MeshHierarchy& hier, int element, int k);

// Elements having z as a vertex; z must be an interior node.
std::vector<int> node_support(const Mesh& mesh, int z);

Patch node_patch_union(const MeshHierarchy& hier, int z, int k);

// Patch data for an arbitrary set of coarse elements.
Patch make_patch(const MeshHierarchy& hier, std::vector<int> coarse_elements);

// Index of value in a sorted vector, or -1.
int sorted_index(std::span<const int> sorted, int value);

}  // namespace rblod
