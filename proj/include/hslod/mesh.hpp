#pragma once

// Nested Cartesian mesh hierarchy on the unit cube (0,1)^d, d in {1,2,3},
// with lexicographic element/node indexing (x fastest) and axis-aligned
// index-box patches.  Everything here is integer bookkeeping; no geometry
// beyond mesh sizes H_l = 2^-exponent.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hslod {

// Inclusive axis-aligned box of integer indices, [lo[k], hi[k]] per axis.
// Unused axes (k >= dim) are pinned to [0,0].
struct IndexBox {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};

  int extent(int k) const { return hi[k] - lo[k] + 1; }
  std::int64_t count(int dim) const {
    std::int64_t c = 1;
    for (int k = 0; k < dim; ++k) c *= extent(k);
    return c;
  }
  bool contains(int dim, const std::array<int, 3>& p) const {
    for (int k = 0; k < dim; ++k)
      if (p[k] < lo[k] || p[k] > hi[k]) return false;
    return true;
  }
  bool contains_box(int dim, const IndexBox& other) const {
    for (int k = 0; k < dim; ++k)
      if (other.lo[k] < lo[k] || other.hi[k] > hi[k]) return false;
    return true;
  }
  bool intersects(int dim, const IndexBox& other) const {
    for (int k = 0; k < dim; ++k)
      if (other.hi[k] < lo[k] || other.lo[k] > hi[k]) return false;
    return true;
  }
  IndexBox intersection(int dim, const IndexBox& other) const {
    IndexBox r;
    for (int k = 0; k < dim; ++k) {
      r.lo[k] = std::max(lo[k], other.lo[k]);
      r.hi[k] = std::min(hi[k], other.hi[k]);
    }
    return r;
  }
  // Grows by m layers per side, clipped to [0, n-1] per axis.
  IndexBox grown(int dim, int m, int n) const {
    IndexBox r = *this;
    for (int k = 0; k < dim; ++k) {
      r.lo[k] = std::max(0, lo[k] - m);
      r.hi[k] = std::min(n - 1, hi[k] + m);
    }
    return r;
  }
  // Lexicographic offset of p inside the box (x fastest).
  std::int64_t offset(int dim, const std::array<int, 3>& p) const {
    std::int64_t off = 0, stride = 1;
    for (int k = 0; k < dim; ++k) {
      off += stride * (p[k] - lo[k]);
      stride *= extent(k);
    }
    return off;
  }
  bool operator==(const IndexBox& other) const {
    return lo == other.lo && hi == other.hi;
  }
};

// Converts between flat lexicographic indices and per-axis coordinates on a
// uniform n^dim grid (n cells or nodes per axis).
std::array<int, 3> coords_of(int dim, int n, std::int64_t index);
std::int64_t lex_index(int dim, int n, const std::array<int, 3>& coords);

// Calls fn(coords) for every point of the box in lexicographic order
// (x fastest).
template <typename Fn>
void for_each_in_box(int dim, const IndexBox& box, Fn&& fn) {
  for (int k = 0; k < dim; ++k)
    if (box.lo[k] > box.hi[k]) return;
  std::array<int, 3> p = box.lo;
  for (;;) {
    fn(p);
    int k = 0;
    while (k < dim) {
      if (++p[k] <= box.hi[k]) break;
      p[k] = box.lo[k];
      ++k;
    }
    if (k == dim) break;
  }
}

// Dyadic hierarchy T_0 superset ... superset T_L with mesh sizes
// H_l = 2^-(coarse_exponent + l), plus the fine FEM mesh h = 2^-fine_exponent.
struct MeshHierarchy {
  int dim = 2;
  int coarse_exponent = 0;  // H_0 = 2^-coarse_exponent
  int levels = 0;           // L; hierarchy has levels 0..L
  int fine_exponent = 0;    // h = 2^-fine_exponent

  int level_exponent(int level) const { return coarse_exponent + level; }
  int cells_per_axis(int level) const { return 1 << level_exponent(level); }
  double H(int level) const { return 1.0 / cells_per_axis(level); }
  int fine_cells_per_axis() const { return 1 << fine_exponent; }
  int fine_nodes_per_axis() const { return fine_cells_per_axis() + 1; }
  double h() const { return 1.0 / fine_cells_per_axis(); }
  std::int64_t element_count(int level) const {
    std::int64_t n = cells_per_axis(level), c = 1;
    for (int k = 0; k < dim; ++k) c *= n;
    return c;
  }
  // fine cells per coarse cell edge at the given level
  int refinement_ratio(int level) const {
    return 1 << (fine_exponent - level_exponent(level));
  }
  IndexBox full_box(int level) const {
    IndexBox b;
    for (int k = 0; k < dim; ++k) b.hi[k] = cells_per_axis(level) - 1;
    return b;
  }
};

// Validates exponents (coarse_exponent >= 0, fine_exponent >= coarse+levels)
// and returns the hierarchy descriptor.
MeshHierarchy build_hierarchy(int dim, int coarse_exponent, int levels,
                              int fine_exponent);

// The 2^d children at level+1 of an element at the given level, in
// lexicographic order.
std::vector<std::int64_t> refinement_children(const MeshHierarchy& mesh, int level,
                                              std::int64_t element);
// Parent element at level-1.
std::int64_t parent_element(const MeshHierarchy& mesh, int level, std::int64_t element);

// Patch flavors: Hierarchical patches collect elements of T_{l-1} (of T_0 at
// l = 0) around a center element of that mesh; Lod patches collect elements
// of T_l around a center element of T_l.  Growth is by m layers of vertex
// adjacency (box closure), clipped at the domain boundary.
enum class PatchKind { Hierarchical, Lod };

struct Patch {
  PatchKind kind = PatchKind::Lod;
  int level = 0;       // the level the patch serves
  int mesh_level = 0;  // level of the mesh whose elements form the patch
  int m = 1;           // number of adjacency layers
  std::int64_t center = 0;  // element index on mesh_level
  IndexBox box;             // element-index box on mesh_level
  bool clipped = false;     // true if the domain boundary truncated the box

  // Elements of the (finer or equal) target level covered by the patch.
  IndexBox elements_at(const MeshHierarchy& mesh, int target_level) const;
  // Covered fine elements and fine nodes (node box includes patch boundary).
  IndexBox fine_elements(const MeshHierarchy& mesh) const;
  IndexBox fine_nodes(const MeshHierarchy& mesh) const;
};

Patch build_patch(const MeshHierarchy& mesh, PatchKind kind, int level,
                  std::int64_t center, int m);

// Fine-node classification relative to a patch.  interior = inside the patch
// and not on the patch boundary nor on the domain boundary; sigma = on the
// patch boundary but not on the domain boundary (the trace nodes Sigma).
struct PatchNodes {
  std::vector<std::int64_t> interior;  // global fine node indices
  std::vector<std::int64_t> sigma;
};
PatchNodes classify_patch_nodes(const MeshHierarchy& mesh, const Patch& patch);

// JSON debug dump of a patch (box, center, node counts).
std::string patch_to_json(const MeshHierarchy& mesh, const Patch& patch);

}  // namespace hslod
