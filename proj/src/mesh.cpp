#include "hslod/mesh.hpp"

#include <sstream>

#include "hslod/util.hpp"

namespace hslod {

std::array<int, 3> coords_of(int dim, int n, std::int64_t index) {
  std::array<int, 3> c{0, 0, 0};
  for (int k = 0; k < dim; ++k) {
    c[k] = static_cast<int>(index % n);
    index /= n;
  }
  return c;
}

std::int64_t lex_index(int dim, int n, const std::array<int, 3>& coords) {
  std::int64_t idx = 0, stride = 1;
  for (int k = 0; k < dim; ++k) {
    idx += stride * coords[k];
    stride *= n;
  }
  return idx;
}

MeshHierarchy build_hierarchy(int dim, int coarse_exponent, int levels,
                              int fine_exponent) {
  if (dim < 1 || dim > 3) throw ConfigError("dim must be 1, 2, or 3");
  if (coarse_exponent < 0) throw ConfigError("coarse exponent must be >= 0");
  if (levels < 0) throw ConfigError("level count must be >= 0");
  if (fine_exponent < coarse_exponent + levels)
    throw ConfigError("fine mesh must refine the deepest hierarchy level: need "
                      "fine_exponent >= coarse_exponent + levels");
  MeshHierarchy mesh;
  mesh.dim = dim;
  mesh.coarse_exponent = coarse_exponent;
  mesh.levels = levels;
  mesh.fine_exponent = fine_exponent;
  return mesh;
}

std::vector<std::int64_t> refinement_children(const MeshHierarchy& mesh, int level,
                                              std::int64_t element) {
  if (level >= mesh.levels)
    throw ConfigError("refinement_children: no level below the requested one");
  int n = mesh.cells_per_axis(level);
  int n2 = mesh.cells_per_axis(level + 1);
  auto c = coords_of(mesh.dim, n, element);
  std::vector<std::int64_t> children;
  children.reserve(std::size_t{1} << mesh.dim);
  int corners = 1 << mesh.dim;
  for (int b = 0; b < corners; ++b) {
    std::array<int, 3> cc{0, 0, 0};
    for (int k = 0; k < mesh.dim; ++k) cc[k] = 2 * c[k] + ((b >> k) & 1);
    children.push_back(lex_index(mesh.dim, n2, cc));
  }
  return children;
}

std::int64_t parent_element(const MeshHierarchy& mesh, int level, std::int64_t element) {
  if (level <= 0) throw ConfigError("parent_element: level 0 has no parent");
  auto c = coords_of(mesh.dim, mesh.cells_per_axis(level), element);
  for (int k = 0; k < mesh.dim; ++k) c[k] /= 2;
  return lex_index(mesh.dim, mesh.cells_per_axis(level - 1), c);
}

IndexBox Patch::elements_at(const MeshHierarchy& mesh, int target_level) const {
  if (target_level < mesh_level)
    throw ConfigError("patch cannot be expressed on a coarser mesh than its own");
  int ratio = 1 << (mesh.level_exponent(target_level) - mesh.level_exponent(mesh_level));
  IndexBox r;
  for (int k = 0; k < mesh.dim; ++k) {
    r.lo[k] = box.lo[k] * ratio;
    r.hi[k] = (box.hi[k] + 1) * ratio - 1;
  }
  return r;
}

IndexBox Patch::fine_elements(const MeshHierarchy& mesh) const {
  int ratio = mesh.refinement_ratio(mesh_level);
  IndexBox r;
  for (int k = 0; k < mesh.dim; ++k) {
    r.lo[k] = box.lo[k] * ratio;
    r.hi[k] = (box.hi[k] + 1) * ratio - 1;
  }
  return r;
}

IndexBox Patch::fine_nodes(const MeshHierarchy& mesh) const {
  IndexBox e = fine_elements(mesh);
  IndexBox r = e;
  for (int k = 0; k < mesh.dim; ++k) r.hi[k] = e.hi[k] + 1;
  return r;
}

Patch build_patch(const MeshHierarchy& mesh, PatchKind kind, int level,
                  std::int64_t center, int m) {
  if (level < 0 || level > mesh.levels) throw ConfigError("patch level out of range");
  if (m < 0) throw ConfigError("patch layer count m must be >= 0");
  Patch p;
  p.kind = kind;
  p.level = level;
  p.mesh_level = (kind == PatchKind::Hierarchical && level > 0) ? level - 1 : level;
  p.m = m;
  p.center = center;
  int n = mesh.cells_per_axis(p.mesh_level);
  if (center < 0 || center >= mesh.element_count(p.mesh_level))
    throw ConfigError("patch center element out of range");
  auto c = coords_of(mesh.dim, n, center);
  IndexBox seed;
  for (int k = 0; k < mesh.dim; ++k) seed.lo[k] = seed.hi[k] = c[k];
  p.box = seed.grown(mesh.dim, m, n);
  for (int k = 0; k < mesh.dim; ++k)
    if (c[k] - m < 0 || c[k] + m > n - 1) p.clipped = true;
  return p;
}

PatchNodes classify_patch_nodes(const MeshHierarchy& mesh, const Patch& patch) {
  PatchNodes out;
  IndexBox nodes = patch.fine_nodes(mesh);
  int nn = mesh.fine_nodes_per_axis();
  std::array<int, 3> p{0, 0, 0};
  // outermost loop over the last axis so node indices come out ascending
  // (x fastest), matching the global lexicographic convention
  auto visit = [&](auto&& self, int axis) -> void {
    if (axis < 0) {
      bool on_domain = false, on_patch = false;
      for (int k = 0; k < mesh.dim; ++k) {
        if (p[k] == 0 || p[k] == nn - 1) on_domain = true;
        if (p[k] == nodes.lo[k] || p[k] == nodes.hi[k]) on_patch = true;
      }
      std::int64_t idx = lex_index(mesh.dim, nn, p);
      if (on_domain) return;  // Dirichlet nodes belong to neither set
      if (on_patch)
        out.sigma.push_back(idx);
      else
        out.interior.push_back(idx);
      return;
    }
    for (p[axis] = nodes.lo[axis]; p[axis] <= nodes.hi[axis]; ++p[axis])
      self(self, axis - 1);
  };
  visit(visit, mesh.dim - 1);
  return out;
}

std::string patch_to_json(const MeshHierarchy& mesh, const Patch& patch) {
  PatchNodes nodes = classify_patch_nodes(mesh, patch);
  std::ostringstream os;
  os << "{\"kind\":\"" << (patch.kind == PatchKind::Hierarchical ? "hierarchical" : "lod")
     << "\",\"level\":" << patch.level << ",\"mesh_level\":" << patch.mesh_level
     << ",\"m\":" << patch.m << ",\"center\":" << patch.center << ",\"box\":{\"lo\":[";
  for (int k = 0; k < mesh.dim; ++k) os << (k ? "," : "") << patch.box.lo[k];
  os << "],\"hi\":[";
  for (int k = 0; k < mesh.dim; ++k) os << (k ? "," : "") << patch.box.hi[k];
  os << "]},\"clipped\":" << (patch.clipped ? "true" : "false")
     << ",\"interior_nodes\":" << nodes.interior.size()
     << ",\"sigma_nodes\":" << nodes.sigma.size() << "}";
  return os.str();
}

}  // namespace hslod
