#include "hslod/fem.hpp"

#include <cmath>
#include <unordered_map>

#include "hslod/util.hpp"

namespace hslod {

namespace {

// Corner c of the unit cell has coordinates ((c>>k)&1); shape function c is
// the product over axes of x_k or (1-x_k) accordingly.
double shape_value(int dim, int corner, const std::array<double, 3>& x) {
  double v = 1.0;
  for (int k = 0; k < dim; ++k) v *= ((corner >> k) & 1) ? x[k] : 1.0 - x[k];
  return v;
}

double shape_grad(int dim, int corner, int axis, const std::array<double, 3>& x) {
  double v = ((corner >> axis) & 1) ? 1.0 : -1.0;
  for (int k = 0; k < dim; ++k) {
    if (k == axis) continue;
    v *= ((corner >> k) & 1) ? x[k] : 1.0 - x[k];
  }
  return v;
}

ReferenceElement build_reference(int dim) {
  ReferenceElement ref;
  ref.dim = dim;
  int nc = 1 << dim;
  ref.K = DenseMat::Zero(nc, nc);
  ref.M = DenseMat::Zero(nc, nc);
  // tensor 2-point Gauss on [0,1]: points 1/2 +- 1/(2 sqrt 3), weight 1/2
  const double off = 0.5 / std::sqrt(3.0);
  int ng = nc;
  ref.gauss_points.resize(ng);
  ref.gauss_weight = 1.0;
  for (int k = 0; k < dim; ++k) ref.gauss_weight *= 0.5;
  ref.shape_at_gauss = DenseMat::Zero(ng, nc);
  for (int g = 0; g < ng; ++g) {
    std::array<double, 3> x{0.5, 0.5, 0.5};
    for (int k = 0; k < dim; ++k) x[k] = 0.5 + (((g >> k) & 1) ? off : -off);
    ref.gauss_points[g] = x;
    for (int c = 0; c < nc; ++c) ref.shape_at_gauss(g, c) = shape_value(dim, c, x);
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) {
        double grad = 0.0;
        for (int k = 0; k < dim; ++k)
          grad += shape_grad(dim, a, k, x) * shape_grad(dim, b, k, x);
        ref.K(a, b) += ref.gauss_weight * grad;
        ref.M(a, b) += ref.gauss_weight * shape_value(dim, a, x) * shape_value(dim, b, x);
      }
  }
  return ref;
}

// Gathers the 2^d corner values of `u` for the fine element at `e`.
void gather_corners(int dim, const FineFunction& u, const std::array<int, 3>& e,
                    double* out) {
  int nc = 1 << dim;
  for (int c = 0; c < nc; ++c) {
    std::array<int, 3> node = e;
    for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
    out[c] = u.at(dim, node);
  }
}

IndexBox element_support(int dim, const FineFunction& u, int n_elems) {
  // elements on which u can be nonzero: node box widened one layer downward
  IndexBox r;
  for (int k = 0; k < dim; ++k) {
    r.lo[k] = std::max(0, u.node_box.lo[k] - 1);
    r.hi[k] = std::min(n_elems - 1, u.node_box.hi[k]);
  }
  return r;
}

}  // namespace

const ReferenceElement& reference_element(int dim) {
  static const ReferenceElement refs[3] = {build_reference(1), build_reference(2),
                                           build_reference(3)};
  if (dim < 1 || dim > 3) throw ConfigError("reference_element: dim out of range");
  return refs[dim - 1];
}

PatchSystem assemble_patch_system(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff) {
  const int dim = mesh.dim;
  const ReferenceElement& ref = reference_element(dim);
  PatchSystem sys;
  sys.patch = patch;
  IndexBox nodes = patch.fine_nodes(mesh);
  IndexBox inner = nodes;
  for (int k = 0; k < dim; ++k) {
    inner.lo[k] += 1;
    inner.hi[k] -= 1;
    if (inner.lo[k] > inner.hi[k])
      throw NumericalError("patch", "patch has no interior fine nodes");
  }
  sys.inner_nodes = inner;
  const std::int64_t n = inner.count(dim);
  const int nc = 1 << dim;
  const double scale_pow = std::pow(mesh.h(), dim - 2);
  std::vector<Triplet> triplets;
  triplets.reserve(n * (std::int64_t(1) << (2 * dim)) / 2);
  for_each_in_box(dim, patch.fine_elements(mesh), [&](const std::array<int, 3>& e) {
    double a_e = coeff.value_at_fine(mesh, e) * scale_pow;
    std::array<std::int64_t, 8> row{};
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      row[c] = inner.contains(dim, node) ? inner.offset(dim, node) : -1;
    }
    for (int a = 0; a < nc; ++a) {
      if (row[a] < 0) continue;
      for (int b = 0; b <= a; ++b) {
        if (row[b] < 0 || row[b] > row[a]) continue;
        triplets.emplace_back(row[a], row[b], a_e * ref.K(a, b));
      }
      for (int b = a + 1; b < nc; ++b) {
        if (row[b] < 0 || row[b] > row[a]) continue;
        triplets.emplace_back(row[a], row[b], a_e * ref.K(a, b));
      }
    }
  });
  SparseSym K = SparseSym::from_triplets(n, triplets);
  sys.factor = std::make_shared<CholeskyFactor>(K, "patch stiffness");
  return sys;
}

FineFunction local_inverse_apply(const MeshHierarchy& mesh, const PatchSystem& system,
                                 const Q0Function& g) {
  const int dim = mesh.dim;
  const IndexBox inner = system.inner_nodes;
  const int ratio = 1 << (mesh.fine_exponent - g.exponent);
  const double corner_load = std::pow(mesh.h(), dim) / (1 << dim);
  DenseVec rhs = DenseVec::Zero(inner.count(dim));
  // fine elements inside both the patch and the support of g
  IndexBox gfine;
  for (int k = 0; k < dim; ++k) {
    gfine.lo[k] = g.elem_box.lo[k] * ratio;
    gfine.hi[k] = (g.elem_box.hi[k] + 1) * ratio - 1;
  }
  IndexBox region = system.patch.fine_elements(mesh).intersection(dim, gfine);
  for (int k = 0; k < dim; ++k)
    if (region.lo[k] > region.hi[k]) {
      FineFunction zero;
      zero.node_box = system.patch.fine_nodes(mesh);
      zero.values = DenseVec::Zero(zero.node_box.count(dim));
      return zero;
    }
  const int nc = 1 << dim;
  for_each_in_box(dim, region, [&](const std::array<int, 3>& e) {
    std::array<int, 3> ge{0, 0, 0};
    for (int k = 0; k < dim; ++k) ge[k] = e[k] / ratio;
    double gv = g.values[g.elem_box.offset(dim, ge)];
    if (gv == 0.0) return;
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      if (inner.contains(dim, node)) rhs[inner.offset(dim, node)] += gv * corner_load;
    }
  });
  DenseVec sol = system.factor->solve_checked(rhs);
  FineFunction out;
  out.node_box = system.patch.fine_nodes(mesh);
  out.values = DenseVec::Zero(out.node_box.count(dim));
  for_each_in_box(dim, inner, [&](const std::array<int, 3>& node) {
    out.values[out.node_box.offset(dim, node)] = sol[inner.offset(dim, node)];
  });
  return out;
}

Q0Function project_q0(const MeshHierarchy& mesh, int level, const FineFunction& u) {
  const int dim = mesh.dim;
  const int ratio = mesh.refinement_ratio(level);
  const int n_coarse = mesh.cells_per_axis(level);
  IndexBox ufine = element_support(dim, u, mesh.fine_cells_per_axis());
  Q0Function out;
  out.exponent = mesh.level_exponent(level);
  for (int k = 0; k < dim; ++k) {
    out.elem_box.lo[k] = std::max(0, ufine.lo[k] / ratio);
    out.elem_box.hi[k] = std::min(n_coarse - 1, ufine.hi[k] / ratio);
  }
  out.values = DenseVec::Zero(out.elem_box.count(dim));
  const int nc = 1 << dim;
  const double inv_mean = 1.0 / nc;
  // mean over the coarse element of the Q1 interpolant = average of the fine
  // corner means (exact for multilinear integrands)
  double fine_per_coarse = std::pow(double(ratio), dim);
  double corners[8];
  for_each_in_box(dim, out.elem_box, [&](const std::array<int, 3>& T) {
    IndexBox fine;
    for (int k = 0; k < dim; ++k) {
      fine.lo[k] = T[k] * ratio;
      fine.hi[k] = (T[k] + 1) * ratio - 1;
    }
    double sum = 0.0;
    for_each_in_box(dim, fine, [&](const std::array<int, 3>& e) {
      gather_corners(dim, u, e, corners);
      double m = 0.0;
      for (int c = 0; c < nc; ++c) m += corners[c];
      sum += m * inv_mean;
    });
    out.values[out.elem_box.offset(dim, T)] = sum / fine_per_coarse;
  });
  return out;
}

namespace {

double form_over_intersection(const MeshHierarchy& mesh, const CoefficientField* coeff,
                              const DenseMat& ref_matrix, double h_power,
                              const FineFunction& u, const FineFunction& v) {
  const int dim = mesh.dim;
  const int n_elems = mesh.fine_cells_per_axis();
  IndexBox eu = element_support(dim, u, n_elems);
  IndexBox ev = element_support(dim, v, n_elems);
  if (!eu.intersects(dim, ev)) return 0.0;
  IndexBox region = eu.intersection(dim, ev);
  const int nc = 1 << dim;
  const double scale = std::pow(mesh.h(), h_power);
  double uc[8], vc[8];
  double total = 0.0;
  for_each_in_box(dim, region, [&](const std::array<int, 3>& e) {
    gather_corners(dim, u, e, uc);
    gather_corners(dim, v, e, vc);
    double acc = 0.0;
    for (int a = 0; a < nc; ++a) {
      if (uc[a] == 0.0) continue;
      double rowsum = 0.0;
      for (int b = 0; b < nc; ++b) rowsum += ref_matrix(a, b) * vc[b];
      acc += uc[a] * rowsum;
    }
    if (coeff) acc *= coeff->value_at_fine(mesh, e);
    total += acc;
  });
  return total * scale;
}

}  // namespace

double energy_inner(const MeshHierarchy& mesh, const CoefficientField& coeff,
                    const FineFunction& u, const FineFunction& v) {
  return form_over_intersection(mesh, &coeff, reference_element(mesh.dim).K,
                                mesh.dim - 2, u, v);
}

double energy_norm(const MeshHierarchy& mesh, const CoefficientField& coeff,
                   const FineFunction& u) {
  return std::sqrt(std::max(0.0, energy_inner(mesh, coeff, u, u)));
}

double l2_inner(const MeshHierarchy& mesh, const FineFunction& u, const FineFunction& v) {
  return form_over_intersection(mesh, nullptr, reference_element(mesh.dim).M, mesh.dim,
                                u, v);
}

double l2_norm(const MeshHierarchy& mesh, const FineFunction& u) {
  return std::sqrt(std::max(0.0, l2_inner(mesh, u, u)));
}

double h1_seminorm(const MeshHierarchy& mesh, const FineFunction& u) {
  double q = form_over_intersection(mesh, nullptr, reference_element(mesh.dim).K,
                                    mesh.dim - 2, u, u);
  return std::sqrt(std::max(0.0, q));
}

DenseMat conormal_residual_matrix(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff,
                                  const std::vector<FineFunction>& harmonics) {
  const int dim = mesh.dim;
  const ReferenceElement& ref = reference_element(dim);
  PatchNodes nodes = classify_patch_nodes(mesh, patch);
  const std::size_t n_sigma = nodes.sigma.size();
  const std::size_t n_e = harmonics.size();
  IndexBox patch_elems = patch.elements_at(mesh, patch.level);
  if (static_cast<std::int64_t>(n_e) != patch_elems.count(dim))
    throw ConfigError("conormal_residual_matrix: one harmonic per patch element required");
  DenseMat B = DenseMat::Zero(n_sigma, n_e);
  if (n_sigma == 0) return B;
  std::unordered_map<std::int64_t, int> sigma_row;
  sigma_row.reserve(n_sigma * 2);
  for (std::size_t i = 0; i < n_sigma; ++i) sigma_row[nodes.sigma[i]] = static_cast<int>(i);

  const int nn = mesh.fine_nodes_per_axis();
  const int nc = 1 << dim;
  const int ratio = mesh.refinement_ratio(patch.level);
  const double stiff_scale = std::pow(mesh.h(), dim - 2);
  const double corner_load = std::pow(mesh.h(), dim) / nc;
  double uc[8];
  for_each_in_box(dim, patch.fine_elements(mesh), [&](const std::array<int, 3>& e) {
    double a_e = coeff.value_at_fine(mesh, e) * stiff_scale;
    // column of the T_level element containing this fine element
    std::array<int, 3> Tc{0, 0, 0};
    for (int k = 0; k < dim; ++k) Tc[k] = e[k] / ratio;
    std::int64_t load_col = patch_elems.offset(dim, Tc);
    int rows[8];
    std::array<std::int64_t, 8> node_ids{};
    bool any_sigma = false;
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      node_ids[c] = lex_index(dim, nn, node);
      auto it = sigma_row.find(node_ids[c]);
      rows[c] = it == sigma_row.end() ? -1 : it->second;
      any_sigma |= rows[c] >= 0;
    }
    if (!any_sigma) return;
    for (std::size_t j = 0; j < n_e; ++j) {
      gather_corners(dim, harmonics[j], e, uc);
      for (int s = 0; s < nc; ++s) {
        if (rows[s] < 0) continue;
        double acc = 0.0;
        for (int b = 0; b < nc; ++b) acc += ref.K(s, b) * uc[b];
        B(rows[s], j) += a_e * acc;
        if (static_cast<std::int64_t>(j) == load_col) B(rows[s], j) -= corner_load;
      }
    }
  });
  return B;
}

DenseMat conormal_residual_matrix(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff) {
  PatchSystem sys = assemble_patch_system(mesh, patch, coeff);
  IndexBox patch_elems = patch.elements_at(mesh, patch.level);
  std::vector<FineFunction> harmonics;
  harmonics.reserve(patch_elems.count(mesh.dim));
  for_each_in_box(mesh.dim, patch_elems, [&](const std::array<int, 3>& T) {
    Q0Function chi;
    chi.exponent = mesh.level_exponent(patch.level);
    chi.elem_box.lo = chi.elem_box.hi = T;
    chi.values = DenseVec::Ones(1);
    harmonics.push_back(local_inverse_apply(mesh, sys, chi));
  });
  return conormal_residual_matrix(mesh, patch, coeff, harmonics);
}

Q0Function element_indicator(const MeshHierarchy& mesh, int level, std::int64_t element) {
  Q0Function chi;
  chi.exponent = mesh.level_exponent(level);
  auto c = coords_of(mesh.dim, mesh.cells_per_axis(level), element);
  chi.elem_box.lo = chi.elem_box.hi = c;
  chi.values = DenseVec::Ones(1);
  return chi;
}

DenseVec fine_load(const MeshHierarchy& mesh, const ScalarField& f) {
  const int dim = mesh.dim;
  const ReferenceElement& ref = reference_element(dim);
  const int nn = mesh.fine_nodes_per_axis();
  const int nc = 1 << dim;
  const double h = mesh.h();
  const double w = ref.gauss_weight * std::pow(h, dim);
  std::int64_t total = 1;
  for (int k = 0; k < dim; ++k) total *= nn;
  DenseVec load = DenseVec::Zero(total);
  IndexBox all;
  for (int k = 0; k < dim; ++k) all.hi[k] = mesh.fine_cells_per_axis() - 1;
  for_each_in_box(dim, all, [&](const std::array<int, 3>& e) {
    std::array<std::int64_t, 8> ids{};
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      ids[c] = lex_index(dim, nn, node);
    }
    for (std::size_t g = 0; g < ref.gauss_points.size(); ++g) {
      std::array<double, 3> x{0.0, 0.0, 0.0};
      for (int k = 0; k < dim; ++k) x[k] = (e[k] + ref.gauss_points[g][k]) * h;
      double fv = f(x);
      if (fv == 0.0) continue;
      for (int c = 0; c < nc; ++c) load[ids[c]] += w * fv * ref.shape_at_gauss(g, c);
    }
  });
  return load;
}

DenseVec fine_load_q0(const MeshHierarchy& mesh, const Q0Function& g) {
  const int dim = mesh.dim;
  const int nn = mesh.fine_nodes_per_axis();
  const int nc = 1 << dim;
  const int ratio = 1 << (mesh.fine_exponent - g.exponent);
  const double corner_load = std::pow(mesh.h(), dim) / nc;
  std::int64_t total = 1;
  for (int k = 0; k < dim; ++k) total *= nn;
  DenseVec load = DenseVec::Zero(total);
  IndexBox gfine;
  for (int k = 0; k < dim; ++k) {
    gfine.lo[k] = g.elem_box.lo[k] * ratio;
    gfine.hi[k] = (g.elem_box.hi[k] + 1) * ratio - 1;
  }
  for_each_in_box(dim, gfine, [&](const std::array<int, 3>& e) {
    std::array<int, 3> ge{0, 0, 0};
    for (int k = 0; k < dim; ++k) ge[k] = e[k] / ratio;
    double gv = g.values[g.elem_box.offset(dim, ge)] * corner_load;
    if (gv == 0.0) return;
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      load[lex_index(dim, nn, node)] += gv;
    }
  });
  return load;
}

double load_inner(const MeshHierarchy& mesh, const DenseVec& load, const FineFunction& u) {
  const int dim = mesh.dim;
  const int nn = mesh.fine_nodes_per_axis();
  double acc = 0.0;
  std::int64_t i = 0;
  std::array<int, 3> p = u.node_box.lo;
  for (;;) {
    acc += load[lex_index(dim, nn, p)] * u.values[i];
    ++i;
    int k = 0;
    while (k < dim) {
      if (++p[k] <= u.node_box.hi[k]) break;
      p[k] = u.node_box.lo[k];
      ++k;
    }
    if (k == dim) break;
  }
  return acc;
}

IndexBox global_inner_nodes(const MeshHierarchy& mesh) {
  IndexBox inner;
  for (int k = 0; k < mesh.dim; ++k) {
    inner.lo[k] = 1;
    inner.hi[k] = mesh.fine_cells_per_axis() - 1;
  }
  return inner;
}

SparseSym assemble_global_stiffness(const MeshHierarchy& mesh,
                                    const CoefficientField& coeff) {
  const int dim = mesh.dim;
  const ReferenceElement& ref = reference_element(dim);
  IndexBox inner = global_inner_nodes(mesh);
  const std::int64_t n = inner.count(dim);
  const int nc = 1 << dim;
  const double scale_pow = std::pow(mesh.h(), dim - 2);
  std::vector<Triplet> triplets;
  triplets.reserve(n * (std::int64_t(1) << (2 * dim)) / 2);
  IndexBox all;
  for (int k = 0; k < dim; ++k) all.hi[k] = mesh.fine_cells_per_axis() - 1;
  for_each_in_box(dim, all, [&](const std::array<int, 3>& e) {
    double a_e = coeff.value_at_fine(mesh, e) * scale_pow;
    std::array<std::int64_t, 8> row{};
    for (int c = 0; c < nc; ++c) {
      std::array<int, 3> node = e;
      for (int k = 0; k < dim; ++k) node[k] += (c >> k) & 1;
      row[c] = inner.contains(dim, node) ? inner.offset(dim, node) : -1;
    }
    for (int a = 0; a < nc; ++a) {
      if (row[a] < 0) continue;
      for (int b = 0; b < nc; ++b) {
        if (row[b] < 0 || row[b] > row[a]) continue;
        triplets.emplace_back(row[a], row[b], a_e * ref.K(a, b));
      }
    }
  });
  return SparseSym::from_triplets(n, triplets);
}

FineFunction fine_function_from_interior(const MeshHierarchy& mesh,
                                         const DenseVec& interior) {
  const int dim = mesh.dim;
  IndexBox inner = global_inner_nodes(mesh);
  FineFunction out;
  for (int k = 0; k < dim; ++k) {
    out.node_box.lo[k] = 0;
    out.node_box.hi[k] = mesh.fine_cells_per_axis();
  }
  out.values = DenseVec::Zero(out.node_box.count(dim));
  for_each_in_box(dim, inner, [&](const std::array<int, 3>& node) {
    out.values[out.node_box.offset(dim, node)] = interior[inner.offset(dim, node)];
  });
  return out;
}

DenseVec interior_values(const MeshHierarchy& mesh, const FineFunction& u) {
  const int dim = mesh.dim;
  IndexBox inner = global_inner_nodes(mesh);
  DenseVec out = DenseVec::Zero(inner.count(dim));
  IndexBox region = inner.intersection(dim, u.node_box);
  for (int k = 0; k < dim; ++k)
    if (region.lo[k] > region.hi[k]) return out;
  for_each_in_box(dim, region, [&](const std::array<int, 3>& node) {
    out[inner.offset(dim, node)] = u.values[u.node_box.offset(dim, node)];
  });
  return out;
}

}  // namespace hslod
