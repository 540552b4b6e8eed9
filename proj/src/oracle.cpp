#include "hslod/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hslod/compress.hpp"
#include "hslod/util.hpp"

namespace hslod {

GlobalFineSystem make_global_fine_system(const MeshHierarchy& mesh,
                                         const CoefficientField& coeff,
                                         std::int64_t cap) {
  GlobalFineSystem system;
  system.mesh = mesh;
  system.coeff = coeff;
  system.inner_nodes = global_inner_nodes(mesh);
  const std::int64_t unknowns = system.inner_nodes.count(mesh.dim);
  if (unknowns > cap)
    throw ConfigError("global fine solve needs " + std::to_string(unknowns) +
                      " unknowns, above the cap of " + std::to_string(cap));
  system.factor = std::make_shared<CholeskyFactor>(
      assemble_global_stiffness(mesh, coeff), "global fine stiffness");
  return system;
}

FineFunction fine_solve(const GlobalFineSystem& system, const DenseVec& fine_load) {
  const int dim = system.mesh.dim;
  const int nodes = system.mesh.fine_nodes_per_axis();
  DenseVec rhs(system.inner_nodes.count(dim));
  std::int64_t i = 0;
  for_each_in_box(dim, system.inner_nodes, [&](const std::array<int, 3>& p) {
    rhs[i++] = fine_load[lex_index(dim, nodes, p)];
  });
  return fine_function_from_interior(system.mesh, system.factor->solve(rhs));
}

FineFunction fine_solve(const GlobalFineSystem& system, const ScalarField& f) {
  return fine_solve(system, fine_load(system.mesh, f));
}

FineFunction fine_solve(const GlobalFineSystem& system, const Q0Function& g) {
  return fine_solve(system, fine_load_q0(system.mesh, g));
}

KernelBasis global_kernel_basis(const GlobalFineSystem& system, int level,
                                std::int64_t element_cap) {
  const MeshHierarchy& mesh = system.mesh;
  if (level < 1 || level > mesh.levels)
    throw ConfigError("kernel construction needs a level in [1, " +
                      std::to_string(mesh.levels) + "], got " + std::to_string(level));
  const std::int64_t n_fine = mesh.element_count(level);
  if (n_fine > element_cap)
    throw ConfigError("kernel construction over " + std::to_string(n_fine) +
                      " elements is above the cap of " + std::to_string(element_cap));
  const std::int64_t n_coarse = mesh.element_count(level - 1);
  const double volume = std::pow(mesh.H(level - 1), mesh.dim);

  KernelBasis out;
  out.D.resize(n_coarse, n_fine);
  for (std::int64_t m = 0; m < n_fine; ++m) {
    FineFunction u = fine_solve(system, element_indicator(mesh, level, m));
    Q0Function means = project_q0(mesh, level - 1, u);
    out.D.col(m) = volume * means.values;
  }

  SvdResult s = svd_full_v(out.D);
  const double cutoff =
      s.singular_values.size() > 0 ? kLstsqRelCutoff * s.singular_values[0] : 0.0;
  for (Eigen::Index i = 0; i < s.singular_values.size(); ++i)
    if (s.singular_values[i] > cutoff) ++out.rank;
  out.kernel = s.V.rightCols(n_fine - out.rank);
  return out;
}

FineFunction dense_kkt_lod(const MeshHierarchy& mesh, const CoefficientField& coeff,
                           const Patch& patch, std::int64_t target_local) {
  PatchSystem system = assemble_patch_system(mesh, patch, coeff);
  const int dim = mesh.dim;
  const std::int64_t n = system.inner_nodes.count(dim);

  const IndexBox elems = patch.elements_at(mesh, patch.level);
  const std::int64_t n_elems = elems.count(dim);
  const int ratio = 1 << (mesh.fine_exponent - mesh.level_exponent(patch.level));
  const double h = mesh.h();
  const double corner_weight = std::pow(h, dim) / (1 << dim);
  const double volume = std::pow(mesh.H(patch.level), dim);

  // Constraint matrix: row per patch element, column per inner node, entry =
  // (elements containing the node) * corner integral / element volume.
  DenseMat P = DenseMat::Zero(n_elems, n);
  std::int64_t row = 0;
  for_each_in_box(dim, elems, [&](const std::array<int, 3>& E) {
    IndexBox fine;
    for (int k = 0; k < dim; ++k) {
      fine.lo[k] = E[k] * ratio;
      fine.hi[k] = (E[k] + 1) * ratio - 1;
    }
    for_each_in_box(dim, fine, [&](const std::array<int, 3>& e) {
      for (int corner = 0; corner < (1 << dim); ++corner) {
        std::array<int, 3> node = e;
        for (int k = 0; k < dim; ++k) node[k] += (corner >> k) & 1;
        if (!system.inner_nodes.contains(dim, node)) continue;
        P(row, system.inner_nodes.offset(dim, node)) += corner_weight / volume;
      }
    });
    ++row;
  });

  DenseMat K = system.factor->matrix().dense();
  DenseMat kkt = DenseMat::Zero(n + n_elems, n + n_elems);
  kkt.topLeftCorner(n, n) = K;
  kkt.topRightCorner(n, n_elems) = P.transpose();
  kkt.bottomLeftCorner(n_elems, n) = P;
  DenseVec rhs = DenseVec::Zero(n + n_elems);
  rhs[n + target_local] = 1.0;
  DenseVec sol = Eigen::FullPivLU<DenseMat>(kkt).solve(rhs);

  FineFunction u;
  u.node_box = patch.fine_nodes(mesh);
  u.values = DenseVec::Zero(u.node_box.count(dim));
  std::int64_t i = 0;
  for_each_in_box(dim, system.inner_nodes, [&](const std::array<int, 3>& p) {
    u.values[u.node_box.offset(dim, p)] = sol[i++];
  });
  return u;
}

FineFunction global_counterpart(const GlobalFineSystem& system, const Q0Function& companion) {
  return fine_solve(system, companion);
}

LocalizationGapReport localization_gap_report(const GlobalFineSystem& system,
                                              const HierarchicalBasis& basis,
                                              const BasisQuality& quality,
                                              int threads) {
  const MeshHierarchy& mesh = system.mesh;
  LocalizationGapReport report;
  report.zeta = quality.zeta;
  report.sigma_proxy = quality.sigma_proxy;
  report.max_elements = max_patch_elements(mesh, basis);
  const double diam = std::sqrt(static_cast<double>(mesh.dim));
  report.bound = (1.0 + diam / std::numbers::pi) *
                 std::sqrt(static_cast<double>(report.max_elements)) /
                 std::sqrt(system.coeff.alpha) * report.zeta * report.sigma_proxy;

  const std::int64_t n = basis.function_count();
  std::vector<double> gaps(n, 0.0);
  parallel_for(n, [&](std::int64_t g) {
    const HslodFunction& f = basis.function_at(g);
    FineFunction diff = global_counterpart(system, f.companion);
    std::int64_t local = 0;
    for_each_in_box(mesh.dim, f.values.node_box, [&](const std::array<int, 3>& p) {
      diff.values[diff.node_box.offset(mesh.dim, p)] -= f.values.values[local++];
    });
    gaps[g] = energy_norm(mesh, system.coeff, diff);
  }, threads);
  report.max_gap = *std::max_element(gaps.begin(), gaps.end());
  report.proxy_exceeded = report.max_gap > report.bound;
  return report;
}

}  // namespace hslod
