#include "hslod/lod.hpp"

#include <cmath>
#include <limits>

#include "hslod/util.hpp"

namespace hslod {

PatchLodData compute_patch_lod(const MeshHierarchy& mesh, const CoefficientField& coeff,
                               const Patch& patch) {
  const int dim = mesh.dim;
  PatchLodData data;
  data.patch = patch;
  data.system = assemble_patch_system(mesh, patch, coeff);
  data.patch_elements = patch.elements_at(mesh, patch.level);
  data.n_elements = data.patch_elements.count(dim);
  const std::int64_t n_e = data.n_elements;

  data.harmonics.reserve(n_e);
  for_each_in_box(dim, data.patch_elements, [&](const std::array<int, 3>& T) {
    Q0Function chi;
    chi.exponent = mesh.level_exponent(patch.level);
    chi.elem_box.lo = chi.elem_box.hi = T;
    chi.values = DenseVec::Ones(1);
    data.harmonics.push_back(local_inverse_apply(mesh, data.system, chi));
  });

  // element averages of every harmonic over the patch elements, taken from
  // the computed fine values
  data.harmonic_projections = DenseMat::Zero(n_e, n_e);
  for (std::int64_t j = 0; j < n_e; ++j) {
    Q0Function proj = project_q0(mesh, patch.level, data.harmonics[j]);
    std::int64_t i = 0;
    for_each_in_box(dim, data.patch_elements, [&](const std::array<int, 3>& p) {
      data.harmonic_projections(i++, j) = proj.at(dim, p);
    });
  }

  const double volume = std::pow(mesh.H(patch.level), dim);
  data.D = volume * data.harmonic_projections;

  Eigen::JacobiSVD<DenseMat> dsvd(data.D);
  const DenseVec& sv = dsvd.singularValues();
  double smin = sv[sv.size() - 1], smax = sv[0];
  data.d_condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(smin > 0.0) || data.d_condition > kSvdConditionFilter)
    throw NumericalError("lod", "interaction matrix D is numerically singular "
                                "(condition " + std::to_string(data.d_condition) +
                                ") on the patch centered at element " +
                                std::to_string(patch.center) + " of level " +
                                std::to_string(patch.level));

  Eigen::LDLT<DenseMat> dldlt(data.D);
  data.companions = dldlt.solve(volume * DenseMat::Identity(n_e, n_e));
  return data;
}

FineFunction harmonic_combination(const MeshHierarchy& mesh, const PatchLodData& data,
                                  const DenseVec& coeffs) {
  FineFunction out;
  out.node_box = data.patch.fine_nodes(mesh);
  out.values = DenseVec::Zero(out.node_box.count(mesh.dim));
  for (std::int64_t j = 0; j < data.n_elements; ++j) {
    if (coeffs[j] == 0.0) continue;
    // all harmonics share the patch node box
    out.values += coeffs[j] * data.harmonics[j].values;
  }
  return out;
}

FineFunction lod_function(const MeshHierarchy& mesh, const PatchLodData& data,
                          std::int64_t local) {
  return harmonic_combination(mesh, data, data.companions.col(local));
}

Q0Function lod_companion(const MeshHierarchy& mesh, const PatchLodData& data,
                         std::int64_t local) {
  Q0Function g;
  g.exponent = mesh.level_exponent(data.patch.level);
  g.elem_box = data.patch_elements;
  g.values = data.companions.col(local);
  return g;
}

}  // namespace hslod
