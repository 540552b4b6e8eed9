#include "hslod/hslod.hpp"

#include <cmath>
#include <limits>

#include "hslod/util.hpp"

namespace hslod {

namespace {

// Scatter-adds `src` (values on its own box) into `dst` (larger box).
void add_scaled(int dim, FineFunction& dst, const FineFunction& src, double scale) {
  if (scale == 0.0) return;
  for_each_in_box(dim, src.node_box, [&](const std::array<int, 3>& p) {
    dst.values[dst.node_box.offset(dim, p)] += scale * src.values[src.node_box.offset(dim, p)];
  });
}

void add_scaled_q0(int dim, Q0Function& dst, const Q0Function& src, double scale) {
  if (scale == 0.0) return;
  for_each_in_box(dim, src.elem_box, [&](const std::array<int, 3>& p) {
    dst.values[dst.elem_box.offset(dim, p)] += scale * src.values[src.elem_box.offset(dim, p)];
  });
}

// Level-0 functions are the superlocalized ones unchanged.
HslodLevel passthrough_level0(const SlodLevelBasis& slod) {
  HslodLevel level;
  level.level = 0;
  level.functions.reserve(slod.functions.size());
  for (const auto& s : slod.functions) {
    HslodFunction f;
    f.level = 0;
    f.parent = s.center;
    f.target_child = s.center;
    f.patch = s.patch;
    f.support_set = {s.center};
    f.coeffs_raw = DenseVec::Constant(1, s.unnorm_scale);
    f.coeffs = DenseVec::Ones(1);
    f.lsq_residual = 0.0;
    f.unnorm_scale = 1.0;
    f.values = s.values;
    f.companion = s.companion;
    // raw projection = averages of the unnormalized function
    f.pi_raw = s.projection;
    f.pi_raw.values *= s.unnorm_scale;
    level.functions.push_back(std::move(f));
  }
  return level;
}

}  // namespace

HslodLevel build_level(const MeshHierarchy& mesh, const CoefficientField& coeff,
                       const SlodLevelBasis& slod, int level,
                       const HslodOptions& options, int threads) {
  if (slod.level != level) throw ConfigError("build_level: level mismatch");
  if (level == 0) return passthrough_level0(slod);

  const int dim = mesh.dim;
  const int n_children = (1 << dim) - 1;
  const std::int64_t n_parents = mesh.element_count(level - 1);
  const int n_level = mesh.cells_per_axis(level);

  HslodLevel out;
  out.level = level;
  out.functions.resize(n_parents * n_children);

  parallel_for(
      n_parents,
      [&](std::size_t jp) {
        const auto parent = static_cast<std::int64_t>(jp);
        Patch patch = build_patch(mesh, PatchKind::Hierarchical, level, parent,
                                  options.m_at(level));
        IndexBox patch_fine_elems = patch.elements_at(mesh, level);

        // candidate functions: level-l functions whose own patches fit here
        std::vector<std::int64_t> support;
        for_each_in_box(dim, patch_fine_elems, [&](const std::array<int, 3>& c) {
          std::int64_t id = lex_index(dim, n_level, c);
          if (patch_fine_elems.contains_box(dim, slod.functions[id].patch.box))
            support.push_back(id);
        });
        if (support.empty())
          throw NumericalError("hslod", "no candidate functions fit in the patch of "
                                        "parent " + std::to_string(parent) +
                                        " at level " + std::to_string(level));
        const auto n_s = static_cast<std::int64_t>(support.size());

        // projections of the unnormalized candidates on the patch elements:
        // C on T_l, Q on T_{l-1} (each coarse average = mean of its children)
        const std::int64_t n_c = patch_fine_elems.count(dim);
        const std::int64_t n_q = patch.box.count(dim);
        DenseMat C = DenseMat::Zero(n_c, n_s);
        for (std::int64_t s = 0; s < n_s; ++s) {
          const SlodFunction& fn = slod.functions[support[s]];
          std::int64_t row = 0;
          for_each_in_box(dim, patch_fine_elems, [&](const std::array<int, 3>& p) {
            C(row++, s) = fn.unnorm_scale * fn.projection.at(dim, p);
          });
        }
        DenseMat Q = DenseMat::Zero(n_q, n_s);
        {
          const double child_mean = 1.0 / (1 << dim);
          std::int64_t row = 0;
          for_each_in_box(dim, patch.box, [&](const std::array<int, 3>& P) {
            for (int b = 0; b < (1 << dim); ++b) {
              std::array<int, 3> cc{0, 0, 0};
              for (int k = 0; k < dim; ++k) cc[k] = 2 * P[k] + ((b >> k) & 1);
              std::int64_t crow = patch_fine_elems.offset(dim, cc);
              Q.row(row) += child_mean * C.row(crow);
            }
            ++row;
          });
        }

        // kernel of Q: combinations with vanishing coarse averages
        SvdResult qs = svd_full_v(Q);
        std::int64_t q_rank = 0;
        for (Eigen::Index i = 0; i < qs.singular_values.size(); ++i)
          if (qs.singular_values[i] > 1e-12 * qs.singular_values[0]) ++q_rank;
        const std::int64_t kdim = n_s - q_rank;
        if (kdim <= 0)
          throw NumericalError("hslod", "coarse projection has no kernel on the patch "
                                        "of parent " + std::to_string(parent) +
                                        " at level " + std::to_string(level));
        DenseMat K = qs.V.rightCols(kdim);

        // kept children of the parent: all but the lexicographically first
        std::vector<std::int64_t> children = refinement_children(mesh, level - 1, parent);
        std::vector<std::int64_t> kept(children.begin() + 1, children.end());

        // row subset for the restricted mode: kept children of every coarse
        // element of the patch
        std::vector<std::int64_t> rows_restricted;
        for_each_in_box(dim, patch.box, [&](const std::array<int, 3>& P) {
          std::int64_t pid = lex_index(dim, mesh.cells_per_axis(level - 1), P);
          auto ch = refinement_children(mesh, level - 1, pid);
          for (std::size_t t = 1; t < ch.size(); ++t) {
            auto cc = coords_of(dim, n_level, ch[t]);
            rows_restricted.push_back(patch_fine_elems.offset(dim, cc));
          }
        });

        DenseMat CK = C * K;
        DenseMat CK_solve;
        if (options.restrict_rows) {
          CK_solve = DenseMat::Zero(rows_restricted.size(), kdim);
          for (std::size_t r = 0; r < rows_restricted.size(); ++r)
            CK_solve.row(r) = CK.row(rows_restricted[r]);
        } else {
          CK_solve = CK;
        }
        SvdResult cks = svd(CK_solve);
        std::int64_t ck_rank = 0;
        for (Eigen::Index i = 0; i < cks.singular_values.size(); ++i)
          if (cks.singular_values[i] > 1e-12 * cks.singular_values[0]) ++ck_rank;
        if (ck_rank < n_children)
          throw NumericalError("hslod", "least-squares system rank " +
                                        std::to_string(ck_rank) + " < " +
                                        std::to_string(n_children) + " on the patch of "
                                        "parent " + std::to_string(parent) +
                                        " at level " + std::to_string(level));

        DenseMat raw(n_s, n_children);
        std::vector<double> residuals(n_children);
        for (int t = 0; t < n_children; ++t) {
          auto cc = coords_of(dim, n_level, kept[t]);
          std::int64_t target_row = patch_fine_elems.offset(dim, cc);
          DenseVec e = DenseVec::Zero(CK_solve.rows());
          if (options.restrict_rows) {
            for (std::size_t r = 0; r < rows_restricted.size(); ++r)
              if (rows_restricted[r] == target_row) e[r] = 1.0;
          } else {
            e[target_row] = 1.0;
          }
          DenseVec y = DenseVec::Zero(kdim);
          double cutoff = kLstsqRelCutoff * cks.singular_values[0];
          for (Eigen::Index i = 0; i < cks.singular_values.size(); ++i)
            if (cks.singular_values[i] > cutoff)
              y += (cks.U.col(i).dot(e) / cks.singular_values[i]) * cks.V.col(i);
          raw.col(t) = K * y;
          // residual always measured on the kept-children condition
          DenseVec fit = CK * y;
          double res = 0.0;
          for (std::int64_t rr : rows_restricted) {
            double want = rr == target_row ? 1.0 : 0.0;
            res += (fit[rr] - want) * (fit[rr] - want);
          }
          residuals[t] = std::sqrt(res);
        }

        // per-patch orthogonalization of the coefficient vectors (stays in
        // the kernel of Q), then energy normalization per function
        DenseMat orth = qr_orthonormal(raw);
        for (int t = 0; t < n_children; ++t) {
          HslodFunction f;
          f.level = level;
          f.parent = parent;
          f.target_child = kept[t];
          f.patch = patch;
          f.support_set = support;
          f.coeffs_raw = raw.col(t);
          f.lsq_residual = residuals[t];

          f.values.node_box = patch.fine_nodes(mesh);
          f.values.values = DenseVec::Zero(f.values.node_box.count(dim));
          f.companion.exponent = mesh.level_exponent(level);
          f.companion.elem_box = patch_fine_elems;
          f.companion.values = DenseVec::Zero(n_c);
          for (std::int64_t s = 0; s < n_s; ++s) {
            const SlodFunction& sf = slod.functions[support[s]];
            double c_unnorm = orth(s, t) * sf.unnorm_scale;
            add_scaled(dim, f.values, sf.values, c_unnorm);
            add_scaled_q0(dim, f.companion, sf.companion, c_unnorm);
          }
          double norm = energy_norm(mesh, coeff, f.values);
          if (!(norm > 0.0))
            throw NumericalError("hslod", "zero energy norm for child " +
                                          std::to_string(kept[t]) + " of parent " +
                                          std::to_string(parent));
          f.unnorm_scale = norm;
          f.values.values /= norm;
          f.companion.values /= norm;
          f.coeffs = DenseVec(n_s);
          for (std::int64_t s = 0; s < n_s; ++s)
            f.coeffs[s] = orth(s, t) * slod.functions[support[s]].unnorm_scale / norm;

          f.pi_raw.exponent = mesh.level_exponent(level);
          f.pi_raw.elem_box = patch_fine_elems;
          f.pi_raw.values = C * raw.col(t);

          out.functions[jp * n_children + t] = std::move(f);
        }
      },
      threads);
  return out;
}

HierarchicalBasis build_basis(const MeshHierarchy& mesh, const CoefficientField& coeff,
                              const HslodOptions& options, int threads) {
  HierarchicalBasis basis;
  basis.mesh = mesh;
  basis.options = options;
  basis.slod_levels.reserve(mesh.levels + 1);
  basis.levels.reserve(mesh.levels + 1);
  for (int l = 0; l <= mesh.levels; ++l) {
    SlodOptions level_options = options.slod;
    level_options.m = options.m_at(l);
    basis.slod_levels.push_back(
        slod_level_basis(mesh, coeff, l, level_options, threads));
    basis.levels.push_back(
        build_level(mesh, coeff, basis.slod_levels.back(), l, options, threads));
  }
  return basis;
}

SparseSym assemble_level_gram(const MeshHierarchy& mesh, const CoefficientField& coeff,
                              const HierarchicalBasis& basis, int level, int threads) {
  const auto& fns = basis.levels[level].functions;
  const auto n = static_cast<std::int64_t>(fns.size());
  std::vector<std::vector<Triplet>> rows(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        for (std::int64_t j = 0; j <= static_cast<std::int64_t>(i); ++j) {
          if (!fns[i].values.node_box.intersects(mesh.dim, fns[j].values.node_box))
            continue;
          double v = energy_inner(mesh, coeff, fns[i].values, fns[j].values);
          rows[i].emplace_back(i, j, v);
        }
      },
      threads);
  std::vector<Triplet> triplets;
  for (auto& r : rows) triplets.insert(triplets.end(), r.begin(), r.end());
  return SparseSym::from_triplets(n, triplets);
}

BasisQuality basis_quality(const MeshHierarchy& mesh, const CoefficientField& coeff,
                           const HierarchicalBasis& basis, int threads,
                           const std::vector<SparseSym>* level_grams) {
  BasisQuality q;
  for (const auto& level : basis.levels) {
    for (const auto& f : level.functions) {
      q.zeta = std::max(q.zeta, f.coeffs.norm());
      q.max_lsq_residual = std::max(q.max_lsq_residual, f.lsq_residual);
    }
  }
  for (const auto& slod : basis.slod_levels)
    for (const auto& s : slod.functions)
      q.sigma_proxy = std::max(q.sigma_proxy, s.boundary_residual);

  for (int l = 0; l < static_cast<int>(basis.levels.size()); ++l) {
    const auto& fns = basis.levels[l].functions;
    const auto nb = static_cast<std::int64_t>(fns.size());
    const std::int64_t n_elems = mesh.element_count(l);
    // P~: element-average image of the raw solutions, level elements x functions
    Eigen::SparseMatrix<double> P(n_elems, nb);
    std::vector<Triplet> ts;
    for (std::int64_t i = 0; i < nb; ++i) {
      const Q0Function& pi = fns[i].pi_raw;
      std::int64_t row = 0;
      for_each_in_box(mesh.dim, pi.elem_box, [&](const std::array<int, 3>& p) {
        double v = pi.values[row++];
        if (v != 0.0)
          ts.emplace_back(lex_index(mesh.dim, mesh.cells_per_axis(l), p), i, v);
      });
    }
    P.setFromTriplets(ts.begin(), ts.end());
    Eigen::SparseMatrix<double> PtP = Eigen::SparseMatrix<double>(P.transpose()) * P;
    std::vector<Triplet> lower;
    for (int k = 0; k < PtP.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(PtP, k); it; ++it)
        if (it.row() >= it.col()) lower.emplace_back(it.row(), it.col(), it.value());
    SparseSym S = SparseSym::from_triplets(nb, lower);
    q.lambda_min_projection.push_back(extremal_eigs(S).lambda_min);

    SparseSym gram = level_grams ? (*level_grams)[l]
                                 : assemble_level_gram(mesh, coeff, basis, l, threads);
    EigPair eig = extremal_eigs(gram);
    q.gram_lambda_min.push_back(eig.lambda_min);
    q.gram_lambda_max.push_back(eig.lambda_max);
    q.gram_kappa.push_back(eig.lambda_min > 0.0
                               ? eig.lambda_max / eig.lambda_min
                               : std::numeric_limits<double>::infinity());
  }
  return q;
}

}  // namespace hslod
