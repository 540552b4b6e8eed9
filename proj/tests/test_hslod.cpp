#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "hslod/compress.hpp"
#include "hslod/hslod.hpp"
#include "hslod/util.hpp"

using namespace hslod;

namespace {

HslodOptions default_options(int m) {
  HslodOptions options;
  options.slod.m = m;
  options.slod.delta_s = 0.5;
  return options;
}

// max |values| of the coarse element averages of f (zero for a valid
// level >= 1 function: its combination is constrained to the projection
// kernel of the parent mesh)
double max_parent_average(const MeshHierarchy& mesh, const HslodFunction& f) {
  Q0Function avg = project_q0(mesh, f.level - 1, f.values);
  return avg.values.size() ? avg.values.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

TEST_CASE("per-level overrides of the patch order fall back to the last entry") {
  HslodOptions options = default_options(2);
  CHECK(options.m_at(0) == 2);
  CHECK(options.m_at(7) == 2);
  options.m_per_level = {1, 3};
  CHECK(options.m_at(0) == 1);
  CHECK(options.m_at(1) == 3);
  CHECK(options.m_at(6) == 3);
}

TEST_CASE("the hierarchy holds one function per element at level zero and "
          "2^d-1 per parent beyond") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 2, 5);
  CoefficientField coeff = random_piecewise_constant(2, 3, 1.0, 10.0, 3);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(1), 1);

  REQUIRE(static_cast<int>(basis.levels.size()) == 3);
  CHECK(basis.level_size(0) == 4);
  CHECK(basis.level_size(1) == 12);
  CHECK(basis.level_size(2) == 48);
  CHECK(basis.function_count() == 64);
  CHECK(basis.level_offset(2) == 16);

  // global indexing walks levels front to back
  const HslodFunction& f = basis.function_at(20);
  CHECK(f.level == 2);
  CHECK(&f == &basis.levels[2].functions[4]);

  // level 0 reuses the superlocalized functions verbatim
  for (std::int64_t i = 0; i < basis.level_size(0); ++i) {
    const HslodFunction& g = basis.levels[0].functions[i];
    CHECK(g.parent == g.target_child);
    CHECK(g.values.values == basis.slod_levels[0].functions[i].values.values);
  }

  // deeper levels: functions grouped by parent, kept children ascending,
  // the lexicographically first child is never a target
  for (int level = 1; level <= 2; ++level) {
    for (std::int64_t i = 0; i < basis.level_size(level); ++i) {
      const HslodFunction& g = basis.levels[level].functions[i];
      CHECK(g.level == level);
      CHECK(g.parent == i / 3);
      CHECK(parent_element(mesh, level, g.target_child) == g.parent);
      auto children = refinement_children(mesh, level - 1, g.parent);
      CHECK(g.target_child == children[1 + (i % 3)]);
    }
  }
}

TEST_CASE("every function is energy-normalized with vanishing parent averages") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 2, 5);
  CoefficientField coeff = random_piecewise_constant(2, 3, 1.0, 10.0, 3);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(1), 1);

  for (const auto& level : basis.levels) {
    for (const auto& f : level.functions) {
      CHECK(energy_norm(mesh, coeff, f.values) == doctest::Approx(1.0).epsilon(1e-8));
      if (f.level >= 1) CHECK(max_parent_average(mesh, f) <= 1e-9);
    }
  }
}

TEST_CASE("final coefficients recombine the normalized level basis") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 9);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(1), 1);
  const SlodLevelBasis& slod = basis.slod_levels[1];

  for (const auto& f : basis.levels[1].functions) {
    REQUIRE(f.coeffs.size() == static_cast<Eigen::Index>(f.support_set.size()));
    FineFunction manual;
    manual.node_box = f.values.node_box;
    manual.values = DenseVec::Zero(manual.node_box.count(2));
    for (Eigen::Index s = 0; s < f.coeffs.size(); ++s) {
      const SlodFunction& base = slod.functions[f.support_set[s]];
      std::int64_t i = 0;
      for_each_in_box(2, base.values.node_box, [&](const std::array<int, 3>& p) {
        manual.values[manual.node_box.offset(2, p)] +=
            f.coeffs[s] * base.values.values[i++];
      });
    }
    CHECK((manual.values - f.values.values).norm() <= 1e-9);

    // raw projections are the level averages of the raw combination
    DenseVec pi_manual = DenseVec::Zero(f.pi_raw.values.size());
    for (Eigen::Index s = 0; s < f.coeffs_raw.size(); ++s) {
      const SlodFunction& base = slod.functions[f.support_set[s]];
      std::int64_t i = 0;
      for_each_in_box(2, base.projection.elem_box, [&](const std::array<int, 3>& p) {
        pi_manual[f.pi_raw.elem_box.offset(2, p)] +=
            f.coeffs_raw[s] * base.unnorm_scale * base.projection.values[i++];
      });
    }
    CHECK((pi_manual - f.pi_raw.values).norm() <= 1e-10 * (1.0 + pi_manual.norm()));
  }
}

TEST_CASE("basis quality aggregates coefficients, residuals and gram spectra") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 9);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(1), 1);
  BasisQuality q = basis_quality(mesh, coeff, basis, 1);

  double zeta = 0.0, res = 0.0;
  for (const auto& level : basis.levels)
    for (const auto& f : level.functions) {
      zeta = std::max(zeta, f.coeffs.norm());
      res = std::max(res, f.lsq_residual);
    }
  CHECK(q.zeta == doctest::Approx(zeta));
  CHECK(q.max_lsq_residual == doctest::Approx(res).epsilon(1e-12));

  REQUIRE(q.gram_kappa.size() == 2);
  for (int l = 0; l < 2; ++l) {
    SparseSym gram = assemble_level_gram(mesh, coeff, basis, l, 1);
    EigPair e = extremal_eigs(gram);
    CHECK(q.gram_lambda_min[l] == doctest::Approx(e.lambda_min).epsilon(1e-8));
    CHECK(q.gram_lambda_max[l] == doctest::Approx(e.lambda_max).epsilon(1e-8));
    CHECK(q.gram_kappa[l] == doctest::Approx(e.lambda_max / e.lambda_min).epsilon(1e-6));
    // normalization puts unit diagonal into the gram matrix
    DenseMat dense = gram.dense();
    for (Eigen::Index i = 0; i < dense.rows(); ++i)
      CHECK(dense(i, i) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("one-dimensional full patches solve the shape condition exactly") {
  // with patches covering the whole domain the construction is exact: the
  // restricted-row least squares reaches zero residual, level-0 raw
  // projections are Kronecker indicators, and deeper raw solutions split
  // +-1 over the sibling pair, so P~^T P~ has smallest eigenvalue 1, 2, 2
  MeshHierarchy mesh = build_hierarchy(1, 1, 2, 6);
  CoefficientField coeff = random_piecewise_constant(1, 3, 1.0, 10.0, 3);
  HslodOptions restricted = default_options(16);
  restricted.restrict_rows = true;
  HierarchicalBasis basis = build_basis(mesh, coeff, restricted, 1);
  BasisQuality q = basis_quality(mesh, coeff, basis, 1);

  CHECK(q.max_lsq_residual <= 1e-12);
  REQUIRE(q.lambda_min_projection.size() == 3);
  CHECK(q.lambda_min_projection[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(q.lambda_min_projection[1] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(q.lambda_min_projection[2] == doctest::Approx(2.0).epsilon(1e-9));

  for (int level = 1; level <= 2; ++level)
    for (const auto& f : basis.levels[level].functions) {
      // raw solution: +1 on the target child, -1 on its sibling
      Q0Function pi = f.pi_raw;
      auto cc = coords_of(1, mesh.cells_per_axis(level), f.target_child);
      CHECK(pi.at(1, cc) == doctest::Approx(1.0).epsilon(1e-9));
      double sum = 0.0;
      for (Eigen::Index i = 0; i < pi.values.size(); ++i) sum += std::abs(pi.values[i]);
      CHECK(sum == doctest::Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("the default row policy spreads the target over the sibling pair") {
  // minimizing over every patch row subject to vanishing parent sums puts
  // +-1/2 on the two children, so the smallest projection eigenvalue is 1/2
  // and the kept-children residual is exactly 1/2
  MeshHierarchy mesh = build_hierarchy(1, 1, 2, 6);
  CoefficientField coeff = random_piecewise_constant(1, 3, 1.0, 10.0, 3);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(16), 1);
  BasisQuality q = basis_quality(mesh, coeff, basis, 1);

  REQUIRE(q.lambda_min_projection.size() == 3);
  CHECK(q.lambda_min_projection[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(q.lambda_min_projection[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(q.lambda_min_projection[2] == doctest::Approx(0.5).epsilon(1e-9));
  for (int level = 1; level <= 2; ++level)
    for (const auto& f : basis.levels[level].functions)
      CHECK(f.lsq_residual == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("full patches make the levels exactly orthogonal in energy") {
  MeshHierarchy mesh = build_hierarchy(1, 1, 2, 6);
  CoefficientField coeff = random_piecewise_constant(1, 3, 1.0, 10.0, 3);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(16), 1);
  BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, 1);
  CHECK(A.max_off_block() <= 1e-8);
}

TEST_CASE("narrow patches leave small but nonzero cross-level coupling") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 2, 5);
  CoefficientField coeff = random_piecewise_constant(2, 3, 1.0, 10.0, 3);
  HierarchicalBasis basis = build_basis(mesh, coeff, default_options(1), 1);
  BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, 1);
  double off = A.max_off_block();
  CHECK(off > 1e-12);
  CHECK(off < 0.5);  // far below the unit diagonal
}

TEST_CASE("builds are bitwise identical across worker counts") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 9);
  HierarchicalBasis serial = build_basis(mesh, coeff, default_options(1), 1);
  HierarchicalBasis parallel = build_basis(mesh, coeff, default_options(1), 3);
  REQUIRE(serial.function_count() == parallel.function_count());
  for (std::size_t l = 0; l < serial.levels.size(); ++l)
    for (std::size_t i = 0; i < serial.levels[l].functions.size(); ++i) {
      const HslodFunction& a = serial.levels[l].functions[i];
      const HslodFunction& b = parallel.levels[l].functions[i];
      CHECK(a.values.values == b.values.values);
      CHECK(a.coeffs == b.coeffs);
      CHECK(a.lsq_residual == b.lsq_residual);
    }
}

TEST_CASE("level construction validates its inputs") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 9);
  HslodOptions options = default_options(1);
  SlodLevelBasis wrong = slod_level_basis(mesh, coeff, 0, options.slod, 1);
  CHECK_THROWS_AS(build_level(mesh, coeff, wrong, 1, options, 1), ConfigError);
}
