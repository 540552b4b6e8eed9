#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <vector>

#include "hslod/mesh.hpp"
#include "hslod/util.hpp"

using namespace hslod;

TEST_CASE("lexicographic indexing runs x fastest and round-trips") {
  CHECK(lex_index(2, 4, {1, 2, 0}) == 9);
  CHECK(lex_index(3, 4, {1, 2, 3}) == 1 + 2 * 4 + 3 * 16);
  CHECK(coords_of(2, 4, 9) == std::array<int, 3>{1, 2, 0});

  Rng rng(11);
  for (int dim = 1; dim <= 3; ++dim) {
    const int n = 5;
    std::int64_t total = 1;
    for (int k = 0; k < dim; ++k) total *= n;
    for (int t = 0; t < 50; ++t) {
      auto idx = static_cast<std::int64_t>(rng.uniform01() * total);
      CHECK(lex_index(dim, n, coords_of(dim, n, idx)) == idx);
    }
  }
}

TEST_CASE("index boxes count, contain and intersect inclusively") {
  IndexBox b;
  b.lo = {1, 2, 0};
  b.hi = {3, 5, 0};
  CHECK(b.extent(0) == 3);
  CHECK(b.extent(1) == 4);
  CHECK(b.count(2) == 12);
  CHECK(b.count(1) == 3);
  CHECK(b.contains(2, {1, 5, 0}));
  CHECK(!b.contains(2, {0, 5, 0}));
  CHECK(!b.contains(2, {1, 6, 0}));

  IndexBox other;
  other.lo = {3, 5, 0};
  other.hi = {9, 9, 0};
  CHECK(b.intersects(2, other));
  IndexBox cut = b.intersection(2, other);
  CHECK(cut.lo == std::array<int, 3>{3, 5, 0});
  CHECK(cut.hi == std::array<int, 3>{3, 5, 0});
  other.lo = {4, 6, 0};
  CHECK(!b.intersects(2, other));

  CHECK(b.contains_box(2, cut));
  CHECK(!cut.contains_box(2, b));
  CHECK(b == b);
  CHECK(!(b == cut));
}

TEST_CASE("growing a box adds layers and clips at the domain") {
  IndexBox b;
  b.lo = {2, 2, 0};
  b.hi = {3, 3, 0};
  IndexBox g = b.grown(2, 2, 8);
  CHECK(g.lo == std::array<int, 3>{0, 0, 0});
  CHECK(g.hi == std::array<int, 3>{5, 5, 0});
  IndexBox full = b.grown(2, 5, 8);
  CHECK(full.lo == std::array<int, 3>{0, 0, 0});
  CHECK(full.hi == std::array<int, 3>{7, 7, 0});
}

TEST_CASE("box iteration and offsets agree on lexicographic order") {
  IndexBox b;
  b.lo = {1, 0, 2};
  b.hi = {2, 2, 3};
  std::int64_t expect = 0;
  for_each_in_box(3, b, [&](const std::array<int, 3>& p) {
    CHECK(b.offset(3, p) == expect);
    ++expect;
  });
  CHECK(expect == b.count(3));

  IndexBox empty;
  empty.lo = {1, 0, 0};
  empty.hi = {0, 5, 0};
  int visits = 0;
  for_each_in_box(2, empty, [&](const std::array<int, 3>&) { ++visits; });
  CHECK(visits == 0);
}

TEST_CASE("hierarchy descriptor exposes dyadic mesh sizes") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 3, 7);
  CHECK(mesh.H(0) == 0.5);
  CHECK(mesh.H(3) == 1.0 / 16.0);
  CHECK(mesh.h() == 1.0 / 128.0);
  CHECK(mesh.cells_per_axis(2) == 8);
  CHECK(mesh.fine_nodes_per_axis() == 129);
  CHECK(mesh.element_count(2) == 64);
  CHECK(mesh.refinement_ratio(3) == 8);
  CHECK(mesh.full_box(1).hi == std::array<int, 3>{3, 3, 0});
  CHECK(mesh.full_box(1).lo == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("hierarchy construction rejects inconsistent exponents") {
  CHECK_THROWS_AS(build_hierarchy(4, 0, 0, 3), ConfigError);
  CHECK_THROWS_AS(build_hierarchy(0, 0, 0, 3), ConfigError);
  CHECK_THROWS_AS(build_hierarchy(2, -1, 0, 3), ConfigError);
  CHECK_THROWS_AS(build_hierarchy(2, 0, -1, 3), ConfigError);
  // fine mesh must refine the deepest level
  CHECK_THROWS_AS(build_hierarchy(2, 2, 2, 3), ConfigError);
  CHECK_NOTHROW(build_hierarchy(2, 2, 2, 4));
}

TEST_CASE("refinement children and parent lookups are mutually inverse") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 2, 5);
  auto kids = refinement_children(mesh, 0, 0);
  CHECK(kids == std::vector<std::int64_t>{0, 1, 4, 5});
  for (std::int64_t k : kids) CHECK(parent_element(mesh, 1, k) == 0);

  for (std::int64_t e = 0; e < mesh.element_count(1); ++e) {
    auto ch = refinement_children(mesh, 1, e);
    CHECK(static_cast<int>(ch.size()) == 4);
    CHECK(std::is_sorted(ch.begin(), ch.end()));
    for (std::int64_t c : ch) CHECK(parent_element(mesh, 2, c) == e);
  }

  MeshHierarchy line = build_hierarchy(1, 0, 2, 4);
  CHECK(refinement_children(line, 0, 0) == std::vector<std::int64_t>{0, 1});
  CHECK_THROWS_AS(parent_element(line, 0, 0), ConfigError);
  CHECK_THROWS_AS(refinement_children(mesh, 2, 0), ConfigError);
}

TEST_CASE("patches grow by vertex layers and report boundary clipping") {
  MeshHierarchy mesh = build_hierarchy(2, 0, 3, 6);
  // level-3 grid is 8x8; an interior center keeps all layers
  Patch inner = build_patch(mesh, PatchKind::Lod, 3, lex_index(2, 8, {3, 4, 0}), 1);
  CHECK(inner.mesh_level == 3);
  CHECK(inner.box.lo == std::array<int, 3>{2, 3, 0});
  CHECK(inner.box.hi == std::array<int, 3>{4, 5, 0});
  CHECK(!inner.clipped);

  Patch corner = build_patch(mesh, PatchKind::Lod, 3, 0, 1);
  CHECK(corner.box.lo == std::array<int, 3>{0, 0, 0});
  CHECK(corner.box.hi == std::array<int, 3>{1, 1, 0});
  CHECK(corner.clipped);

  // hierarchical patches live on the parent mesh (or level 0 on itself)
  Patch hier = build_patch(mesh, PatchKind::Hierarchical, 3, 5, 1);
  CHECK(hier.mesh_level == 2);
  Patch root = build_patch(mesh, PatchKind::Hierarchical, 0, 0, 1);
  CHECK(root.mesh_level == 0);

  CHECK_THROWS_AS(build_patch(mesh, PatchKind::Lod, 4, 0, 1), ConfigError);
  CHECK_THROWS_AS(build_patch(mesh, PatchKind::Lod, 3, -1, 1), ConfigError);
  CHECK_THROWS_AS(build_patch(mesh, PatchKind::Lod, 3, 0, -1), ConfigError);
}

TEST_CASE("patch element and node boxes refine consistently") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 2, 6);
  Patch p = build_patch(mesh, PatchKind::Hierarchical, 2, 5, 1);
  // mesh_level 1 has 4 cells per axis, fine ratio 16
  IndexBox own = p.elements_at(mesh, 1);
  CHECK(own == p.box);
  IndexBox sub = p.elements_at(mesh, 2);
  CHECK(sub.lo[0] == p.box.lo[0] * 2);
  CHECK(sub.hi[0] == (p.box.hi[0] + 1) * 2 - 1);
  IndexBox fine = p.fine_elements(mesh);
  CHECK(fine.lo[0] == p.box.lo[0] * 16);
  CHECK(fine.hi[0] == (p.box.hi[0] + 1) * 16 - 1);
  IndexBox nodes = p.fine_nodes(mesh);
  CHECK(nodes.lo == fine.lo);
  CHECK(nodes.hi[0] == fine.hi[0] + 1);
  CHECK(nodes.hi[1] == fine.hi[1] + 1);
  CHECK_THROWS_AS(p.elements_at(mesh, 0), ConfigError);
}

TEST_CASE("patch node classification matches a brute-force re-derivation") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  for (std::int64_t center : {std::int64_t(0), std::int64_t(5),
                              mesh.element_count(1) - 1}) {
    Patch p = build_patch(mesh, PatchKind::Lod, 1, center, 1);
    PatchNodes got = classify_patch_nodes(mesh, p);

    IndexBox nodes = p.fine_nodes(mesh);
    const int nn = mesh.fine_nodes_per_axis();
    std::vector<std::int64_t> interior, sigma;
    for (int y = nodes.lo[1]; y <= nodes.hi[1]; ++y)
      for (int x = nodes.lo[0]; x <= nodes.hi[0]; ++x) {
        bool on_domain = x == 0 || x == nn - 1 || y == 0 || y == nn - 1;
        bool on_patch = x == nodes.lo[0] || x == nodes.hi[0] ||
                        y == nodes.lo[1] || y == nodes.hi[1];
        if (on_domain) continue;
        (on_patch ? sigma : interior).push_back(lex_index(2, nn, {x, y, 0}));
      }
    CHECK(got.interior == interior);
    CHECK(got.sigma == sigma);
    CHECK(std::is_sorted(got.interior.begin(), got.interior.end()));
    CHECK(std::is_sorted(got.sigma.begin(), got.sigma.end()));
  }
}

TEST_CASE("patch json dump parses and carries the geometry") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  Patch p = build_patch(mesh, PatchKind::Lod, 1, 5, 1);
  auto j = nlohmann::json::parse(patch_to_json(mesh, p));
  CHECK(j["kind"] == "lod");
  CHECK(j["level"] == 1);
  CHECK(j["m"] == 1);
  CHECK(j["center"] == 5);
  CHECK(j["clipped"] == false);
  CHECK(j["box"]["lo"].size() == 2);
  CHECK(j["interior_nodes"].get<int>() > 0);
  CHECK(j["sigma_nodes"].get<int>() > 0);
}
