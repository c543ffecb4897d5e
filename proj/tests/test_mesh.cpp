#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace fieldforge;
using fftest::single_triangle;
using fftest::two_triangle_square;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

// every unordered node pair shared by some element, by brute force
std::set<EdgeNodes> pair_scan(const Mesh& m) {
    std::set<EdgeNodes> s;
    for (const auto& t : m.elements())
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) s.insert(make_edge(t[a], t[b]));
    return s;
}

}  // namespace

TEST(MeshArea, ReferenceTriangles) {
    EXPECT_DOUBLE_EQ(single_triangle().element_area(0), 0.5);
    Mesh big(CoordSystem::cartesian, {{0, 0}, {2, 0}, {0, 2}}, {{0, 1, 2}}, {1});
    EXPECT_DOUBLE_EQ(big.element_area(0), 2.0);
}

TEST(MeshArea, DegenerateTriangleRejected) {
    EXPECT_EQ(error_of([] { Mesh(CoordSystem::cartesian, {{0, 0}, {1, 1}, {2, 2}}, {{0, 1, 2}}, {1}); }), "zero-area element 0");
}

TEST(MeshArea, IndexOutOfRange) {
    const auto m = single_triangle();
    EXPECT_THROW(m.element_area(1), Error);
}

TEST(MeshConstruction, ClockwiseElementIsReoriented) {
    Mesh m(CoordSystem::cartesian, {{0, 0}, {1, 0}, {0, 1}}, {{0, 2, 1}}, {1});
    EXPECT_GT(m.element_area(0), 0.0);
    EXPECT_DOUBLE_EQ(m.element_area(0), 0.5);
}

TEST(MeshConstruction, ConnectivityOutOfRange) {
    EXPECT_EQ(error_of([] { Mesh(CoordSystem::cartesian, {{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 3}}, {1}); }),
              "element 0 references node out of range");
}

TEST(MeshConstruction, EdgeWithTwoRegions) {
    auto build = [] {
        Mesh(CoordSystem::cartesian, {{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}, {1}, {{{0, 1}, 4}, {{0, 1}, 5}});
    };
    EXPECT_EQ(error_of(build), "edge (0,1) carries two region ids");
}

TEST(MeshConstruction, TaggedPairMustBeAnEdge) {
    auto build = [] { Mesh(CoordSystem::cartesian, {{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{0, 1, 2}, {0, 2, 3}}, {1, 1}, {{{1, 3}, 4}}); };
    EXPECT_EQ(error_of(build), "tagged edge (1,3) is not an edge of the triangulation");
}

TEST(MeshConstruction, NodeWithTwoRegions) {
    auto build = [] { Mesh(CoordSystem::cartesian, {{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}, {1}, {}, {{2, 7}, {2, 8}}); };
    EXPECT_EQ(error_of(build), "node 2 carries two region ids");
}

TEST(MeshConstruction, AxisymmetricNegativeRho) {
    auto build = [] { Mesh(CoordSystem::axisymmetric, {{-0.5, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}, {1}); };
    EXPECT_EQ(error_of(build), "axisymmetric node 0 has negative rho");
}

TEST(MeshConstruction, AxisNodesAllowed) {
    Mesh m(CoordSystem::axisymmetric, {{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}, {1});
    EXPECT_EQ(m.num_nodes(), 3u);
}

TEST(MeshEdges, TwoTriangleSquare) {
    const auto m = two_triangle_square();
    ASSERT_EQ(m.num_edges(), 5u);
    std::size_t boundary = 0;
    for (std::size_t i = 0; i < m.num_edges(); ++i) boundary += m.is_boundary_edge(i);
    EXPECT_EQ(boundary, 4u);
    EXPECT_FALSE(m.is_boundary_edge(*m.find_edge(0, 2)));
}

TEST(MeshEdges, SingleTriangle) {
    const auto m = single_triangle();
    ASSERT_EQ(m.num_edges(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(m.is_boundary_edge(i));
}

TEST(MeshEdges, StructuredTwoByTwoMatchesPairScan) {
    const auto m = structured_rect_mesh(1.0, 1.0, 2, 2);
    ASSERT_EQ(m.num_elements(), 8u);
    const auto scan = pair_scan(m);
    ASSERT_EQ(m.num_edges(), scan.size());
    EXPECT_EQ(m.num_edges(), 16u);
    EXPECT_TRUE(std::equal(scan.begin(), scan.end(), m.edges().begin()));
    std::size_t boundary = 0;
    for (std::size_t i = 0; i < m.num_edges(); ++i) boundary += m.is_boundary_edge(i);
    EXPECT_EQ(boundary, 8u);
}

TEST(MeshEdges, SortedUniqueAndOrderIndependent) {
    const auto m = structured_rect_mesh(2.0, 1.0, 5, 3);
    EXPECT_TRUE(std::is_sorted(m.edges().begin(), m.edges().end()));
    EXPECT_EQ(std::adjacent_find(m.edges().begin(), m.edges().end()), m.edges().end());

    auto elements = m.elements();
    std::mt19937 rng(7);
    std::shuffle(elements.begin(), elements.end(), rng);
    const auto again = build_edges(elements);
    EXPECT_EQ(again.edges, m.edges());
    const auto twice = build_edges(m.elements());
    EXPECT_EQ(twice.edges, m.edge_table().edges);
    EXPECT_EQ(twice.boundary, m.edge_table().boundary);
}

TEST(MeshRefine, Counts) {
    const auto sq = refine_uniform(two_triangle_square());
    EXPECT_EQ(sq.num_elements(), 8u);
    EXPECT_EQ(sq.num_nodes(), 9u);
    const auto tri = refine_uniform(single_triangle());
    EXPECT_EQ(tri.num_elements(), 4u);
    EXPECT_EQ(tri.num_nodes(), 6u);
}

TEST(MeshRefine, AreaRegionsAndTagsPreserved) {
    RegionMap map;
    map.blocks.push_back({0.0, 1.0, 0.5, 1.0, 4});
    map.default_region = 3;
    map.segments.push_back({{0, 0}, {1, 0}, 1});
    const auto m = structured_rect_mesh(1.0, 1.0, 3, 4, map);
    const auto r = refine_uniform(m);
    EXPECT_NEAR(total_area(r), total_area(m), 1e-12 * total_area(m));
    for (std::size_t e = 0; e < r.num_elements(); ++e) EXPECT_EQ(r.element_region(e), m.element_region(e / 4));
    std::size_t tagged = 0;
    for (int t : r.edge_regions()) tagged += t == 1;
    EXPECT_EQ(tagged, 6u);  // 3 bottom edges, each split in two
}

TEST(MeshRefine, DiameterHalves) {
    auto m = structured_rect_mesh(1.0, 1.0, 2, 2);
    double h = max_element_diameter(m);
    for (int k = 0; k < 3; ++k) {
        m = refine_uniform(m);
        const double h2 = max_element_diameter(m);
        EXPECT_NEAR(h2, 0.5 * h, 1e-15);
        h = h2;
    }
}

TEST(MeshStructured, UnitSquareSingleCell) {
    const auto m = structured_rect_mesh(1.0, 1.0, 1, 1);
    EXPECT_EQ(m.num_elements(), 2u);
    EXPECT_EQ(m.num_nodes(), 4u);
}

TEST(MeshStructured, PlateCapacitorLayout) {
    RegionMap map;
    map.default_region = 3;
    map.blocks.push_back({0.0, 1.0, 0.5, 1.0, 4});
    map.segments.push_back({{0, 0}, {1, 0}, 1});
    map.segments.push_back({{0, 1}, {1, 1}, 2});
    const auto m = structured_rect_mesh(1.0, 1.0, 4, 4, map);
    for (std::size_t e = 0; e < m.num_elements(); ++e)
        EXPECT_EQ(m.element_region(e), m.centroid(e).y < 0.5 ? 3 : 4);
    for (std::size_t i = 0; i < m.num_edges(); ++i) {
        const auto& en = m.edges()[i];
        const double y0 = m.node(en[0]).y, y1 = m.node(en[1]).y;
        const int expect = (y0 == 0.0 && y1 == 0.0) ? 1 : (y0 == 1.0 && y1 == 1.0) ? 2 : no_region;
        EXPECT_EQ(m.edge_region(i), expect);
    }
    EXPECT_NEAR(total_area(m), 1.0, 1e-12);
}

TEST(MeshStructured, AnnulusRadii) {
    const auto m = structured_annulus_mesh(0.1, 0.3, 0.0, 0.1, 8, 2);
    EXPECT_EQ(m.coords(), CoordSystem::axisymmetric);
    for (const auto& p : m.nodes()) {
        EXPECT_GE(p.x, 0.1);
        EXPECT_LE(p.x, 0.3);
    }
    EXPECT_NEAR(total_area(m), 0.2 * 0.1, 1e-12 * 0.02);
}

TEST(MeshStructured, InvalidDimensions) {
    EXPECT_THROW(structured_rect_mesh(1.0, 1.0, 0, 1), Error);
    EXPECT_THROW(structured_rect_mesh(-1.0, 1.0, 1, 1), Error);
    EXPECT_THROW(structured_annulus_mesh(0.3, 0.1, 0.0, 1.0, 2, 2), Error);
    EXPECT_THROW(graded_axis({0.0, 1.0}, {0}), Error);
}

TEST(MeshStructured, GradedAxisBreakpoints) {
    const auto v = graded_axis({0.0, 1.0, 3.0}, {2, 4});
    ASSERT_EQ(v.size(), 7u);
    EXPECT_EQ(v[2], 1.0);
    EXPECT_EQ(v.back(), 3.0);
    EXPECT_DOUBLE_EQ(v[3], 1.5);
}
