#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace fieldforge;

namespace {

std::string fixture(const std::string& name) { return std::string(FF_TEST_DATA_DIR) + "/msh/" + name; }

std::string parse_error(const std::string& name) {
    try {
        read_msh_file(fixture(name), CoordSystem::cartesian);
    } catch (const MshError& e) {
        return e.what();
    }
    return "<no error>";
}

std::string serialize(const MshResult& r) {
    std::ostringstream s;
    write_msh(s, r.mesh, r.groups);
    return s.str();
}

}  // namespace

TEST(MshParse, UnitSquareFixture) {
    const auto r = read_msh_file(fixture("unit_square.msh"), CoordSystem::cartesian);
    const Mesh& m = r.mesh;
    ASSERT_EQ(m.num_nodes(), 4u);
    ASSERT_EQ(m.num_elements(), 2u);
    EXPECT_EQ(m.element_regions(), (std::vector<int>{3, 3}));
    EXPECT_EQ(m.element(0), (Triangle{0, 1, 2}));
    EXPECT_EQ(m.element(1), (Triangle{0, 2, 3}));
    EXPECT_EQ(m.node(2).x, 1.0);
    EXPECT_EQ(m.node(2).y, 1.0);
    EXPECT_EQ(m.edge_region(*m.find_edge(0, 1)), 1);
    EXPECT_EQ(m.edge_region(*m.find_edge(1, 2)), 2);
    EXPECT_EQ(m.edge_region(*m.find_edge(2, 3)), 2);
    EXPECT_EQ(m.edge_region(*m.find_edge(0, 3)), 1);
    EXPECT_EQ(m.edge_region(*m.find_edge(0, 2)), no_region);
    const std::vector<PhysicalGroup> groups{{1, 1, "ground"}, {1, 2, "electrode"}, {2, 3, "air"}};
    EXPECT_EQ(r.groups, groups);
}

TEST(MshParse, SparseTagsWithoutEntities) {
    const auto r = read_msh_file(fixture("sparse_tags.msh"), CoordSystem::cartesian);
    const Mesh& m = r.mesh;
    // node 99 is not used by a triangle and is dropped; 10,20,30,40 become 0..3
    ASSERT_EQ(m.num_nodes(), 4u);
    EXPECT_EQ(m.node(1).x, 2.0);
    EXPECT_EQ(m.node(1).y, 0.0);
    EXPECT_EQ(m.element(0), (Triangle{0, 1, 2}));
    // 40 30 10 is clockwise and gets reoriented
    EXPECT_EQ(m.element(1), (Triangle{3, 0, 2}));
    EXPECT_EQ(m.element_regions(), (std::vector<int>{7, 7}));
    EXPECT_EQ(m.node_region(1), 4);
    EXPECT_EQ(m.node_region(0), no_region);
    const std::vector<PhysicalGroup> groups{{0, 4, ""}, {2, 7, ""}};
    EXPECT_EQ(r.groups, groups);
}

struct MalformedCase {
    const char* file;
    const char* message;
};

class MshMalformed : public ::testing::TestWithParam<MalformedCase> {};

TEST_P(MshMalformed, ExactMessage) { EXPECT_EQ(parse_error(GetParam().file), GetParam().message); }

INSTANTIATE_TEST_SUITE_P(
    Fixtures, MshMalformed,
    ::testing::Values(MalformedCase{"quad_element.msh", "line 44: unsupported element type 3"},
                      MalformedCase{"dangling_node.msh", "line 46: dangling node reference 7 in element 6"},
                      MalformedCase{"version_22.msh", "line 2: unsupported MSH version 2.2"},
                      MalformedCase{"binary.msh", "line 2: binary MSH files are not supported"},
                      MalformedCase{"nonzero_z.msh", "line 31: node 3 has nonzero z coordinate"},
                      MalformedCase{"missing_elements.msh", "missing $Elements section"},
                      MalformedCase{"duplicate_physical.msh", "line 7: duplicate physical tag 3 in dimension 2"},
                      MalformedCase{"truncated.msh", "line 30: unexpected end of file"},
                      MalformedCase{"bad_number.msh", "line 30: expected number, got '1,0'"},
                      MalformedCase{"unclosed_section.msh", "line 4: section $Periodic is not closed"}),
    [](const auto& info) {
        std::string n = info.param.file;
        return n.substr(0, n.find('.'));
    });

TEST(MshParse, MissingFile) { EXPECT_THROW(read_msh_file(fixture("does_not_exist.msh"), CoordSystem::cartesian), MshError); }

TEST(MshParse, DeterministicAndRoundTripFixedPoint) {
    for (const char* name : {"unit_square.msh", "sparse_tags.msh"}) {
        const auto a = read_msh_file(fixture(name), CoordSystem::cartesian);
        const auto b = read_msh_file(fixture(name), CoordSystem::cartesian);
        const std::string sa = serialize(a);
        EXPECT_EQ(sa, serialize(b)) << name;

        std::istringstream in(sa);
        const auto c = parse_msh(in, CoordSystem::cartesian);
        EXPECT_EQ(c.mesh.nodes().size(), a.mesh.nodes().size());
        for (std::size_t i = 0; i < a.mesh.num_nodes(); ++i) {
            EXPECT_EQ(c.mesh.node(i).x, a.mesh.node(i).x);
            EXPECT_EQ(c.mesh.node(i).y, a.mesh.node(i).y);
        }
        EXPECT_EQ(c.mesh.elements(), a.mesh.elements());
        EXPECT_EQ(c.mesh.element_regions(), a.mesh.element_regions());
        EXPECT_EQ(c.mesh.edge_regions(), a.mesh.edge_regions());
        EXPECT_EQ(c.mesh.node_regions(), a.mesh.node_regions());
        EXPECT_EQ(c.groups, a.groups);
        EXPECT_EQ(serialize(c), sa) << name;
    }
}

TEST(MshParse, TriangleCountMatchesBlocks) {
    const auto m = structured_rect_mesh(1.0, 2.0, 3, 5, {});
    std::ostringstream s;
    write_msh(s, m, {});
    std::istringstream in(s.str());
    EXPECT_EQ(parse_msh(in, CoordSystem::cartesian).mesh.num_elements(), 30u);
}

TEST(MshParse, AxisymmetricKind) {
    const auto r = read_msh_file(fixture("unit_square.msh"), CoordSystem::axisymmetric);
    EXPECT_EQ(r.mesh.coords(), CoordSystem::axisymmetric);
}

TEST(GenerateRegions, BindsByName) {
    const std::vector<PhysicalGroup> groups{{2, 1, "FGM"}, {2, 2, "Soil"}, {1, 3, "ground"}, {1, 4, "V"}};
    Materials mats(Material("FGM", Permittivity(1.0)), Material("Soil", Permittivity(2.0)));
    BdryCond bcs(BCDirichlet(0.0, "ground"), BCDirichlet(1.0, "V"));
    const auto regions = generate_regions(groups, mats, bcs);
    ASSERT_EQ(regions.size(), 4u);
    std::size_t with_mat = 0, with_bc = 0;
    for (const auto& r : regions) {
        with_mat += r.mat.has_value();
        with_bc += r.bc.has_value();
    }
    EXPECT_EQ(with_mat, 2u);
    EXPECT_EQ(with_bc, 2u);
    EXPECT_EQ(*regions.get_regi(4).bc, 2);
    EXPECT_EQ(regions.get_regi(3).dim, 1);
}

TEST(GenerateRegions, EmptyAndUnmatched) {
    EXPECT_TRUE(generate_regions({}, {}, {}).empty());
    std::vector<std::string> warnings;
    auto old = set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
    const auto regions = generate_regions({{2, 9, "nothing"}}, {}, {});
    set_warning_handler(old);
    ASSERT_EQ(regions.size(), 1u);
    EXPECT_FALSE(regions.get_regi(9).mat || regions.get_regi(9).bc || regions.get_regi(9).exci);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("nothing"), std::string::npos);
}

TEST(GenerateRegions, AmbiguousName) {
    Materials mats(Material("Cu", Permittivity(1.0)), Material("Cu", Permittivity(2.0)));
    EXPECT_THROW(generate_regions({{2, 1, "Cu"}}, mats, {}), Error);
}
