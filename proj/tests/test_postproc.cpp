#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace fieldforge;
using fftest::ProblemBuilder;
using fftest::share;

namespace {

constexpr int bottom = 10, top = 11;

RegionMap plates(double w, double h) {
    RegionMap m;
    m.segments = {{{0, 0}, {w, 0}, bottom}, {{0, h}, {w, h}, top}};
    return m;
}

StaticSolution with_values(ProblemPtr p, std::vector<double> v) { return {std::move(p), std::move(v), 0.0, {}}; }

// minimal reader for the files write_vtk produces
struct VtkFile {
    std::vector<double> points;
    std::vector<std::size_t> cells;
    std::vector<double> point_scalar;
};

VtkFile read_vtk(const std::string& text) {
    std::istringstream in(text);
    VtkFile f;
    std::string tok;
    while (in >> tok) {
        if (tok == "POINTS") {
            std::size_t n;
            in >> n >> tok;
            f.points.resize(3 * n);
            for (auto& v : f.points) in >> tok, v = std::strtod(tok.c_str(), nullptr);
        } else if (tok == "CELLS") {
            std::size_t n, m;
            in >> n >> m;
            f.cells.resize(m);
            for (auto& v : f.cells) in >> v;
        } else if (tok == "LOOKUP_TABLE") {
            in >> tok;
            f.point_scalar.resize(f.points.size() / 3);
            for (auto& v : f.point_scalar) in >> tok, v = std::strtod(tok.c_str(), nullptr);
            break;
        }
    }
    return f;
}

}  // namespace

TEST(Probe, NodesCentroidsAndLinearFields) {
    const auto mesh = share(structured_rect_mesh(2.0, 1.0, 5, 3));
    const auto p = ProblemBuilder(ProblemKind::electrostatic, mesh).material(1, Material("d", Permittivity(1.0))).build();
    auto lin = [](const Point& q) { return 1.0 - 2.0 * q.x + 0.5 * q.y; };
    std::vector<double> v(mesh->num_nodes());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = lin(mesh->node(n));
    const auto s = with_values(p, v);
    for (std::size_t n = 0; n < v.size(); ++n) EXPECT_EQ(probe(s, mesh->node(n)), v[n]);
    for (std::size_t e = 0; e < mesh->num_elements(); ++e) {
        const auto& t = mesh->element(e);
        EXPECT_NEAR(probe(s, mesh->centroid(e)), (v[t[0]] + v[t[1]] + v[t[2]]) / 3.0, 1e-14);
    }
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> ux(0.0, 2.0), uy(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        const Point q{ux(rng), uy(rng)};
        EXPECT_NEAR(probe(s, q), lin(q), 1e-13);
    }
    EXPECT_NEAR(probe(s, {0.0, 0.0}, true), 1.0 - 273.15, 1e-12);
}

TEST(Probe, OutsideDomainFails) {
    const auto mesh = share(fftest::two_triangle_square());
    const std::vector<double> v(4, 1.0);
    try {
        interpolate(*mesh, v, {1.5, 0.5});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("outside the mesh"), std::string::npos);
    }
    // a hair outside an edge still snaps to it
    EXPECT_EQ(interpolate(*mesh, v, {1.0 + 1e-14, 0.5}), 1.0);
    const auto loc = locate(*mesh, {0.5, 0.5});
    EXPECT_NEAR(loc.barycentric[0] + loc.barycentric[1] + loc.barycentric[2], 1.0, 1e-15);
}

TEST(Fields, ElectricAndDisplacementAcrossInterface) {
    RegionMap map = plates(1.0, 1.0);
    map.blocks.push_back({0.0, 1.0, 0.5, 1.0, 2});
    const auto mesh = share(structured_rect_mesh(1.0, 1.0, 3, 6, map));
    const auto p = ProblemBuilder(ProblemKind::electrostatic, mesh)
                       .material(1, Material("a", Permittivity(eps0)))
                       .material(2, Material("b", Permittivity(2.0 * eps0)))
                       .bc(bottom, BCDirichlet(0.0))
                       .bc(top, BCDirichlet(1.0))
                       .build();
    const auto s = solve_electrostatic_static(p);
    const auto e = e_field(s);
    const auto d = d_field(s);
    const auto em = magnitudes(e);
    for (std::size_t k = 0; k < e.size(); ++k) {
        const bool lower = mesh->element_region(k) == 1;
        EXPECT_NEAR(em[k], lower ? 4.0 / 3.0 : 2.0 / 3.0, 1e-12);
        EXPECT_NEAR(e[k][1], lower ? -4.0 / 3.0 : -2.0 / 3.0, 1e-12);
        EXPECT_NEAR(d[k][1], -4.0 / 3.0 * eps0, 1e-12 * eps0);
    }

    // ½uᵀKu against ½Σ ε|E|²|e|
    double w = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) w += 0.5 * (d[k][0] * e[k][0] + d[k][1] * e[k][1]) * mesh->element_area(k);
    EXPECT_NEAR(energy(s), w, 1e-12 * w);
    EXPECT_NEAR(energy(s), 0.5 * (4.0 / 3.0) * eps0, 1e-12 * eps0);
}

TEST(Fields, RejectWrongProblemKind) {
    const auto mesh = share(fftest::two_triangle_square());
    const auto t = ProblemBuilder(ProblemKind::thermal, mesh).material(1, Material("s", ThermalConductivity(1.0))).build();
    const auto s = with_values(t, std::vector<double>(4, 0.0));
    EXPECT_THROW(e_field(s), Error);
    EXPECT_THROW(b_field(s), Error);
    EXPECT_THROW(energy(s), Error);
    EXPECT_THROW(joule_loss_power(s), Error);
}

TEST(Fields, MagneticFluxDensityConventions) {
    const auto cart = share(structured_rect_mesh(1.0, 1.0, 2, 2));
    const auto pc = ProblemBuilder(ProblemKind::magnetic, cart).material(1, Material("air", Reluctivity(1.0))).build();
    std::vector<double> a(cart->num_nodes());
    for (std::size_t n = 0; n < a.size(); ++n) a[n] = 3.0 * cart->node(n).x - 2.0 * cart->node(n).y;
    for (const auto& b : b_field(with_values(pc, a))) {
        EXPECT_NEAR(b[0], -2.0, 1e-13);
        EXPECT_NEAR(b[1], -3.0, 1e-13);
    }

    // a = k·ρ is the flux of B_z = k/(2πρ) through radius ρ per unit radius
    const auto axi = share(structured_annulus_mesh(0.5, 1.5, 0.0, 1.0, 3, 2));
    const auto pa = ProblemBuilder(ProblemKind::magnetic, axi).material(1, Material("air", Reluctivity(1.0))).build();
    std::vector<double> psi(axi->num_nodes());
    for (std::size_t n = 0; n < psi.size(); ++n) psi[n] = 4.0 * axi->node(n).x;
    const auto bz = b_field(with_values(pa, psi));
    for (std::size_t e = 0; e < bz.size(); ++e) {
        EXPECT_NEAR(bz[e][0], 0.0, 1e-13);
        EXPECT_NEAR(bz[e][1], 4.0 / (two_pi * axi->centroid(e).x), 1e-13);
    }
}

TEST(Fields, PhaseRotation) {
    const std::vector<CVec2> v{{Complex(1.0, 2.0), Complex(0.0, -1.0)}};
    const auto p0 = at_phase(v, 0.0);
    EXPECT_EQ(p0[0][0], 1.0);
    EXPECT_EQ(p0[0][1], 0.0);
    const auto p90 = at_phase(v, M_PI / 2);
    EXPECT_NEAR(p90[0][0], -2.0, 1e-15);
    EXPECT_NEAR(p90[0][1], 1.0, 1e-15);
}

TEST(Joule, NonnegativeAndEqualToQuadraticForm) {
    const double ri = 0.02, ro = 0.1;
    RegionMap map;
    map.segments = {{{ri, 0.0}, {ri, 0.1}, bottom}, {{ro, 0.0}, {ro, 0.1}, top}};
    const auto mesh = share(structured_annulus_mesh(ri, ro, 0.0, 0.1, 32, 4, map));
    const auto p = ProblemBuilder(ProblemKind::current_flow, mesh)
                       .material(1, Material("fgm", fgm_conductivity_property()))
                       .bc(bottom, BCDirichlet(20e3))
                       .bc(top, BCDirichlet(0.0))
                       .build();
    const std::vector<double> temp(mesh->num_elements(), 330.0);
    const auto s = solve_current_flow_static(p, temp);
    const auto loss = joule_loss_power(s);
    for (double q : loss.density) EXPECT_GE(q, 0.0);

    const auto ks = divgrad_operator(NodalFunctionSpace(mesh), p->regions, p->materials, PropertyKind::electric_conductivity,
                                     field_context(*mesh, s.values, temp, 0.0))
                        .matrix;
    const auto ku = ks.multiply(s.values);
    double quad = 0.0;
    for (std::size_t n = 0; n < ku.size(); ++n) quad += s.values[n] * ku[n];
    EXPECT_NEAR(loss.total, quad, 1e-10 * quad);
}

TEST(Joule, EddyLossMatchesMassQuadraticForm) {
    const auto mesh = share(structured_rect_mesh(1.0, 1.0, 3, 3));
    const double omega = 50.0;
    auto b = ProblemBuilder(ProblemKind::magnetic, mesh).material(1, Material("fe", Reluctivity(1.0), ElectricConductivity(7.0)));
    b.p->omega = omega;
    const auto p = b.build();
    std::vector<Complex> a(mesh->num_nodes());
    for (std::size_t n = 0; n < a.size(); ++n) a[n] = Complex(mesh->node(n).x, mesh->node(n).y * mesh->node(n).x);
    const HarmonicSolution s{p, a, omega};
    const auto m = fftest::dense(mass_matrix(vector_potential_space(*p), p->regions, p->materials, PropertyKind::electric_conductivity).matrix);
    const auto av = fftest::vec(a);
    const double expect = 0.5 * omega * omega * (av.adjoint() * m.cast<Complex>() * av)(0, 0).real();
    EXPECT_NEAR(joule_loss_power(s).total, expect, 1e-12 * expect);
}

TEST(Format, ShortestRoundTrip) {
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(2.0), "2");
    EXPECT_EQ(format_double(-1.5e-300), "-1.5e-300");
    EXPECT_EQ(format_double(8.8541878128e-12), "8.8541878128e-12");
    std::mt19937_64 rng(99);
    for (int k = 0; k < 2000; ++k) {
        double v;
        const auto bits = rng();
        std::memcpy(&v, &bits, sizeof v);
        if (!std::isfinite(v)) continue;
        const double back = std::strtod(format_double(v).c_str(), nullptr);
        EXPECT_EQ(std::memcmp(&back, &v, sizeof v), 0) << format_double(v);
    }
}

TEST(Vtk, TwoTriangleFileExact) {
    const auto mesh = fftest::two_triangle_square();
    VtkFields f;
    f.point_scalars.push_back({"u", {0.0, 0.5, 1.0, 0.25}});
    f.cell_vectors.push_back({"E", {{1.0, 0.0}, {0.0, -2.0}}});
    f.cell_scalars.push_back({"region", {1.0, 1.0}});
    std::ostringstream out;
    write_vtk(out, mesh, f, "demo");
    EXPECT_EQ(out.str(),
              "# vtk DataFile Version 3.0\ndemo\nASCII\nDATASET UNSTRUCTURED_GRID\n"
              "POINTS 4 double\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
              "CELLS 2 8\n3 0 1 2\n3 0 2 3\n"
              "CELL_TYPES 2\n5\n5\n"
              "POINT_DATA 4\nSCALARS u double 1\nLOOKUP_TABLE default\n0\n0.5\n1\n0.25\n"
              "CELL_DATA 2\nVECTORS E double\n1 0 0\n0 -2 0\n"
              "SCALARS region double 1\nLOOKUP_TABLE default\n1\n1\n");
    f.point_scalars[0].values.pop_back();
    std::ostringstream bad;
    EXPECT_THROW(write_vtk(bad, mesh, f), Error);
}

TEST(Vtk, RoundTripIsBitExact) {
    auto m = structured_annulus_mesh(0.1, 0.7, -0.2, 0.3, 7, 5);
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    std::vector<double> v(m.num_nodes());
    for (auto& x : v) x = u(rng) * std::exp(u(rng) / 100.0);
    std::ostringstream out;
    write_vtk(out, m, {{{"T", v}}, {}, {}});
    const auto back = read_vtk(out.str());
    ASSERT_EQ(back.points.size(), 3 * m.num_nodes());
    for (std::size_t n = 0; n < m.num_nodes(); ++n) {
        EXPECT_EQ(back.points[3 * n], m.node(n).x);
        EXPECT_EQ(back.points[3 * n + 1], m.node(n).y);
    }
    EXPECT_EQ(back.point_scalar, v);
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        EXPECT_EQ(back.cells[4 * e], 3u);
        for (int i = 0; i < 3; ++i) EXPECT_EQ(back.cells[4 * e + 1 + static_cast<std::size_t>(i)], m.element(e)[static_cast<std::size_t>(i)]);
    }
}

TEST(Csv, HeaderRowsAndQuoting) {
    std::ostringstream out;
    write_csv(out, {"t", "T at (0.2, 0)", "say \"hi\""}, {{0.0, 293.15, 1.0}, {1e-6, 294.0, 2.0}});
    EXPECT_EQ(out.str(), "t,\"T at (0.2, 0)\",\"say \"\"hi\"\"\"\n0,293.15,1\n1e-06,294,2\n");
    std::ostringstream bad;
    EXPECT_THROW(write_csv(bad, {"a"}, {{1.0, 2.0}}), Error);
}

TEST(Export, FilesAndIoErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "fieldforge_postproc_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "probe.csv").string();
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 17; ++i) rows.push_back({static_cast<double>(i), 0.5 * i});
    export_csv(path, {"step", "value"}, rows);
    std::ifstream in(path);
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 18u);
    EXPECT_THROW(export_csv((dir / "missing" / "x.csv").string(), {"a"}, {}), IoError);
    EXPECT_THROW(export_vtk((dir / "missing" / "x.vtk").string(), fftest::two_triangle_square(), {}), IoError);
    std::filesystem::remove_all(dir);
}

TEST(Transient, ProbeSeriesAndStepLookup) {
    const auto mesh = share(fftest::two_triangle_square());
    auto b = ProblemBuilder(ProblemKind::thermal, mesh).material(1, Material("s", ThermalConductivity(1.0), VolumetricHeatCapacity(1.0)));
    b.p->time_axis = {0.0, 0.5, 1.0};
    TransientSolution s;
    s.problem = b.build();
    s.times = b.p->time_axis;
    s.values = {std::vector<double>(4, 300.0), std::vector<double>(4, 310.0), {320.0, 322.0, 324.0, 326.0}};
    const auto series = probe_series(s, {1.0, 0.0}, true);
    ASSERT_EQ(series.size(), 3u);
    EXPECT_NEAR(series[0], 300.0 - 273.15, 1e-12);
    EXPECT_NEAR(series[2], 322.0 - 273.15, 1e-12);
    EXPECT_EQ(s.step_at(0.5), 1u);
    EXPECT_THROW(s.step_at(0.75), Error);
    EXPECT_EQ(s.at(2).values, s.values[2]);
}
