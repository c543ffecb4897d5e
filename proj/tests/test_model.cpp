#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace fieldforge;

TEST(Property, ConstantsReturnedUnchanged) {
    Material air("air", Permittivity(eps0));
    EXPECT_EQ(std::get<double>(evaluate_property(air, PropertyKind::permittivity, {0.3, 0.7}, 5.0)), 8.8541878128e-12);
    Material soil("soil", ThermalConductivity(0.8), VolumetricHeatCapacity(2333e3));
    EXPECT_EQ(std::get<double>(evaluate_property(soil, PropertyKind::thermal_conductivity, {0, 0}, 0.0)), 0.8);
    EXPECT_EQ(soil.property(PropertyKind::volumetric_heat_capacity).evaluate_scalar({0, 0}, 0.0, {}), 2333e3);
}

TEST(Property, ScalarBroadcastsToIsotropicTensor) {
    const Property p = Reluctivity(3.0);
    EXPECT_EQ(p.evaluate_tensor({0, 0}, 0.0, {}), Tensor2::isotropic(3.0));
    const Property t = Permittivity(Tensor2{2.0, 0.5, 1.0});
    EXPECT_THROW(t.evaluate_scalar({0, 0}, 0.0, {}), Error);
}

TEST(Property, FunctionValuesSeeSpaceTimeAndArgs) {
    const Property p = ThermalConductivity(ScalarLaw([](const Point& x, double t, const FieldArgs& a) { return x.x + 10 * t + a.get("T"); }));
    EXPECT_DOUBLE_EQ(p.evaluate_scalar({1.5, 0}, 0.25, {{"T", 300.0}}), 304.0);
    EXPECT_THROW(p.evaluate_scalar({1.5, 0}, 0.25, {}), Error);
}

TEST(Property, InvariantsRejectBadConstants) {
    EXPECT_THROW(Permittivity(0.0), Error);
    EXPECT_THROW(Reluctivity(-1.0), Error);
    EXPECT_THROW(ThermalConductivity(0.0), Error);
    EXPECT_THROW(VolumetricHeatCapacity(-2.0), Error);
    EXPECT_THROW(Permittivity(Tensor2{1.0, 2.0, 1.0}), Error);
    EXPECT_NO_THROW(ElectricConductivity(0.0));
    EXPECT_THROW(ElectricConductivity(-1.0), Error);
}

TEST(Material, MissingAndDuplicateProperty) {
    Material m("m", Permittivity(1.0));
    EXPECT_THROW(m.property(PropertyKind::reluctivity), Error);
    EXPECT_THROW(m.add(Permittivity(2.0)), Error);
}

TEST(Fgm, ZeroFieldIsReference) {
    const FgmParameters p;
    EXPECT_EQ(fgm_conductivity(0.0, p.T_ref, p), p.sigma_ref);
    EXPECT_DOUBLE_EQ(fgm_conductivity(0.0, 313.15, p), p.sigma_ref * std::exp(p.c_T * 20.0));
}

TEST(Fgm, HighFieldLimit) {
    const FgmParameters p;
    const double limit = std::pow(p.E2 / p.E1, p.a) * p.sigma_ref;
    EXPECT_NEAR(fgm_conductivity(1e12, p.T_ref, p), limit, 1e-9 * limit);
}

TEST(Fgm, DerivativeMatchesCentralDifference) {
    const FgmParameters p;
    const double E = 1e6, T = 313.15, h = 1.0;
    const double fd = (fgm_conductivity(E + h, T, p) - fgm_conductivity(E - h, T, p)) / (2 * h);
    const double an = fgm_conductivity_dE(E, T, p);
    EXPECT_NEAR(an, fd, 1e-6 * std::abs(fd));
    // and in the switching region where the derivative is largest
    const double E2 = 3e5, h2 = 0.1;
    const double fd2 = (fgm_conductivity(E2 + h2, T, p) - fgm_conductivity(E2 - h2, T, p)) / (2 * h2);
    EXPECT_NEAR(fgm_conductivity_dE(E2, T, p), fd2, 1e-6 * std::abs(fd2));
}

TEST(Fgm, MonotoneInFieldAndTemperature) {
    const FgmParameters p;
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> e(0.0, 2e6), t(250.0, 450.0);
    for (int k = 0; k < 500; ++k) {
        double e1 = e(rng), e2 = e(rng), t1 = t(rng), t2 = t(rng);
        if (e1 > e2) std::swap(e1, e2);
        if (t1 > t2) std::swap(t1, t2);
        EXPECT_GE(fgm_conductivity(e2, t1, p), fgm_conductivity(e1, t1, p));
        EXPECT_GE(fgm_conductivity(e1, t2, p), fgm_conductivity(e1, t1, p));
        EXPECT_GE(fgm_conductivity_dE(e1, t1, p), 0.0);
    }
}

TEST(Fgm, PropertyCarriesDifferential) {
    const Property s = fgm_conductivity_property();
    const FieldArgs a{{"E", 1e6}, {"T", 313.15}};
    EXPECT_EQ(s.evaluate_scalar({0, 0}, 0.0, a), fgm_conductivity(1e6, 313.15));
    EXPECT_EQ(s.derivative("E", {0, 0}, 0.0, a), fgm_conductivity_dE(1e6, 313.15));
    EXPECT_EQ(s.derivative("T", {0, 0}, 0.0, a), 0.0);
}

TEST(BoundaryConditions, EvaluateAtTime) {
    EXPECT_EQ(evaluate_bc(BCDirichlet(0.0), 12.0), 0.0);
    EXPECT_EQ(evaluate_bc(BCDirichlet(333.15), 0.5), 333.15);
    EXPECT_EQ(evaluate_bc(BCNeumann(TimeFunction([](double t) { return 2 * t; })), 3.0), 6.0);
    EXPECT_EQ(evaluate_bc(BCRobin(1.0, 2.0, 5.0), 0.0), 5.0);
    EXPECT_THROW(evaluate_bc(BCFloating("f"), 0.0), Error);
    EXPECT_THROW(evaluate_bc(BCPeriodic(3), 0.0), Error);
    EXPECT_THROW(BCRobin(1.0, 0.0, 0.0), Error);
}

TEST(BoundaryConditions, LightningImpulse) {
    const auto v = lightning_impulse(600e3);
    EXPECT_EQ(v(0.0), 0.0);
    EXPECT_EQ(v(-1e-6), 0.0);
    const double tau1 = 0.4e-6, tau2 = 20e-6;
    const double tp = std::log(tau2 / tau1) * tau1 * tau2 / (tau2 - tau1);
    EXPECT_NEAR(v(tp), 600e3, 1e-9 * 600e3);
    EXPECT_LT(v(0.9 * tp), v(tp));
    EXPECT_LT(v(1.1 * tp), v(tp));
    EXPECT_THROW(lightning_impulse(1.0, 2e-6, 1e-6), Error);
}

TEST(Excitation, Invariants) {
    EXPECT_THROW(Excitation(StrandedConductor{0, 0.0}), Error);
    EXPECT_THROW(Excitation(StrandedConductor{1, -1.0}), Error);
    const Excitation q(ChargeDensity{TimeFunction([](double t) { return 1.0 + t; })}, "q");
    EXPECT_EQ(q.density(2.0), 3.0);
    EXPECT_THROW(Excitation(StrandedConductor{10, 0.0}, "coil").density(0.0), Error);
}

TEST(Containers, IdsNamesAndOrder) {
    Materials mats;
    EXPECT_EQ(mats.add(Material("a", Permittivity(1.0))), 1);
    EXPECT_EQ(mats.add(Material("b", Permittivity(2.0))), 2);
    EXPECT_EQ(*mats.find("b"), 2);
    EXPECT_FALSE(mats.find("c"));
    EXPECT_THROW(mats.get(3), Error);
    std::vector<std::string> order;
    for (const auto& [id, m] : mats) order.push_back(m.name());
    EXPECT_EQ(order, (std::vector<std::string>{"a", "b"}));
    mats.add(Material("a", Permittivity(3.0)));
    EXPECT_THROW(mats.find("a"), Error);
}

TEST(Regions, AssignmentReplacesAndLookups) {
    Regions regions;
    regions.add(Region{1, 2, "r", {}, {}, {}});
    EXPECT_THROW(regions.add(Region{1, 1, "dup", {}, {}, {}}), Error);
    regions.get_regi(1).mat = 1;
    regions.get_regi(1).mat = 2;
    EXPECT_EQ(*regions.get_regi(1).mat, 2);
    EXPECT_THROW(regions.get_regi(5), Error);
}

TEST(Regions, FromMeshCollectsAllDimensions) {
    RegionMap map;
    map.default_region = 3;
    map.segments.push_back({{0, 0}, {1, 0}, 1});
    const auto m = structured_rect_mesh(1.0, 1.0, 2, 2, map);
    const auto regions = regions_from_mesh(m);
    ASSERT_EQ(regions.size(), 2u);
    EXPECT_EQ(regions.get_regi(3).dim, 2);
    EXPECT_EQ(regions.get_regi(1).dim, 1);
}
