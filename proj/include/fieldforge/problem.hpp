#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/femcore.hpp"
#include "fieldforge/mesh.hpp"
#include "fieldforge/model.hpp"

namespace fieldforge {

enum class ProblemKind { electrostatic, current_flow, thermal, magnetic };

inline const char* to_string(ProblemKind k) {
    switch (k) {
        case ProblemKind::electrostatic: return "electrostatic";
        case ProblemKind::current_flow: return "current_flow";
        case ProblemKind::thermal: return "thermal";
        case ProblemKind::magnetic: return "magnetic";
    }
    return "?";
}

/// Everything needed to set up one field problem.
struct ProblemDefinition {
    std::string name;
    ProblemKind kind = ProblemKind::electrostatic;
    std::shared_ptr<const Mesh> mesh;
    Regions regions;
    Materials materials;
    BdryCond bcs;
    Excitations excitations;
    std::vector<double> time_axis;  // transient problems, strictly increasing (s)
    std::optional<double> omega;    // harmonic problems (rad/s)
    double depth = 1.0;             // out-of-plane length of Cartesian magnetics (m)

    CoordSystem coords() const { return mesh->coords(); }

    /// Properties the problem kind needs on every element.
    std::vector<PropertyKind> required_properties(bool transient) const {
        switch (kind) {
            case ProblemKind::electrostatic: return {PropertyKind::permittivity};
            case ProblemKind::current_flow:
                if (transient) return {PropertyKind::electric_conductivity, PropertyKind::permittivity};
                return {PropertyKind::electric_conductivity};
            case ProblemKind::thermal:
                if (transient) return {PropertyKind::thermal_conductivity, PropertyKind::volumetric_heat_capacity};
                return {PropertyKind::thermal_conductivity};
            case ProblemKind::magnetic:
                if (omega && *omega != 0.0) return {PropertyKind::reluctivity, PropertyKind::electric_conductivity};
                return {PropertyKind::reluctivity};
        }
        return {};
    }

    void validate(bool transient) const {
        if (!mesh) throw Error("problem " + name + " has no mesh");
        if (transient) validate_time_axis(time_axis);
        const auto mats = element_materials(*mesh, regions, materials);
        for (auto kind_needed : required_properties(transient)) {
            for (std::size_t e = 0; e < mats.size(); ++e) {
                if (!mats[e]->has(kind_needed)) {
                    throw Error("problem " + name + ": material " + mats[e]->name() + " lacks " + to_string(kind_needed));
                }
            }
        }
    }

    static void validate_time_axis(const std::vector<double>& t) {
        if (t.size() < 2) throw Error("time axis needs at least two points");
        for (std::size_t i = 1; i < t.size(); ++i)
            if (!(t[i] > t[i - 1])) throw Error("nonpositive time step at index " + std::to_string(i));
    }
};

inline NodalFunctionSpace nodal_space(const ProblemDefinition& p) { return NodalFunctionSpace(p.mesh); }
inline VectorPotentialSpace vector_potential_space(const ProblemDefinition& p) { return VectorPotentialSpace(p.mesh, p.depth); }

struct NewtonSettings {
    double abs_tol = 1e-8;
    double rel_tol = 1e-10;
    std::size_t max_iter = 25;
    std::size_t max_damping_halvings = 10;

    void validate() const {
        if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw Error("Newton tolerances must be positive");
        if (max_iter < 1) throw Error("Newton needs max_iter >= 1");
    }
};

enum class CouplingMode { weak, successive_substitution };

struct CouplingSettings {
    CouplingMode mode = CouplingMode::successive_substitution;
    double temp_tol = 1e-3;  // K
    std::size_t max_outer_iter = 20;

    void validate() const {
        if (!(temp_tol > 0.0)) throw Error("coupling temperature tolerance must be positive");
        if (max_outer_iter < 1) throw Error("coupling needs max_outer_iter >= 1");
    }
};

/// `n` points from a to b inclusive.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
    if (n < 2) return {a};
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    v.back() = b;
    return v;
}

}  // namespace fieldforge
