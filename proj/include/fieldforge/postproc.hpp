#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/femcore.hpp"
#include "fieldforge/problem.hpp"

namespace fieldforge {

using Vec2 = std::array<double, 2>;
using CVec2 = std::array<Complex, 2>;

/// Nodal DoF vector of a static (or single time step) solve.
struct StaticSolution {
    std::shared_ptr<const ProblemDefinition> problem;
    std::vector<double> values;
    double time = 0.0;
    /// Element temperatures (K) the conductivity was evaluated with; empty if unused.
    std::vector<double> element_temperature;
};

struct HarmonicSolution {
    std::shared_ptr<const ProblemDefinition> problem;
    std::vector<Complex> values;
    double omega = 0.0;
};

struct StepReport {
    std::size_t newton_iterations = 0;
    std::vector<double> residuals;  // accepted residual norms, starting with the initial one
    std::vector<std::size_t> pass_iterations;  // Newton iterations of each coupling pass; residuals holds iterations+1 per pass
    std::size_t outer_iterations = 0;
    double source_power = 0.0;      // integrated volumetric source of a thermal step (W)
};

struct TransientSolution {
    std::shared_ptr<const ProblemDefinition> problem;
    std::vector<double> times;
    std::vector<std::vector<double>> values;                // one DoF vector per time point
    std::vector<std::vector<double>> element_temperature;   // per time point, may be empty
    std::vector<StepReport> reports;                        // per time point (index 0 is the initial state)

    std::size_t steps() const { return times.size(); }

    std::size_t step_at(double time) const {
        for (std::size_t i = 0; i < times.size(); ++i)
            if (std::abs(times[i] - time) <= 1e-12 * std::max(1.0, std::abs(time))) return i;
        throw Error("time " + std::to_string(time) + " is not on the time axis");
    }

    StaticSolution at(std::size_t step) const {
        return {problem, values.at(step), times.at(step),
                element_temperature.empty() ? std::vector<double>{} : element_temperature.at(step)};
    }
};

namespace detail {
inline void require_kind(const ProblemDefinition& p, std::initializer_list<ProblemKind> kinds, const char* what) {
    for (auto k : kinds)
        if (p.kind == k) return;
    throw Error(std::string(what) + " is not available for " + to_string(p.kind) + " solutions");
}
}  // namespace detail

/// Mean of the three nodal values of every element.
inline std::vector<double> element_means(const Mesh& mesh, const std::vector<double>& nodal) {
    std::vector<double> out(mesh.num_elements());
    for (std::size_t e = 0; e < out.size(); ++e) {
        const auto& t = mesh.element(e);
        out[e] = (nodal[t[0]] + nodal[t[1]] + nodal[t[2]]) / 3.0;
    }
    return out;
}

/// |E| per element and the matching material field arguments ("E", and "T" when known).
inline AssemblyContext field_context(const Mesh& mesh, const std::vector<double>& potential,
                                     const std::vector<double>& element_temperature, double time) {
    std::vector<double> emag(mesh.num_elements());
    for (std::size_t e = 0; e < emag.size(); ++e) {
        const auto g = element_gradient(mesh, e, potential);
        emag[e] = std::hypot(g[0], g[1]);
    }
    AssemblyContext ctx;
    ctx.time = time;
    ctx.field_args = [emag = std::move(emag), temp = element_temperature](std::size_t e) {
        FieldArgs a{{"E", emag[e]}};
        if (!temp.empty()) a.set("T", temp[e]);
        return a;
    };
    return ctx;
}

inline std::vector<Vec2> e_field(const StaticSolution& s) {
    detail::require_kind(*s.problem, {ProblemKind::electrostatic, ProblemKind::current_flow}, "electric field");
    const Mesh& mesh = *s.problem->mesh;
    std::vector<Vec2> out(mesh.num_elements());
    for (std::size_t e = 0; e < out.size(); ++e) {
        const auto g = element_gradient(mesh, e, s.values);
        out[e] = {-g[0], -g[1]};
    }
    return out;
}

inline std::vector<Vec2> d_field(const StaticSolution& s) {
    const auto e_vec = e_field(s);
    const auto& p = *s.problem;
    const auto eps = element_coefficients(NodalFunctionSpace(p.mesh), p.regions, p.materials, PropertyKind::permittivity,
                                          field_context(*p.mesh, s.values, s.element_temperature, s.time));
    std::vector<Vec2> out(e_vec.size());
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = eps[e].apply(e_vec[e]);
    return out;
}

template <typename T>
std::vector<std::array<T, 2>> b_field_values(const ProblemDefinition& p, const std::vector<T>& a) {
    detail::require_kind(p, {ProblemKind::magnetic}, "magnetic flux density");
    const Mesh& mesh = *p.mesh;
    std::vector<std::array<T, 2>> out(mesh.num_elements());
    for (std::size_t e = 0; e < out.size(); ++e) {
        const auto g = element_gradient(mesh, e, a);
        if (mesh.coords() == CoordSystem::cartesian) {
            out[e] = {g[1], -g[0]};
        } else {
            const double s = 1.0 / (two_pi * mesh.centroid(e).x);
            out[e] = {-s * g[1], s * g[0]};
        }
    }
    return out;
}

inline std::vector<Vec2> b_field(const StaticSolution& s) { return b_field_values(*s.problem, s.values); }
inline std::vector<CVec2> b_field(const HarmonicSolution& s) { return b_field_values(*s.problem, s.values); }

/// Instantaneous field Re(X·e^{jφ}).
inline std::vector<Vec2> at_phase(const std::vector<CVec2>& v, double phase) {
    const Complex rot = std::polar(1.0, phase);
    std::vector<Vec2> out(v.size());
    for (std::size_t e = 0; e < v.size(); ++e) out[e] = {std::real(v[e][0] * rot), std::real(v[e][1] * rot)};
    return out;
}

inline std::vector<double> magnitudes(const std::vector<Vec2>& v) {
    std::vector<double> out(v.size());
    for (std::size_t e = 0; e < v.size(); ++e) out[e] = std::hypot(v[e][0], v[e][1]);
    return out;
}

/// Stiffness operator whose quadratic form is twice the stored field energy.
inline RealMatrix energy_operator(const StaticSolution& s) {
    const auto& p = *s.problem;
    if (p.kind == ProblemKind::electrostatic || p.kind == ProblemKind::current_flow) {
        return divgrad_operator(NodalFunctionSpace(p.mesh), p.regions, p.materials, PropertyKind::permittivity,
                                field_context(*p.mesh, s.values, s.element_temperature, s.time))
            .matrix;
    }
    if (p.kind == ProblemKind::magnetic) return curlcurl_operator(vector_potential_space(p), p.regions, p.materials).matrix;
    throw Error("energy is not available for thermal solutions");
}

/// Electrostatic W = ½ uᵀK_eps u; magnetostatic W = ½ aᵀK_nu a (J).
inline double energy(const StaticSolution& s) {
    const auto k = energy_operator(s);
    const auto ku = k.multiply(s.values);
    double w = 0.0;
    for (std::size_t i = 0; i < ku.size(); ++i) w += s.values[i] * ku[i];
    return 0.5 * w;
}

/// W = ½ Re(aᴴ K_nu a) with peak phasor amplitudes (J).
inline double energy(const HarmonicSolution& s) {
    const auto& p = *s.problem;
    detail::require_kind(p, {ProblemKind::magnetic}, "harmonic energy");
    const auto k = curlcurl_operator(vector_potential_space(p), p.regions, p.materials).matrix;
    const auto ka = k.multiply(s.values);
    Complex w(0.0);
    for (std::size_t i = 0; i < ka.size(); ++i) w += std::conj(s.values[i]) * ka[i];
    return 0.5 * w.real();
}

struct JouleLoss {
    double total = 0.0;              // W
    std::vector<double> density;     // W/m³ per element
};

/// p_e = sigma(E, T)·|E|², total Σ_e p_e |e|_w.
inline JouleLoss joule_loss_power(const StaticSolution& s) {
    const auto& p = *s.problem;
    detail::require_kind(p, {ProblemKind::current_flow, ProblemKind::electrostatic}, "Joule losses");
    const NodalFunctionSpace space(p.mesh);
    const auto ctx = field_context(*p.mesh, s.values, s.element_temperature, s.time);
    const auto sigma = element_coefficients(space, p.regions, p.materials, PropertyKind::electric_conductivity, ctx);
    const auto ev = e_field(s);
    JouleLoss out;
    out.density.resize(ev.size());
    for (std::size_t e = 0; e < ev.size(); ++e) {
        const auto je = sigma[e].apply(ev[e]);
        out.density[e] = je[0] * ev[e][0] + je[1] * ev[e][1];
        out.total += out.density[e] * space.weighted_area(e);
    }
    return out;
}

inline JouleLoss joule_loss_power(const TransientSolution& s, double time) { return joule_loss_power(s.at(s.step_at(time))); }

/// Time-averaged eddy-current loss ½ω² Re(aᴴ M_sigma a) of a harmonic magnetic solution.
inline JouleLoss joule_loss_power(const HarmonicSolution& s) {
    const auto& p = *s.problem;
    detail::require_kind(p, {ProblemKind::magnetic}, "eddy-current losses");
    const VectorPotentialSpace space = vector_potential_space(p);
    const auto sigma = element_coefficients(space, p.regions, p.materials, PropertyKind::electric_conductivity);
    const Mesh& mesh = *p.mesh;
    JouleLoss out;
    out.density.resize(mesh.num_elements());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        const double s12 = space.mass_weight(e) * sigma[e].xx * mesh.element_area(e) / 12.0;
        Complex q(0.0);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) q += std::conj(s.values[t[i]]) * (i == j ? 2.0 : 1.0) * s12 * s.values[t[j]];
        const double pe = 0.5 * s.omega * s.omega * q.real();
        out.total += pe;
        out.density[e] = pe / space.weighted_area(e);
    }
    return out;
}

struct Location {
    std::size_t element;
    std::array<double, 3> barycentric;
};

/// Brute-force barycentric scan over all elements, O(elements).
inline Location locate(const Mesh& mesh, const Point& p) {
    std::optional<Location> best;
    double best_min = -1e300;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        const double a = mesh.element_area(e);
        std::array<double, 3> l{signed_area(p, mesh.node(t[1]), mesh.node(t[2])) / a,
                                signed_area(mesh.node(t[0]), p, mesh.node(t[2])) / a,
                                signed_area(mesh.node(t[0]), mesh.node(t[1]), p) / a};
        const double m = std::min({l[0], l[1], l[2]});
        if (m > best_min) {
            best_min = m;
            best = Location{e, l};
        }
        if (m >= 0.0) return {e, l};
    }
    if (best && best_min >= -1e-10) return *best;
    throw Error("position (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") is outside the mesh");
}

inline double interpolate(const Mesh& mesh, const std::vector<double>& nodal, const Point& p) {
    const auto loc = locate(mesh, p);
    const auto& t = mesh.element(loc.element);
    return loc.barycentric[0] * nodal[t[0]] + loc.barycentric[1] * nodal[t[1]] + loc.barycentric[2] * nodal[t[2]];
}

inline double probe(const StaticSolution& s, const Point& p, bool celsius = false) {
    const double v = interpolate(*s.problem->mesh, s.values, p);
    return celsius ? v - celsius_offset : v;
}

inline std::vector<double> probe_series(const TransientSolution& s, const Point& p, bool celsius = false) {
    const Mesh& mesh = *s.problem->mesh;
    const auto loc = locate(mesh, p);
    const auto& t = mesh.element(loc.element);
    std::vector<double> out(s.steps());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto& v = s.values[k];
        out[k] = loc.barycentric[0] * v[t[0]] + loc.barycentric[1] * v[t[1]] + loc.barycentric[2] * v[t[2]];
        if (celsius) out[k] -= celsius_offset;
    }
    return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw Error("number formatting failed");
    return std::string(buf, ptr);
}

struct VtkPointScalar {
    std::string name;
    std::vector<double> values;
};
struct VtkCellScalar {
    std::string name;
    std::vector<double> values;
};
struct VtkCellVector {
    std::string name;
    std::vector<Vec2> values;
};

struct VtkFields {
    std::vector<VtkPointScalar> point_scalars;
    std::vector<VtkCellScalar> cell_scalars;
    std::vector<VtkCellVector> cell_vectors;
};

/// Legacy VTK ASCII unstructured grid of triangles (cell type 5).
inline void write_vtk(std::ostream& out, const Mesh& mesh, const VtkFields& fields, const std::string& title = "fieldforge") {
    out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << mesh.num_nodes() << " double\n";
    for (const auto& p : mesh.nodes()) out << format_double(p.x) << ' ' << format_double(p.y) << " 0\n";
    const std::size_t nc = mesh.num_elements();
    out << "CELLS " << nc << ' ' << 4 * nc << '\n';
    for (const auto& t : mesh.elements()) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    out << "CELL_TYPES " << nc << '\n';
    for (std::size_t e = 0; e < nc; ++e) out << "5\n";
    if (!fields.point_scalars.empty()) {
        out << "POINT_DATA " << mesh.num_nodes() << '\n';
        for (const auto& f : fields.point_scalars) {
            if (f.values.size() != mesh.num_nodes()) throw Error("point field " + f.name + " has wrong length");
            out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
            for (double v : f.values) out << format_double(v) << '\n';
        }
    }
    if (!fields.cell_scalars.empty() || !fields.cell_vectors.empty()) {
        out << "CELL_DATA " << nc << '\n';
        for (const auto& f : fields.cell_vectors) {
            if (f.values.size() != nc) throw Error("cell field " + f.name + " has wrong length");
            out << "VECTORS " << f.name << " double\n";
            for (const auto& v : f.values) out << format_double(v[0]) << ' ' << format_double(v[1]) << " 0\n";
        }
        for (const auto& f : fields.cell_scalars) {
            if (f.values.size() != nc) throw Error("cell field " + f.name + " has wrong length");
            out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
            for (double v : f.values) out << format_double(v) << '\n';
        }
    }
}

inline void export_vtk(const std::string& path, const Mesh& mesh, const VtkFields& fields, const std::string& title = "fieldforge") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_vtk(out, mesh, fields, title);
    if (!out) throw IoError("cannot write " + path);
}

/// CSV with a header row; fields containing separators or quotes are quoted.
inline void write_csv(std::ostream& out, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << quote(header[i]);
    out << '\n';
    for (const auto& r : rows) {
        if (r.size() != header.size()) throw Error("CSV row width does not match header");
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
        out << '\n';
    }
}

inline void export_csv(const std::string& path, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_csv(out, header, rows);
    if (!out) throw IoError("cannot write " + path);
}

}  // namespace fieldforge
