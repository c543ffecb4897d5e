#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/femcore.hpp"
#include "fieldforge/msh_io.hpp"
#include "fieldforge/postproc.hpp"
#include "fieldforge/scenario.hpp"
#include "fieldforge/solvers.hpp"

namespace fieldforge {

/// Key scalars and written files of one run, in output order.
struct RunReport {
    std::vector<std::pair<std::string, std::string>> summary;
    std::vector<std::filesystem::path> files;

    void add(std::string key, std::string value) { summary.emplace_back(std::move(key), std::move(value)); }
    void add(std::string key, double value) { summary.emplace_back(std::move(key), format_double(value)); }
};

namespace run_detail {

inline std::filesystem::path prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

inline std::vector<double> component(const std::vector<Vec2>& v, int k) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i][k];
    return out;
}

inline std::string complex_text(Complex z) { return format_double(z.real()) + (z.imag() < 0 ? " - " : " + ") + format_double(std::abs(z.imag())) + "j"; }

inline std::string step_name(const std::string& stem, std::size_t n) {
    std::ostringstream s;
    s << stem << "_step_";
    s.width(4);
    s.fill('0');
    s << n << ".vtk";
    return s.str();
}

/// Reduced-system size of the problem's constraint set at t0.
inline std::size_t reduced_dofs(const ProblemDefinition& p) {
    if (p.kind == ProblemKind::magnetic)
        return constraints_from_bcs(vector_potential_space(p), p.regions, p.bcs, 0.0).build().reduced_size;
    const double t0 = p.time_axis.empty() ? 0.0 : p.time_axis.front();
    return constraints_from_bcs(nodal_space(p), p.regions, p.bcs, t0).build().reduced_size;
}

inline ProblemPtr as_kind(const ProblemPtr& p, ProblemKind kind) {
    auto q = std::make_shared<ProblemDefinition>(*p);
    q->kind = kind;
    return q;
}

inline std::vector<double> initial_potential(const Scenario& s, const ScenarioProblem& elec) {
    const auto& p = elec.problem;
    if (s.initial.potential) return std::vector<double>(p->mesh->num_nodes(), *s.initial.potential);
    const double t0 = p->time_axis.front();
    return solve_electrostatic_static(as_kind(p, ProblemKind::electrostatic), t0, profile_density(elec, t0)).values;
}

inline std::vector<double> initial_temperature(const Scenario& s, const ScenarioProblem& therm) {
    const auto& p = therm.problem;
    if (s.initial.temperature) return std::vector<double>(p->mesh->num_nodes(), *s.initial.temperature);
    const double t0 = p->time_axis.front();
    return solve_thermal_static(p, profile_density(therm, t0), t0).values;
}

inline void write_probes_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                             const std::vector<std::vector<double>>& rows, RunReport& rep) {
    export_csv(path.string(), header, rows);
    rep.files.push_back(path);
}

inline void write_vtk_file(const std::filesystem::path& path, const Mesh& mesh, const VtkFields& f, const std::string& title,
                           RunReport& rep) {
    export_vtk(path.string(), mesh, f, title);
    rep.files.push_back(path);
}

inline VtkFields electric_fields(const StaticSolution& s, bool with_conductivity) {
    VtkFields f;
    f.point_scalars.push_back({"potential", s.values});
    const auto e = e_field(s);
    f.cell_vectors.push_back({"E", e});
    f.cell_scalars.push_back({"E_abs", magnitudes(e)});
    if (with_conductivity) {
        f.cell_scalars.push_back({"joule_density", joule_loss_power(s).density});
    } else {
        const auto d = d_field(s);
        f.cell_vectors.push_back({"D", d});
        f.cell_scalars.push_back({"D_abs", magnitudes(d)});
    }
    return f;
}

// ------------------------------------------------------------ per-scenario runs

inline void run_electrostatic(const Scenario& s, const std::filesystem::path& dir, RunReport& rep) {
    const auto sp = make_problem(s, s.mesh, ProblemKind::electrostatic, Subproblem::single);
    rep.add("dofs", std::to_string(reduced_dofs(*sp.problem)));
    const auto sol = solve_electrostatic_static(sp.problem, 0.0, profile_density(sp, 0.0));
    rep.add("energy [J]", energy(sol));
    for (const auto& pr : s.outputs.probes) rep.add("probe " + pr.name, probe(sol, pr.position, pr.celsius));
    if (s.outputs.vtk) write_vtk_file(dir / (s.name + ".vtk"), *s.mesh, electric_fields(sol, false), s.name, rep);
}

inline void run_current_flow_static(const Scenario& s, const std::filesystem::path& dir, RunReport& rep) {
    const auto sp = make_problem(s, s.mesh, ProblemKind::current_flow, Subproblem::single);
    rep.add("dofs", std::to_string(reduced_dofs(*sp.problem)));
    std::vector<double> temp;
    if (s.initial.temperature) temp.assign(s.mesh->num_elements(), *s.initial.temperature);
    const auto sol = solve_current_flow_static(sp.problem, temp, s.newton);
    rep.add("joule loss [W]", joule_loss_power(sol).total);
    for (const auto& pr : s.outputs.probes) rep.add("probe " + pr.name, probe(sol, pr.position, pr.celsius));
    if (s.outputs.vtk) write_vtk_file(dir / (s.name + ".vtk"), *s.mesh, electric_fields(sol, true), s.name, rep);
}

inline void run_thermal_static(const Scenario& s, const std::filesystem::path& dir, RunReport& rep) {
    const auto sp = make_problem(s, s.mesh, ProblemKind::thermal, Subproblem::single);
    rep.add("dofs", std::to_string(reduced_dofs(*sp.problem)));
    const auto sol = solve_thermal_static(sp.problem, profile_density(sp, 0.0));
    for (const auto& pr : s.outputs.probes) rep.add("probe " + pr.name, probe(sol, pr.position, pr.celsius));
    if (s.outputs.vtk) {
        VtkFields f;
        f.point_scalars.push_back({"temperature", sol.values});
        write_vtk_file(dir / (s.name + ".vtk"), *s.mesh, f, s.name, rep);
    }
}

inline VtkFields magnetic_fields(const ProblemDefinition& p, const std::vector<Complex>& a, double phase) {
    VtkFields f;
    std::vector<double> re(a.size()), im(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        re[i] = a[i].real();
        im[i] = a[i].imag();
    }
    f.point_scalars.push_back({"A_real", re});
    f.point_scalars.push_back({"A_imag", im});
    const auto b = at_phase(b_field_values(p, a), phase);
    f.cell_vectors.push_back({"B", b});
    f.cell_scalars.push_back({"B_abs", magnitudes(b)});
    return f;
}

inline void run_magnetic(const Scenario& s, const std::filesystem::path& dir, RunReport& rep) {
    const auto sp = make_problem(s, s.mesh, ProblemKind::magnetic, Subproblem::single);
    const auto& p = sp.problem;
    rep.add("dofs", std::to_string(reduced_dofs(*p)));
    if (s.study == Study::stationary) {
        const auto sol = solve_magnetic_static(p);
        rep.add("energy [J]", energy(sol));
        if (s.outputs.vtk) {
            VtkFields f;
            f.point_scalars.push_back({"A", sol.values});
            const auto b = b_field(sol);
            f.cell_vectors.push_back({"B", b});
            f.cell_scalars.push_back({"B_abs", magnitudes(b)});
            write_vtk_file(dir / (s.name + ".vtk"), *s.mesh, f, s.name, rep);
        }
        return;
    }
    HarmonicSolution field;
    if (s.circuit) {
        const auto res = solve_magnetic_harmonic_circuit(p, s.circuit->stamp(*s.omega()));
        field = res.field;
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < res.circuit.size(); ++k) {
            const Complex z = res.circuit[k];
            rep.add(s.circuit->unknowns[k], complex_text(z) + " (|.| = " + format_double(std::abs(z)) + ")");
            rows.push_back({static_cast<double>(k), z.real(), z.imag(), std::abs(z), std::arg(z)});
        }
        if (s.outputs.csv) write_probes_csv(dir / (s.name + "_circuit.csv"), {"index", "real", "imag", "abs", "arg"}, rows, rep);
    } else {
        field = solve_magnetic_harmonic(p);
    }
    rep.add("energy [J]", energy(field));
    if (*s.omega() != 0.0) rep.add("eddy loss [W]", joule_loss_power(field).total);
    if (s.outputs.vtk) write_vtk_file(dir / (s.name + ".vtk"), *s.mesh, magnetic_fields(*p, field.values, s.outputs.phase), s.name, rep);
}

inline void check_probes(const Scenario& s, const Mesh& mesh) {
    for (const auto& pr : s.outputs.probes) locate(mesh, pr.position);
}

inline void run_transient(const Scenario& s, const std::filesystem::path& dir, RunReport& rep) {
    const bool coupled = s.physics == Physics::electrothermal;
    std::optional<ScenarioProblem> elec, therm;
    if (s.physics != Physics::thermal)
        elec = make_problem(s, s.mesh, ProblemKind::current_flow, coupled ? Subproblem::electric : Subproblem::single);
    if (s.physics != Physics::current_flow)
        therm = make_problem(s, s.mesh, ProblemKind::thermal, coupled ? Subproblem::thermal : Subproblem::single);
    check_probes(s, *s.mesh);
    for (const auto* sp : {&elec, &therm})
        if (*sp) rep.add(std::string(sp == &elec ? "electric" : "thermal") + " dofs", std::to_string(reduced_dofs(*(*sp)->problem)));
    rep.add("time steps", std::to_string(s.time_axis.size() - 1));

    std::optional<TransientSolution> esol, tsol;
    if (coupled) {
        for (const auto* sp : {&*elec, &*therm})
            if (!sp->profiles.empty()) throw ConfigError("excitations: spatial profiles are not supported in electrothermal runs");
        auto res = solve_electrothermal_transient(elec->problem, therm->problem, initial_potential(s, *elec),
                                                  initial_temperature(s, *therm), s.coupling, s.newton);
        esol = std::move(res.electric);
        tsol = std::move(res.thermal);
    } else if (elec) {
        if (!elec->profiles.empty()) throw ConfigError("excitations: spatial profiles are not supported in current-flow runs");
        TemperatureProvider temp;
        if (s.initial.temperature) {
            const std::vector<double> t(s.mesh->num_elements(), *s.initial.temperature);
            temp = [t](std::size_t, double) { return t; };
        }
        esol = solve_current_flow_transient(elec->problem, initial_potential(s, *elec), s.newton, temp);
    } else {
        if (!therm->profiles.empty()) throw ConfigError("excitations: spatial profiles are not supported in transient thermal runs");
        tsol = solve_thermal_transient(therm->problem, initial_temperature(s, *therm));
    }

    std::size_t max_newton = 0, max_outer = 0;
    for (const auto* sol : {&esol, &tsol}) {
        if (!*sol) continue;
        for (const auto& r : (*sol)->reports) {
            max_newton = std::max(max_newton, r.newton_iterations);
            max_outer = std::max(max_outer, r.outer_iterations);
        }
    }
    if (esol) rep.add("max newton iterations per step", std::to_string(max_newton));
    if (coupled) rep.add("max coupling passes per step", std::to_string(max_outer));
    if (esol) {
        for (double t : s.outputs.joule_loss_times) rep.add("power loss at t=" + format_double(t) + " [W]", joule_loss_power(*esol, t).total);
    }

    std::vector<std::string> header{"time"};
    std::vector<std::vector<double>> series;
    for (const auto& pr : s.outputs.probes) {
        const auto& sol = pr.field == "temperature" ? tsol : esol;
        if (!sol) throw ConfigError("outputs.probes: '" + pr.name + "' asks for " + pr.field + ", which this scenario does not solve");
        header.push_back(pr.name);
        series.push_back(probe_series(*sol, pr.position, pr.celsius));
        rep.add("probe " + pr.name + " final", series.back().back());
    }
    if (esol) {
        header.push_back("joule_loss_W");
        std::vector<double> j;
        for (std::size_t n = 0; n < esol->steps(); ++n) j.push_back(joule_loss_power(esol->at(n)).total);
        series.push_back(std::move(j));
        header.push_back("newton_iterations");
        std::vector<double> it;
        for (const auto& r : esol->reports) it.push_back(static_cast<double>(r.newton_iterations));
        series.push_back(std::move(it));
    }
    if (coupled) {
        header.push_back("thermal_source_W");
        std::vector<double> q;
        for (const auto& r : tsol->reports) q.push_back(r.source_power);
        series.push_back(std::move(q));
        header.push_back("coupling_passes");
        std::vector<double> it;
        for (const auto& r : tsol->reports) it.push_back(static_cast<double>(r.outer_iterations));
        series.push_back(std::move(it));
    }
    if (s.outputs.csv) {
        std::vector<std::vector<double>> rows;
        for (std::size_t n = 0; n < s.time_axis.size(); ++n) {
            std::vector<double> row{s.time_axis[n]};
            for (const auto& col : series) row.push_back(col[n]);
            rows.push_back(std::move(row));
        }
        write_probes_csv(dir / (s.name + "_series.csv"), header, rows, rep);
    }

    if (s.outputs.vtk && s.outputs.vtk_steps != "none") {
        auto fields_at = [&](std::size_t n) {
            VtkFields f;
            if (esol) f = electric_fields(esol->at(n), true);
            if (tsol) f.point_scalars.push_back({"temperature", tsol->values[n]});
            return f;
        };
        const std::size_t last = s.time_axis.size() - 1;
        if (s.outputs.vtk_steps == "all") {
            for (std::size_t n = 0; n <= last; ++n)
                write_vtk_file(dir / step_name(s.name, n), *s.mesh, fields_at(n), s.name + " t=" + format_double(s.time_axis[n]), rep);
        } else {
            write_vtk_file(dir / (s.name + "_final.vtk"), *s.mesh, fields_at(last), s.name + " t=" + format_double(s.time_axis[last]), rep);
        }
    }
}

}  // namespace run_detail

/// define → solve → post-process for one scenario, writing files into `output_dir`.
inline RunReport run_scenario(const Scenario& s, const std::filesystem::path& output_dir) {
    RunReport rep;
    rep.add("scenario", s.name);
    rep.add("physics", to_string(s.physics));
    rep.add("nodes", std::to_string(s.mesh->num_nodes()));
    rep.add("elements", std::to_string(s.mesh->num_elements()));
    const auto dir = run_detail::prepare_dir(output_dir);
    if (s.study == Study::transient) {
        run_detail::run_transient(s, dir, rep);
        return rep;
    }
    switch (s.physics) {
        case Physics::electrostatic: run_detail::run_electrostatic(s, dir, rep); break;
        case Physics::current_flow: run_detail::run_current_flow_static(s, dir, rep); break;
        case Physics::thermal: run_detail::run_thermal_static(s, dir, rep); break;
        case Physics::magnetic: run_detail::run_magnetic(s, dir, rep); break;
        case Physics::electrothermal: throw ConfigError("electrothermal scenarios are transient");
    }
    return rep;
}

// ---------------------------------------------------------------- convergence

struct ConvergenceRow {
    std::size_t level = 0;
    double h = 0.0;
    std::size_t dofs = 0;
    double l2_error = 0.0;
    std::optional<double> order;
};

/// sqrt(eᵀ M e) of the nodal error, M the weighted P1 mass matrix.
inline double nodal_l2_error(const FunctionSpace& space, const std::vector<double>& u, const std::function<double(const Point&)>& exact) {
    const Mesh& mesh = space.mesh();
    std::vector<double> err(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) err[i] = u[i] - exact(mesh.node(i));
    const auto m = mass_from_coefficients(space, std::vector<double>(mesh.num_elements(), 1.0));
    const auto me = m.multiply(err);
    double s = 0.0;
    for (std::size_t i = 0; i < err.size(); ++i) s += err[i] * me[i];
    return std::sqrt(std::max(s, 0.0));
}

/// Solves the scenario's static problem on `refinements` successive uniform
/// refinements and compares against its analytic reference.
inline std::vector<ConvergenceRow> convergence_study(const Scenario& s, std::size_t refinements) {
    if (!s.reference) throw ConfigError("reference: scenario '" + s.name + "' has no analytic reference for a convergence study");
    if (s.study != Study::stationary || s.physics == Physics::magnetic || s.physics == Physics::electrothermal)
        throw ConfigError("convergence studies need a static electrostatic, current-flow or thermal scenario");
    std::vector<ConvergenceRow> rows;
    auto mesh = s.mesh;
    for (std::size_t level = 0; level <= refinements; ++level) {
        if (level > 0) mesh = std::make_shared<const Mesh>(refine_uniform(*mesh));
        const auto sp = make_problem(s, mesh, primary_kind(s.physics), Subproblem::single);
        StaticSolution sol;
        switch (s.physics) {
            case Physics::electrostatic: sol = solve_electrostatic_static(sp.problem, 0.0, profile_density(sp, 0.0)); break;
            case Physics::current_flow: sol = solve_current_flow_static(sp.problem, {}, s.newton); break;
            default: sol = solve_thermal_static(sp.problem, profile_density(sp, 0.0)); break;
        }
        ConvergenceRow row;
        row.level = level;
        row.h = max_element_diameter(*mesh);
        row.dofs = run_detail::reduced_dofs(*sp.problem);
        row.l2_error = nodal_l2_error(nodal_space(*sp.problem), sol.values, s.reference->exact);
        if (!rows.empty() && rows.back().l2_error > 0.0 && row.l2_error > 0.0)
            row.order = std::log(rows.back().l2_error / row.l2_error) / std::log(rows.back().h / row.h);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------- mesh lint

struct LintReport {
    std::vector<std::pair<std::string, std::string>> lines;
};

/// Parses an MSH file and reports mesh statistics and tag usage.
inline LintReport mesh_lint(const std::filesystem::path& path, CoordSystem coords = CoordSystem::cartesian) {
    const auto res = read_msh_file(path.string(), coords);
    const Mesh& m = res.mesh;
    LintReport r;
    auto add = [&](std::string k, std::string v) { r.lines.emplace_back(std::move(k), std::move(v)); };
    add("nodes", std::to_string(m.num_nodes()));
    add("elements", std::to_string(m.num_elements()));
    add("edges", std::to_string(m.num_edges()));
    std::size_t boundary = 0;
    for (std::size_t i = 0; i < m.num_edges(); ++i) boundary += m.is_boundary_edge(i) ? 1 : 0;
    add("boundary edges", std::to_string(boundary));
    double amin = 1e300;
    for (std::size_t e = 0; e < m.num_elements(); ++e) amin = std::min(amin, m.element_area(e));
    add("total area", format_double(total_area(m)));
    add("min element area", format_double(m.num_elements() ? amin : 0.0));
    add("max element diameter", format_double(max_element_diameter(m)));
    for (const auto& g : res.groups) {
        std::size_t n = 0;
        if (g.dim == 2)
            for (int t : m.element_regions()) n += t == g.tag;
        else if (g.dim == 1)
            for (int t : m.edge_regions()) n += t == g.tag;
        else
            for (int t : m.node_regions()) n += t == g.tag;
        add("group " + std::to_string(g.dim) + ":" + std::to_string(g.tag), (g.name.empty() ? std::string("(unnamed)") : "\"" + g.name + "\"") +
                                                                                     " entities=" + std::to_string(n));
    }
    return r;
}

}  // namespace fieldforge
