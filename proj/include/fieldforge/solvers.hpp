#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/femcore.hpp"
#include "fieldforge/postproc.hpp"
#include "fieldforge/problem.hpp"
#include "fieldforge/sparse.hpp"

namespace fieldforge {

using ProblemPtr = std::shared_ptr<const ProblemDefinition>;

// ---------------------------------------------------------------- Newton

struct NewtonLog {
    std::size_t iterations = 0;
    std::vector<double> residuals;  // ‖r‖ at the start and after every accepted step
    std::vector<double> dampings;   // accepted λ per iteration
    bool stagnated = false;         // stopped at the round-off floor instead of a tolerance
};

struct NewtonResult {
    std::vector<double> x;
    NewtonLog log;
};

struct NewtonProvider {
    std::function<std::vector<double>(const std::vector<double>&)> residual;
    std::function<RealMatrix(const std::vector<double>&)> jacobian;
};

namespace detail {
inline std::string history(const std::vector<double>& r) {
    std::ostringstream s;
    s.precision(6);
    for (std::size_t i = 0; i < r.size(); ++i) s << (i ? ", " : "") << r[i];
    return s.str();
}
}  // namespace detail

/// Damped Newton: J δ = −r, λ halved until the residual norm decreases.
/// A step that cannot decrease a residual already at round-off level
/// (‖r‖ ≤ 1e-12·‖J‖_F·‖x‖) ends the iteration as converged.
inline NewtonResult newton_solve(const NewtonProvider& p, std::vector<double> x0, const NewtonSettings& s = {}) {
    s.validate();
    NewtonResult out;
    out.x = std::move(x0);
    auto r = p.residual(out.x);
    double rn = norm2(r);
    const double r0 = rn;
    out.log.residuals.push_back(rn);
    if (!std::isfinite(rn)) throw SolverError("Newton: non-finite initial residual");
    auto done = [&](double v) { return v <= s.abs_tol || (r0 > 0.0 && v / r0 <= s.rel_tol); };
    if (done(rn)) return out;

    for (std::size_t it = 1; it <= s.max_iter; ++it) {
        const RealMatrix j = p.jacobian(out.x);
        std::vector<double> rhs(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) rhs[i] = -r[i];
        const auto dx = solve_direct(j, rhs);

        double lambda = 1.0;
        bool accepted = false;
        std::vector<double> trial(out.x.size()), rt;
        double rt_norm = 0.0;
        for (std::size_t h = 0; h <= s.max_damping_halvings; ++h, lambda *= 0.5) {
            for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = out.x[i] + lambda * dx[i];
            rt = p.residual(trial);
            rt_norm = norm2(rt);
            if (std::isfinite(rt_norm) && rt_norm < rn) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (rn <= 1e-12 * j.frobenius_norm() * norm2(out.x)) {
                out.log.stagnated = true;
                return out;
            }
            throw SolverError("Newton damping floor hit at iteration " + std::to_string(it) +
                              "; residual history: " + detail::history(out.log.residuals));
        }
        out.x = std::move(trial);
        r = std::move(rt);
        rn = rt_norm;
        out.log.iterations = it;
        out.log.residuals.push_back(rn);
        out.log.dampings.push_back(lambda);
        if (done(rn)) return out;
    }
    throw SolverError("Newton did not converge within " + std::to_string(s.max_iter) +
                      " iterations; residual history: " + detail::history(out.log.residuals));
}

// ---------------------------------------------------------------- helpers

namespace detail {

inline std::vector<double> restrict_vector(const std::vector<double>& full, const DofMap& map) {
    std::vector<double> out(map.reduced_size, 0.0);
    for (std::size_t i = 0; i < full.size(); ++i)
        if (!map.is_fixed(i)) out[map.target[i]] += map.sign[i] * full[i];
    return out;
}

/// Reduced start vector taking the first representative of each reduced DoF.
inline std::vector<double> pick_reduced(const std::vector<double>& full, const DofMap& map) {
    std::vector<double> out(map.reduced_size, 0.0);
    std::vector<bool> set(map.reduced_size, false);
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (map.is_fixed(i) || set[map.target[i]]) continue;
        out[map.target[i]] = map.sign[i] * full[i];
        set[map.target[i]] = true;
    }
    return out;
}

inline bool has_robin(const ProblemDefinition& p) {
    for (const auto& r : p.regions)
        if (r.bc && p.bcs.get(*r.bc).is<Robin>()) return true;
    return false;
}

inline bool has_fixed(const DofMap& m) {
    for (std::size_t i = 0; i < m.full_size(); ++i)
        if (m.is_fixed(i)) return true;
    return false;
}

template <typename T>
std::vector<T> solve_constrained(const CsrMatrix<T>& a, const std::vector<T>& b, const DofMap& map) {
    const auto sys = shrink(a, b, map);
    return inflate(solve_direct(sys.matrix, sys.rhs), map);
}

inline std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

inline AssemblyContext temperature_context(const std::vector<double>& element_temperature, double time) {
    AssemblyContext ctx;
    ctx.time = time;
    if (!element_temperature.empty())
        ctx.field_args = [temp = element_temperature](std::size_t e) { return FieldArgs{{"T", temp[e]}}; };
    return ctx;
}

inline void require_kind(const ProblemDefinition& p, ProblemKind kind, const char* solver) {
    if (p.kind != kind)
        throw Error(std::string(solver) + " needs a " + to_string(kind) + " problem, got " + to_string(p.kind));
}

}  // namespace detail

// ---------------------------------------------------------------- static solvers

/// K_eps u = f_rho + boundary terms.
inline StaticSolution solve_electrostatic_static(ProblemPtr p, double time = 0.0, const std::vector<double>& extra_source = {}) {
    detail::require_kind(*p, ProblemKind::electrostatic, "solve_electrostatic_static");
    p->validate(false);
    const NodalFunctionSpace space(p->mesh);
    const auto map = constraints_from_bcs(space, p->regions, p->bcs, time).build();
    if (!detail::has_fixed(map) && !detail::has_robin(*p))
        throw SolverError("singular system: no Dirichlet or Robin condition grounds the potential");
    const auto bt = neumann_robin_terms(space, p->regions, p->bcs, time);
    const auto k = divgrad_operator(space, p->regions, p->materials, PropertyKind::permittivity, {time, {}}).matrix + bt.matrix;
    auto f = detail::add(load_vector(space, p->regions, p->excitations, time), bt.vector);
    if (!extra_source.empty()) f = detail::add(f, load_vector(space, std::span<const double>(extra_source)));
    return {p, detail::solve_constrained(k, f, map), time, {}};
}

/// Steady conduction; `extra_source` holds element heat densities.
inline StaticSolution solve_thermal_static(ProblemPtr p, const std::vector<double>& extra_source = {}, double time = 0.0) {
    detail::require_kind(*p, ProblemKind::thermal, "solve_thermal_static");
    p->validate(false);
    const NodalFunctionSpace space(p->mesh);
    const auto map = constraints_from_bcs(space, p->regions, p->bcs, time).build();
    if (!detail::has_fixed(map) && !detail::has_robin(*p))
        throw SolverError("singular system: steady thermal problem without Dirichlet or Robin condition");
    const auto bt = neumann_robin_terms(space, p->regions, p->bcs, time);
    const auto k = divgrad_operator(space, p->regions, p->materials, PropertyKind::thermal_conductivity, {time, {}}).matrix + bt.matrix;
    auto f = detail::add(load_vector(space, p->regions, p->excitations, time), bt.vector);
    if (!extra_source.empty()) f = detail::add(f, load_vector(space, std::span<const double>(extra_source)));
    return {p, detail::solve_constrained(k, f, map), time, {}};
}

/// Magnetostatic K_nu a = f_J with the axis fixed for axisymmetric problems.
inline StaticSolution solve_magnetic_static(ProblemPtr p, double time = 0.0) {
    detail::require_kind(*p, ProblemKind::magnetic, "solve_magnetic_static");
    p->validate(false);
    const auto space = vector_potential_space(*p);
    const auto map = constraints_from_bcs(space, p->regions, p->bcs, time).build();
    const auto bt = neumann_robin_terms(space, p->regions, p->bcs, time);
    const auto k = curlcurl_operator(space, p->regions, p->materials, {time, {}}).matrix + bt.matrix;
    const auto f = detail::add(load_vector(space, p->regions, p->excitations, time), bt.vector);
    return {p, detail::solve_constrained(k, f, map), time, {}};
}

/// (K_nu + jω M_sigma) a = f_J for density excitations.
inline HarmonicSolution solve_magnetic_harmonic(ProblemPtr p) {
    detail::require_kind(*p, ProblemKind::magnetic, "solve_magnetic_harmonic");
    if (!p->omega) throw Error("harmonic problem needs an angular frequency");
    p->validate(false);
    const double omega = *p->omega;
    const auto space = vector_potential_space(*p);
    const auto map = constraints_from_bcs(space, p->regions, p->bcs, 0.0).build();
    const auto bt = neumann_robin_terms(space, p->regions, p->bcs, 0.0);
    ComplexMatrix a = (curlcurl_operator(space, p->regions, p->materials).matrix + bt.matrix).cast<Complex>();
    if (omega != 0.0)
        a = a + mass_matrix(space, p->regions, p->materials, PropertyKind::electric_conductivity).matrix.cast<Complex>().scaled(Complex(0.0, omega));
    const auto fr = detail::add(load_vector(space, p->regions, p->excitations, 0.0), bt.vector);
    std::vector<Complex> f(fr.begin(), fr.end());
    return {p, detail::solve_constrained(a, f, map), omega};
}

// ---------------------------------------------------------------- current flow

/// One implicit Euler step of ∇·(sigma∇u) + ∂t∇·(eps∇u) = 0 solved by Newton.
/// `inv_dt` = 0 gives the stationary conduction problem.
struct CurrentFlowStep {
    std::vector<double> u;
    NewtonLog log;
};

inline CurrentFlowStep current_flow_step(const ProblemDefinition& p, const std::vector<double>& u_prev, double time,
                                         double inv_dt, const std::vector<double>& element_temperature,
                                         const NewtonSettings& settings) {
    const NodalFunctionSpace space(p.mesh);
    const Mesh& mesh = *p.mesh;
    const auto map = constraints_from_bcs(space, p.regions, p.bcs, time).build();
    const auto bt = neumann_robin_terms(space, p.regions, p.bcs, time);
    RealMatrix base = bt.matrix;
    std::vector<double> rhs = bt.vector;
    if (inv_dt != 0.0) {
        const auto keps = divgrad_operator(space, p.regions, p.materials, PropertyKind::permittivity, {time, {}}).matrix;
        const auto kd = keps.scaled(inv_dt);
        base = base + kd;
        rhs = detail::add(rhs, kd.multiply(u_prev));
    }
    auto ctx_for = [&](const std::vector<double>& u) { return field_context(mesh, u, element_temperature, time); };

    NewtonProvider prov;
    prov.residual = [&](const std::vector<double>& x) {
        const auto u = inflate(x, map);
        const auto ks = divgrad_operator(space, p.regions, p.materials, PropertyKind::electric_conductivity, ctx_for(u)).matrix;
        auto r = (base + ks).multiply(u);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= rhs[i];
        return detail::restrict_vector(r, map);
    };
    prov.jacobian = [&](const std::vector<double>& x) {
        const auto u = inflate(x, map);
        const auto ctx = ctx_for(u);
        const auto ks = divgrad_operator(space, p.regions, p.materials, PropertyKind::electric_conductivity, ctx).matrix;
        const auto kp = field_differential_operator(space, p.regions, p.materials, PropertyKind::electric_conductivity, ctx, u);
        const std::vector<double> zero(u.size(), 0.0);
        return shrink(base + ks + kp, zero, map).matrix;
    };
    auto res = newton_solve(prov, detail::pick_reduced(u_prev, map), settings);
    return {inflate(res.x, map), std::move(res.log)};
}

/// Stationary conduction K_sigma(E, T) u = boundary terms.
inline StaticSolution solve_current_flow_static(ProblemPtr p, const std::vector<double>& element_temperature = {},
                                                const NewtonSettings& settings = {}, double time = 0.0) {
    detail::require_kind(*p, ProblemKind::current_flow, "solve_current_flow_static");
    p->validate(false);
    auto step = current_flow_step(*p, std::vector<double>(p->mesh->num_nodes(), 0.0), time, 0.0, element_temperature, settings);
    return {p, std::move(step.u), time, element_temperature};
}

/// Element temperatures for step `n` at time `t`; empty when sigma ignores T.
using TemperatureProvider = std::function<std::vector<double>(std::size_t n, double t)>;

inline TransientSolution solve_current_flow_transient(ProblemPtr p, const std::vector<double>& u0,
                                                      const NewtonSettings& settings = {},
                                                      const TemperatureProvider& temperature = {}) {
    detail::require_kind(*p, ProblemKind::current_flow, "solve_current_flow_transient");
    p->validate(true);
    if (u0.size() != p->mesh->num_nodes()) throw Error("initial potential has wrong length");
    TransientSolution out;
    out.problem = p;
    out.times = p->time_axis;
    out.values.push_back(u0);
    out.reports.emplace_back();
    if (temperature) out.element_temperature.push_back(temperature(0, out.times[0]));
    for (std::size_t n = 1; n < out.times.size(); ++n) {
        const double t = out.times[n], dt = t - out.times[n - 1];
        auto temp = temperature ? temperature(n, t) : std::vector<double>{};
        CurrentFlowStep step;
        try {
            step = current_flow_step(*p, out.values.back(), t, 1.0 / dt, temp, settings);
        } catch (const SolverError& e) {
            throw SolverError("step " + std::to_string(n) + " (t=" + format_double(t) + "): " + e.what());
        }
        StepReport rep;
        rep.newton_iterations = step.log.iterations;
        rep.residuals = step.log.residuals;
        rep.pass_iterations = {step.log.iterations};
        out.values.push_back(std::move(step.u));
        out.reports.push_back(std::move(rep));
        if (temperature) out.element_temperature.push_back(std::move(temp));
    }
    return out;
}

// ---------------------------------------------------------------- thermal transient

struct ThermalStep {
    std::vector<double> T;
    double source_power = 0.0;  // Σ_i f_i of the element source, W
};

/// (M_c/Δt + K_λ) T^{n+1} = M_c/Δt T^n + q^{n+1} + boundary terms, with
/// temperature-dependent properties evaluated at the element means of T^n.
inline ThermalStep thermal_step(const ProblemDefinition& p, const std::vector<double>& T_prev, double time, double dt,
                                const std::vector<double>& element_source = {}) {
    if (!(dt > 0.0)) throw Error("nonpositive time step");
    const NodalFunctionSpace space(p.mesh);
    const auto ctx = detail::temperature_context(element_means(*p.mesh, T_prev), time);
    const auto map = constraints_from_bcs(space, p.regions, p.bcs, time).build();
    const auto bt = neumann_robin_terms(space, p.regions, p.bcs, time);
    const auto md = mass_matrix(space, p.regions, p.materials, PropertyKind::volumetric_heat_capacity, ctx).matrix.scaled(1.0 / dt);
    const auto k = divgrad_operator(space, p.regions, p.materials, PropertyKind::thermal_conductivity, ctx).matrix;
    auto f = detail::add(md.multiply(T_prev), load_vector(space, p.regions, p.excitations, time));
    f = detail::add(f, bt.vector);
    ThermalStep out;
    if (!element_source.empty()) {
        const auto fq = load_vector(space, std::span<const double>(element_source));
        for (double v : fq) out.source_power += v;
        f = detail::add(f, fq);
    }
    out.T = detail::solve_constrained(md + k + bt.matrix, f, map);
    return out;
}

inline TransientSolution solve_thermal_transient(ProblemPtr p, const std::vector<double>& T0) {
    detail::require_kind(*p, ProblemKind::thermal, "solve_thermal_transient");
    p->validate(true);
    if (T0.size() != p->mesh->num_nodes()) throw Error("initial temperature has wrong length");
    TransientSolution out;
    out.problem = p;
    out.times = p->time_axis;
    out.values.push_back(T0);
    out.reports.emplace_back();
    for (std::size_t n = 1; n < out.times.size(); ++n) {
        auto step = thermal_step(*p, out.values.back(), out.times[n], out.times[n] - out.times[n - 1]);
        out.values.push_back(std::move(step.T));
        out.reports.emplace_back();
    }
    return out;
}

// ---------------------------------------------------------------- electrothermal

/// Joule density E·sigma(E,T)E per element.
inline std::vector<double> joule_density(const ProblemDefinition& elec, const std::vector<double>& u,
                                         const std::vector<double>& element_temperature, double time) {
    const Mesh& mesh = *elec.mesh;
    const auto sigma = element_coefficients(NodalFunctionSpace(elec.mesh), elec.regions, elec.materials,
                                            PropertyKind::electric_conductivity,
                                            field_context(mesh, u, element_temperature, time));
    std::vector<double> q(mesh.num_elements());
    for (std::size_t e = 0; e < q.size(); ++e) {
        const auto g = element_gradient(mesh, e, u);
        const auto j = sigma[e].apply(g);
        q[e] = j[0] * g[0] + j[1] * g[1];
    }
    return q;
}

/// One staggered electric → Joule → thermal pass of a step, with the
/// conductivity evaluated at the temperature guess `T_guess`.
struct CoupledPass {
    std::vector<double> u;
    std::vector<double> T;
    std::vector<double> element_temperature;
    double source_power = 0.0;
    NewtonLog log;
};

inline CoupledPass coupled_pass(const ProblemDefinition& elec, const ProblemDefinition& therm, const std::vector<double>& u_prev,
                                const std::vector<double>& T_prev, const std::vector<double>& T_guess, double time, double dt,
                                const NewtonSettings& newton) {
    CoupledPass out;
    out.element_temperature = element_means(*elec.mesh, T_guess);
    auto es = current_flow_step(elec, u_prev, time, 1.0 / dt, out.element_temperature, newton);
    out.u = std::move(es.u);
    out.log = std::move(es.log);
    auto ts = thermal_step(therm, T_prev, time, dt, joule_density(elec, out.u, out.element_temperature, time));
    out.T = std::move(ts.T);
    out.source_power = ts.source_power;
    return out;
}

inline double max_abs_difference(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

struct ElectrothermalSolution {
    TransientSolution electric;
    TransientSolution thermal;
};

inline ElectrothermalSolution solve_electrothermal_transient(ProblemPtr elec, ProblemPtr therm, const std::vector<double>& u0,
                                                             const std::vector<double>& T0, const CouplingSettings& coupling = {},
                                                             const NewtonSettings& newton = {}) {
    detail::require_kind(*elec, ProblemKind::current_flow, "solve_electrothermal_transient");
    detail::require_kind(*therm, ProblemKind::thermal, "solve_electrothermal_transient");
    coupling.validate();
    elec->validate(true);
    therm->validate(true);
    if (elec->mesh != therm->mesh && (elec->mesh->num_nodes() != therm->mesh->num_nodes() ||
                                      elec->mesh->elements() != therm->mesh->elements()))
        throw Error("electric and thermal problems must share the mesh");
    if (elec->time_axis != therm->time_axis) throw Error("electric and thermal problems must share the time axis");
    if (u0.size() != elec->mesh->num_nodes() || T0.size() != therm->mesh->num_nodes())
        throw Error("initial condition has wrong length");

    ElectrothermalSolution out;
    for (auto* s : {&out.electric, &out.thermal}) s->times = elec->time_axis;
    out.electric.problem = elec;
    out.thermal.problem = therm;
    out.electric.values.push_back(u0);
    out.thermal.values.push_back(T0);
    out.electric.element_temperature.push_back(element_means(*elec->mesh, T0));
    out.electric.reports.emplace_back();
    out.thermal.reports.emplace_back();

    for (std::size_t n = 1; n < out.electric.times.size(); ++n) {
        const double t = out.electric.times[n], dt = t - out.electric.times[n - 1];
        const auto& u_prev = out.electric.values.back();
        const auto& T_prev = out.thermal.values.back();
        std::vector<double> guess = T_prev;
        CoupledPass pass;
        StepReport rep;
        for (std::size_t k = 1;; ++k) {
            try {
                pass = coupled_pass(*elec, *therm, u_prev, T_prev, guess, t, dt, newton);
            } catch (const SolverError& e) {
                throw SolverError("step " + std::to_string(n) + " (t=" + format_double(t) + "): " + e.what());
            }
            rep.outer_iterations = k;
            rep.newton_iterations += pass.log.iterations;
            rep.pass_iterations.push_back(pass.log.iterations);
            rep.residuals.insert(rep.residuals.end(), pass.log.residuals.begin(), pass.log.residuals.end());
            if (coupling.mode == CouplingMode::weak) break;
            const double change = max_abs_difference(pass.T, guess);
            guess = pass.T;
            if (change <= coupling.temp_tol) break;
            if (k >= coupling.max_outer_iter)
                throw SolverError("step " + std::to_string(n) + ": electrothermal iteration did not converge in " +
                                  std::to_string(k) + " passes (last change " + format_double(change) + " K)");
        }
        rep.source_power = pass.source_power;
        out.electric.values.push_back(std::move(pass.u));
        out.electric.element_temperature.push_back(std::move(pass.element_temperature));
        out.thermal.values.push_back(std::move(pass.T));
        StepReport erep = rep;
        out.electric.reports.push_back(std::move(erep));
        out.thermal.reports.push_back(std::move(rep));
    }
    return out;
}

// ---------------------------------------------------------------- field-circuit coupling

struct StrandedCoupling {
    int region = no_region;
    std::vector<double> winding;  // X, full length
    ComplexMatrix bottom;         // 1 × n: jω Xᵀ
    ComplexMatrix right;          // n × 2: (∓X | 0)
    ComplexMatrix diagonal;       // 1 × 2: coefficients of (i, v)
    std::vector<Complex> rhs;     // length 1, zero
};

/// X_i = (N/S)·∫_region N_i, the winding vector whose product with the
/// potential is the flux linkage.
inline std::vector<double> winding_vector(const VectorPotentialSpace& space, int region, int turns) {
    const Mesh& mesh = space.mesh();
    double area = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.element_region(e) == region) area += mesh.element_area(e);
    if (!(area > 0.0)) throw Error("stranded conductor region " + std::to_string(region) + " has no area");
    std::vector<double> q(mesh.num_elements(), 0.0);
    for (std::size_t e = 0; e < q.size(); ++e)
        if (mesh.element_region(e) == region) q[e] = turns / area;
    return load_vector(space, std::span<const double>(q));
}

inline StrandedCoupling stranded_coupling_matrices(const ProblemDefinition& p, int region, const StrandedConductor& c,
                                                   const VectorPotentialSpace& space) {
    if (c.turns < 1) throw Error("stranded conductor needs at least one turn");
    const double omega = p.omega.value_or(0.0);
    StrandedCoupling out;
    out.region = region;
    out.winding = winding_vector(space, region, c.turns);
    const std::size_t n = out.winding.size();
    const bool gen = c.convention == TerminalConvention::generator;
    CooBuilder<Complex> bot(1, n), right(n, 2), diag(1, 2);
    for (std::size_t i = 0; i < n; ++i) {
        if (out.winding[i] == 0.0) continue;
        bot.add(0, i, Complex(0.0, omega) * out.winding[i]);
        right.add(i, 0, gen ? out.winding[i] : -out.winding[i]);
    }
    diag.add(0, 0, gen ? -c.dc_resistance : c.dc_resistance);
    diag.add(0, 1, -1.0);
    out.bottom = to_csr(bot);
    out.right = to_csr(right);
    out.diagonal = to_csr(diag);
    out.rhs = {Complex(0.0)};
    return out;
}

/// Extra circuit equations over the conductor unknowns (i₁, v₁, i₂, v₂, …).
struct CircuitStamp {
    std::vector<std::string> unknowns;
    std::vector<std::vector<Complex>> rows;
    std::vector<Complex> rhs;

    void validate(std::size_t conductors) const {
        if (rows.size() != rhs.size()) throw Error("circuit stamp: row count and rhs length differ");
        if (unknowns.size() != 2 * conductors)
            throw Error("stamp dimension mismatch: " + std::to_string(unknowns.size()) + " unknowns for " +
                        std::to_string(conductors) + " conductors");
        if (rows.size() != conductors)
            throw Error("stamp dimension mismatch: " + std::to_string(rows.size()) + " circuit rows, need " +
                        std::to_string(conductors));
        for (const auto& r : rows)
            if (r.size() != unknowns.size()) throw Error("stamp dimension mismatch: row width " + std::to_string(r.size()));
    }
};

/// Regions carrying stranded conductors, in region order.
inline std::vector<std::pair<int, StrandedConductor>> stranded_conductors(const ProblemDefinition& p) {
    std::vector<std::pair<int, StrandedConductor>> out;
    for (const auto& r : p.regions) {
        if (!r.exci) continue;
        const auto& ex = p.excitations.get(*r.exci);
        if (const auto* s = std::get_if<StrandedConductor>(&ex.value())) out.emplace_back(r.id, *s);
    }
    return out;
}

struct FieldCircuitSystem {
    ComplexMatrix matrix;
    std::vector<Complex> rhs;
    DofMap map;
    std::vector<StrandedCoupling> conductors;
};

/// Block system
///   [ K_red     Pᵀ R   ]
///   [ B P       D      ]
///   [ 0         C      ]
/// with K = K_nu + jω M_sigma, conductor blocks per conductor and circuit rows C.
inline FieldCircuitSystem field_circuit_system(const ProblemDefinition& p, const CircuitStamp& stamp) {
    detail::require_kind(p, ProblemKind::magnetic, "field_circuit_system");
    const double omega = p.omega.value_or(0.0);
    p.validate(false);
    const auto space = vector_potential_space(p);
    const auto conductors = stranded_conductors(p);
    if (conductors.empty()) throw Error("field-circuit problem has no stranded conductor");
    stamp.validate(conductors.size());
    const std::size_t m = conductors.size();

    FieldCircuitSystem out;
    out.map = constraints_from_bcs(space, p.regions, p.bcs, 0.0).build();
    const auto bt = neumann_robin_terms(space, p.regions, p.bcs, 0.0);
    ComplexMatrix k = (curlcurl_operator(space, p.regions, p.materials).matrix + bt.matrix).cast<Complex>();
    if (omega != 0.0)
        k = k + mass_matrix(space, p.regions, p.materials, PropertyKind::electric_conductivity).matrix.cast<Complex>().scaled(Complex(0.0, omega));
    const auto fr = detail::add(load_vector(space, p.regions, p.excitations, 0.0), bt.vector);
    const auto field = shrink(k, std::vector<Complex>(fr.begin(), fr.end()), out.map);

    const std::size_t n = space.ndof();
    CooBuilder<Complex> right(n, 2 * m), bottom(m, n), diag(m, 2 * m), circ(m, 2 * m);
    std::vector<Complex> coil_rhs(m);
    for (std::size_t c = 0; c < m; ++c) {
        auto blk = stranded_coupling_matrices(p, conductors[c].first, conductors[c].second, space);
        blk.right.for_each([&](std::size_t i, std::size_t j, const Complex& v) { right.add(i, 2 * c + j, v); });
        blk.bottom.for_each([&](std::size_t, std::size_t j, const Complex& v) { bottom.add(c, j, v); });
        blk.diagonal.for_each([&](std::size_t, std::size_t j, const Complex& v) { diag.add(c, 2 * c + j, v); });
        coil_rhs[c] = blk.rhs[0];
        out.conductors.push_back(std::move(blk));
    }
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < 2 * m; ++j)
            if (stamp.rows[r][j] != Complex(0.0)) circ.add(r, j, stamp.rows[r][j]);

    std::vector<Complex> bottom_rhs;
    const auto bottom_red = restrict_cols(to_csr(bottom), out.map, &bottom_rhs);
    for (std::size_t c = 0; c < m; ++c) bottom_rhs[c] += coil_rhs[c];
    const auto right_red = restrict_rows(to_csr(right), out.map);

    using Blk = std::optional<ComplexMatrix>;
    out.matrix = block_compose<Complex>({{Blk(field.matrix), Blk(right_red)},
                                         {Blk(bottom_red), Blk(to_csr(diag))},
                                         {Blk(), Blk(to_csr(circ))}});
    out.rhs = stack_vectors<Complex>({field.rhs, bottom_rhs, stamp.rhs});
    return out;
}

struct CircuitSolution {
    HarmonicSolution field;
    std::vector<Complex> circuit;  // unknowns in stamp order
};

inline CircuitSolution solve_magnetic_harmonic_circuit(ProblemPtr p, const CircuitStamp& stamp) {
    const auto sys = field_circuit_system(*p, stamp);
    std::vector<Complex> x;
    try {
        x = solve_direct(sys.matrix, sys.rhs);
    } catch (const SolverError& e) {
        throw SolverError(std::string("singular coupled system: ") + e.what());
    }
    const std::size_t nr = sys.map.reduced_size;
    std::vector<Complex> a(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nr));
    CircuitSolution out;
    out.field = {p, inflate(a, sys.map), p->omega.value_or(0.0)};
    out.circuit.assign(x.begin() + static_cast<std::ptrdiff_t>(nr), x.end());
    return out;
}

}  // namespace fieldforge
