#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/mesh.hpp"
#include "fieldforge/model.hpp"
#include "fieldforge/msh_io.hpp"
#include "fieldforge/problem.hpp"
#include "fieldforge/solvers.hpp"

namespace fieldforge {

/// Schema violation in a scenario file.
class ConfigError : public Error {
public:
    using Error::Error;
};

using Json = nlohmann::json;

enum class Physics { electrostatic, current_flow, thermal, magnetic, electrothermal };
enum class Study { stationary, harmonic, transient };

struct ProbeRequest {
    std::string name;
    Point position;
    std::string field;  // "potential" or "temperature"
    bool celsius = false;
};

struct OutputRequest {
    bool vtk = true;
    bool csv = true;
    std::string vtk_steps = "final";  // final | all | none
    std::vector<ProbeRequest> probes;
    std::vector<double> joule_loss_times;
    double phase = 0.0;
};

/// Complex circuit coefficient a + jω·b.
struct CircuitCoefficient {
    Complex constant{0.0};
    double omega_factor = 0.0;

    Complex value(double omega) const { return constant + Complex(0.0, omega * omega_factor); }
};

struct CircuitSpec {
    std::vector<std::string> unknowns;
    std::vector<std::vector<CircuitCoefficient>> rows;
    std::vector<CircuitCoefficient> rhs;

    CircuitStamp stamp(double omega) const {
        CircuitStamp s;
        s.unknowns = unknowns;
        for (const auto& r : rows) {
            std::vector<Complex> row;
            for (const auto& c : r) row.push_back(c.value(omega));
            s.rows.push_back(std::move(row));
        }
        for (const auto& c : rhs) s.rhs.push_back(c.value(omega));
        return s;
    }
};

/// Spatially varying source density value(t)·profile(x, y) on bound regions.
struct ProfileSource {
    std::string excitation;
    TimeValue value;
    std::function<double(const Point&)> profile;
    std::vector<int> regions;
};

/// Analytic reference for convergence studies.
struct ReferenceSolution {
    std::string type;
    std::function<double(const Point&)> exact;
};

struct RegionBinding {
    std::optional<int> id;
    std::optional<std::string> name;
    std::optional<std::string> material, bc, thermal_bc, excitation;
};

struct InitialCondition {
    std::optional<double> potential;    // uniform; otherwise a static solve
    std::optional<double> temperature;  // uniform; otherwise a static solve
};

struct Scenario {
    std::string name;
    Physics physics = Physics::electrostatic;
    Study study = Study::stationary;
    CoordSystem coords = CoordSystem::cartesian;
    double depth = 1.0;
    std::shared_ptr<const Mesh> mesh;
    std::vector<PhysicalGroup> groups;  // from MSH files
    Materials materials;
    BdryCond bcs;
    Excitations excitations;
    std::map<std::string, bool> profiled;  // excitation names carrying a spatial profile
    std::vector<ProfileSource> profiles;
    std::vector<RegionBinding> bindings;
    std::vector<double> time_axis;
    std::optional<double> frequency;  // Hz
    std::optional<CircuitSpec> circuit;
    NewtonSettings newton;
    CouplingSettings coupling;
    InitialCondition initial;
    OutputRequest outputs;
    std::optional<ReferenceSolution> reference;

    std::optional<double> omega() const {
        if (!frequency) return std::nullopt;
        return 2.0 * std::numbers::pi * *frequency;
    }
};

inline const char* to_string(Physics p) {
    switch (p) {
        case Physics::electrostatic: return "electrostatic";
        case Physics::current_flow: return "current_flow";
        case Physics::thermal: return "thermal";
        case Physics::magnetic: return "magnetic";
        case Physics::electrothermal: return "electrothermal";
    }
    return "?";
}

// ---------------------------------------------------------------- JSON helpers

namespace cfg {

inline void allow_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
    }
}

inline const Json& require(const Json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw ConfigError(ctx + ": missing key '" + key + "'");
    return j.at(key);
}

inline double number(const Json& j, const std::string& ctx) {
    if (!j.is_number()) throw ConfigError(ctx + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(ctx + ": expected a finite number");
    return v;
}

inline double number(const Json& j, const char* key, const std::string& ctx) {
    return number(require(j, key, ctx), ctx + "." + key);
}

inline double number_or(const Json& j, const char* key, double fallback, const std::string& ctx) {
    return j.contains(key) ? number(j.at(key), ctx + "." + key) : fallback;
}

inline std::size_t count(const Json& j, const std::string& ctx) {
    if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(ctx + ": expected a nonnegative integer");
    return static_cast<std::size_t>(j.get<long long>());
}

inline std::size_t count(const Json& j, const char* key, const std::string& ctx) {
    return count(require(j, key, ctx), ctx + "." + key);
}

inline int integer(const Json& j, const std::string& ctx) {
    if (!j.is_number_integer()) throw ConfigError(ctx + ": expected an integer");
    return j.get<int>();
}

inline std::string string(const Json& j, const std::string& ctx) {
    if (!j.is_string()) throw ConfigError(ctx + ": expected a string");
    return j.get<std::string>();
}

inline std::string string(const Json& j, const char* key, const std::string& ctx) {
    return string(require(j, key, ctx), ctx + "." + key);
}

inline bool boolean(const Json& j, const std::string& ctx) {
    if (!j.is_boolean()) throw ConfigError(ctx + ": expected true or false");
    return j.get<bool>();
}

inline const Json& array(const Json& j, const std::string& ctx) {
    if (!j.is_array()) throw ConfigError(ctx + ": expected an array");
    return j;
}

inline std::vector<double> numbers(const Json& j, const std::string& ctx) {
    std::vector<double> v;
    for (std::size_t i = 0; i < array(j, ctx).size(); ++i) v.push_back(number(j[i], ctx + "[" + std::to_string(i) + "]"));
    return v;
}

inline Point point(const Json& j, const std::string& ctx) {
    const auto v = numbers(j, ctx);
    if (v.size() != 2) throw ConfigError(ctx + ": expected [x, y]");
    return {v[0], v[1]};
}

template <typename E>
E choice(const Json& j, const std::string& ctx, std::initializer_list<std::pair<const char*, E>> options) {
    const std::string s = string(j, ctx);
    std::string listed;
    for (const auto& [name, value] : options) {
        if (s == name) return value;
        listed += (listed.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError(ctx + ": '" + s + "' is not one of " + listed);
}

// Constant number or one of the named waveforms.
inline TimeValue time_value(const Json& j, const std::string& ctx) {
    if (j.is_number()) return number(j, ctx);
    if (!j.is_object() || j.size() != 1) throw ConfigError(ctx + ": expected a number or a single waveform object");
    const std::string kind = j.begin().key();
    const Json& a = j.begin().value();
    const std::string c = ctx + "." + kind;
    if (kind == "impulse") {
        allow_keys(a, {"peak", "tau1", "tau2"}, c);
        try {
            return lightning_impulse(number(a, "peak", c), number_or(a, "tau1", 0.4e-6, c), number_or(a, "tau2", 20e-6, c));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(c + ": " + e.what());
        }
    }
    if (kind == "step") {
        allow_keys(a, {"time", "before", "after"}, c);
        const double t0 = number(a, "time", c), before = number(a, "before", c), after = number(a, "after", c);
        return TimeFunction([=](double t) { return t < t0 ? before : after; });
    }
    if (kind == "sine") {
        allow_keys(a, {"amplitude", "frequency", "phase"}, c);
        const double amp = number(a, "amplitude", c), f = number(a, "frequency", c), ph = number_or(a, "phase", 0.0, c);
        return TimeFunction([=](double t) { return amp * std::sin(2.0 * std::numbers::pi * f * t + ph); });
    }
    throw ConfigError(ctx + ": unknown waveform '" + kind + "'");
}

inline Property::Value property_value(const Json& j, const std::string& ctx) {
    if (j.is_number()) return number(j, ctx);
    if (j.is_object() && !j.contains("law")) {
        allow_keys(j, {"xx", "xy", "yy"}, ctx);
        return Tensor2{number(j, "xx", ctx), number_or(j, "xy", 0.0, ctx), number(j, "yy", ctx)};
    }
    throw ConfigError(ctx + ": expected a number or a tensor {xx, xy, yy}");
}

inline Property conductivity(const Json& j, const std::string& ctx) {
    if (j.is_object() && j.contains("law")) {
        allow_keys(j, {"law", "sigma_ref", "c_T", "T_ref", "E1", "E2", "a"}, ctx);
        if (string(j, "law", ctx) != "fgm") throw ConfigError(ctx + ".law: only 'fgm' is available");
        FgmParameters p;
        p.sigma_ref = number_or(j, "sigma_ref", p.sigma_ref, ctx);
        p.c_T = number_or(j, "c_T", p.c_T, ctx);
        p.T_ref = number_or(j, "T_ref", p.T_ref, ctx);
        p.E1 = number_or(j, "E1", p.E1, ctx);
        p.E2 = number_or(j, "E2", p.E2, ctx);
        p.a = number_or(j, "a", p.a, ctx);
        if (!(p.sigma_ref > 0.0) || !(p.E1 > 0.0) || !(p.E2 > 0.0) || !(p.a > 0.0))
            throw ConfigError(ctx + ": FGM parameters sigma_ref, E1, E2 and a must be positive");
        return fgm_conductivity_property(p);
    }
    return ElectricConductivity(property_value(j, ctx));
}

inline Material material(const Json& j, const std::string& ctx) {
    allow_keys(j,
               {"name", "permittivity", "relative_permittivity", "electric_conductivity", "reluctivity",
                "relative_permeability", "thermal_conductivity", "volumetric_heat_capacity"},
               ctx);
    Material m(string(j, "name", ctx));
    auto exclusive = [&](const char* a, const char* b) {
        if (j.contains(a) && j.contains(b)) throw ConfigError(ctx + ": give either '" + a + "' or '" + b + "'");
    };
    exclusive("permittivity", "relative_permittivity");
    exclusive("reluctivity", "relative_permeability");
    try {
        if (j.contains("permittivity")) m.add(Permittivity(property_value(j["permittivity"], ctx + ".permittivity")));
        if (j.contains("relative_permittivity"))
            m.add(Permittivity(eps0 * number(j["relative_permittivity"], ctx + ".relative_permittivity")));
        if (j.contains("electric_conductivity")) m.add(conductivity(j["electric_conductivity"], ctx + ".electric_conductivity"));
        if (j.contains("reluctivity")) m.add(Reluctivity(property_value(j["reluctivity"], ctx + ".reluctivity")));
        if (j.contains("relative_permeability"))
            m.add(Reluctivity(nu0 / number(j["relative_permeability"], ctx + ".relative_permeability")));
        if (j.contains("thermal_conductivity"))
            m.add(ThermalConductivity(property_value(j["thermal_conductivity"], ctx + ".thermal_conductivity")));
        if (j.contains("volumetric_heat_capacity"))
            m.add(VolumetricHeatCapacity(property_value(j["volumetric_heat_capacity"], ctx + ".volumetric_heat_capacity")));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(ctx + ": " + e.what());
    }
    return m;
}

inline BoundaryCondition boundary_condition(const Json& j, const std::string& ctx) {
    const std::string type = string(j, "type", ctx);
    const std::string name = string(j, "name", ctx);
    try {
        if (type == "dirichlet" || type == "neumann") {
            allow_keys(j, {"name", "type", "value"}, ctx);
            auto v = time_value(require(j, "value", ctx), ctx + ".value");
            return type == "dirichlet" ? BCDirichlet(std::move(v), name) : BCNeumann(std::move(v), name);
        }
        if (type == "robin") {
            allow_keys(j, {"name", "type", "alpha", "beta", "g"}, ctx);
            return BCRobin(number(j, "alpha", ctx), number(j, "beta", ctx), time_value(require(j, "g", ctx), ctx + ".g"), name);
        }
        if (type == "floating") {
            allow_keys(j, {"name", "type"}, ctx);
            return BCFloating(name);
        }
        if (type == "periodic" || type == "antiperiodic") {
            allow_keys(j, {"name", "type", "master_region"}, ctx);
            const int master = integer(require(j, "master_region", ctx), ctx + ".master_region");
            return type == "periodic" ? BCPeriodic(master, name) : BCAntiPeriodic(master, name);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(ctx + ": " + e.what());
    }
    throw ConfigError(ctx + ".type: unknown boundary condition '" + type + "'");
}

inline std::function<double(const Point&)> profile(const Json& j, const std::string& ctx) {
    if (!j.is_object() || j.size() != 1) throw ConfigError(ctx + ": expected a single profile object");
    const std::string kind = j.begin().key();
    const Json& a = j.begin().value();
    const std::string c = ctx + "." + kind;
    if (kind == "sine_product") {
        allow_keys(a, {"kx", "ky"}, c);
        const double kx = number(a, "kx", c), ky = number(a, "ky", c);
        return [=](const Point& p) { return std::sin(kx * p.x) * std::sin(ky * p.y); };
    }
    throw ConfigError(ctx + ": unknown profile '" + kind + "'");
}

inline CircuitCoefficient coefficient(const Json& j, const std::string& ctx) {
    if (j.is_number()) return {Complex(number(j, ctx)), 0.0};
    if (j.is_array()) {
        const auto v = numbers(j, ctx);
        if (v.size() != 2) throw ConfigError(ctx + ": complex numbers are written [re, im]");
        return {Complex(v[0], v[1]), 0.0};
    }
    allow_keys(j, {"real", "imag", "omega"}, ctx);
    return {Complex(number_or(j, "real", 0.0, ctx), number_or(j, "imag", 0.0, ctx)), number_or(j, "omega", 0.0, ctx)};
}

inline std::vector<double> time_axis(const Json& j, const std::string& ctx) {
    allow_keys(j, {"segments", "points"}, ctx);
    if (j.contains("segments") == j.contains("points")) throw ConfigError(ctx + ": give exactly one of 'segments' or 'points'");
    if (j.contains("points")) return numbers(j["points"], ctx + ".points");
    std::vector<double> out;
    const Json& segs = array(j["segments"], ctx + ".segments");
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const std::string c = ctx + ".segments[" + std::to_string(i) + "]";
        allow_keys(segs[i], {"start", "stop", "points", "drop_first"}, c);
        const auto pts = linspace(number(segs[i], "start", c), number(segs[i], "stop", c), count(segs[i], "points", c));
        const bool drop = segs[i].contains("drop_first") && boolean(segs[i]["drop_first"], c + ".drop_first");
        out.insert(out.end(), pts.begin() + (drop ? 1 : 0), pts.end());
    }
    return out;
}

inline RegionMap region_map(const Json& j, const std::string& ctx) {
    RegionMap map;
    if (j.contains("default_region")) map.default_region = integer(j["default_region"], ctx + ".default_region");
    if (j.contains("blocks")) {
        const Json& b = array(j["blocks"], ctx + ".blocks");
        for (std::size_t i = 0; i < b.size(); ++i) {
            const std::string c = ctx + ".blocks[" + std::to_string(i) + "]";
            allow_keys(b[i], {"x", "y", "region"}, c);
            const auto x = numbers(require(b[i], "x", c), c + ".x");
            const auto y = numbers(require(b[i], "y", c), c + ".y");
            if (x.size() != 2 || y.size() != 2) throw ConfigError(c + ": x and y are [min, max] pairs");
            map.blocks.push_back({x[0], x[1], y[0], y[1], integer(require(b[i], "region", c), c + ".region")});
        }
    }
    if (j.contains("segments")) {
        const Json& s = array(j["segments"], ctx + ".segments");
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::string c = ctx + ".segments[" + std::to_string(i) + "]";
            allow_keys(s[i], {"from", "to", "region"}, c);
            map.segments.push_back({point(require(s[i], "from", c), c + ".from"), point(require(s[i], "to", c), c + ".to"),
                                    integer(require(s[i], "region", c), c + ".region")});
        }
    }
    return map;
}

inline std::vector<std::size_t> counts(const Json& j, const std::string& ctx) {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < array(j, ctx).size(); ++i) v.push_back(count(j[i], ctx + "[" + std::to_string(i) + "]"));
    return v;
}

}  // namespace cfg

// ---------------------------------------------------------------- scenario loading

inline std::shared_ptr<const Mesh> build_mesh(const Json& j, CoordSystem coords, const std::filesystem::path& base_dir,
                                              std::vector<PhysicalGroup>& groups) {
    const std::string ctx = "mesh";
    if (j.contains("file")) {
        cfg::allow_keys(j, {"file"}, ctx);
        std::filesystem::path path = cfg::string(j["file"], ctx + ".file");
        if (path.is_relative()) path = base_dir / path;
        auto res = read_msh_file(path.string(), coords);
        groups = std::move(res.groups);
        return std::make_shared<const Mesh>(std::move(res.mesh));
    }
    const std::string gen = cfg::string(cfg::require(j, "generator", ctx), ctx + ".generator");
    try {
        if (gen == "rectangle") {
            cfg::allow_keys(j, {"generator", "width", "height", "nx", "ny", "default_region", "blocks", "segments"}, ctx);
            if (coords != CoordSystem::cartesian) throw ConfigError("mesh: the rectangle generator is Cartesian; use 'tensor' for axisymmetric grids");
            return std::make_shared<const Mesh>(structured_rect_mesh(cfg::number(j, "width", ctx), cfg::number(j, "height", ctx),
                                                                     cfg::count(j, "nx", ctx), cfg::count(j, "ny", ctx),
                                                                     cfg::region_map(j, ctx)));
        }
        if (gen == "annulus") {
            cfg::allow_keys(j, {"generator", "r_inner", "r_outer", "z0", "z1", "nr", "nz", "default_region", "blocks", "segments"}, ctx);
            if (coords != CoordSystem::axisymmetric) throw ConfigError("mesh: the annulus generator needs axisymmetric coordinates");
            return std::make_shared<const Mesh>(structured_annulus_mesh(
                cfg::number(j, "r_inner", ctx), cfg::number(j, "r_outer", ctx), cfg::number(j, "z0", ctx), cfg::number(j, "z1", ctx),
                cfg::count(j, "nr", ctx), cfg::count(j, "nz", ctx), cfg::region_map(j, ctx)));
        }
        if (gen == "tensor") {
            cfg::allow_keys(j, {"generator", "x_breaks", "x_divisions", "y_breaks", "y_divisions", "default_region", "blocks", "segments"}, ctx);
            const auto xs = graded_axis(cfg::numbers(cfg::require(j, "x_breaks", ctx), ctx + ".x_breaks"),
                                        cfg::counts(cfg::require(j, "x_divisions", ctx), ctx + ".x_divisions"));
            const auto ys = graded_axis(cfg::numbers(cfg::require(j, "y_breaks", ctx), ctx + ".y_breaks"),
                                        cfg::counts(cfg::require(j, "y_divisions", ctx), ctx + ".y_divisions"));
            return std::make_shared<const Mesh>(tensor_grid_mesh(coords, xs, ys, cfg::region_map(j, ctx)));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const MshError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError("mesh: " + std::string(e.what()));
    }
    throw ConfigError("mesh.generator: unknown generator '" + gen + "'");
}

inline ReferenceSolution parse_reference(const Json& j) {
    const std::string ctx = "reference";
    const std::string type = cfg::string(j, "type", ctx);
    ReferenceSolution ref;
    ref.type = type;
    if (type == "sine_product") {
        cfg::allow_keys(j, {"type", "amplitude", "kx", "ky"}, ctx);
        const double a = cfg::number(j, "amplitude", ctx), kx = cfg::number(j, "kx", ctx), ky = cfg::number(j, "ky", ctx);
        ref.exact = [=](const Point& p) { return a * std::sin(kx * p.x) * std::sin(ky * p.y); };
    } else if (type == "layered") {
        cfg::allow_keys(j, {"type", "axis", "layers", "low", "high"}, ctx);
        const bool along_x = cfg::choice<bool>(j.at("axis"), ctx + ".axis", {{"x", true}, {"y", false}});
        const double low = cfg::number(j, "low", ctx), high = cfg::number(j, "high", ctx);
        struct Layer {
            double from, to, coeff;
        };
        std::vector<Layer> layers;
        const Json& ls = cfg::array(cfg::require(j, "layers", ctx), ctx + ".layers");
        for (std::size_t i = 0; i < ls.size(); ++i) {
            const std::string c = ctx + ".layers[" + std::to_string(i) + "]";
            cfg::allow_keys(ls[i], {"from", "to", "coefficient"}, c);
            layers.push_back({cfg::number(ls[i], "from", c), cfg::number(ls[i], "to", c), cfg::number(ls[i], "coefficient", c)});
            if (!(layers.back().to > layers.back().from) || !(layers.back().coeff > 0.0))
                throw ConfigError(c + ": needs from < to and a positive coefficient");
        }
        if (layers.empty()) throw ConfigError(ctx + ".layers: at least one layer");
        ref.exact = [=](const Point& p) {
            const double s = along_x ? p.x : p.y;
            double total = 0.0, partial = 0.0;
            for (const auto& l : layers) {
                const double r = (l.to - l.from) / l.coeff;
                total += r;
                if (s >= l.to) partial += r;
                else if (s > l.from) partial += (s - l.from) / l.coeff;
            }
            return low + (high - low) * partial / total;
        };
    } else if (type == "log_profile") {
        cfg::allow_keys(j, {"type", "r_inner", "r_outer", "inner", "outer"}, ctx);
        const double ri = cfg::number(j, "r_inner", ctx), ro = cfg::number(j, "r_outer", ctx);
        const double vi = cfg::number(j, "inner", ctx), vo = cfg::number(j, "outer", ctx);
        if (!(ri > 0.0) || !(ro > ri)) throw ConfigError(ctx + ": needs 0 < r_inner < r_outer");
        ref.exact = [=](const Point& p) { return vi + (vo - vi) * std::log(p.x / ri) / std::log(ro / ri); };
    } else {
        throw ConfigError(ctx + ".type: unknown reference '" + type + "'");
    }
    return ref;
}

inline OutputRequest parse_outputs(const Json& j) {
    const std::string ctx = "outputs";
    cfg::allow_keys(j, {"vtk", "csv", "vtk_steps", "probes", "joule_loss_times", "phase"}, ctx);
    OutputRequest o;
    if (j.contains("vtk")) o.vtk = cfg::boolean(j["vtk"], ctx + ".vtk");
    if (j.contains("csv")) o.csv = cfg::boolean(j["csv"], ctx + ".csv");
    if (j.contains("vtk_steps"))
        o.vtk_steps = cfg::choice<std::string>(j["vtk_steps"], ctx + ".vtk_steps", {{"final", "final"}, {"all", "all"}, {"none", "none"}});
    if (j.contains("phase")) o.phase = cfg::number(j["phase"], ctx + ".phase");
    if (j.contains("joule_loss_times")) o.joule_loss_times = cfg::numbers(j["joule_loss_times"], ctx + ".joule_loss_times");
    if (j.contains("probes")) {
        const Json& ps = cfg::array(j["probes"], ctx + ".probes");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const std::string c = ctx + ".probes[" + std::to_string(i) + "]";
            cfg::allow_keys(ps[i], {"name", "position", "field", "celsius"}, c);
            ProbeRequest p;
            p.name = cfg::string(ps[i], "name", c);
            p.position = cfg::point(cfg::require(ps[i], "position", c), c + ".position");
            p.field = cfg::choice<std::string>(cfg::require(ps[i], "field", c), c + ".field",
                                               {{"potential", "potential"}, {"temperature", "temperature"}});
            if (ps[i].contains("celsius")) p.celsius = cfg::boolean(ps[i]["celsius"], c + ".celsius");
            o.probes.push_back(std::move(p));
        }
    }
    return o;
}

/// Validates a parsed scenario document and builds its mesh and model objects.
inline Scenario parse_scenario(const Json& j, const std::filesystem::path& base_dir) {
    cfg::allow_keys(j,
                    {"name", "physics", "study", "coordinates", "depth", "mesh", "materials", "boundary_conditions",
                     "excitations", "regions", "time", "frequency", "circuit", "newton", "coupling", "initial_condition",
                     "outputs", "reference"},
                    "scenario");
    Scenario s;
    s.name = cfg::string(j, "name", "scenario");
    if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) throw ConfigError("scenario.name: must be a plain file stem");
    s.physics = cfg::choice<Physics>(cfg::require(j, "physics", "scenario"), "scenario.physics",
                                     {{"electrostatic", Physics::electrostatic},
                                      {"current_flow", Physics::current_flow},
                                      {"thermal", Physics::thermal},
                                      {"magnetic", Physics::magnetic},
                                      {"electrothermal", Physics::electrothermal}});
    s.study = cfg::choice<Study>(cfg::require(j, "study", "scenario"), "scenario.study",
                                 {{"static", Study::stationary}, {"harmonic", Study::harmonic}, {"transient", Study::transient}});
    if (j.contains("coordinates"))
        s.coords = cfg::choice<CoordSystem>(j["coordinates"], "scenario.coordinates",
                                            {{"cartesian", CoordSystem::cartesian}, {"axisymmetric", CoordSystem::axisymmetric}});
    if (j.contains("depth")) {
        s.depth = cfg::number(j["depth"], "scenario.depth");
        if (!(s.depth > 0.0)) throw ConfigError("scenario.depth: must be positive");
    }

    const bool harmonic_ok = s.physics == Physics::magnetic;
    const bool transient_ok = s.physics != Physics::magnetic && s.physics != Physics::electrostatic;
    if (s.study == Study::harmonic && !harmonic_ok) throw ConfigError("scenario.study: harmonic studies are magnetic only");
    if (s.study == Study::transient && !transient_ok)
        throw ConfigError(std::string("scenario.study: no transient solver for ") + to_string(s.physics));
    if (s.physics == Physics::electrothermal && s.study != Study::transient)
        throw ConfigError("scenario.study: electrothermal scenarios are transient");

    if (j.contains("materials")) {
        const Json& ms = cfg::array(j["materials"], "materials");
        for (std::size_t i = 0; i < ms.size(); ++i) {
            auto m = cfg::material(ms[i], "materials[" + std::to_string(i) + "]");
            if (s.materials.find(m.name())) throw ConfigError("materials: duplicate name '" + m.name() + "'");
            s.materials.add(std::move(m));
        }
    }
    if (j.contains("boundary_conditions")) {
        const Json& bs = cfg::array(j["boundary_conditions"], "boundary_conditions");
        for (std::size_t i = 0; i < bs.size(); ++i) {
            auto b = cfg::boundary_condition(bs[i], "boundary_conditions[" + std::to_string(i) + "]");
            if (s.bcs.find(b.name())) throw ConfigError("boundary_conditions: duplicate name '" + b.name() + "'");
            s.bcs.add(std::move(b));
        }
    }
    if (j.contains("excitations")) {
        const Json& es = cfg::array(j["excitations"], "excitations");
        for (std::size_t i = 0; i < es.size(); ++i) {
            const std::string c = "excitations[" + std::to_string(i) + "]";
            const std::string type = cfg::string(es[i], "type", c);
            const std::string name = cfg::string(es[i], "name", c);
            if (s.excitations.find(name)) throw ConfigError("excitations: duplicate name '" + name + "'");
            try {
                if (type == "stranded_conductor") {
                    cfg::allow_keys(es[i], {"name", "type", "turns", "dc_resistance", "convention"}, c);
                    StrandedConductor sc;
                    sc.turns = cfg::integer(cfg::require(es[i], "turns", c), c + ".turns");
                    sc.dc_resistance = cfg::number_or(es[i], "dc_resistance", 0.0, c);
                    if (es[i].contains("convention"))
                        sc.convention = cfg::choice<TerminalConvention>(
                            es[i]["convention"], c + ".convention",
                            {{"passive", TerminalConvention::passive}, {"generator", TerminalConvention::generator}});
                    s.excitations.add(Excitation(sc, name));
                    continue;
                }
                cfg::allow_keys(es[i], {"name", "type", "value", "profile"}, c);
                auto value = cfg::time_value(cfg::require(es[i], "value", c), c + ".value");
                if (es[i].contains("profile")) {
                    s.profiled[name] = true;
                    s.profiles.push_back({name, value, cfg::profile(es[i]["profile"], c + ".profile"), {}});
                }
                if (type == "charge_density") s.excitations.add(Excitation(ChargeDensity{value}, name));
                else if (type == "current_density") s.excitations.add(Excitation(CurrentDensity{value}, name));
                else if (type == "heat_source_density") s.excitations.add(Excitation(HeatSourceDensity{value}, name));
                else throw ConfigError(c + ".type: unknown excitation '" + type + "'");
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                throw ConfigError(c + ": " + e.what());
            }
        }
    }

    s.mesh = build_mesh(cfg::require(j, "mesh", "scenario"), s.coords, base_dir, s.groups);

    if (j.contains("regions")) {
        const Json& rs = cfg::array(j["regions"], "regions");
        for (std::size_t i = 0; i < rs.size(); ++i) {
            const std::string c = "regions[" + std::to_string(i) + "]";
            cfg::allow_keys(rs[i], {"id", "name", "material", "bc", "thermal_bc", "excitation"}, c);
            RegionBinding b;
            if (rs[i].contains("id")) b.id = cfg::integer(rs[i]["id"], c + ".id");
            if (rs[i].contains("name")) b.name = cfg::string(rs[i]["name"], c + ".name");
            if (!b.id && !b.name) throw ConfigError(c + ": needs an 'id' or a 'name'");
            for (auto [key, slot] : {std::pair{"material", &b.material}, std::pair{"bc", &b.bc}, std::pair{"thermal_bc", &b.thermal_bc},
                                     std::pair{"excitation", &b.excitation}})
                if (rs[i].contains(key)) *slot = cfg::string(rs[i][key], c + "." + key);
            if (b.material && !s.materials.find(*b.material)) throw ConfigError(c + ".material: unknown material '" + *b.material + "'");
            for (const auto* bc : {&b.bc, &b.thermal_bc})
                if (*bc && !s.bcs.find(**bc)) throw ConfigError(c + ": unknown boundary condition '" + **bc + "'");
            if (b.excitation && !s.excitations.find(*b.excitation))
                throw ConfigError(c + ".excitation: unknown excitation '" + *b.excitation + "'");
            if (b.thermal_bc && s.physics != Physics::electrothermal)
                throw ConfigError(c + ".thermal_bc: only electrothermal scenarios have a thermal subproblem");
            s.bindings.push_back(std::move(b));
        }
    }

    if (s.study == Study::transient) {
        s.time_axis = cfg::time_axis(cfg::require(j, "time", "scenario"), "time");
        try {
            ProblemDefinition::validate_time_axis(s.time_axis);
        } catch (const Error& e) {
            throw ConfigError(std::string("time: ") + e.what());
        }
    } else if (j.contains("time")) {
        throw ConfigError("time: only transient studies take a time axis");
    }
    if (s.study == Study::harmonic) {
        s.frequency = cfg::number(cfg::require(j, "frequency", "scenario"), "frequency");
        if (!(*s.frequency >= 0.0)) throw ConfigError("frequency: must be nonnegative");
    } else if (j.contains("frequency")) {
        throw ConfigError("frequency: only harmonic studies take a frequency");
    }
    if (j.contains("circuit")) {
        if (s.study != Study::harmonic) throw ConfigError("circuit: field-circuit coupling needs a harmonic magnetic study");
        const Json& c = j["circuit"];
        cfg::allow_keys(c, {"unknowns", "rows", "rhs"}, "circuit");
        CircuitSpec spec;
        const Json& us = cfg::array(cfg::require(c, "unknowns", "circuit"), "circuit.unknowns");
        for (std::size_t i = 0; i < us.size(); ++i) spec.unknowns.push_back(cfg::string(us[i], "circuit.unknowns[" + std::to_string(i) + "]"));
        const Json& rows = cfg::array(cfg::require(c, "rows", "circuit"), "circuit.rows");
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::vector<CircuitCoefficient> row;
            const std::string rc = "circuit.rows[" + std::to_string(r) + "]";
            for (std::size_t k = 0; k < cfg::array(rows[r], rc).size(); ++k)
                row.push_back(cfg::coefficient(rows[r][k], rc + "[" + std::to_string(k) + "]"));
            spec.rows.push_back(std::move(row));
        }
        const Json& rhs = cfg::array(cfg::require(c, "rhs", "circuit"), "circuit.rhs");
        for (std::size_t k = 0; k < rhs.size(); ++k) spec.rhs.push_back(cfg::coefficient(rhs[k], "circuit.rhs[" + std::to_string(k) + "]"));
        s.circuit = std::move(spec);
    }
    if (j.contains("newton")) {
        const Json& n = j["newton"];
        cfg::allow_keys(n, {"abs_tol", "rel_tol", "max_iter", "max_damping_halvings"}, "newton");
        s.newton.abs_tol = cfg::number_or(n, "abs_tol", s.newton.abs_tol, "newton");
        s.newton.rel_tol = cfg::number_or(n, "rel_tol", s.newton.rel_tol, "newton");
        if (n.contains("max_iter")) s.newton.max_iter = cfg::count(n["max_iter"], "newton.max_iter");
        if (n.contains("max_damping_halvings")) s.newton.max_damping_halvings = cfg::count(n["max_damping_halvings"], "newton.max_damping_halvings");
        try {
            s.newton.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("newton: ") + e.what());
        }
    }
    if (j.contains("coupling")) {
        const Json& c = j["coupling"];
        cfg::allow_keys(c, {"mode", "temp_tol", "max_outer_iter"}, "coupling");
        if (c.contains("mode"))
            s.coupling.mode = cfg::choice<CouplingMode>(c["mode"], "coupling.mode",
                                                       {{"weak", CouplingMode::weak}, {"successive_substitution", CouplingMode::successive_substitution}});
        s.coupling.temp_tol = cfg::number_or(c, "temp_tol", s.coupling.temp_tol, "coupling");
        if (c.contains("max_outer_iter")) s.coupling.max_outer_iter = cfg::count(c["max_outer_iter"], "coupling.max_outer_iter");
        try {
            s.coupling.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("coupling: ") + e.what());
        }
    }
    if (j.contains("initial_condition")) {
        const Json& ic = j["initial_condition"];
        cfg::allow_keys(ic, {"potential", "temperature"}, "initial_condition");
        for (auto [key, slot] : {std::pair{"potential", &s.initial.potential}, std::pair{"temperature", &s.initial.temperature}}) {
            if (!ic.contains(key)) continue;
            if (ic[key].is_string()) {
                if (ic[key].get<std::string>() != "static")
                    throw ConfigError(std::string("initial_condition.") + key + ": expected a number or 'static'");
            } else {
                *slot = cfg::number(ic[key], std::string("initial_condition.") + key);
            }
        }
    }
    if (j.contains("outputs")) s.outputs = parse_outputs(j["outputs"]);
    if (j.contains("reference")) s.reference = parse_reference(j["reference"]);
    return s;
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// A directory resolves to its scenario.json.
inline std::filesystem::path scenario_file(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) return path / "scenario.json";
    return path;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    const auto file = scenario_file(path);
    return parse_scenario(read_json_file(file), file.parent_path());
}

// ---------------------------------------------------------------- problem construction

enum class Subproblem { electric, thermal, single };

/// Region table of a scenario on `mesh` (original or refined) for one subproblem.
inline Regions scenario_regions(const Scenario& s, const Mesh& mesh, Subproblem sub, const std::vector<ProfileSource>* profiles = nullptr,
                                std::vector<ProfileSource>* bound_profiles = nullptr) {
    Regions regions = s.groups.empty() ? regions_from_mesh(mesh) : Regions{};
    if (!s.groups.empty()) {
        for (const auto& g : s.groups) {
            if (const Region* other = regions.find(g.tag))
                throw ConfigError("mesh: physical tag " + std::to_string(g.tag) + " used in dimensions " + std::to_string(other->dim) +
                                  " and " + std::to_string(g.dim));
            regions.add(Region{g.tag, g.dim, g.name, {}, {}, {}});
        }
    }
    if (bound_profiles && profiles) *bound_profiles = *profiles;
    for (std::size_t i = 0; i < s.bindings.size(); ++i) {
        const auto& b = s.bindings[i];
        Region* r = nullptr;
        if (b.id) {
            if (!regions.find(*b.id)) throw ConfigError("regions[" + std::to_string(i) + "]: no mesh entity carries region id " + std::to_string(*b.id));
            r = &regions.get_regi(*b.id);
            if (b.name) {
                if (!r->name.empty() && r->name != *b.name)
                    throw ConfigError("regions[" + std::to_string(i) + "]: id " + std::to_string(*b.id) + " is named '" + r->name + "'");
                r->name = *b.name;
            }
        } else {
            for (const auto& cand : regions)
                if (cand.name == *b.name) r = &regions.get_regi(cand.id);
            if (!r) throw ConfigError("regions[" + std::to_string(i) + "]: no physical group named '" + *b.name + "'");
        }
        if (b.material) r->mat = s.materials.find(*b.material);
        const auto& bc = sub == Subproblem::thermal ? b.thermal_bc : b.bc;
        if (bc) r->bc = s.bcs.find(*bc);
        if (b.excitation) {
            const int id = *s.excitations.find(*b.excitation);
            const Excitation& ex = s.excitations.get(id);
            const bool fits = sub == Subproblem::single || (sub == Subproblem::thermal) == ex.is<HeatSourceDensity>();
            if (!fits) continue;
            if (s.profiled.count(*b.excitation)) {
                if (bound_profiles)
                    for (auto& p : *bound_profiles)
                        if (p.excitation == *b.excitation) p.regions.push_back(r->id);
            } else {
                r->exci = id;
            }
        }
    }
    return regions;
}

struct ScenarioProblem {
    ProblemPtr problem;
    std::vector<ProfileSource> profiles;  // spatial sources bound to regions
};

inline ScenarioProblem make_problem(const Scenario& s, std::shared_ptr<const Mesh> mesh, ProblemKind kind, Subproblem sub) {
    auto p = std::make_shared<ProblemDefinition>();
    p->name = s.name;
    p->kind = kind;
    p->mesh = std::move(mesh);
    p->materials = s.materials;
    p->bcs = s.bcs;
    p->excitations = s.excitations;
    p->time_axis = s.time_axis;
    p->omega = s.omega();
    p->depth = s.depth;
    ScenarioProblem out;
    p->regions = scenario_regions(s, *p->mesh, sub, &s.profiles, &out.profiles);
    out.problem = p;
    return out;
}

/// Element densities of the profiled sources at `time`.
inline std::vector<double> profile_density(const ScenarioProblem& sp, double time) {
    const Mesh& mesh = *sp.problem->mesh;
    std::vector<double> q;
    for (const auto& prof : sp.profiles) {
        if (prof.regions.empty()) continue;
        if (q.empty()) q.assign(mesh.num_elements(), 0.0);
        const double amp = evaluate(prof.value, time);
        for (std::size_t e = 0; e < mesh.num_elements(); ++e)
            for (int rid : prof.regions)
                if (mesh.element_region(e) == rid) q[e] += amp * prof.profile(mesh.centroid(e));
    }
    return q;
}

inline ProblemKind primary_kind(Physics p) {
    switch (p) {
        case Physics::electrostatic: return ProblemKind::electrostatic;
        case Physics::current_flow: return ProblemKind::current_flow;
        case Physics::thermal: return ProblemKind::thermal;
        case Physics::magnetic: return ProblemKind::magnetic;
        case Physics::electrothermal: return ProblemKind::current_flow;
    }
    return ProblemKind::electrostatic;
}

}  // namespace fieldforge
