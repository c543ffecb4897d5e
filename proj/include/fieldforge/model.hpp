#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/mesh.hpp"

namespace fieldforge {

inline constexpr double eps0 = 8.8541878128e-12;   // F/m
inline constexpr double mu0 = 1.25663706212e-6;    // H/m
inline constexpr double nu0 = 1.0 / mu0;           // m/H
inline constexpr double celsius_offset = 273.15;   // K

/// Symmetric 2×2 tensor.
struct Tensor2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;

    static Tensor2 isotropic(double v) { return {v, 0.0, v}; }
    Tensor2 scaled(double s) const { return {s * xx, s * xy, s * yy}; }
    bool positive_definite() const { return xx > 0.0 && xx * yy - xy * xy > 0.0; }
    std::array<double, 2> apply(const std::array<double, 2>& v) const { return {xx * v[0] + xy * v[1], xy * v[0] + yy * v[1]}; }

    friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

/// Named scalar field values (e.g. "E" in V/m, "T" in K) a material law may depend on.
class FieldArgs {
public:
    FieldArgs() = default;
    FieldArgs(std::initializer_list<std::pair<std::string, double>> init) : values_(init) {}

    FieldArgs& set(const std::string& name, double value) {
        for (auto& [k, v] : values_) {
            if (k == name) {
                v = value;
                return *this;
            }
        }
        values_.emplace_back(name, value);
        return *this;
    }

    std::optional<double> find(const std::string& name) const {
        for (const auto& [k, v] : values_)
            if (k == name) return v;
        return std::nullopt;
    }

    double get(const std::string& name) const {
        if (auto v = find(name)) return *v;
        throw Error("missing field argument " + name);
    }

private:
    std::vector<std::pair<std::string, double>> values_;
};

enum class PropertyKind { permittivity, electric_conductivity, reluctivity, thermal_conductivity, volumetric_heat_capacity };

inline const char* to_string(PropertyKind k) {
    switch (k) {
        case PropertyKind::permittivity: return "Permittivity";
        case PropertyKind::electric_conductivity: return "ElectricConductivity";
        case PropertyKind::reluctivity: return "Reluctivity";
        case PropertyKind::thermal_conductivity: return "ThermalConductivity";
        case PropertyKind::volumetric_heat_capacity: return "VolumetricHeatCapacity";
    }
    return "?";
}

using ScalarLaw = std::function<double(const Point&, double time, const FieldArgs&)>;
using TensorLaw = std::function<Tensor2(const Point&, double time, const FieldArgs&)>;
using PropertyValue = std::variant<double, Tensor2>;

/// Derivative of a scalar law with respect to one named field argument.
struct Differential {
    std::string argument;
    ScalarLaw law;
};

class Property {
public:
    using Value = std::variant<double, Tensor2, ScalarLaw, TensorLaw>;

    Property(PropertyKind kind, Value value, std::optional<Differential> differential = std::nullopt)
        : kind_(kind), value_(std::move(value)), differential_(std::move(differential)) {
        // Conductivity may vanish (insulating regions); every other constant is strictly positive.
        const bool allow_zero = kind_ == PropertyKind::electric_conductivity;
        if (const auto* c = std::get_if<double>(&value_)) {
            if (!(allow_zero ? *c >= 0.0 : *c > 0.0))
                throw Error(std::string("constant ") + to_string(kind_) + " must be " + (allow_zero ? "nonnegative" : "positive"));
        }
        if (const auto* t = std::get_if<Tensor2>(&value_)) {
            if (!t->positive_definite()) throw Error(std::string("tensor ") + to_string(kind_) + " must be positive definite");
        }
    }

    PropertyKind kind() const { return kind_; }
    const Value& value() const { return value_; }
    const std::optional<Differential>& differential() const { return differential_; }
    bool is_constant() const { return std::holds_alternative<double>(value_) || std::holds_alternative<Tensor2>(value_); }

    PropertyValue evaluate(const Point& p, double time, const FieldArgs& args) const {
        return std::visit(
            [&](const auto& v) -> PropertyValue {
                using V = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<V, double> || std::is_same_v<V, Tensor2>) {
                    return v;
                } else {
                    return v(p, time, args);
                }
            },
            value_);
    }

    double evaluate_scalar(const Point& p, double time, const FieldArgs& args) const {
        auto v = evaluate(p, time, args);
        if (const auto* s = std::get_if<double>(&v)) return *s;
        throw Error(std::string(to_string(kind_)) + " is a tensor, scalar requested");
    }

    Tensor2 evaluate_tensor(const Point& p, double time, const FieldArgs& args) const {
        auto v = evaluate(p, time, args);
        if (const auto* s = std::get_if<double>(&v)) return Tensor2::isotropic(*s);
        return std::get<Tensor2>(v);
    }

    /// d(value)/d(argument); zero when the property has no differential for it.
    double derivative(const std::string& argument, const Point& p, double time, const FieldArgs& args) const {
        if (!differential_ || differential_->argument != argument) return 0.0;
        return differential_->law(p, time, args);
    }

private:
    PropertyKind kind_;
    Value value_;
    std::optional<Differential> differential_;
};

inline Property Permittivity(Property::Value v) { return {PropertyKind::permittivity, std::move(v)}; }
inline Property ElectricConductivity(Property::Value v, std::optional<Differential> d = std::nullopt) {
    return {PropertyKind::electric_conductivity, std::move(v), std::move(d)};
}
inline Property Reluctivity(Property::Value v) { return {PropertyKind::reluctivity, std::move(v)}; }
inline Property ThermalConductivity(Property::Value v) { return {PropertyKind::thermal_conductivity, std::move(v)}; }
inline Property VolumetricHeatCapacity(Property::Value v) { return {PropertyKind::volumetric_heat_capacity, std::move(v)}; }

class Material {
public:
    explicit Material(std::string name) : name_(std::move(name)) {}
    template <typename... Props>
    Material(std::string name, Props&&... props) : name_(std::move(name)) {
        (add(std::forward<Props>(props)), ...);
    }

    const std::string& name() const { return name_; }

    Material& add(Property p) {
        const auto kind = p.kind();
        if (!props_.emplace(kind, std::move(p)).second)
            throw Error("material " + name_ + " already has a " + to_string(kind) + " property");
        return *this;
    }

    bool has(PropertyKind kind) const { return props_.count(kind) != 0; }

    const Property& property(PropertyKind kind) const {
        auto it = props_.find(kind);
        if (it == props_.end()) throw Error("material " + name_ + " has no " + to_string(kind) + " property");
        return it->second;
    }

private:
    std::string name_;
    std::map<PropertyKind, Property> props_;
};

inline PropertyValue evaluate_property(const Material& m, PropertyKind kind, const Point& p, double time,
                                       const FieldArgs& args = {}) {
    return m.property(kind).evaluate(p, time, args);
}

/// Parameters of the shipped field-grading material law
///   sigma(E, T) = sigma_ref · exp(c_T (T - T_ref)) · (1 + (E/E1)^a) / (1 + (E/E2)^a).
struct FgmParameters {
    double sigma_ref = 1e-10;  // S/m
    double c_T = 0.03;         // 1/K
    double T_ref = 293.15;     // K
    double E1 = 2e5;           // V/m
    double E2 = 4e5;           // V/m
    double a = 4.0;
};

inline double fgm_conductivity(double E, double T, const FgmParameters& p = {}) {
    const double x1 = std::pow(E / p.E1, p.a);
    const double x2 = std::pow(E / p.E2, p.a);
    return p.sigma_ref * std::exp(p.c_T * (T - p.T_ref)) * (1.0 + x1) / (1.0 + x2);
}

inline double fgm_conductivity_dE(double E, double T, const FgmParameters& p = {}) {
    if (E <= 0.0) return 0.0;
    const double x1 = std::pow(E / p.E1, p.a);
    const double x2 = std::pow(E / p.E2, p.a);
    // d/dE (1+x1)/(1+x2) with dx/dE = a x / E
    const double dratio = p.a / E * (x1 * (1.0 + x2) - x2 * (1.0 + x1)) / ((1.0 + x2) * (1.0 + x2));
    return p.sigma_ref * std::exp(p.c_T * (T - p.T_ref)) * dratio;
}

/// Conductivity property backed by the FGM law; needs field args "E" and "T".
inline Property fgm_conductivity_property(const FgmParameters& p = {}) {
    ScalarLaw value = [p](const Point&, double, const FieldArgs& a) { return fgm_conductivity(a.get("E"), a.get("T"), p); };
    ScalarLaw dE = [p](const Point&, double, const FieldArgs& a) { return fgm_conductivity_dE(a.get("E"), a.get("T"), p); };
    return ElectricConductivity(std::move(value), Differential{"E", std::move(dE)});
}

using TimeFunction = std::function<double(double)>;
/// Constant or time-dependent scalar.
using TimeValue = std::variant<double, TimeFunction>;

inline double evaluate(const TimeValue& v, double time) {
    if (const auto* c = std::get_if<double>(&v)) return *c;
    return std::get<TimeFunction>(v)(time);
}

/// Double-exponential impulse v(t) = peak · k · (exp(-t/tau2) - exp(-t/tau1)),
/// k normalising the maximum to `peak`. Zero for t < 0.
inline TimeFunction lightning_impulse(double peak, double tau1 = 0.4e-6, double tau2 = 20e-6) {
    if (!(tau1 > 0.0) || !(tau2 > tau1)) throw Error("lightning impulse needs 0 < tau1 < tau2");
    const double t_peak = std::log(tau2 / tau1) * tau1 * tau2 / (tau2 - tau1);
    const double k = 1.0 / (std::exp(-t_peak / tau2) - std::exp(-t_peak / tau1));
    return [=](double t) { return t < 0.0 ? 0.0 : peak * k * (std::exp(-t / tau2) - std::exp(-t / tau1)); };
}

struct Dirichlet {
    TimeValue value;
};
struct Neumann {
    TimeValue flux;  // c ∂u/∂n on the boundary
};
/// alpha·u + beta·c ∂u/∂n = g
struct Robin {
    double alpha;
    double beta;
    TimeValue g;
};
struct Floating {};
struct Periodic {
    int master_region;
};
struct AntiPeriodic {
    int master_region;
};

class BoundaryCondition {
public:
    using Variant = std::variant<Dirichlet, Neumann, Robin, Floating, Periodic, AntiPeriodic>;

    BoundaryCondition(Variant v, std::string name = {}) : value_(std::move(v)), name_(std::move(name)) {
        if (const auto* r = std::get_if<Robin>(&value_); r && r->beta == 0.0) throw Error("Robin boundary condition requires beta != 0");
    }

    const Variant& value() const { return value_; }
    const std::string& name() const { return name_; }
    template <typename T>
    bool is() const {
        return std::holds_alternative<T>(value_);
    }

private:
    Variant value_;
    std::string name_;
};

inline BoundaryCondition BCDirichlet(TimeValue v, std::string name = {}) { return {Dirichlet{std::move(v)}, std::move(name)}; }
inline BoundaryCondition BCNeumann(TimeValue v, std::string name = {}) { return {Neumann{std::move(v)}, std::move(name)}; }
inline BoundaryCondition BCRobin(double alpha, double beta, TimeValue g, std::string name = {}) {
    return {Robin{alpha, beta, std::move(g)}, std::move(name)};
}
inline BoundaryCondition BCFloating(std::string name = {}) { return {Floating{}, std::move(name)}; }
inline BoundaryCondition BCPeriodic(int master, std::string name = {}) { return {Periodic{master}, std::move(name)}; }
inline BoundaryCondition BCAntiPeriodic(int master, std::string name = {}) { return {AntiPeriodic{master}, std::move(name)}; }

/// Value of a Dirichlet datum, a Neumann flux or a Robin g at `time`.
inline double evaluate_bc(const BoundaryCondition& bc, double time) {
    return std::visit(
        [&](const auto& v) -> double {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, Dirichlet>) {
                return evaluate(v.value, time);
            } else if constexpr (std::is_same_v<V, Neumann>) {
                return evaluate(v.flux, time);
            } else if constexpr (std::is_same_v<V, Robin>) {
                return evaluate(v.g, time);
            } else {
                throw Error("boundary condition " + bc.name() + " has no scalar value");
            }
        },
        bc.value());
}

struct ChargeDensity {
    TimeValue value;  // C/m³
};
struct CurrentDensity {
    TimeValue value;  // A/m²
};
struct HeatSourceDensity {
    TimeValue value;  // W/m³
};

enum class TerminalConvention { passive, generator };

/// Homogenised winding carrying the terminal current.
struct StrandedConductor {
    int turns = 1;
    double dc_resistance = 0.0;  // Ω
    TerminalConvention convention = TerminalConvention::passive;
};

class Excitation {
public:
    using Variant = std::variant<ChargeDensity, CurrentDensity, HeatSourceDensity, StrandedConductor>;

    Excitation(Variant v, std::string name = {}) : value_(std::move(v)), name_(std::move(name)) {
        if (const auto* s = std::get_if<StrandedConductor>(&value_)) {
            if (s->turns < 1) throw Error("stranded conductor needs at least one turn");
            if (!(s->dc_resistance >= 0.0)) throw Error("stranded conductor resistance must be nonnegative");
        }
    }

    const Variant& value() const { return value_; }
    const std::string& name() const { return name_; }
    template <typename T>
    bool is() const {
        return std::holds_alternative<T>(value_);
    }

    /// Volumetric source value (charge, current or heat density) at `time`.
    double density(double time) const {
        return std::visit(
            [&](const auto& v) -> double {
                using V = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<V, StrandedConductor>) {
                    throw Error("stranded conductor " + name_ + " is not a density source");
                } else {
                    return evaluate(v.value, time);
                }
            },
            value_);
    }

private:
    Variant value_;
    std::string name_;
};

/// Id-keyed store with insertion-ordered iteration. Ids are assigned 1, 2, … on insertion.
template <typename T>
class Container {
public:
    Container() = default;
    template <typename... Items>
        requires(std::is_constructible_v<T, Items> && ...)
    explicit Container(Items&&... items) {
        (add(std::forward<Items>(items)), ...);
    }

    int add(T item) {
        const int id = static_cast<int>(items_.size()) + 1;
        items_.emplace_back(id, std::move(item));
        return id;
    }

    const T& get(int id) const {
        if (id < 1 || id > static_cast<int>(items_.size())) throw Error("no item with id " + std::to_string(id));
        return items_[static_cast<std::size_t>(id - 1)].second;
    }

    /// Id of the item with this name; error when two items share it.
    std::optional<int> find(const std::string& name) const {
        std::optional<int> hit;
        for (const auto& [id, item] : items_) {
            if (item.name() != name) continue;
            if (hit) throw Error("ambiguous name match: " + name);
            hit = id;
        }
        return hit;
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<std::pair<int, T>> items_;
};

using Materials = Container<Material>;
using BdryCond = Container<BoundaryCondition>;
using Excitations = Container<Excitation>;

/// Discrete counterpart of a physical group; binds at most one material,
/// boundary condition and excitation to the mesh entities carrying its id.
struct Region {
    int id = no_region;
    int dim = 2;
    std::string name;
    std::optional<int> mat;
    std::optional<int> bc;
    std::optional<int> exci;
};

class Regions {
public:
    Region& add(Region r) {
        if (find(r.id)) throw Error("duplicate region id " + std::to_string(r.id));
        regions_.push_back(std::move(r));
        return regions_.back();
    }

    Region& get_regi(int id) {
        for (auto& r : regions_)
            if (r.id == id) return r;
        throw Error("no region with id " + std::to_string(id));
    }
    const Region& get_regi(int id) const { return const_cast<Regions*>(this)->get_regi(id); }

    const Region* find(int id) const {
        for (const auto& r : regions_)
            if (r.id == id) return &r;
        return nullptr;
    }

    std::size_t size() const { return regions_.size(); }
    bool empty() const { return regions_.empty(); }
    auto begin() const { return regions_.begin(); }
    auto end() const { return regions_.end(); }

private:
    std::vector<Region> regions_;
};

/// One region per distinct tag found on the mesh (elements dim 2, edges dim 1, nodes dim 0).
inline Regions regions_from_mesh(const Mesh& mesh) {
    std::map<std::pair<int, int>, bool> seen;
    Regions out;
    auto note = [&](int dim, int id) {
        if (id == no_region || seen.count({dim, id})) return;
        seen[{dim, id}] = true;
        if (out.find(id)) throw Error("region id " + std::to_string(id) + " used on entities of different dimension");
        out.add(Region{id, dim, {}, {}, {}, {}});
    };
    for (int r : mesh.element_regions()) note(2, r);
    for (int r : mesh.edge_regions()) note(1, r);
    for (int r : mesh.node_regions()) note(0, r);
    return out;
}

}  // namespace fieldforge
