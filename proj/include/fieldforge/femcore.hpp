#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/mesh.hpp"
#include "fieldforge/model.hpp"
#include "fieldforge/parallel.hpp"
#include "fieldforge/sparse.hpp"

namespace fieldforge {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

enum class SpaceKind { nodal, vector_potential };

/// First-order nodal basis on a triangle mesh, one DoF per node.
class FunctionSpace {
public:
    const Mesh& mesh() const { return *mesh_; }
    std::shared_ptr<const Mesh> mesh_ptr() const { return mesh_; }
    SpaceKind kind() const { return kind_; }
    CoordSystem coords() const { return mesh_->coords(); }
    std::size_t ndof() const { return mesh_->num_nodes(); }
    bool axisymmetric() const { return coords() == CoordSystem::axisymmetric; }

    /// Factor multiplying ∫∇N_i·∇N_j dx dy on element e.
    double stiffness_weight(std::size_t e) const {
        if (!axisymmetric()) return depth_;
        const double rho = mesh_->centroid(e).x;
        if (kind_ == SpaceKind::nodal) return two_pi * rho;
        if (!(rho > 0.0)) throw Error("axisymmetric element " + std::to_string(e) + " has centroid on the axis");
        return 1.0 / (two_pi * rho);
    }
    /// Factor multiplying ∫N_i N_j dx dy on element e (same as stiffness weight).
    double mass_weight(std::size_t e) const { return stiffness_weight(e); }
    /// Factor multiplying ∫N_i q dx dy for a volumetric source density q.
    double load_weight(std::size_t e) const {
        if (!axisymmetric()) return depth_;
        return kind_ == SpaceKind::nodal ? two_pi * mesh_->centroid(e).x : 1.0;
    }
    /// Factor multiplying ∫N_i g ds along a boundary edge with midpoint rho.
    double edge_weight(double rho_mid) const {
        if (!axisymmetric()) return depth_;
        return kind_ == SpaceKind::nodal ? two_pi * rho_mid : 1.0;
    }
    /// |e| with the space's integration measure.
    double weighted_area(std::size_t e) const { return load_weight(e) * mesh_->element_area(e); }

    /// Out-of-plane length for Cartesian problems (m).
    double depth() const { return depth_; }

protected:
    FunctionSpace(std::shared_ptr<const Mesh> mesh, SpaceKind kind, double depth)
        : mesh_(std::move(mesh)), kind_(kind), depth_(depth) {
        if (!mesh_) throw Error("function space needs a mesh");
        if (!(depth_ > 0.0)) throw Error("out-of-plane length must be positive");
    }

private:
    std::shared_ptr<const Mesh> mesh_;
    SpaceKind kind_;
    double depth_;
};

/// Scalar potential / temperature space. Axisymmetric measure 2π·rho drho dz.
class NodalFunctionSpace : public FunctionSpace {
public:
    explicit NodalFunctionSpace(std::shared_ptr<const Mesh> mesh) : FunctionSpace(std::move(mesh), SpaceKind::nodal, 1.0) {}
};

/// 2D magnetic vector potential. Cartesian unknown is A_z (Wb/m) over an
/// out-of-plane length; axisymmetric unknown is w = 2π·rho·A_phi (Wb), fixed
/// to zero on the axis.
class VectorPotentialSpace : public FunctionSpace {
public:
    explicit VectorPotentialSpace(std::shared_ptr<const Mesh> mesh, double depth = 1.0)
        : FunctionSpace(std::move(mesh), SpaceKind::vector_potential, depth) {}
};

/// Constant gradients of the three P1 basis functions on element e.
inline std::array<std::array<double, 2>, 3> basis_gradients(const Mesh& mesh, std::size_t e) {
    const auto& t = mesh.element(e);
    const auto& p0 = mesh.node(t[0]);
    const auto& p1 = mesh.node(t[1]);
    const auto& p2 = mesh.node(t[2]);
    const double two_a = 2.0 * mesh.element_area(e);
    return {{{(p1.y - p2.y) / two_a, (p2.x - p1.x) / two_a},
             {(p2.y - p0.y) / two_a, (p0.x - p2.x) / two_a},
             {(p0.y - p1.y) / two_a, (p1.x - p0.x) / two_a}}};
}

template <typename T>
std::array<T, 2> element_gradient(const Mesh& mesh, std::size_t e, std::span<const T> u) {
    const auto g = basis_gradients(mesh, e);
    const auto& t = mesh.element(e);
    std::array<T, 2> out{T(0), T(0)};
    for (int k = 0; k < 3; ++k) {
        out[0] += u[t[k]] * g[k][0];
        out[1] += u[t[k]] * g[k][1];
    }
    return out;
}
template <typename T>
std::array<T, 2> element_gradient(const Mesh& mesh, std::size_t e, const std::vector<T>& u) {
    return element_gradient(mesh, e, std::span<const T>(u));
}

/// Time and per-element field arguments for material evaluation.
struct AssemblyContext {
    double time = 0.0;
    std::function<FieldArgs(std::size_t)> field_args;

    FieldArgs args(std::size_t e) const { return field_args ? field_args(e) : FieldArgs{}; }
};

/// Material of every element; error when an element's region has none.
inline std::vector<const Material*> element_materials(const Mesh& mesh, const Regions& regions, const Materials& materials) {
    std::vector<const Material*> out(mesh.num_elements());
    std::map<int, const Material*> cache;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const int rid = mesh.element_region(e);
        auto it = cache.find(rid);
        if (it == cache.end()) {
            const Region* r = regions.find(rid);
            if (!r) throw Error("missing region " + std::to_string(rid) + " for element " + std::to_string(e));
            if (!r->mat) throw Error("missing material on region " + std::to_string(rid));
            it = cache.emplace(rid, &materials.get(*r->mat)).first;
        }
        out[e] = it->second;
    }
    return out;
}

/// Coefficient tensor of every element, evaluated at the centroid.
inline std::vector<Tensor2> element_coefficients(const FunctionSpace& space, const Regions& regions,
                                                 const Materials& materials, PropertyKind kind,
                                                 const AssemblyContext& ctx = {}) {
    const Mesh& mesh = space.mesh();
    const auto mats = element_materials(mesh, regions, materials);
    for (std::size_t e = 0; e < mats.size(); ++e) {
        if (!mats[e]->has(kind)) {
            throw Error("missing property " + std::string(to_string(kind)) + " on material " + mats[e]->name() +
                        " (region " + std::to_string(mesh.element_region(e)) + ")");
        }
    }
    std::vector<Tensor2> out(mesh.num_elements());
    parallel_for(mesh.num_elements(), [&](std::size_t e) {
        out[e] = mats[e]->property(kind).evaluate_tensor(mesh.centroid(e), ctx.time, ctx.args(e));
    });
    return out;
}

enum class OperatorKind { divgrad, mass, curlcurl };

struct AssembledOperator {
    RealMatrix matrix;
    OperatorKind kind;
    PropertyKind property;
};

using LocalMatrix = std::array<double, 9>;

/// Scatters element matrices into a CSR matrix in element order.
inline RealMatrix gather(const Mesh& mesh, std::size_t ndof, const std::vector<LocalMatrix>& local) {
    CooBuilder<double> b(ndof, ndof);
    b.reserve(9 * local.size());
    for (std::size_t e = 0; e < local.size(); ++e) {
        const auto& t = mesh.element(e);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) b.add(t[i], t[j], local[e][3 * i + j]);
    }
    return to_csr(b);
}

/// K_ij = Σ_e w_e ∫_e ∇N_i·C_e ∇N_j.
inline RealMatrix stiffness_from_coefficients(const FunctionSpace& space, const std::vector<Tensor2>& coeff) {
    const Mesh& mesh = space.mesh();
    std::vector<LocalMatrix> local(mesh.num_elements());
    parallel_for(mesh.num_elements(), [&](std::size_t e) {
        const auto g = basis_gradients(mesh, e);
        const double w = space.stiffness_weight(e) * mesh.element_area(e);
        for (int i = 0; i < 3; ++i) {
            const auto cg = coeff[e].apply(g[i]);
            for (int j = 0; j < 3; ++j) local[e][3 * i + j] = w * (cg[0] * g[j][0] + cg[1] * g[j][1]);
        }
    });
    return gather(mesh, space.ndof(), local);
}

/// M_ij = Σ_e w_e c_e ∫_e N_i N_j = w_e c_e |e|/12 · [[2,1,1],[1,2,1],[1,1,2]].
inline RealMatrix mass_from_coefficients(const FunctionSpace& space, const std::vector<double>& coeff) {
    const Mesh& mesh = space.mesh();
    std::vector<LocalMatrix> local(mesh.num_elements());
    parallel_for(mesh.num_elements(), [&](std::size_t e) {
        const double s = space.mass_weight(e) * coeff[e] * mesh.element_area(e) / 12.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) local[e][3 * i + j] = (i == j ? 2.0 : 1.0) * s;
    });
    return gather(mesh, space.ndof(), local);
}

inline AssembledOperator divgrad_operator(const FunctionSpace& space, const Regions& regions, const Materials& materials,
                                          PropertyKind kind, const AssemblyContext& ctx = {}) {
    return {stiffness_from_coefficients(space, element_coefficients(space, regions, materials, kind, ctx)),
            OperatorKind::divgrad, kind};
}

inline AssembledOperator mass_matrix(const FunctionSpace& space, const Regions& regions, const Materials& materials,
                                     PropertyKind kind, const AssemblyContext& ctx = {}) {
    const auto t = element_coefficients(space, regions, materials, kind, ctx);
    std::vector<double> c(t.size());
    for (std::size_t e = 0; e < t.size(); ++e) {
        if (t[e].xy != 0.0 || t[e].xx != t[e].yy) throw Error("mass matrix needs a scalar coefficient");
        c[e] = t[e].xx;
    }
    return {mass_from_coefficients(space, c), OperatorKind::mass, kind};
}

/// Cartesian: B = (∂A/∂y, −∂A/∂x) gives the divgrad kernel with nu.
/// Axisymmetric (w = 2π rho A_phi): K_ij = Σ_e nu/(2π rho_c) ∫ ∇N_i·∇N_j drho dz.
inline AssembledOperator curlcurl_operator(const VectorPotentialSpace& space, const Regions& regions,
                                           const Materials& materials, const AssemblyContext& ctx = {}) {
    return {stiffness_from_coefficients(space, element_coefficients(space, regions, materials, PropertyKind::reluctivity, ctx)),
            OperatorKind::curlcurl, PropertyKind::reluctivity};
}

/// f_i = Σ_e q_e w_e |e| / 3 for element-constant densities q_e.
inline std::vector<double> load_vector(const FunctionSpace& space, std::span<const double> density) {
    const Mesh& mesh = space.mesh();
    if (density.size() != mesh.num_elements()) throw Error("load vector needs one density per element");
    std::vector<double> f(space.ndof(), 0.0);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        if (density[e] == 0.0) continue;
        const double share = density[e] * space.weighted_area(e) / 3.0;
        for (auto n : mesh.element(e)) f[n] += share;
    }
    return f;
}

inline std::vector<double> load_vector(const FunctionSpace& space, double density) {
    std::vector<double> q(space.mesh().num_elements(), density);
    return load_vector(space, std::span<const double>(q));
}

/// Source density evaluated at element centroids.
inline std::vector<double> load_vector(const FunctionSpace& space, const std::function<double(const Point&)>& density) {
    const Mesh& mesh = space.mesh();
    std::vector<double> q(mesh.num_elements());
    for (std::size_t e = 0; e < q.size(); ++e) q[e] = density(mesh.centroid(e));
    return load_vector(space, std::span<const double>(q));
}

/// Density sources from the excitations bound to element regions. Stranded
/// conductors are skipped; they enter through the coupling blocks.
inline std::vector<double> load_vector(const FunctionSpace& space, const Regions& regions, const Excitations& excitations,
                                       double time) {
    const Mesh& mesh = space.mesh();
    std::vector<double> q(mesh.num_elements(), 0.0);
    std::map<int, double> by_region;
    for (const auto& r : regions) {
        if (!r.exci || r.dim != 2) continue;
        const Excitation& ex = excitations.get(*r.exci);
        if (ex.is<StrandedConductor>()) continue;
        by_region[r.id] = ex.density(time);
    }
    for (std::size_t e = 0; e < q.size(); ++e) {
        auto it = by_region.find(mesh.element_region(e));
        if (it != by_region.end()) q[e] = it->second;
    }
    return load_vector(space, std::span<const double>(q));
}

/// Nodes belonging to the entities tagged with a region id (elements, edges or nodes).
inline std::vector<std::size_t> region_nodes(const Mesh& mesh, int region_id) {
    std::set<std::size_t> nodes;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.element_region(e) == region_id) nodes.insert(mesh.element(e).begin(), mesh.element(e).end());
    for (std::size_t i = 0; i < mesh.num_edges(); ++i)
        if (mesh.edge_region(i) == region_id) nodes.insert(mesh.edges()[i].begin(), mesh.edges()[i].end());
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n)
        if (mesh.node_region(n) == region_id) nodes.insert(n);
    return {nodes.begin(), nodes.end()};
}

struct BoundaryTerms {
    RealMatrix matrix;
    std::vector<double> vector;
};

/// Neumann and Robin contributions integrated exactly along tagged edges.
inline BoundaryTerms neumann_robin_terms(const FunctionSpace& space, const Regions& regions, const BdryCond& bcs,
                                         double time) {
    const Mesh& mesh = space.mesh();
    CooBuilder<double> b(space.ndof(), space.ndof());
    std::vector<double> f(space.ndof(), 0.0);
    std::map<int, const BoundaryCondition*> by_region;
    for (const auto& r : regions)
        if (r.bc) by_region[r.id] = &bcs.get(*r.bc);
    for (std::size_t i = 0; i < mesh.num_edges(); ++i) {
        const int rid = mesh.edge_region(i);
        auto it = by_region.find(rid);
        if (it == by_region.end()) continue;
        const BoundaryCondition& bc = *it->second;
        const auto& en = mesh.edges()[i];
        const double rho_mid = 0.5 * (mesh.node(en[0]).x + mesh.node(en[1]).x);
        const double len = mesh.edge_length(i) * space.edge_weight(rho_mid);
        if (const auto* n = std::get_if<Neumann>(&bc.value())) {
            const double g = evaluate(n->flux, time);
            f[en[0]] += 0.5 * g * len;
            f[en[1]] += 0.5 * g * len;
        } else if (const auto* r = std::get_if<Robin>(&bc.value())) {
            if (r->beta == 0.0) throw Error("Robin boundary condition requires beta != 0");
            const double g = evaluate(r->g, time);
            const double m = r->alpha / r->beta * len / 6.0;
            b.add(en[0], en[0], 2.0 * m);
            b.add(en[1], en[1], 2.0 * m);
            b.add(en[0], en[1], m);
            b.add(en[1], en[0], m);
            f[en[0]] += 0.5 * g / r->beta * len;
            f[en[1]] += 0.5 * g / r->beta * len;
        }
    }
    return {to_csr(b), std::move(f)};
}

/// Affine map full = P·reduced + g where every row of P holds at most one ±1.
struct DofMap {
    static constexpr std::size_t fixed = std::numeric_limits<std::size_t>::max();

    std::size_t reduced_size = 0;
    std::vector<std::size_t> target;  // reduced index or `fixed`
    std::vector<double> sign;         // ±1 for free entries
    std::vector<double> value;        // prescribed value for fixed entries

    std::size_t full_size() const { return target.size(); }
    bool is_fixed(std::size_t i) const { return target[i] == fixed; }

    static DofMap identity(std::size_t n) {
        DofMap m;
        m.reduced_size = n;
        m.target.resize(n);
        std::iota(m.target.begin(), m.target.end(), std::size_t{0});
        m.sign.assign(n, 1.0);
        m.value.assign(n, 0.0);
        return m;
    }
};

enum class DirichletConflict { error, keep_first };

/// Algebraic constraint collection; `build` resolves chains of floating and
/// (anti-)periodic links into a DofMap.
class ConstraintSet {
public:
    explicit ConstraintSet(std::size_t ndof) : ndof_(ndof), dirichlet_(ndof) {}

    std::size_t ndof() const { return ndof_; }

    /// Returns false if the node already had a different value and the policy kept it.
    bool add_dirichlet(std::size_t node, double value, DirichletConflict policy = DirichletConflict::error) {
        check(node);
        auto& slot = dirichlet_[node];
        if (slot && *slot != value) {
            if (policy == DirichletConflict::error)
                throw Error("conflicting Dirichlet values at node " + std::to_string(node));
            return false;
        }
        slot = value;
        return true;
    }

    void add_floating(const std::vector<std::size_t>& nodes) {
        for (std::size_t k = 1; k < nodes.size(); ++k) add_link(nodes[k], nodes[0], 1.0);
    }

    /// slave = sign · master
    void add_periodic(std::size_t slave, std::size_t master, double sign) {
        if (sign != 1.0 && sign != -1.0) throw Error("periodic sign must be +1 or -1");
        add_link(slave, master, sign);
    }

    bool has_dirichlet(std::size_t node) const { return dirichlet_.at(node).has_value(); }

    DofMap build() const {
        // union-find carrying the sign of each node relative to its root
        std::vector<std::size_t> parent(ndof_);
        std::vector<double> rel(ndof_, 1.0);
        std::iota(parent.begin(), parent.end(), std::size_t{0});
        std::function<std::pair<std::size_t, double>(std::size_t)> root = [&](std::size_t x) -> std::pair<std::size_t, double> {
            if (parent[x] == x) return {x, 1.0};
            auto [r, s] = root(parent[x]);
            parent[x] = r;
            rel[x] *= s;
            return {r, rel[x]};
        };
        for (const auto& l : links_) {
            auto [ra, sa] = root(l.a);
            auto [rb, sb] = root(l.b);
            // value(a) = l.sign · value(b); value(x) = s_x · value(root)
            if (ra == rb) {
                if (sa != l.sign * sb) throw Error("inconsistent periodic constraints at node " + std::to_string(l.a));
                continue;
            }
            const std::size_t lo = std::min(ra, rb), hi = std::max(ra, rb);
            parent[hi] = lo;
            // hi expressed relative to lo
            rel[hi] = (hi == ra) ? l.sign * sb / sa : sa / (l.sign * sb);
        }

        std::vector<std::optional<double>> root_value(ndof_);
        for (std::size_t n = 0; n < ndof_; ++n) {
            if (!dirichlet_[n]) continue;
            auto [r, s] = root(n);
            const double v = *dirichlet_[n] / s;
            if (root_value[r] && *root_value[r] != v)
                throw Error("conflicting Dirichlet values at node " + std::to_string(n));
            root_value[r] = v;
        }

        DofMap m;
        m.target.assign(ndof_, DofMap::fixed);
        m.sign.assign(ndof_, 1.0);
        m.value.assign(ndof_, 0.0);
        std::vector<std::size_t> root_index(ndof_, DofMap::fixed);
        for (std::size_t n = 0; n < ndof_; ++n) {
            auto [r, s] = root(n);
            if (root_value[r]) {
                m.value[n] = s * *root_value[r];
                continue;
            }
            if (root_index[r] == DofMap::fixed) root_index[r] = m.reduced_size++;
            m.target[n] = root_index[r];
            m.sign[n] = s;
        }
        return m;
    }

private:
    struct Link {
        std::size_t a, b;
        double sign;
    };

    void check(std::size_t n) const {
        if (n >= ndof_) throw Error("constraint on DoF " + std::to_string(n) + " out of range");
    }
    void add_link(std::size_t a, std::size_t b, double sign) {
        check(a);
        check(b);
        if (a == b) {
            if (sign != 1.0) throw Error("anti-periodic constraint of a node onto itself");
            return;
        }
        links_.push_back({a, b, sign});
    }

    std::size_t ndof_;
    std::vector<std::optional<double>> dirichlet_;
    std::vector<Link> links_;
};

/// Orders boundary nodes along the dominant extent of their bounding box.
inline std::vector<std::size_t> order_along_boundary(const Mesh& mesh, std::vector<std::size_t> nodes) {
    if (nodes.empty()) return nodes;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (auto n : nodes) {
        xmin = std::min(xmin, mesh.node(n).x);
        xmax = std::max(xmax, mesh.node(n).x);
        ymin = std::min(ymin, mesh.node(n).y);
        ymax = std::max(ymax, mesh.node(n).y);
    }
    const bool by_x = (xmax - xmin) >= (ymax - ymin);
    std::stable_sort(nodes.begin(), nodes.end(), [&](std::size_t a, std::size_t b) {
        const auto& p = mesh.node(a);
        const auto& q = mesh.node(b);
        return by_x ? std::pair(p.x, p.y) < std::pair(q.x, q.y) : std::pair(p.y, p.x) < std::pair(q.y, q.x);
    });
    return nodes;
}

/// Constraint set from the Dirichlet, floating and (anti-)periodic conditions
/// bound to regions, evaluated at `time`. Conflicting Dirichlet values at shared
/// nodes resolve to the condition listed first in the container, with a warning.
inline ConstraintSet constraints_from_bcs(const FunctionSpace& space, const Regions& regions, const BdryCond& bcs,
                                          double time) {
    const Mesh& mesh = space.mesh();
    ConstraintSet cs(space.ndof());
    for (const auto& [bc_id, bc] : bcs) {
        for (const auto& r : regions) {
            if (!r.bc || *r.bc != bc_id) continue;
            const auto nodes = region_nodes(mesh, r.id);
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, Dirichlet>) {
                        const double g = evaluate(v.value, time);
                        for (auto n : nodes) {
                            if (!cs.add_dirichlet(n, g, DirichletConflict::keep_first)) {
                                warn("conflicting Dirichlet values at node " + std::to_string(n) + "; keeping the first (region " +
                                     std::to_string(r.id) + " ignored)");
                            }
                        }
                    } else if constexpr (std::is_same_v<V, Floating>) {
                        cs.add_floating(nodes);
                    } else if constexpr (std::is_same_v<V, Periodic> || std::is_same_v<V, AntiPeriodic>) {
                        const double sign = std::is_same_v<V, Periodic> ? 1.0 : -1.0;
                        if (v.master_region == r.id) throw Error("periodic master region equals slave region " + std::to_string(r.id));
                        const auto slaves = order_along_boundary(mesh, nodes);
                        const auto masters = order_along_boundary(mesh, region_nodes(mesh, v.master_region));
                        if (slaves.size() != masters.size()) {
                            throw Error("periodic pairing with mismatched node counts (" + std::to_string(slaves.size()) +
                                        " vs " + std::to_string(masters.size()) + ")");
                        }
                        for (std::size_t k = 0; k < slaves.size(); ++k) cs.add_periodic(slaves[k], masters[k], sign);
                    }
                },
                bc.value());
        }
    }
    if (space.kind() == SpaceKind::vector_potential && space.axisymmetric()) {
        for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
            if (mesh.node(n).x == 0.0 && !cs.add_dirichlet(n, 0.0, DirichletConflict::keep_first))
                warn("axis node " + std::to_string(n) + " has a nonzero Dirichlet value; keeping it");
        }
    }
    return cs;
}

template <typename T>
struct ShrunkSystem {
    CsrMatrix<T> matrix;
    std::vector<T> rhs;
    DofMap map;
};

/// Reduced system Pᵀ A P, Pᵀ (b − A g).
template <typename T>
ShrunkSystem<T> shrink(const CsrMatrix<T>& a, const std::vector<T>& b, const DofMap& map) {
    const std::size_t n = map.full_size();
    if (a.rows() != n || a.cols() != n || b.size() != n) throw Error("shrink: size mismatch between system and DoF map");
    std::vector<T> rb(map.reduced_size, T(0));
    std::vector<T> eff = b;
    CooBuilder<T> out(map.reduced_size, map.reduced_size);
    out.reserve(a.nnz());
    a.for_each([&](std::size_t i, std::size_t j, const T& v) {
        if (map.is_fixed(j)) {
            eff[i] -= v * map.value[j];
        } else if (!map.is_fixed(i)) {
            out.add(map.target[i], map.target[j], T(map.sign[i] * map.sign[j]) * v);
        }
    });
    for (std::size_t i = 0; i < n; ++i)
        if (!map.is_fixed(i)) rb[map.target[i]] += map.sign[i] * eff[i];
    return {to_csr(out), std::move(rb), map};
}

template <typename T>
ShrunkSystem<T> shrink(const CsrMatrix<T>& a, const std::vector<T>& b, const ConstraintSet& cs) {
    return shrink(a, b, cs.build());
}

template <typename T>
std::vector<T> inflate(std::span<const T> reduced, const DofMap& map) {
    if (reduced.size() != map.reduced_size) throw Error("inflate: map/vector size mismatch");
    std::vector<T> full(map.full_size());
    for (std::size_t i = 0; i < full.size(); ++i)
        full[i] = map.is_fixed(i) ? T(map.value[i]) : T(map.sign[i]) * reduced[map.target[i]];
    return full;
}
template <typename T>
std::vector<T> inflate(const std::vector<T>& reduced, const DofMap& map) {
    return inflate(std::span<const T>(reduced), map);
}

/// Pᵀ R for a full-size block of columns R (n × k).
template <typename T>
CsrMatrix<T> restrict_rows(const CsrMatrix<T>& r, const DofMap& map) {
    if (r.rows() != map.full_size()) throw Error("restrict_rows: size mismatch");
    CooBuilder<T> out(map.reduced_size, r.cols());
    r.for_each([&](std::size_t i, std::size_t j, const T& v) {
        if (!map.is_fixed(i)) out.add(map.target[i], j, T(map.sign[i]) * v);
    });
    return to_csr(out);
}

/// B P for a full-size block of rows B (k × n); `rhs` receives −B g.
template <typename T>
CsrMatrix<T> restrict_cols(const CsrMatrix<T>& bm, const DofMap& map, std::vector<T>* rhs = nullptr) {
    if (bm.cols() != map.full_size()) throw Error("restrict_cols: size mismatch");
    CooBuilder<T> out(bm.rows(), map.reduced_size);
    if (rhs) rhs->assign(bm.rows(), T(0));
    bm.for_each([&](std::size_t i, std::size_t j, const T& v) {
        if (map.is_fixed(j)) {
            if (rhs) (*rhs)[i] -= v * map.value[j];
        } else {
            out.add(i, map.target[j], T(map.sign[j]) * v);
        }
    });
    return to_csr(out);
}

/// Differential part of the Jacobian of ∇·(c(|∇u|)∇u):
/// K'_ij = Σ_e (dc/dE)(∇u·∇N_i)(∇u·∇N_j)/max(E, eps_E) · |e|_w.
inline RealMatrix field_differential_operator(const FunctionSpace& space, const Regions& regions, const Materials& materials,
                                              PropertyKind kind, const AssemblyContext& ctx, std::span<const double> u,
                                              double eps_e = 1e-12) {
    const Mesh& mesh = space.mesh();
    const auto mats = element_materials(mesh, regions, materials);
    std::vector<LocalMatrix> local(mesh.num_elements());
    parallel_for(mesh.num_elements(), [&](std::size_t e) {
        local[e].fill(0.0);
        const Property& prop = mats[e]->property(kind);
        if (!prop.differential() || prop.differential()->argument != "E") return;
        const auto g = basis_gradients(mesh, e);
        const auto grad = element_gradient(mesh, e, u);
        const double emag = std::hypot(grad[0], grad[1]);
        const double dc = prop.derivative("E", mesh.centroid(e), ctx.time, ctx.args(e));
        const double w = dc / std::max(emag, eps_e) * space.stiffness_weight(e) * mesh.element_area(e);
        std::array<double, 3> proj{};
        for (int i = 0; i < 3; ++i) proj[i] = grad[0] * g[i][0] + grad[1] * g[i][1];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) local[e][3 * i + j] = w * proj[i] * proj[j];
    });
    return gather(mesh, space.ndof(), local);
}

}  // namespace fieldforge
