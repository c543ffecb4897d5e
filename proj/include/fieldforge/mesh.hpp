#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"

namespace fieldforge {

/// Cartesian meshes use (x, y); axisymmetric meshes use (rho, z) with rho >= 0.
enum class CoordSystem { cartesian, axisymmetric };

inline const char* to_string(CoordSystem c) { return c == CoordSystem::cartesian ? "cartesian" : "axisymmetric"; }

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

using Triangle = std::array<std::size_t, 3>;
/// Undirected edge stored with the smaller node index first.
using EdgeNodes = std::array<std::size_t, 2>;

inline constexpr int no_region = -1;

inline EdgeNodes make_edge(std::size_t a, std::size_t b) { return a < b ? EdgeNodes{a, b} : EdgeNodes{b, a}; }

inline double signed_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

/// Edge incidence derived from triangle connectivity.
struct EdgeTable {
    std::vector<EdgeNodes> edges;                       // lexicographic by sorted node pair
    std::vector<std::array<std::size_t, 3>> elem_edges;  // local edge k is opposite local node k
    std::vector<bool> boundary;                         // true iff the edge belongs to exactly one element

    friend bool operator==(const EdgeTable&, const EdgeTable&) = default;
};

/// Builds the edge tables. The edge list is independent of element order.
inline EdgeTable build_edges(std::span<const Triangle> elements) {
    std::vector<std::pair<EdgeNodes, std::size_t>> all;
    all.reserve(3 * elements.size());
    for (std::size_t e = 0; e < elements.size(); ++e) {
        const auto& t = elements[e];
        for (int k = 0; k < 3; ++k) all.push_back({make_edge(t[(k + 1) % 3], t[(k + 2) % 3]), 3 * e + k});
    }
    std::sort(all.begin(), all.end());

    EdgeTable table;
    table.elem_edges.resize(elements.size());
    std::vector<int> count;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (i == 0 || all[i].first != all[i - 1].first) {
            table.edges.push_back(all[i].first);
            count.push_back(0);
        }
        ++count.back();
        const std::size_t slot = all[i].second;
        table.elem_edges[slot / 3][slot % 3] = table.edges.size() - 1;
    }
    table.boundary.resize(count.size());
    for (std::size_t i = 0; i < count.size(); ++i) table.boundary[i] = (count[i] == 1);
    return table;
}

struct TaggedEdge {
    EdgeNodes nodes;
    int region = no_region;
};

struct TaggedNode {
    std::size_t node = 0;
    int region = no_region;
};

/// Linear triangle mesh with per-entity region tags. Immutable after construction.
class Mesh {
public:
    Mesh(CoordSystem coords, std::vector<Point> nodes, std::vector<Triangle> elements, std::vector<int> elem_region,
         const std::vector<TaggedEdge>& edge_tags = {}, const std::vector<TaggedNode>& node_tags = {})
        : coords_(coords), nodes_(std::move(nodes)), elements_(std::move(elements)), elem_region_(std::move(elem_region)) {
        if (elem_region_.empty()) elem_region_.assign(elements_.size(), no_region);
        if (elem_region_.size() != elements_.size()) throw Error("element region list length does not match element count");
        if (coords_ == CoordSystem::axisymmetric) {
            for (std::size_t n = 0; n < nodes_.size(); ++n) {
                if (nodes_[n].x < 0.0) {
                    if (nodes_[n].x > -1e-12) {
                        nodes_[n].x = 0.0;
                    } else {
                        throw Error("axisymmetric node " + std::to_string(n) + " has negative rho");
                    }
                }
            }
        }
        for (std::size_t e = 0; e < elements_.size(); ++e) {
            auto& t = elements_[e];
            for (auto n : t)
                if (n >= nodes_.size()) throw Error("element " + std::to_string(e) + " references node out of range");
            const double a = signed_area(nodes_[t[0]], nodes_[t[1]], nodes_[t[2]]);
            if (a == 0.0) throw Error("zero-area element " + std::to_string(e));
            if (a < 0.0) std::swap(t[1], t[2]);
        }
        table_ = build_edges(elements_);
        edge_region_.assign(table_.edges.size(), no_region);
        for (const auto& tag : edge_tags) {
            const auto idx = find_edge(tag.nodes[0], tag.nodes[1]);
            if (!idx) {
                throw Error("tagged edge (" + std::to_string(tag.nodes[0]) + "," + std::to_string(tag.nodes[1]) +
                            ") is not an edge of the triangulation");
            }
            auto& slot = edge_region_[*idx];
            if (slot != no_region && slot != tag.region) {
                throw Error("edge (" + std::to_string(tag.nodes[0]) + "," + std::to_string(tag.nodes[1]) +
                            ") carries two region ids");
            }
            slot = tag.region;
        }
        node_region_.assign(nodes_.size(), no_region);
        for (const auto& tag : node_tags) {
            if (tag.node >= nodes_.size()) throw Error("tagged node out of range");
            auto& slot = node_region_[tag.node];
            if (slot != no_region && slot != tag.region)
                throw Error("node " + std::to_string(tag.node) + " carries two region ids");
            slot = tag.region;
        }
    }

    CoordSystem coords() const { return coords_; }
    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_elements() const { return elements_.size(); }
    std::size_t num_edges() const { return table_.edges.size(); }

    const std::vector<Point>& nodes() const { return nodes_; }
    const Point& node(std::size_t n) const { return nodes_.at(n); }
    const std::vector<Triangle>& elements() const { return elements_; }
    const Triangle& element(std::size_t e) const { return elements_.at(e); }
    const std::vector<int>& element_regions() const { return elem_region_; }
    int element_region(std::size_t e) const { return elem_region_.at(e); }

    const EdgeTable& edge_table() const { return table_; }
    const std::vector<EdgeNodes>& edges() const { return table_.edges; }
    bool is_boundary_edge(std::size_t edge) const { return table_.boundary.at(edge); }
    int edge_region(std::size_t edge) const { return edge_region_.at(edge); }
    const std::vector<int>& edge_regions() const { return edge_region_; }
    int node_region(std::size_t n) const { return node_region_.at(n); }
    const std::vector<int>& node_regions() const { return node_region_; }

    std::optional<std::size_t> find_edge(std::size_t a, std::size_t b) const {
        const EdgeNodes key = make_edge(a, b);
        auto it = std::lower_bound(table_.edges.begin(), table_.edges.end(), key);
        if (it == table_.edges.end() || *it != key) return std::nullopt;
        return static_cast<std::size_t>(it - table_.edges.begin());
    }

    /// Signed area; positive by the orientation invariant.
    double element_area(std::size_t e) const {
        if (e >= elements_.size()) throw Error("element index " + std::to_string(e) + " out of range");
        const auto& t = elements_[e];
        return signed_area(nodes_[t[0]], nodes_[t[1]], nodes_[t[2]]);
    }

    Point centroid(std::size_t e) const {
        const auto& t = element(e);
        return {(nodes_[t[0]].x + nodes_[t[1]].x + nodes_[t[2]].x) / 3.0,
                (nodes_[t[0]].y + nodes_[t[1]].y + nodes_[t[2]].y) / 3.0};
    }

    double element_diameter(std::size_t e) const {
        const auto& t = element(e);
        double d = 0.0;
        for (int k = 0; k < 3; ++k) {
            const auto& p = nodes_[t[k]];
            const auto& q = nodes_[t[(k + 1) % 3]];
            d = std::max(d, std::hypot(p.x - q.x, p.y - q.y));
        }
        return d;
    }

    double edge_length(std::size_t edge) const {
        const auto& en = table_.edges.at(edge);
        return std::hypot(nodes_[en[0]].x - nodes_[en[1]].x, nodes_[en[0]].y - nodes_[en[1]].y);
    }

    std::vector<TaggedEdge> edge_tags() const {
        std::vector<TaggedEdge> out;
        for (std::size_t i = 0; i < edge_region_.size(); ++i)
            if (edge_region_[i] != no_region) out.push_back({table_.edges[i], edge_region_[i]});
        return out;
    }

    std::vector<TaggedNode> node_tags() const {
        std::vector<TaggedNode> out;
        for (std::size_t i = 0; i < node_region_.size(); ++i)
            if (node_region_[i] != no_region) out.push_back({i, node_region_[i]});
        return out;
    }

private:
    CoordSystem coords_;
    std::vector<Point> nodes_;
    std::vector<Triangle> elements_;
    std::vector<int> elem_region_;
    EdgeTable table_;
    std::vector<int> edge_region_;
    std::vector<int> node_region_;
};

inline double total_area(const Mesh& mesh) {
    double a = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) a += mesh.element_area(e);
    return a;
}

inline double max_element_diameter(const Mesh& mesh) {
    double d = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) d = std::max(d, mesh.element_diameter(e));
    return d;
}

/// Splits every triangle into four through its edge midpoints. Midpoint of edge k
/// gets node index num_nodes + k.
inline Mesh refine_uniform(const Mesh& mesh) {
    const std::size_t n0 = mesh.num_nodes();
    std::vector<Point> nodes = mesh.nodes();
    for (const auto& en : mesh.edges()) {
        const auto& p = mesh.node(en[0]);
        const auto& q = mesh.node(en[1]);
        nodes.push_back({0.5 * (p.x + q.x), 0.5 * (p.y + q.y)});
    }
    std::vector<Triangle> elements;
    std::vector<int> regions;
    elements.reserve(4 * mesh.num_elements());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        const auto& le = mesh.edge_table().elem_edges[e];
        // local edge k is opposite node k
        const std::size_t m0 = n0 + le[0], m1 = n0 + le[1], m2 = n0 + le[2];
        elements.push_back({t[0], m2, m1});
        elements.push_back({m2, t[1], m0});
        elements.push_back({m1, m0, t[2]});
        elements.push_back({m0, m1, m2});
        regions.insert(regions.end(), 4, mesh.element_region(e));
    }
    std::vector<TaggedEdge> edge_tags;
    for (std::size_t i = 0; i < mesh.num_edges(); ++i) {
        const int r = mesh.edge_region(i);
        if (r == no_region) continue;
        const auto& en = mesh.edges()[i];
        edge_tags.push_back({make_edge(en[0], n0 + i), r});
        edge_tags.push_back({make_edge(n0 + i, en[1]), r});
    }
    return Mesh(mesh.coords(), std::move(nodes), std::move(elements), std::move(regions), edge_tags, mesh.node_tags());
}

/// Axis-aligned block assigning a region to elements whose centroid lies inside.
struct RegionBlock {
    double x0, x1, y0, y1;
    int region;
};

/// Straight segment; every mesh edge lying on it gets the region id.
struct EdgeSegment {
    Point a, b;
    int region;
};

struct RegionMap {
    int default_region = 1;
    std::vector<RegionBlock> blocks;    // later blocks override earlier ones
    std::vector<EdgeSegment> segments;  // first matching segment wins
};

/// Tensor-product grid with coordinates xs × ys, each cell split along its
/// lower-left to upper-right diagonal.
inline Mesh tensor_grid_mesh(CoordSystem coords, const std::vector<double>& xs, const std::vector<double>& ys,
                             const RegionMap& map) {
    if (xs.size() < 2 || ys.size() < 2) throw Error("invalid dimensions: grid needs at least two coordinates per axis");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1])) throw Error("invalid dimensions: x coordinates must be strictly increasing");
    for (std::size_t j = 1; j < ys.size(); ++j)
        if (!(ys[j] > ys[j - 1])) throw Error("invalid dimensions: y coordinates must be strictly increasing");

    const std::size_t nx = xs.size() - 1, ny = ys.size() - 1;
    auto id = [&](std::size_t i, std::size_t j) { return j * (nx + 1) + i; };
    std::vector<Point> nodes;
    nodes.reserve((nx + 1) * (ny + 1));
    for (std::size_t j = 0; j <= ny; ++j)
        for (std::size_t i = 0; i <= nx; ++i) nodes.push_back({xs[i], ys[j]});

    std::vector<Triangle> elements;
    std::vector<int> regions;
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            elements.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    for (const auto& t : elements) {
        const double cx = (nodes[t[0]].x + nodes[t[1]].x + nodes[t[2]].x) / 3.0;
        const double cy = (nodes[t[0]].y + nodes[t[1]].y + nodes[t[2]].y) / 3.0;
        int r = map.default_region;
        for (const auto& b : map.blocks)
            if (cx >= b.x0 && cx <= b.x1 && cy >= b.y0 && cy <= b.y1) r = b.region;
        regions.push_back(r);
    }

    const double scale = std::max(xs.back() - xs.front(), ys.back() - ys.front());
    const double tol = 1e-10 * scale;
    auto on_segment = [&](const Point& p, const EdgeSegment& s) {
        const double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
        const double len2 = dx * dx + dy * dy;
        const double t = ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2;
        const double px = s.a.x + t * dx - p.x, py = s.a.y + t * dy - p.y;
        const double slack = tol / std::sqrt(len2);
        return std::hypot(px, py) <= tol && t >= -slack && t <= 1.0 + slack;
    };
    std::vector<TaggedEdge> tags;
    for (const auto& en : build_edges(elements).edges) {
        for (const auto& s : map.segments) {
            if (on_segment(nodes[en[0]], s) && on_segment(nodes[en[1]], s)) {
                tags.push_back({en, s.region});
                break;
            }
        }
    }
    return Mesh(coords, std::move(nodes), std::move(elements), std::move(regions), tags);
}

/// Uniform subdivision of [a, b] into n intervals.
inline std::vector<double> linspace_intervals(double a, double b, std::size_t n) {
    std::vector<double> v(n + 1);
    for (std::size_t i = 0; i <= n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n);
    v.back() = b;
    return v;
}

/// Concatenates uniform subdivisions of consecutive intervals [breaks[k], breaks[k+1]].
inline std::vector<double> graded_axis(const std::vector<double>& breaks, const std::vector<std::size_t>& divisions) {
    if (breaks.size() < 2 || divisions.size() != breaks.size() - 1)
        throw Error("invalid dimensions: need one division count per interval");
    std::vector<double> v{breaks.front()};
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        if (divisions[k] < 1) throw Error("invalid dimensions: division count must be >= 1");
        auto seg = linspace_intervals(breaks[k], breaks[k + 1], divisions[k]);
        v.insert(v.end(), seg.begin() + 1, seg.end());
    }
    return v;
}

inline Mesh structured_rect_mesh(double width, double height, std::size_t nx, std::size_t ny, const RegionMap& map = {}) {
    if (!(width > 0.0) || !(height > 0.0) || nx < 1 || ny < 1) throw Error("invalid dimensions for rectangle mesh");
    return tensor_grid_mesh(CoordSystem::cartesian, linspace_intervals(0.0, width, nx), linspace_intervals(0.0, height, ny),
                            map);
}

inline Mesh structured_annulus_mesh(double r_in, double r_out, double z0, double z1, std::size_t nr, std::size_t nz,
                                    const RegionMap& map = {}) {
    if (!(r_in >= 0.0) || !(r_in < r_out) || !(z0 < z1) || nr < 1 || nz < 1)
        throw Error("invalid dimensions for annulus mesh");
    return tensor_grid_mesh(CoordSystem::axisymmetric, linspace_intervals(r_in, r_out, nr), linspace_intervals(z0, z1, nz),
                            map);
}

}  // namespace fieldforge
