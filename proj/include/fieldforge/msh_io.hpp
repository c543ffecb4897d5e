#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/mesh.hpp"
#include "fieldforge/model.hpp"

namespace fieldforge {

struct PhysicalGroup {
    int dim = 2;
    int tag = 0;
    std::string name;

    friend bool operator==(const PhysicalGroup&, const PhysicalGroup&) = default;
};

struct MshResult {
    Mesh mesh;
    std::vector<PhysicalGroup> groups;  // sorted by (dim, tag)
};

/// Error raised by the MSH reader; the message starts with "line N: " when the
/// failure can be pinned to an input line.
class MshError : public Error {
public:
    using Error::Error;
};

namespace msh_detail {

struct Token {
    std::string text;
    std::size_t line;
};

inline std::vector<Token> tokenize(std::istream& in) {
    std::vector<Token> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t i = 0;
        while (i < line.size()) {
            const char c = line[i];
            if (c == ' ' || c == '\t' || c == '\r') {
                ++i;
                continue;
            }
            if (c == '"') {
                const auto close = line.find('"', i + 1);
                if (close == std::string::npos) throw MshError("line " + std::to_string(lineno) + ": unterminated string");
                out.push_back({line.substr(i, close - i + 1), lineno});
                i = close + 1;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
            out.push_back({line.substr(i, j - i), lineno});
            i = j;
        }
    }
    return out;
}

class Reader {
public:
    explicit Reader(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    bool done() const { return pos_ >= toks_.size(); }
    const Token& peek() const { return toks_.at(pos_); }
    std::size_t line() const { return done() ? (toks_.empty() ? 0 : toks_.back().line) : toks_[pos_].line; }

    [[noreturn]] void fail(const std::string& msg) const { throw MshError("line " + std::to_string(line()) + ": " + msg); }

    const Token& next() {
        if (done()) fail("unexpected end of file");
        return toks_[pos_++];
    }

    long long integer() {
        const Token& t = next();
        errno = 0;
        char* end = nullptr;
        const long long v = std::strtoll(t.text.c_str(), &end, 10);
        if (errno != 0 || end != t.text.c_str() + t.text.size() || t.text.empty())
            throw MshError("line " + std::to_string(t.line) + ": expected integer, got '" + t.text + "'");
        return v;
    }

    std::size_t count() {
        const std::size_t at = line();
        const long long v = integer();
        if (v < 0) throw MshError("line " + std::to_string(at) + ": negative count");
        return static_cast<std::size_t>(v);
    }

    double real() {
        const Token& t = next();
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(t.text.c_str(), &end);
        if (errno == ERANGE || end != t.text.c_str() + t.text.size() || t.text.empty())
            throw MshError("line " + std::to_string(t.line) + ": expected number, got '" + t.text + "'");
        return v;
    }

    void expect(const std::string& word) {
        const Token& t = next();
        if (t.text != word) throw MshError("line " + std::to_string(t.line) + ": expected " + word + ", got '" + t.text + "'");
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

}  // namespace msh_detail

/// Reads a Gmsh MSH 4.1 ASCII document. Triangles become elements tagged with
/// their entity's physical tag, lines become tagged edges, points tagged nodes.
/// Only nodes used by triangles are kept, renumbered densely in ascending tag order.
inline MshResult parse_msh(std::istream& in, CoordSystem coords) {
    msh_detail::Reader rd(msh_detail::tokenize(in));

    bool have_format = false, have_nodes = false, have_elements = false, have_entities = false;
    std::map<std::pair<int, int>, std::string> names;
    std::map<std::pair<int, int>, std::vector<int>> entity_phys;  // (dim, entity tag) -> physical tags
    std::map<long long, std::array<double, 3>> node_xyz;
    std::map<long long, std::size_t> node_line;

    struct RawElement {
        int type;
        int dim;
        int entity;
        long long tag;
        std::vector<long long> nodes;
        std::size_t line;
    };
    std::vector<RawElement> raw;

    while (!rd.done()) {
        const auto section_tok = rd.next();
        const std::string& section = section_tok.text;
        if (section.empty() || section[0] != '$')
            throw MshError("line " + std::to_string(section_tok.line) + ": expected section header, got '" + section + "'");

        if (section == "$MeshFormat") {
            const auto vline = rd.line();
            const std::string version = rd.next().text;
            const long long file_type = rd.integer();
            rd.integer();  // data size
            if (version != "4.1") throw MshError("line " + std::to_string(vline) + ": unsupported MSH version " + version);
            if (file_type != 0) throw MshError("line " + std::to_string(vline) + ": binary MSH files are not supported");
            rd.expect("$EndMeshFormat");
            have_format = true;
        } else if (section == "$PhysicalNames") {
            const std::size_t n = rd.count();
            for (std::size_t i = 0; i < n; ++i) {
                const int dim = static_cast<int>(rd.integer());
                const int tag = static_cast<int>(rd.integer());
                const auto& nt = rd.next();
                if (nt.text.size() < 2 || nt.text.front() != '"' || nt.text.back() != '"')
                    throw MshError("line " + std::to_string(nt.line) + ": expected quoted physical name");
                if (!names.emplace(std::pair(dim, tag), nt.text.substr(1, nt.text.size() - 2)).second) {
                    throw MshError("line " + std::to_string(nt.line) + ": duplicate physical tag " + std::to_string(tag) +
                                   " in dimension " + std::to_string(dim));
                }
            }
            rd.expect("$EndPhysicalNames");
        } else if (section == "$Entities") {
            std::array<std::size_t, 4> num{};
            for (auto& v : num) v = rd.count();
            for (int dim = 0; dim < 4; ++dim) {
                for (std::size_t i = 0; i < num[static_cast<std::size_t>(dim)]; ++i) {
                    const int tag = static_cast<int>(rd.integer());
                    const int ncoord = dim == 0 ? 3 : 6;
                    for (int k = 0; k < ncoord; ++k) rd.real();
                    const std::size_t nphys = rd.count();
                    std::vector<int> phys;
                    for (std::size_t k = 0; k < nphys; ++k) phys.push_back(static_cast<int>(rd.integer()));
                    if (dim > 0) {
                        const std::size_t nb = rd.count();
                        for (std::size_t k = 0; k < nb; ++k) rd.integer();
                    }
                    entity_phys[{dim, tag}] = std::move(phys);
                }
            }
            rd.expect("$EndEntities");
            have_entities = true;
        } else if (section == "$Nodes") {
            const std::size_t blocks = rd.count();
            rd.count();
            rd.integer();
            rd.integer();
            for (std::size_t b = 0; b < blocks; ++b) {
                rd.integer();  // entity dim
                rd.integer();  // entity tag
                const auto pline = rd.line();
                const long long parametric = rd.integer();
                const std::size_t n = rd.count();
                if (parametric != 0) throw MshError("line " + std::to_string(pline) + ": parametric nodes are not supported");
                std::vector<std::pair<long long, std::size_t>> tags(n);
                for (auto& t : tags) {
                    t.second = rd.line();
                    t.first = rd.integer();
                }
                for (const auto& [t, l] : tags) {
                    const auto cline = rd.line();
                    std::array<double, 3> xyz{rd.real(), rd.real(), rd.real()};
                    if (!node_xyz.emplace(t, xyz).second)
                        throw MshError("line " + std::to_string(l) + ": duplicate node tag " + std::to_string(t));
                    node_line[t] = cline;
                }
            }
            rd.expect("$EndNodes");
            have_nodes = true;
        } else if (section == "$Elements") {
            const std::size_t blocks = rd.count();
            rd.count();
            rd.integer();
            rd.integer();
            for (std::size_t b = 0; b < blocks; ++b) {
                const int dim = static_cast<int>(rd.integer());
                const int entity = static_cast<int>(rd.integer());
                const auto tline = rd.line();
                const int type = static_cast<int>(rd.integer());
                const std::size_t n = rd.count();
                std::size_t nn = 0;
                switch (type) {
                    case 15: nn = 1; break;
                    case 1: nn = 2; break;
                    case 2: nn = 3; break;
                    default:
                        throw MshError("line " + std::to_string(tline) + ": unsupported element type " + std::to_string(type));
                }
                for (std::size_t i = 0; i < n; ++i) {
                    RawElement el{type, dim, entity, 0, {}, rd.line()};
                    el.tag = rd.integer();
                    for (std::size_t k = 0; k < nn; ++k) el.nodes.push_back(rd.integer());
                    raw.push_back(std::move(el));
                }
            }
            rd.expect("$EndElements");
            have_elements = true;
        } else {
            // sections not needed for 2D meshes ($Periodic, $NodeData, ...) are skipped
            const std::string end = "$End" + section.substr(1);
            while (true) {
                if (rd.done()) throw MshError("line " + std::to_string(section_tok.line) + ": section " + section + " is not closed");
                if (rd.next().text == end) break;
            }
        }
    }
    if (!have_format) throw MshError("missing $MeshFormat section");
    if (!have_nodes) throw MshError("missing $Nodes section");
    if (!have_elements) throw MshError("missing $Elements section");

    auto region_of = [&](const RawElement& el) -> int {
        if (!have_entities) return el.entity;
        auto it = entity_phys.find({el.dim, el.entity});
        if (it == entity_phys.end()) {
            throw MshError("line " + std::to_string(el.line) + ": element " + std::to_string(el.tag) + " refers to unknown entity " +
                           std::to_string(el.entity));
        }
        if (it->second.size() > 1) {
            throw MshError("entity " + std::to_string(el.entity) + " of dimension " + std::to_string(el.dim) +
                           " carries more than one physical tag");
        }
        return it->second.empty() ? no_region : it->second.front();
    };

    for (const auto& el : raw) {
        for (auto n : el.nodes) {
            if (!node_xyz.count(n)) {
                throw MshError("line " + std::to_string(el.line) + ": dangling node reference " + std::to_string(n) +
                               " in element " + std::to_string(el.tag));
            }
        }
    }

    // nodes used by triangles, ascending tag order
    std::set<long long> used;
    for (const auto& el : raw)
        if (el.type == 2) used.insert(el.nodes.begin(), el.nodes.end());
    std::map<long long, std::size_t> dense;
    std::vector<Point> nodes;
    for (auto t : used) {
        const auto& xyz = node_xyz[t];
        if (std::abs(xyz[2]) > 1e-12)
            throw MshError("line " + std::to_string(node_line[t]) + ": node " + std::to_string(t) + " has nonzero z coordinate");
        dense[t] = nodes.size();
        nodes.push_back({xyz[0], xyz[1]});
    }
    auto index = [&](const RawElement& el, long long t) {
        auto it = dense.find(t);
        if (it == dense.end()) {
            throw MshError("line " + std::to_string(el.line) + ": element " + std::to_string(el.tag) + " references node " +
                           std::to_string(t) + " outside the triangulation");
        }
        return it->second;
    };

    std::vector<Triangle> tris;
    std::vector<int> tri_regions;
    std::vector<TaggedEdge> edge_tags;
    std::vector<TaggedNode> node_tags;
    std::set<std::pair<int, int>> used_groups;
    for (const auto& el : raw) {
        const int r = region_of(el);
        if (r != no_region) used_groups.insert({el.type == 2 ? 2 : el.type == 1 ? 1 : 0, r});
        if (el.type == 2) {
            const Triangle t{index(el, el.nodes[0]), index(el, el.nodes[1]), index(el, el.nodes[2])};
            const double a = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if (a == 0.0) throw MshError("line " + std::to_string(el.line) + ": zero-area element " + std::to_string(el.tag));
            tris.push_back(t);
            tri_regions.push_back(r);
        } else if (el.type == 1) {
            if (r != no_region) edge_tags.push_back({make_edge(index(el, el.nodes[0]), index(el, el.nodes[1])), r});
        } else if (r != no_region) {
            node_tags.push_back({index(el, el.nodes[0]), r});
        }
    }
    if (tris.empty()) throw MshError("mesh contains no triangles");

    std::optional<Mesh> mesh;
    try {
        mesh.emplace(coords, std::move(nodes), std::move(tris), std::move(tri_regions), edge_tags, node_tags);
    } catch (const MshError&) {
        throw;
    } catch (const Error& e) {
        throw MshError(e.what());
    }

    std::map<std::pair<int, int>, PhysicalGroup> groups;
    for (const auto& [key, name] : names) groups[key] = {key.first, key.second, name};
    for (const auto& key : used_groups)
        if (!groups.count(key)) groups[key] = {key.first, key.second, ""};
    std::vector<PhysicalGroup> out;
    for (const auto& [key, g] : groups) out.push_back(g);
    return {std::move(*mesh), std::move(out)};
}

inline MshResult read_msh_file(const std::string& path, CoordSystem coords) {
    std::ifstream in(path);
    if (!in) throw MshError("cannot open " + path);
    return parse_msh(in, coords);
}

/// Debug writer: MSH 4.1 ASCII with one entity per run of equally tagged entities.
inline void write_msh(std::ostream& out, const Mesh& mesh, const std::vector<PhysicalGroup>& groups) {
    out.precision(17);
    out << "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n";
    if (!groups.empty()) {
        out << "$PhysicalNames\n" << groups.size() << '\n';
        for (const auto& g : groups) out << g.dim << ' ' << g.tag << " \"" << g.name << "\"\n";
        out << "$EndPhysicalNames\n";
    }

    struct Block {
        int dim;
        int entity;
        int region;
        int type;
        std::vector<std::vector<std::size_t>> elements;
    };
    std::vector<Block> blocks;
    auto push = [&](int dim, int type, int region, std::vector<std::size_t> nodes) {
        if (blocks.empty() || blocks.back().dim != dim || blocks.back().region != region) {
            int entity = 1;
            for (const auto& b : blocks)
                if (b.dim == dim) ++entity;
            blocks.push_back({dim, entity, region, type, {}});
        }
        blocks.back().elements.push_back(std::move(nodes));
    };
    for (const auto& t : mesh.node_tags()) push(0, 15, t.region, {t.node});
    for (const auto& t : mesh.edge_tags()) push(1, 1, t.region, {t.nodes[0], t.nodes[1]});
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        push(2, 2, mesh.element_region(e), {t[0], t[1], t[2]});
    }

    std::array<std::size_t, 4> counts{};
    for (const auto& b : blocks) ++counts[static_cast<std::size_t>(b.dim)];
    out << "$Entities\n" << counts[0] << ' ' << counts[1] << ' ' << counts[2] << " 0\n";
    for (const auto& b : blocks) {
        double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
        for (const auto& el : b.elements) {
            for (auto n : el) {
                lo[0] = std::min(lo[0], mesh.node(n).x);
                lo[1] = std::min(lo[1], mesh.node(n).y);
                hi[0] = std::max(hi[0], mesh.node(n).x);
                hi[1] = std::max(hi[1], mesh.node(n).y);
            }
        }
        out << b.entity << ' ' << lo[0] << ' ' << lo[1] << " 0";
        if (b.dim > 0) out << ' ' << hi[0] << ' ' << hi[1] << " 0";
        if (b.region == no_region) {
            out << " 0";
        } else {
            out << " 1 " << b.region;
        }
        if (b.dim > 0) out << " 0";
        out << '\n';
    }
    out << "$EndEntities\n";

    const std::size_t nn = mesh.num_nodes();
    out << "$Nodes\n1 " << nn << " 1 " << nn << "\n2 1 0 " << nn << '\n';
    for (std::size_t n = 0; n < nn; ++n) out << n + 1 << '\n';
    for (const auto& p : mesh.nodes()) out << p.x << ' ' << p.y << " 0\n";
    out << "$EndNodes\n";

    std::size_t total = 0;
    for (const auto& b : blocks) total += b.elements.size();
    out << "$Elements\n" << blocks.size() << ' ' << total << " 1 " << total << '\n';
    std::size_t tag = 1;
    for (const auto& b : blocks) {
        out << b.dim << ' ' << b.entity << ' ' << b.type << ' ' << b.elements.size() << '\n';
        for (const auto& el : b.elements) {
            out << tag++;
            for (auto n : el) out << ' ' << n + 1;
            out << '\n';
        }
    }
    out << "$EndElements\n";
}

/// One region per physical group, bound by name to at most one material,
/// boundary condition and excitation.
inline Regions generate_regions(const std::vector<PhysicalGroup>& groups, const Materials& materials, const BdryCond& bcs,
                                const Excitations& excitations = {}) {
    Regions regions;
    for (const auto& g : groups) {
        if (const Region* other = regions.find(g.tag)) {
            throw Error("physical tag " + std::to_string(g.tag) + " used in dimensions " + std::to_string(other->dim) + " and " +
                        std::to_string(g.dim));
        }
        Region r{g.tag, g.dim, g.name, {}, {}, {}};
        if (!g.name.empty()) {
            r.mat = materials.find(g.name);
            r.bc = bcs.find(g.name);
            r.exci = excitations.find(g.name);
        }
        if (!r.mat && !r.bc && !r.exci)
            warn("physical group \"" + g.name + "\" (tag " + std::to_string(g.tag) + ") matches no material, boundary condition or excitation");
        regions.add(std::move(r));
    }
    return regions;
}

}  // namespace fieldforge
