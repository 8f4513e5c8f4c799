#include "miflow/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "json.hpp"

namespace miflow {

// ---- quaternion ----

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
    Vec3 a = normalized(axis);
    double h = 0.5 * angle;
    double s = std::sin(h);
    return {std::cos(h), a.x * s, a.y * s, a.z * s};
}

Vec3 Quat::rotate(const Vec3& v) const {
    // q v q*
    Vec3 u{x, y, z};
    Vec3 t = cross(u, v) * 2.0;
    return v + t * w + cross(u, t);
}

std::array<std::array<double, 3>, 3> Quat::to_matrix() const {
    std::array<std::array<double, 3>, 3> m;
    m[0] = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)};
    m[1] = {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)};
    m[2] = {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
    return m;
}

// ---- primitives ----

std::string to_string(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::sphere: return "sphere";
        case PrimitiveKind::box: return "box";
        case PrimitiveKind::cylinder: return "cylinder";
    }
    return "?";
}

PrimitiveKind primitive_kind_from_string(const std::string& s) {
    if (s == "sphere") return PrimitiveKind::sphere;
    if (s == "box") return PrimitiveKind::box;
    if (s == "cylinder") return PrimitiveKind::cylinder;
    fail("unknown primitive kind: " + s);
}

void Primitive::validate() const {
    size_t want = kind == PrimitiveKind::sphere ? 1 : (kind == PrimitiveKind::box ? 3 : 2);
    require(params.size() == want, "primitive: wrong parameter count for " + to_string(kind));
    for (double p : params) require(p > 0, "primitive: size parameters must be positive");
}

double Primitive::surface_area() const {
    switch (kind) {
        case PrimitiveKind::sphere: {
            double r = params[0];
            return 4.0 * M_PI * r * r;
        }
        case PrimitiveKind::box: {
            double hx = params[0], hy = params[1], hz = params[2];
            return 8.0 * (hx * hy + hy * hz + hz * hx);
        }
        case PrimitiveKind::cylinder: {
            double r = params[0], hh = params[1];
            return 4.0 * M_PI * r * hh + 2.0 * M_PI * r * r;
        }
    }
    return 0;
}

void PosedShape::validate() const {
    primitive.validate();
    require(std::abs(rotation.norm() - 1.0) <= 1e-6, "posed shape: quaternion not unit length");
    require(scale > 0, "posed shape: scale must be positive");
}

bool Aabb::contains(const Aabb& inner) const {
    return min.x <= inner.min.x && min.y <= inner.min.y && min.z <= inner.min.z &&
           max.x >= inner.max.x && max.y >= inner.max.y && max.z >= inner.max.z;
}

bool Aabb::disjoint(const Aabb& other) const {
    return min.x > other.max.x || other.min.x > max.x || min.y > other.max.y ||
           other.min.y > max.y || min.z > other.max.z || other.min.z > max.z;
}

void TriMesh::validate() const {
    int nv = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
        for (int i : t) require(i >= 0 && i < nv, "mesh: vertex index out of range");
        require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], "mesh: degenerate triangle");
    }
}

Vec3 SdfGrid::node_position(int ix, int iy, int iz) const {
    Vec3 e = bounds.extent();
    double d = resolution - 1;
    return {bounds.min.x + e.x * ix / d, bounds.min.y + e.y * iy / d,
            bounds.min.z + e.z * iz / d};
}

// ---- signed distance ----

double sdf(const Primitive& prim, const Vec3& p) {
    switch (prim.kind) {
        case PrimitiveKind::sphere:
            return norm(p) - prim.params[0];
        case PrimitiveKind::box: {
            Vec3 q{std::abs(p.x) - prim.params[0], std::abs(p.y) - prim.params[1],
                   std::abs(p.z) - prim.params[2]};
            Vec3 qp = cwise_max(q, {0, 0, 0});
            double outside = norm(qp);
            double inside = std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
            return outside + inside;
        }
        case PrimitiveKind::cylinder: {
            double dr = std::sqrt(p.x * p.x + p.y * p.y) - prim.params[0];
            double dz = std::abs(p.z) - prim.params[1];
            double ox = std::max(dr, 0.0), oz = std::max(dz, 0.0);
            double outside = std::sqrt(ox * ox + oz * oz);
            double inside = std::min(std::max(dr, dz), 0.0);
            return outside + inside;
        }
    }
    return kEmptySdf;
}

double sdf(const PosedShape& shape, const Vec3& p) {
    // world -> canonical: rotate back, then divide out the uniform scale
    Vec3 local = shape.rotation.conjugate().rotate(p - shape.translation) / shape.scale;
    return shape.scale * sdf(shape.primitive, local);
}

// ---- surface sampling ----

namespace {

struct SurfaceSample {
    Vec3 pos, normal;
};

SurfaceSample sample_canonical(const Primitive& prim, Rng& rng) {
    switch (prim.kind) {
        case PrimitiveKind::sphere: {
            double z = 2.0 * rng.uniform() - 1.0;
            double phi = 2.0 * M_PI * rng.uniform();
            double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
            Vec3 n{rxy * std::cos(phi), rxy * std::sin(phi), z};
            return {n * prim.params[0], n};
        }
        case PrimitiveKind::box: {
            double hx = prim.params[0], hy = prim.params[1], hz = prim.params[2];
            double ax = hy * hz, ay = hx * hz, az = hx * hy;  // per-face area / 4
            double total = 2 * (ax + ay + az);
            double pick = rng.uniform() * total;
            double u = 2.0 * rng.uniform() - 1.0;
            double v = 2.0 * rng.uniform() - 1.0;
            if (pick < 2 * ax) {
                double sgn = pick < ax ? 1.0 : -1.0;
                return {{sgn * hx, u * hy, v * hz}, {sgn, 0, 0}};
            }
            pick -= 2 * ax;
            if (pick < 2 * ay) {
                double sgn = pick < ay ? 1.0 : -1.0;
                return {{u * hx, sgn * hy, v * hz}, {0, sgn, 0}};
            }
            pick -= 2 * ay;
            double sgn = pick < az ? 1.0 : -1.0;
            return {{u * hx, v * hy, sgn * hz}, {0, 0, sgn}};
        }
        case PrimitiveKind::cylinder: {
            double r = prim.params[0], hh = prim.params[1];
            double side = 4.0 * M_PI * r * hh;
            double cap = M_PI * r * r;
            double pick = rng.uniform() * (side + 2 * cap);
            double theta = 2.0 * M_PI * rng.uniform();
            double c = std::cos(theta), s = std::sin(theta);
            if (pick < side) {
                double z = (2.0 * rng.uniform() - 1.0) * hh;
                return {{r * c, r * s, z}, {c, s, 0}};
            }
            double sgn = pick < side + cap ? 1.0 : -1.0;
            double rho = r * std::sqrt(rng.uniform());
            return {{rho * c, rho * s, sgn * hh}, {0, 0, sgn}};
        }
    }
    return {};
}

}  // namespace

PointCloud sample_surface(const PosedShape& shape, int count, Rng& rng) {
    require(count >= 1, "sample_surface: count must be >= 1");
    PointCloud out;
    out.positions.reserve(count);
    out.normals.reserve(count);
    for (int i = 0; i < count; i++) {
        SurfaceSample s = sample_canonical(shape.primitive, rng);
        out.positions.push_back(shape.rotation.rotate(s.pos * shape.scale) + shape.translation);
        out.normals.push_back(shape.rotation.rotate(s.normal));
    }
    return out;
}

PointCloud sample_mesh_surface(const TriMesh& mesh, int count, Rng& rng) {
    require(!mesh.triangles.empty(), "empty geometry");
    require(count >= 1, "sample_mesh_surface: count must be >= 1");
    std::vector<double> cum(mesh.triangles.size());
    double total = 0;
    for (size_t i = 0; i < mesh.triangles.size(); i++) {
        const auto& t = mesh.triangles[i];
        Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
        total += 0.5 * norm(cross(b - a, c - a));
        cum[i] = total;
    }
    require(total > 0, "sample_mesh_surface: zero total area");
    PointCloud out;
    out.positions.reserve(count);
    out.normals.reserve(count);
    for (int i = 0; i < count; i++) {
        double pick = rng.uniform() * total;
        size_t ti = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
        if (ti >= cum.size()) ti = cum.size() - 1;
        const auto& t = mesh.triangles[ti];
        Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
        double u = rng.uniform(), v = rng.uniform();
        double su = std::sqrt(u);
        double wa = 1.0 - su, wb = su * (1.0 - v), wc = su * v;
        out.positions.push_back(a * wa + b * wb + c * wc);
        Vec3 n = cross(b - a, c - a);
        double len = norm(n);
        out.normals.push_back(len > 0 ? n / len : Vec3{0, 0, 1});
    }
    return out;
}

// ---- SDF grid ----

SdfGrid grid_sdf(const std::vector<PosedShape>& shapes, int resolution, const Aabb& bounds) {
    require(resolution >= 2, "grid_sdf: resolution must be >= 2");
    SdfGrid grid;
    grid.resolution = resolution;
    grid.bounds = bounds;
    grid.values.assign(size_t(resolution) * resolution * resolution, kEmptySdf);
#pragma omp parallel for schedule(static)
    for (int ix = 0; ix < resolution; ix++) {
        for (int iy = 0; iy < resolution; iy++) {
            for (int iz = 0; iz < resolution; iz++) {
                Vec3 p = grid.node_position(ix, iy, iz);
                double d = kEmptySdf;
                for (const auto& s : shapes) d = std::min(d, sdf(s, p));
                grid.at(ix, iy, iz) = d;
            }
        }
    }
    return grid;
}

// ---- marching cubes ----

#include "marching_cubes_tables.inc"

namespace {

// unordered edge identified by its lower grid node and axis (0=x,1=y,2=z)
struct EdgeRef {
    int x, y, z, axis;
};

// per-cell edge index -> canonical edge
EdgeRef cell_edge(int x, int y, int z, int e) {
    switch (e) {
        case 0: return {x, y, z, 0};
        case 1: return {x + 1, y, z, 1};
        case 2: return {x, y + 1, z, 0};
        case 3: return {x, y, z, 1};
        case 4: return {x, y, z + 1, 0};
        case 5: return {x + 1, y, z + 1, 1};
        case 6: return {x, y + 1, z + 1, 0};
        case 7: return {x, y, z + 1, 1};
        case 8: return {x, y, z, 2};
        case 9: return {x + 1, y, z, 2};
        case 10: return {x + 1, y + 1, z, 2};
        case 11: return {x, y + 1, z, 2};
    }
    return {0, 0, 0, 0};
}

}  // namespace

TriMesh marching_cubes(const SdfGrid& grid, double isolevel) {
    require(grid.resolution >= 2, "marching_cubes: invalid grid");
    const int res = grid.resolution;
    TriMesh mesh;
    std::unordered_map<uint64_t, int> edge_vertex;

    auto vertex_on_edge = [&](const EdgeRef& er) -> int {
        uint64_t node = (uint64_t(er.x) * res + er.y) * res + er.z;
        uint64_t key = node * 3 + er.axis;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        int bx = er.x + (er.axis == 0 ? 1 : 0);
        int by = er.y + (er.axis == 1 ? 1 : 0);
        int bz = er.z + (er.axis == 2 ? 1 : 0);
        double va = grid.at(er.x, er.y, er.z);
        double vb = grid.at(bx, by, bz);
        double t = (vb == va) ? 0.5 : (isolevel - va) / (vb - va);
        t = std::clamp(t, 0.0, 1.0);
        Vec3 pa = grid.node_position(er.x, er.y, er.z);
        Vec3 pb = grid.node_position(bx, by, bz);
        int idx = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(pa + (pb - pa) * t);
        edge_vertex.emplace(key, idx);
        return idx;
    };

    static const int corner_off[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                         {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

    for (int x = 0; x < res - 1; x++) {
        for (int y = 0; y < res - 1; y++) {
            for (int z = 0; z < res - 1; z++) {
                double val[8];
                int cube = 0;
                for (int c = 0; c < 8; c++) {
                    val[c] = grid.at(x + corner_off[c][0], y + corner_off[c][1],
                                     z + corner_off[c][2]);
                    if (val[c] < isolevel) cube |= 1 << c;
                }
                if (kEdgeTable[cube] == 0) continue;
                const int* tri = kTriTable[cube];
                for (int i = 0; tri[i] != -1; i += 3) {
                    int a = vertex_on_edge(cell_edge(x, y, z, tri[i]));
                    int b = vertex_on_edge(cell_edge(x, y, z, tri[i + 1]));
                    int c = vertex_on_edge(cell_edge(x, y, z, tri[i + 2]));
                    if (a == b || b == c || a == c) continue;  // collapsed sliver
                    mesh.triangles.push_back({a, b, c});
                }
            }
        }
    }
    return mesh;
}

// ---- bounds ----

Aabb aabb_of(const std::vector<Vec3>& points) {
    require(!points.empty(), "empty geometry");
    Aabb box{points[0], points[0]};
    for (const auto& p : points) {
        box.min = cwise_min(box.min, p);
        box.max = cwise_max(box.max, p);
    }
    return box;
}

Aabb aabb_of(const PointCloud& cloud) { return aabb_of(cloud.positions); }

Aabb aabb_of(const TriMesh& mesh) { return aabb_of(mesh.vertices); }

Aabb world_aabb(const PosedShape& shape) {
    auto m = shape.rotation.to_matrix();
    double s = shape.scale;
    const Vec3& t = shape.translation;
    switch (shape.primitive.kind) {
        case PrimitiveKind::sphere: {
            double r = s * shape.primitive.params[0];
            return {{t.x - r, t.y - r, t.z - r}, {t.x + r, t.y + r, t.z + r}};
        }
        case PrimitiveKind::box: {
            Vec3 h{shape.primitive.params[0], shape.primitive.params[1],
                   shape.primitive.params[2]};
            Vec3 e;
            for (int i = 0; i < 3; i++)
                e[i] = s * (std::abs(m[i][0]) * h.x + std::abs(m[i][1]) * h.y +
                            std::abs(m[i][2]) * h.z);
            return {t - e, t + e};
        }
        case PrimitiveKind::cylinder: {
            double r = s * shape.primitive.params[0];
            double hh = s * shape.primitive.params[1];
            Vec3 axis = shape.rotation.rotate({0, 0, 1});
            Vec3 c0 = t - axis * hh, c1 = t + axis * hh;
            Vec3 e;
            for (int i = 0; i < 3; i++)
                e[i] = r * std::sqrt(std::max(0.0, 1.0 - axis[i] * axis[i]));
            return {cwise_min(c0, c1) - e, cwise_max(c0, c1) + e};
        }
    }
    fail("world_aabb: bad primitive");
}

double volume_iou(const Aabb& a, const Aabb& b) {
    require(a.valid() && b.valid(), "volume_iou: invalid box");
    Vec3 lo = cwise_max(a.min, b.min);
    Vec3 hi = cwise_min(a.max, b.max);
    double inter = std::max(0.0, hi.x - lo.x) * std::max(0.0, hi.y - lo.y) *
                   std::max(0.0, hi.z - lo.z);
    double uni = a.volume() + b.volume() - inter;
    if (uni <= 0) return 0.0;
    return inter / uni;
}

// ---- serialization ----

void append_obj(const TriMesh& mesh, std::string& out) {
    char line[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(line, sizeof(line), "v %.6f %.6f %.6f\n", v.x, v.y, v.z);
        out += line;
    }
    for (const auto& t : mesh.triangles) {
        std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
        out += line;
    }
}

void write_obj(const TriMesh& mesh, const std::string& path) {
    std::string text;
    append_obj(mesh, text);
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f << text;
}

TriMesh read_obj(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open: " + path);
    TriMesh mesh;
    std::string tag;
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("v ", 0) == 0) {
            Vec3 v;
            if (std::sscanf(line.c_str(), "v %lf %lf %lf", &v.x, &v.y, &v.z) == 3)
                mesh.vertices.push_back(v);
        } else if (line.rfind("f ", 0) == 0) {
            std::vector<int> idx;
            const char* p = line.c_str() + 2;
            while (*p) {
                while (*p == ' ') p++;
                if (!*p) break;
                int v = std::atoi(p);
                if (v != 0) idx.push_back(v > 0 ? v - 1 : static_cast<int>(mesh.vertices.size()) + v);
                while (*p && *p != ' ') p++;
            }
            for (size_t i = 2; i < idx.size(); i++)
                mesh.triangles.push_back({idx[0], idx[i - 1], idx[i]});
        }
    }
    mesh.validate();
    return mesh;
}

void write_point_cloud(const PointCloud& cloud, const std::string& path_prefix) {
    std::ofstream blob(path_prefix + ".f32", std::ios::binary);
    require(blob.good(), "cannot open for write: " + path_prefix + ".f32");
    std::vector<float> row(6);
    for (size_t i = 0; i < cloud.size(); i++) {
        row[0] = float(cloud.positions[i].x);
        row[1] = float(cloud.positions[i].y);
        row[2] = float(cloud.positions[i].z);
        row[3] = float(cloud.normals[i].x);
        row[4] = float(cloud.normals[i].y);
        row[5] = float(cloud.normals[i].z);
        blob.write(reinterpret_cast<const char*>(row.data()), 6 * sizeof(float));
    }
    nlohmann::json manifest = {
        {"count", cloud.size()},
        {"fields", {"px", "py", "pz", "nx", "ny", "nz"}},
        {"dtype", "f32"},
        {"byte_order", "little"},
    };
    std::ofstream mf(path_prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

PointCloud read_point_cloud(const std::string& path_prefix) {
    std::ifstream mf(path_prefix + ".json");
    require(mf.good(), "cannot open: " + path_prefix + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    size_t count = manifest.at("count").get<size_t>();
    std::ifstream blob(path_prefix + ".f32", std::ios::binary);
    require(blob.good(), "cannot open: " + path_prefix + ".f32");
    PointCloud cloud;
    cloud.positions.resize(count);
    cloud.normals.resize(count);
    std::vector<float> row(6);
    for (size_t i = 0; i < count; i++) {
        blob.read(reinterpret_cast<char*>(row.data()), 6 * sizeof(float));
        require(blob.good(), "point cloud blob truncated: " + path_prefix);
        cloud.positions[i] = {row[0], row[1], row[2]};
        cloud.normals[i] = {row[3], row[4], row[5]};
    }
    return cloud;
}

}  // namespace miflow
