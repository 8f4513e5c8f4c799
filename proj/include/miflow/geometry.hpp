#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "miflow/common.hpp"

namespace miflow {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

// unit quaternion (w, x, y, z)
struct Quat {
    double w = 1, x = 0, y = 0, z = 0;

    static Quat identity() { return {}; }
    static Quat from_axis_angle(const Vec3& axis, double angle);

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat conjugate() const { return {w, -x, -y, -z}; }
    Vec3 rotate(const Vec3& v) const;
    std::array<std::array<double, 3>, 3> to_matrix() const;
};

enum class PrimitiveKind { sphere, box, cylinder };

std::string to_string(PrimitiveKind k);
PrimitiveKind primitive_kind_from_string(const std::string& s);

// canonical primitive, centered at the origin; cylinder axis is +z
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    // sphere: {radius}; box: {hx, hy, hz}; cylinder: {radius, half_height}
    std::vector<double> params;

    static Primitive sphere(double radius) { return {PrimitiveKind::sphere, {radius}}; }
    static Primitive box(double hx, double hy, double hz) {
        return {PrimitiveKind::box, {hx, hy, hz}};
    }
    static Primitive cylinder(double radius, double half_height) {
        return {PrimitiveKind::cylinder, {radius, half_height}};
    }

    void validate() const;
    double surface_area() const;
};

// rigid pose + uniform scale applied to a canonical primitive
struct PosedShape {
    Primitive primitive;
    Quat rotation;
    Vec3 translation;
    double scale = 1.0;

    void validate() const;
};

struct Aabb {
    Vec3 min, max;

    bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
    Vec3 extent() const { return max - min; }
    double volume() const {
        Vec3 e = extent();
        return e.x * e.y * e.z;
    }
    bool contains(const Aabb& inner) const;
    bool disjoint(const Aabb& other) const;
    Aabb merged(const Aabb& other) const { return {cwise_min(min, other.min), cwise_max(max, other.max)}; }
};

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    bool empty() const { return triangles.empty(); }
    void validate() const;
};

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;

    size_t size() const { return positions.size(); }
};

struct SdfGrid {
    int resolution = 0;  // nodes per axis
    Aabb bounds;
    std::vector<double> values;  // index (ix*res + iy)*res + iz

    double& at(int ix, int iy, int iz) {
        return values[(size_t(ix) * resolution + iy) * resolution + iz];
    }
    double at(int ix, int iy, int iz) const {
        return values[(size_t(ix) * resolution + iy) * resolution + iz];
    }
    Vec3 node_position(int ix, int iy, int iz) const;
};

// signed distance written into grid cells that no shape reaches
constexpr double kEmptySdf = 1e6;

// ---- signed distance ----
double sdf(const Primitive& prim, const Vec3& p);
double sdf(const PosedShape& shape, const Vec3& p);

// ---- sampling ----
PointCloud sample_surface(const PosedShape& shape, int count, Rng& rng);
PointCloud sample_mesh_surface(const TriMesh& mesh, int count, Rng& rng);

// ---- grids and meshing ----
SdfGrid grid_sdf(const std::vector<PosedShape>& shapes, int resolution, const Aabb& bounds);
TriMesh marching_cubes(const SdfGrid& grid, double isolevel);

// ---- bounds ----
Aabb aabb_of(const std::vector<Vec3>& points);
Aabb aabb_of(const PointCloud& cloud);
Aabb aabb_of(const TriMesh& mesh);
Aabb world_aabb(const PosedShape& shape);  // exact bounds of the posed primitive
double volume_iou(const Aabb& a, const Aabb& b);

// ---- serialization ----
void write_obj(const TriMesh& mesh, const std::string& path);
void append_obj(const TriMesh& mesh, std::string& out);  // textual form, shared by writers
TriMesh read_obj(const std::string& path);
void write_point_cloud(const PointCloud& cloud, const std::string& path_prefix);  // .f32 + .json
PointCloud read_point_cloud(const std::string& path_prefix);

}  // namespace miflow
