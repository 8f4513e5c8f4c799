#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "miflow/geometry.hpp"
#include "test_util.hpp"

using namespace miflow;

namespace {

PosedShape posed(Primitive prim, Quat q = Quat::identity(), Vec3 t = {0, 0, 0},
                 double scale = 1.0) {
    return PosedShape{std::move(prim), q, t, scale};
}

Vec3 numeric_sdf_gradient(const PosedShape& s, const Vec3& p, double h = 1e-6) {
    Vec3 g;
    for (int i = 0; i < 3; i++) {
        Vec3 pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        g[i] = (sdf(s, pp) - sdf(s, pm)) / (2 * h);
    }
    return g;
}

std::vector<PosedShape> random_shapes(Rng& rng, int n) {
    std::vector<PosedShape> out;
    for (int i = 0; i < n; i++) {
        Primitive prim;
        switch (rng.uniform_index(3)) {
            case 0: prim = Primitive::sphere(rng.uniform(0.1, 0.4)); break;
            case 1:
                prim = Primitive::box(rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4),
                                      rng.uniform(0.1, 0.4));
                break;
            default: prim = Primitive::cylinder(rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.4));
        }
        Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        Quat q = Quat::from_axis_angle(axis, rng.uniform(0, 2 * M_PI));
        Vec3 t{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
        out.push_back(posed(prim, q, t, rng.uniform(0.6, 1.3)));
    }
    return out;
}

}  // namespace

TEST_CASE("sdf of canonical primitives") {
    auto sph = posed(Primitive::sphere(0.5));
    CHECK(sdf(sph, {0, 0, 0}) == doctest::Approx(-0.5));
    CHECK(sdf(sph, {1, 0, 0}) == doctest::Approx(0.5));
    auto box = posed(Primitive::box(0.3, 0.2, 0.1));
    CHECK(sdf(box, {0.3, 0, 0}) == doctest::Approx(0.0));
    CHECK(sdf(box, {0.5, 0, 0}) == doctest::Approx(0.2));
    CHECK(sdf(box, {0, 0, 0}) == doctest::Approx(-0.1));
    auto cyl = posed(Primitive::cylinder(0.25, 0.4));
    CHECK(sdf(cyl, {0, 0, 0.6}) == doctest::Approx(0.2));
    CHECK(sdf(cyl, {0.5, 0, 0}) == doctest::Approx(0.25));
}

TEST_CASE("sdf is exact under rigid transform and uniform scale") {
    // rotating a sphere changes nothing; translation/scale shift the distance
    auto s = posed(Primitive::sphere(0.3), Quat::from_axis_angle({1, 2, 3}, 0.7), {0.2, -0.1, 0.3},
                   1.5);
    Vec3 p{0.9, 0.4, -0.2};
    double expect = norm(p - s.translation) - 1.5 * 0.3;
    CHECK(sdf(s, p) == doctest::Approx(expect).epsilon(1e-12));

    // box rotated 90 degrees about z swaps x/y extents
    auto b = posed(Primitive::box(0.4, 0.1, 0.2), Quat::from_axis_angle({0, 0, 1}, M_PI / 2));
    CHECK(sdf(b, {0.1, 0, 0}) == doctest::Approx(0.0));   // face now at x = 0.1
    CHECK(sdf(b, {0, 0.4, 0}) == doctest::Approx(0.0));   // face now at y = 0.4
}

TEST_CASE("sdf is 1-Lipschitz on random point pairs") {
    Rng rng(77);
    for (const auto& s : random_shapes(rng, 12)) {
        for (int i = 0; i < 200; i++) {
            Vec3 p{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            Vec3 q{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            CHECK(std::abs(sdf(s, p) - sdf(s, q)) <= norm(p - q) + 1e-12);
        }
    }
}

TEST_CASE("sample_surface lies on the surface with aligned unit normals") {
    Rng rng(101);
    for (const auto& s : random_shapes(rng, 9)) {
        Rng srng(rng.next_u64());
        auto cloud = sample_surface(s, 600, srng);
        REQUIRE(cloud.size() == 600);
        for (size_t i = 0; i < cloud.size(); i++) {
            CHECK(std::abs(sdf(s, cloud.positions[i])) < 1e-5);
            CHECK(norm(cloud.normals[i]) == doctest::Approx(1.0).epsilon(1e-4));
            Vec3 g = numeric_sdf_gradient(s, cloud.positions[i]);
            double gl = norm(g);
            if (gl > 1e-9) CHECK(dot(g / gl, cloud.normals[i]) > 0.999);
        }
    }
}

TEST_CASE("sample_surface determinism and sphere examples") {
    auto s = posed(Primitive::sphere(0.5));
    Rng r1(9), r2(9);
    auto a = sample_surface(s, 1024, r1);
    auto b = sample_surface(s, 1024, r2);
    for (size_t i = 0; i < a.size(); i++) {
        CHECK(a.positions[i].x == b.positions[i].x);
        CHECK(norm(a.positions[i]) == doctest::Approx(0.5).epsilon(1e-9));
    }
    // Monte-Carlo symmetry: centroid of many samples is near the center
    Rng r3(10);
    auto big = sample_surface(s, 100000, r3);
    Vec3 c{0, 0, 0};
    for (const auto& p : big.positions) c = c + p;
    c = c / double(big.size());
    CHECK(norm(c) < 0.02);
}

TEST_CASE("grid_sdf matches analytic values at nodes") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto s = posed(Primitive::sphere(0.5));
    auto grid = grid_sdf({s}, 64, bounds);
    double cell = 2.0 / 63.0;
    // node nearest the origin
    int mid = 31;
    double best = 1e9;
    for (int d = 0; d < 2; d++) {
        Vec3 p = grid.node_position(mid + d, mid + d, mid + d);
        best = std::min(best, std::abs(grid.at(mid + d, mid + d, mid + d) - (norm(p) - 0.5)));
    }
    CHECK(best < 1e-12);
    CHECK(std::abs(grid.at(mid, mid, mid) + 0.5) < cell * std::sqrt(3.0));

    // empty scene: bound-clamped large positive sentinel
    auto empty = grid_sdf({}, 4, bounds);
    for (double v : empty.values) CHECK(v >= 1e5);

    // union semantics: min of per-shape SDFs, checked at both sphere centers
    auto s1 = posed(Primitive::sphere(0.2), Quat::identity(), {-0.5, 0, 0});
    auto s2 = posed(Primitive::sphere(0.3), Quat::identity(), {0.55, 0, 0});
    auto g2 = grid_sdf({s1, s2}, 65, bounds);
    for (int ix = 0; ix < 65; ix++)
        for (int iy = 30; iy < 34; iy++)
            for (int iz = 30; iz < 34; iz++) {
                Vec3 p = g2.node_position(ix, iy, iz);
                double want = std::min(sdf(s1, p), sdf(s2, p));
                CHECK(g2.at(ix, iy, iz) == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("marching_cubes on an all-positive grid is empty") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto grid = grid_sdf({}, 8, bounds);
    auto mesh = marching_cubes(grid, 0.0);
    CHECK(mesh.vertices.empty());
    CHECK(mesh.triangles.empty());
}

TEST_CASE("marching_cubes sphere vertices sit on the analytic surface") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto s = posed(Primitive::sphere(0.5));
    auto grid = grid_sdf({s}, 96, bounds);
    auto mesh = marching_cubes(grid, 0.0);
    REQUIRE_FALSE(mesh.empty());
    mesh.validate();
    double cell_diag = std::sqrt(3.0) * 2.0 / 95.0;
    for (const auto& v : mesh.vertices) {
        CHECK(std::abs(norm(v) - 0.5) < cell_diag);
        CHECK(std::abs(testutil::trilinear(grid, v)) < 1e-6);
    }
    // determinism
    auto mesh2 = marching_cubes(grid, 0.0);
    REQUIRE(mesh2.vertices.size() == mesh.vertices.size());
    REQUIRE(mesh2.triangles.size() == mesh.triangles.size());
    for (size_t i = 0; i < mesh.vertices.size(); i++)
        CHECK(norm(mesh.vertices[i] - mesh2.vertices[i]) == 0.0);
}

TEST_CASE("marching_cubes meshes are watertight for interior shapes") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    Rng rng(55);
    for (const auto& s : random_shapes(rng, 6)) {
        auto grid = grid_sdf({s}, 48, bounds);
        auto mesh = marching_cubes(grid, 0.0);
        REQUIRE_FALSE(mesh.empty());
        std::unordered_map<uint64_t, int> edge_count;
        for (const auto& t : mesh.triangles)
            for (int e = 0; e < 3; e++) {
                int a = t[e], b = t[(e + 1) % 3];
                uint64_t key = (uint64_t(std::min(a, b)) << 32) | uint64_t(std::max(a, b));
                edge_count[key]++;
            }
        for (const auto& [k, c] : edge_count) CHECK(c == 2);
    }
}

TEST_CASE("marching_cubes box volume within 5% of analytic") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto b = posed(Primitive::box(0.35, 0.25, 0.22));
    auto grid = grid_sdf({b}, 96, bounds);
    auto mesh = marching_cubes(grid, 0.0);
    double vol = std::abs(testutil::mesh_signed_volume(mesh));
    double analytic = 8 * 0.35 * 0.25 * 0.22;
    CHECK(vol == doctest::Approx(analytic).epsilon(0.05));
}

TEST_CASE("aabb_of") {
    CHECK_THROWS_WITH_AS(aabb_of(std::vector<Vec3>{}), "empty geometry", std::runtime_error);
    auto box = aabb_of(std::vector<Vec3>{{0, 0, 0}, {1, 2, 3}});
    CHECK(box.min.x == 0);
    CHECK(box.max.z == 3);
    auto single = aabb_of(std::vector<Vec3>{{0.5, -0.25, 2}});
    CHECK(norm(single.min - single.max) == 0.0);

    Rng rng(4);
    auto s = posed(Primitive::sphere(0.5));
    auto cloud = sample_surface(s, 20000, rng);
    auto sb = aabb_of(cloud);
    for (int i = 0; i < 3; i++) {
        CHECK(sb.min[i] == doctest::Approx(-0.5).epsilon(0.02));
        CHECK(sb.max[i] == doctest::Approx(0.5).epsilon(0.02));
    }
}

TEST_CASE("world_aabb is exact and tight") {
    Rng rng(31);
    for (const auto& s : random_shapes(rng, 10)) {
        auto box = world_aabb(s);
        Rng srng(rng.next_u64());
        auto cloud = sample_surface(s, 30000, srng);
        auto sampled = aabb_of(cloud);
        CHECK(box.contains(sampled));
        for (int i = 0; i < 3; i++) {
            CHECK(std::abs(box.min[i] - sampled.min[i]) < 0.05);
            CHECK(std::abs(box.max[i] - sampled.max[i]) < 0.05);
        }
    }
}

TEST_CASE("volume_iou") {
    Aabb unit{{0, 0, 0}, {1, 1, 1}};
    CHECK(volume_iou(unit, unit) == doctest::Approx(1.0));
    Aabb far{{5, 5, 5}, {6, 6, 6}};
    CHECK(volume_iou(unit, far) == 0.0);
    Aabb shifted{{0.5, 0, 0}, {1.5, 1, 1}};
    CHECK(volume_iou(unit, shifted) == doctest::Approx(1.0 / 3.0));

    Rng rng(8);
    for (int i = 0; i < 100; i++) {
        Vec3 a0{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 a1 = a0 + Vec3{rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};
        Vec3 b0{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 b1 = b0 + Vec3{rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};
        Aabb a{a0, a1}, b{b0, b1};
        double ab = volume_iou(a, b), ba = volume_iou(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));  // symmetric
        if (ab == doctest::Approx(1.0).epsilon(1e-12)) {
            CHECK(norm(a.min - b.min) < 1e-9);
            CHECK(norm(a.max - b.max) < 1e-9);
        }
        CHECK(volume_iou(a, a) == doctest::Approx(1.0));
    }
    // zero-volume union
    Aabb degenerate{{0, 0, 0}, {0, 0, 0}};
    CHECK(volume_iou(degenerate, degenerate) == 0.0);
}

TEST_CASE("obj round trip") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto grid = grid_sdf({posed(Primitive::sphere(0.4))}, 24, bounds);
    auto mesh = marching_cubes(grid, 0.0);
    write_obj(mesh, "/tmp/miflow_test_mesh.obj");
    auto back = read_obj("/tmp/miflow_test_mesh.obj");
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.triangles.size() == mesh.triangles.size());
    for (size_t i = 0; i < mesh.vertices.size(); i++)
        CHECK(norm(back.vertices[i] - mesh.vertices[i]) < 1e-5);
    for (size_t i = 0; i < mesh.triangles.size(); i++)
        CHECK(back.triangles[i] == mesh.triangles[i]);
}

TEST_CASE("point cloud f32 round trip") {
    Rng rng(2);
    auto cloud = sample_surface(posed(Primitive::cylinder(0.3, 0.25)), 500, rng);
    write_point_cloud(cloud, "/tmp/miflow_test_cloud");
    auto back = read_point_cloud("/tmp/miflow_test_cloud");
    REQUIRE(back.size() == cloud.size());
    for (size_t i = 0; i < cloud.size(); i++) {
        CHECK(norm(back.positions[i] - cloud.positions[i]) < 1e-6);
        CHECK(norm(back.normals[i] - cloud.normals[i]) < 1e-6);
    }
}

TEST_CASE("mesh surface sampling covers the mesh") {
    Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
    auto s = posed(Primitive::sphere(0.5));
    auto mesh = marching_cubes(grid_sdf({s}, 64, bounds), 0.0);
    Rng rng(3);
    auto cloud = sample_mesh_surface(mesh, 5000, rng);
    REQUIRE(cloud.size() == 5000);
    for (const auto& p : cloud.positions) CHECK(std::abs(norm(p) - 0.5) < 0.01);
    CHECK_THROWS_WITH_AS(sample_mesh_surface(TriMesh{}, 10, rng), "empty geometry",
                         std::runtime_error);
}
