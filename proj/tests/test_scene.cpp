#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "miflow/scene.hpp"

using namespace miflow;

namespace {

Camera axis_camera(Vec3 pos = {3, 0, 0}, int res = 65) {
    Camera cam;
    cam.position = pos;
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.fov_y = 45.0 * M_PI / 180.0;
    cam.width = res;
    cam.height = res;
    return cam;
}

SceneSpec sphere_scene(std::vector<std::pair<Vec3, double>> spheres) {
    SceneSpec scene;
    for (auto& [c, r] : spheres)
        scene.instances.push_back({Primitive::sphere(r), Quat::identity(), c, 1.0});
    return scene;
}

size_t mask_area(const RenderBuffers& buf, int id) {
    size_t n = 0;
    for (int v : buf.instance_id)
        if (v == id) n++;
    return n;
}

}  // namespace

TEST_CASE("generate_scene is deterministic and honors the invariants") {
    SceneGenConfig cfg;
    cfg.n_min = 3;
    cfg.n_max = 3;
    Rng r1(123), r2(123);
    auto a = generate_scene(r1, cfg);
    auto b = generate_scene(r2, cfg);
    REQUIRE(a.count() == 3);
    REQUIRE(b.count() == 3);
    CHECK(scene_json_text(a) == scene_json_text(b));

    Aabb world{{-1, -1, -1}, {1, 1, 1}};
    for (int i = 0; i < a.count(); i++) {
        Aabb bi = world_aabb(a.instances[i]);
        CHECK(world.contains(bi));
        CHECK(bi.min.z == doctest::Approx(-1.0).epsilon(1e-12));  // rests on the floor
        for (int j = i + 1; j < a.count(); j++)
            CHECK(volume_iou(bi, world_aabb(a.instances[j])) == 0.0);
    }
}

TEST_CASE("generate_scene draws varying counts in range") {
    SceneGenConfig cfg;
    cfg.n_min = 1;
    cfg.n_max = 3;
    Rng rng(7);
    std::array<int, 4> counts{};
    for (int i = 0; i < 60; i++) {
        auto s = generate_scene(rng, cfg);
        REQUIRE(s.count() >= 1);
        REQUIRE(s.count() <= 3);
        counts[s.count()]++;
    }
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
    CHECK(counts[3] > 0);
}

TEST_CASE("generate_scene fails clearly when placement is impossible") {
    SceneGenConfig cfg;
    cfg.n_min = 7;
    cfg.n_max = 7;
    cfg.size_min = 0.55;  // shapes too big to ever fit seven disjoint copies
    cfg.size_max = 0.6;
    cfg.place_budget = 200;
    Rng rng(1);
    CHECK_THROWS_WITH_AS(generate_scene(rng, cfg), "placement failed", std::runtime_error);
}

TEST_CASE("rasterize empty scene") {
    SceneSpec scene;  // not validated; renderer handles zero instances
    auto buf = rasterize(scene, axis_camera());
    for (int id : buf.instance_id) CHECK(id == 0);
    for (float d : buf.depth) CHECK(std::isinf(d));
    auto buf2 = rasterize(scene, axis_camera());
    CHECK(buf.rgb == buf2.rgb);
}

TEST_CASE("central ray hits a sphere on the optical axis") {
    auto scene = sphere_scene({{{0, 0, 0}, 0.4}});
    auto cam = axis_camera({3, 0, 0}, 65);
    auto buf = rasterize(scene, cam);
    size_t center = size_t(32) * 65 + 32;
    CHECK(buf.instance_id[center] == 1);
    // analytic nearest-hit distance along the axis
    CHECK(buf.depth[center] == doctest::Approx(3.0 - 0.4).epsilon(1e-4));
}

TEST_CASE("depth test picks the nearer instance") {
    // A at x=1 (closer to the camera at x=3), B behind it at x=-0.5, overlapping in image
    auto scene = sphere_scene({{{1, 0, 0}, 0.3}, {{-0.5, 0, 0}, 0.45}});
    auto cam = axis_camera({3, 0, 0}, 65);
    auto buf = rasterize(scene, cam);
    size_t center = size_t(32) * 65 + 32;
    CHECK(buf.instance_id[center] == 1);

    // swap order: nearest wins regardless of list position
    auto swapped = sphere_scene({{{-0.5, 0, 0}, 0.45}, {{1, 0, 0}, 0.3}});
    auto buf2 = rasterize(swapped, cam);
    CHECK(buf2.instance_id[center] == 2);
}

TEST_CASE("rendering determinism is bit exact") {
    SceneGenConfig cfg;
    Rng rng(42);
    auto scene = generate_scene(rng, cfg);
    RenderConfig rc;
    auto cam = make_camera(rc, 40.0);
    auto a = rasterize(scene, cam);
    auto b = rasterize(scene, cam);
    CHECK(a.rgb == b.rgb);
    CHECK(a.instance_id == b.instance_id);
    CHECK(a.depth == b.depth);
}

TEST_CASE("build_condition: channels, mask consistency, exclusivity") {
    SceneGenConfig cfg;
    cfg.n_min = 3;
    cfg.n_max = 3;
    Rng rng(5);
    auto scene = generate_scene(rng, cfg);
    RenderConfig rc;
    auto buf = rasterize(scene, make_camera(rc, 45.0));

    std::vector<CompositeCondition> conds;
    for (int i = 1; i <= 3; i++) {
        auto c = build_condition(buf, i, 64);
        CHECK(c.data.size() == size_t(7) * 64 * 64);
        c.validate();  // binary mask, local RGB zero off-mask
        conds.push_back(std::move(c));
    }
    // mask_i = 1 exactly where instance_id == i (render and condition at equal res)
    for (int i = 0; i < 3; i++)
        for (size_t p = 0; p < buf.instance_id.size(); p++)
            CHECK(conds[i].channel(3)[p] == (buf.instance_id[p] == i + 1 ? 1.f : 0.f));
    // masks are mutually exclusive
    for (size_t p = 0; p < buf.instance_id.size(); p++) {
        float sum = 0;
        for (int i = 0; i < 3; i++) sum += conds[i].channel(3)[p];
        CHECK(sum <= 1.f);
    }
    // global channels replicate the scene image
    for (int c = 0; c < 3; c++)
        for (size_t p = 0; p < buf.instance_id.size(); p++)
            CHECK(conds[0].channel(4 + c)[p] == buf.channel(c)[p]);

    CHECK_THROWS_AS(build_condition(buf, 0, 64), std::runtime_error);
    CHECK_THROWS_AS(build_condition(buf, 4, 64), std::runtime_error);
}

TEST_CASE("occluded instances expose only partial masks") {
    // far sphere partially hidden behind a near box
    SceneSpec pair;
    pair.instances.push_back(
        {Primitive::box(0.25, 0.3, 0.3), Quat::identity(), {0.8, 0, -0.6}, 1.0});
    pair.instances.push_back({Primitive::sphere(0.35), Quat::identity(), {-0.4, 0, -0.55}, 1.0});
    auto cam = axis_camera({3, 0.0, 0.4}, 96);
    auto both = rasterize(pair, cam);

    SceneSpec solo;
    solo.instances.push_back(pair.instances[1]);
    auto alone = rasterize(solo, cam);

    size_t occluded_area = mask_area(both, 2);
    size_t full_area = mask_area(alone, 1);
    REQUIRE(occluded_area > 0);  // still partially visible
    CHECK(occluded_area < full_area);
}

TEST_CASE("absent instance yields an all-zero mask and local image") {
    // instance 2 entirely hidden behind instance 1 from this viewpoint
    auto scene = sphere_scene({{{1.0, 0, 0}, 0.5}, {{-0.8, 0, 0}, 0.1}});
    auto cam = axis_camera({3, 0, 0}, 64);
    auto buf = rasterize(scene, cam);
    REQUIRE(mask_area(buf, 2) == 0);
    auto cond = build_condition(buf, 2, 64);
    for (int c = 0; c < 4; c++)
        for (size_t p = 0; p < size_t(64) * 64; p++) CHECK(cond.channel(c)[p] == 0.f);
}

TEST_CASE("condition downscaling keeps the mask binary") {
    auto scene = sphere_scene({{{0, 0, 0}, 0.5}});
    auto buf = rasterize(scene, axis_camera({3, 0, 0}, 128));
    auto cond = build_condition(buf, 1, 64);
    CHECK(cond.height == 64);
    cond.validate();
    float area = 0;
    for (size_t p = 0; p < size_t(64) * 64; p++) area += cond.channel(3)[p];
    CHECK(area > 0);
}

TEST_CASE("scene json round trip") {
    SceneGenConfig cfg;
    Rng rng(99);
    auto scene = generate_scene(rng, cfg);
    write_scene_json(scene, "/tmp/miflow_scene.json");
    auto back = read_scene_json("/tmp/miflow_scene.json");
    CHECK(scene_json_text(back) == scene_json_text(scene));
}

TEST_CASE("condition tensor round trip") {
    auto scene = sphere_scene({{{0, 0, 0}, 0.5}});
    auto buf = rasterize(scene, axis_camera());
    auto cond = build_condition(buf, 1, 65);
    write_condition(cond, "/tmp/miflow_cond");
    auto back = read_condition("/tmp/miflow_cond");
    CHECK(back.height == cond.height);
    CHECK(back.data == cond.data);
}

TEST_CASE("ppm export") {
    auto scene = sphere_scene({{{0, 0, 0}, 0.5}});
    auto buf = rasterize(scene, axis_camera());
    write_ppm(buf, "/tmp/miflow_render.ppm");
    std::ifstream f("/tmp/miflow_render.ppm", std::ios::binary);
    std::string header;
    std::getline(f, header);
    CHECK(header == "P6");
}
