#pragma once

#include <limits>

#include "miflow/geometry.hpp"

namespace miflow {

constexpr int kMaxInstances = 7;

// a posed-primitive scene in the shared [-1,1]^3 frame; ground truth for both
// data generation and evaluation
struct SceneSpec {
    std::vector<PosedShape> instances;
    uint64_t seed = 0;

    int count() const { return static_cast<int>(instances.size()); }
    void validate() const;
};

struct SceneGenConfig {
    int n_min = 2;
    int n_max = 3;
    std::vector<PrimitiveKind> kinds = {PrimitiveKind::sphere, PrimitiveKind::box,
                                        PrimitiveKind::cylinder};
    double size_min = 0.12;   // canonical primitive parameter range
    double size_max = 0.3;
    double scale_min = 0.8;
    double scale_max = 1.25;
    bool yaw_only = true;     // rotation restricted to the up axis
    double gap = 0.01;        // required clearance between instance AABBs
    double place_extent = 0.62;
    int place_budget = 1000;  // total rejection-sampling tries
};

struct Camera {
    Vec3 position;
    Vec3 look_at;
    Vec3 up{0, 0, 1};
    double fov_y = 45.0 * M_PI / 180.0;  // radians
    int width = 64;
    int height = 64;

    void validate() const;
};

struct RenderConfig {
    int width = 64;
    int height = 64;
    double fov_deg = 45.0;
    double distance = 3.0;
    double elevation_deg = 34.0;
    double azimuth_deg = 45.0;
    double azimuth_jitter_deg = 12.0;
};

// planar float buffers; instance_id 0 is background, depth is +inf off-instance
struct RenderBuffers {
    int width = 0, height = 0;
    int instance_count = 0;
    std::vector<float> rgb;       // [3][h][w], values in [0,1]
    std::vector<int> instance_id; // [h][w]
    std::vector<float> depth;     // [h][w]

    float* channel(int c) { return rgb.data() + size_t(c) * height * width; }
    const float* channel(int c) const { return rgb.data() + size_t(c) * height * width; }
};

// 7-channel conditioning image: local RGB, instance mask, global RGB
struct CompositeCondition {
    int height = 0, width = 0;
    std::vector<float> data;  // [7][h][w]

    float* channel(int c) { return data.data() + size_t(c) * height * width; }
    const float* channel(int c) const { return data.data() + size_t(c) * height * width; }
    void validate() const;
};

SceneSpec generate_scene(Rng& rng, const SceneGenConfig& config);

// elevated three-quarter view aimed at the origin
Camera make_camera(const RenderConfig& config, double azimuth_deg);
double sample_azimuth(const RenderConfig& config, Rng& rng);

RenderBuffers rasterize(const SceneSpec& scene, const Camera& camera);

CompositeCondition build_condition(const RenderBuffers& buffers, int instance_index,
                                   int condition_resolution);

// ---- serialization ----
void write_scene_json(const SceneSpec& scene, const std::string& path);
SceneSpec read_scene_json(const std::string& path);
std::string scene_json_text(const SceneSpec& scene);

void write_ppm(const RenderBuffers& buffers, const std::string& path);
void write_condition(const CompositeCondition& cond, const std::string& path_prefix);
CompositeCondition read_condition(const std::string& path_prefix);

}  // namespace miflow
