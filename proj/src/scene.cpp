#include "miflow/scene.hpp"

#include <fstream>

#include "json.hpp"

namespace miflow {

namespace {

constexpr double kSceneBound = 1.0;
const Vec3 kLightDir = normalized(Vec3{-0.35, -0.5, 0.85});
constexpr float kAmbient = 0.25f;

// per-instance albedos, cycled by index
const Vec3 kPalette[8] = {
    {0.85, 0.30, 0.25}, {0.25, 0.55, 0.85}, {0.35, 0.75, 0.35}, {0.90, 0.75, 0.25},
    {0.70, 0.40, 0.80}, {0.90, 0.55, 0.30}, {0.35, 0.75, 0.75}, {0.80, 0.45, 0.55},
};
const Vec3 kFloorAlbedo{0.46, 0.44, 0.42};
const Vec3 kSkyColor{0.72, 0.78, 0.85};

}  // namespace

void SceneSpec::validate() const {
    require(count() >= 1 && count() <= kMaxInstances, "scene: instance count out of range");
    Aabb world{{-kSceneBound, -kSceneBound, -kSceneBound},
               {kSceneBound, kSceneBound, kSceneBound}};
    std::vector<Aabb> boxes;
    for (const auto& s : instances) {
        s.validate();
        Aabb b = world_aabb(s);
        require(world.contains(Aabb{b.min - Vec3{-1e-9, -1e-9, -1e-9}, b.max}),
                "scene: instance AABB escapes the scene box");
        boxes.push_back(b);
    }
    for (size_t i = 0; i < boxes.size(); i++)
        for (size_t j = i + 1; j < boxes.size(); j++)
            require(boxes[i].disjoint(boxes[j]), "scene: instance AABBs overlap");
}

void Camera::validate() const {
    require(norm(position - look_at) > 0, "camera: position equals look-at");
    require(fov_y > 0 && fov_y < M_PI, "camera: field of view out of range");
    require(width > 0 && height > 0, "camera: bad image size");
}

void CompositeCondition::validate() const {
    require(data.size() == size_t(7) * height * width, "condition: expected 7 channels");
    const float* mask = channel(3);
    for (size_t i = 0; i < size_t(height) * width; i++) {
        require(mask[i] == 0.0f || mask[i] == 1.0f, "condition: mask not binary");
        if (mask[i] == 0.0f)
            for (int c = 0; c < 3; c++)
                require(channel(c)[i] == 0.0f, "condition: local RGB outside mask");
    }
}

// ---- scene generation ----

SceneSpec generate_scene(Rng& rng, const SceneGenConfig& config) {
    require(config.n_min >= 1 && config.n_max <= kMaxInstances && config.n_min <= config.n_max,
            "scene config: instance range out of [1, " + std::to_string(kMaxInstances) + "]");
    require(!config.kinds.empty(), "scene config: no primitive kinds");
    SceneSpec scene;
    scene.seed = rng.next_u64();
    Rng local(scene.seed);
    int n = config.n_min + int(local.uniform_index(config.n_max - config.n_min + 1));

    std::vector<Aabb> placed;
    int tries = 0;
    while (scene.count() < n) {
        if (++tries > config.place_budget) fail("placement failed");
        PosedShape shape;
        shape.primitive.kind = config.kinds[local.uniform_index(config.kinds.size())];
        int nparams = shape.primitive.kind == PrimitiveKind::sphere
                          ? 1
                          : (shape.primitive.kind == PrimitiveKind::box ? 3 : 2);
        for (int i = 0; i < nparams; i++)
            shape.primitive.params.push_back(local.uniform(config.size_min, config.size_max));
        if (config.yaw_only) {
            shape.rotation = Quat::from_axis_angle({0, 0, 1}, local.uniform(0, 2 * M_PI));
        } else {
            Vec3 axis{local.normal(), local.normal(), local.normal()};
            shape.rotation = Quat::from_axis_angle(axis, local.uniform(0, 2 * M_PI));
        }
        shape.scale = local.uniform(config.scale_min, config.scale_max);
        shape.translation = {local.uniform(-config.place_extent, config.place_extent),
                             local.uniform(-config.place_extent, config.place_extent), 0};
        // drop onto the floor plane of the scene box
        Aabb centered = world_aabb(shape);
        shape.translation.z = -kSceneBound - (centered.min.z - shape.translation.z);
        Aabb box = world_aabb(shape);

        Aabb world{{-kSceneBound, -kSceneBound, -kSceneBound},
                   {kSceneBound, kSceneBound, kSceneBound}};
        if (!world.contains(box)) continue;
        bool clear = true;
        for (const auto& other : placed) {
            Aabb padded{other.min - Vec3{config.gap, config.gap, config.gap},
                        other.max + Vec3{config.gap, config.gap, config.gap}};
            if (!padded.disjoint(box)) {
                clear = false;
                break;
            }
        }
        if (!clear) continue;
        placed.push_back(box);
        scene.instances.push_back(std::move(shape));
    }
    scene.validate();
    return scene;
}

// ---- camera ----

Camera make_camera(const RenderConfig& config, double azimuth_deg) {
    double az = azimuth_deg * M_PI / 180.0;
    double el = config.elevation_deg * M_PI / 180.0;
    Camera cam;
    cam.position = Vec3{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)} *
                   config.distance;
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.fov_y = config.fov_deg * M_PI / 180.0;
    cam.width = config.width;
    cam.height = config.height;
    cam.validate();
    return cam;
}

double sample_azimuth(const RenderConfig& config, Rng& rng) {
    return config.azimuth_deg +
           rng.uniform(-config.azimuth_jitter_deg, config.azimuth_jitter_deg);
}

// ---- ray casting ----

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal_local;  // canonical frame
    bool ok = false;
};

constexpr double kRayEps = 1e-9;

Hit intersect_sphere(const Vec3& o, const Vec3& d, double r) {
    Hit h;
    double a = dot(d, d), b = 2 * dot(o, d), c = dot(o, o) - r * r;
    double disc = b * b - 4 * a * c;
    if (disc < 0) return h;
    double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= kRayEps) t = (-b + sq) / (2 * a);
    if (t <= kRayEps) return h;
    h.t = t;
    h.normal_local = normalized(o + d * t);
    h.ok = true;
    return h;
}

Hit intersect_box(const Vec3& o, const Vec3& d, const Vec3& half) {
    Hit h;
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    int axis_min = 0;
    for (int i = 0; i < 3; i++) {
        if (std::abs(d[i]) < 1e-14) {
            if (std::abs(o[i]) > half[i]) return h;
            continue;
        }
        double t0 = (-half[i] - o[i]) / d[i];
        double t1 = (half[i] - o[i]) / d[i];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis_min = i;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return h;
    }
    double t = tmin > kRayEps ? tmin : tmax;
    if (t <= kRayEps) return h;
    Vec3 p = o + d * t;
    Vec3 n{0, 0, 0};
    if (tmin > kRayEps) {
        n[axis_min] = p[axis_min] > 0 ? 1.0 : -1.0;
    } else {
        // started inside: normal from the exit face
        int best = 0;
        double ratio = 0;
        for (int i = 0; i < 3; i++) {
            double r = std::abs(p[i]) / half[i];
            if (r > ratio) {
                ratio = r;
                best = i;
            }
        }
        n[best] = p[best] > 0 ? 1.0 : -1.0;
    }
    h.t = t;
    h.normal_local = n;
    h.ok = true;
    return h;
}

Hit intersect_cylinder(const Vec3& o, const Vec3& d, double r, double hh) {
    Hit h;
    // side
    double a = d.x * d.x + d.y * d.y;
    if (a > 1e-14) {
        double b = 2 * (o.x * d.x + o.y * d.y);
        double c = o.x * o.x + o.y * o.y - r * r;
        double disc = b * b - 4 * a * c;
        if (disc >= 0) {
            double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                if (t <= kRayEps || t >= h.t) continue;
                double z = o.z + d.z * t;
                if (std::abs(z) <= hh) {
                    Vec3 p = o + d * t;
                    h.t = t;
                    h.normal_local = normalized({p.x, p.y, 0});
                    h.ok = true;
                }
            }
        }
    }
    // caps
    if (std::abs(d.z) > 1e-14) {
        for (double sgn : {1.0, -1.0}) {
            double t = (sgn * hh - o.z) / d.z;
            if (t <= kRayEps || t >= h.t) continue;
            Vec3 p = o + d * t;
            if (p.x * p.x + p.y * p.y <= r * r) {
                h.t = t;
                h.normal_local = {0, 0, sgn};
                h.ok = true;
            }
        }
    }
    return h;
}

Hit intersect_shape(const PosedShape& s, const Vec3& origin, const Vec3& dir) {
    Quat inv = s.rotation.conjugate();
    Vec3 o = inv.rotate(origin - s.translation) / s.scale;
    Vec3 d = inv.rotate(dir) / s.scale;
    switch (s.primitive.kind) {
        case PrimitiveKind::sphere: return intersect_sphere(o, d, s.primitive.params[0]);
        case PrimitiveKind::box:
            return intersect_box(
                o, d, {s.primitive.params[0], s.primitive.params[1], s.primitive.params[2]});
        case PrimitiveKind::cylinder:
            return intersect_cylinder(o, d, s.primitive.params[0], s.primitive.params[1]);
    }
    return {};
}

Vec3 shade(const Vec3& albedo, const Vec3& normal) {
    double diff = std::max(0.0, dot(normal, kLightDir));
    return albedo * (kAmbient + (1.0 - kAmbient) * diff);
}

}  // namespace

RenderBuffers rasterize(const SceneSpec& scene, const Camera& camera) {
    camera.validate();
    const int w = camera.width, h = camera.height;
    RenderBuffers buf;
    buf.width = w;
    buf.height = h;
    buf.instance_count = scene.count();
    buf.rgb.assign(size_t(3) * w * h, 0.f);
    buf.instance_id.assign(size_t(w) * h, 0);
    buf.depth.assign(size_t(w) * h, std::numeric_limits<float>::infinity());

    Vec3 fwd = normalized(camera.look_at - camera.position);
    Vec3 right = normalized(cross(fwd, camera.up));
    Vec3 vup = cross(right, fwd);
    double tan_half = std::tan(camera.fov_y / 2.0);
    double aspect = double(w) / double(h);

#pragma omp parallel for schedule(static)
    for (int py = 0; py < h; py++) {
        for (int px = 0; px < w; px++) {
            double sx = (2.0 * (px + 0.5) / w - 1.0) * tan_half * aspect;
            double sy = (1.0 - 2.0 * (py + 0.5) / h) * tan_half;
            Vec3 dir = normalized(fwd + right * sx + vup * sy);

            double best_t = std::numeric_limits<double>::infinity();
            int best_id = 0;
            Vec3 color = kSkyColor;
            Vec3 best_normal;
            for (int i = 0; i < scene.count(); i++) {
                Hit hit = intersect_shape(scene.instances[i], camera.position, dir);
                if (hit.ok && hit.t < best_t) {
                    best_t = hit.t;
                    best_id = i + 1;
                    best_normal = scene.instances[i].rotation.rotate(hit.normal_local);
                }
            }
            size_t pix = size_t(py) * w + px;
            if (best_id > 0) {
                color = shade(kPalette[(best_id - 1) % 8], normalized(best_normal));
                buf.instance_id[pix] = best_id;
                buf.depth[pix] = float(best_t);
            } else if (dir.z < -1e-9) {
                // floor plane of the scene box, shaded but never an instance
                double t = (-kSceneBound - camera.position.z) / dir.z;
                if (t > 0) color = shade(kFloorAlbedo, {0, 0, 1});
            }
            for (int c = 0; c < 3; c++)
                buf.channel(c)[pix] = float(std::clamp(color[c], 0.0, 1.0));
        }
    }
    return buf;
}

// ---- conditioning ----

CompositeCondition build_condition(const RenderBuffers& buffers, int instance_index,
                                   int condition_resolution) {
    require(instance_index >= 1 && instance_index <= buffers.instance_count,
            "build_condition: instance index out of range");
    const int w = buffers.width, h = buffers.height;
    require(w == h, "build_condition: expected square render");
    const int r = condition_resolution;
    require(r >= 1 && w % r == 0, "build_condition: render size not divisible by condition size");
    const int k = w / r;

    CompositeCondition cond;
    cond.height = r;
    cond.width = r;
    cond.data.assign(size_t(7) * r * r, 0.f);

    for (int y = 0; y < r; y++) {
        for (int x = 0; x < r; x++) {
            size_t out = size_t(y) * r + x;
            float avg[3] = {0, 0, 0};
            float mask_frac = 0;
            float local[3] = {0, 0, 0};
            for (int dy = 0; dy < k; dy++)
                for (int dx = 0; dx < k; dx++) {
                    size_t in = size_t(y * k + dy) * w + (x * k + dx);
                    bool on = buffers.instance_id[in] == instance_index;
                    mask_frac += on ? 1.f : 0.f;
                    for (int c = 0; c < 3; c++) {
                        float v = buffers.channel(c)[in];
                        avg[c] += v;
                        if (on) local[c] += v;
                    }
                }
            float inv = 1.f / float(k * k);
            float mask = mask_frac * inv >= 0.5f ? 1.f : 0.f;
            cond.channel(3)[out] = mask;
            for (int c = 0; c < 3; c++) {
                // local image averages only this instance's pixels, zeroed off-mask
                cond.channel(c)[out] = mask > 0 ? local[c] / std::max(mask_frac, 1.f) : 0.f;
                cond.channel(4 + c)[out] = avg[c] * inv;
            }
        }
    }
    return cond;
}

// ---- serialization ----

std::string scene_json_text(const SceneSpec& scene) {
    nlohmann::json j;
    j["seed"] = scene.seed;
    j["instances"] = nlohmann::json::array();
    for (const auto& s : scene.instances) {
        nlohmann::json inst;
        inst["kind"] = to_string(s.primitive.kind);
        inst["params"] = s.primitive.params;
        inst["rotation"] = {s.rotation.w, s.rotation.x, s.rotation.y, s.rotation.z};
        inst["translation"] = {s.translation.x, s.translation.y, s.translation.z};
        inst["scale"] = s.scale;
        j["instances"].push_back(inst);
    }
    return j.dump(2) + "\n";
}

void write_scene_json(const SceneSpec& scene, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f << scene_json_text(scene);
}

SceneSpec read_scene_json(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    SceneSpec scene;
    scene.seed = j.at("seed").get<uint64_t>();
    for (const auto& inst : j.at("instances")) {
        PosedShape s;
        s.primitive.kind = primitive_kind_from_string(inst.at("kind").get<std::string>());
        s.primitive.params = inst.at("params").get<std::vector<double>>();
        auto rot = inst.at("rotation").get<std::vector<double>>();
        require(rot.size() == 4, "scene json: bad rotation");
        s.rotation = {rot[0], rot[1], rot[2], rot[3]};
        auto tr = inst.at("translation").get<std::vector<double>>();
        require(tr.size() == 3, "scene json: bad translation");
        s.translation = {tr[0], tr[1], tr[2]};
        s.scale = inst.at("scale").get<double>();
        scene.instances.push_back(std::move(s));
    }
    scene.validate();
    return scene;
}

void write_ppm(const RenderBuffers& buffers, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f << "P6\n" << buffers.width << " " << buffers.height << "\n255\n";
    std::vector<unsigned char> row(size_t(buffers.width) * 3);
    for (int y = 0; y < buffers.height; y++) {
        for (int x = 0; x < buffers.width; x++)
            for (int c = 0; c < 3; c++) {
                float v = buffers.channel(c)[size_t(y) * buffers.width + x];
                row[size_t(x) * 3 + c] =
                    static_cast<unsigned char>(std::clamp(v, 0.f, 1.f) * 255.f + 0.5f);
            }
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

void write_condition(const CompositeCondition& cond, const std::string& path_prefix) {
    std::ofstream blob(path_prefix + ".f32", std::ios::binary);
    require(blob.good(), "cannot open for write: " + path_prefix + ".f32");
    blob.write(reinterpret_cast<const char*>(cond.data.data()),
               std::streamsize(cond.data.size() * sizeof(float)));
    nlohmann::json manifest = {
        {"height", cond.height}, {"width", cond.width},   {"channels", 7},
        {"layout", "chw"},       {"dtype", "f32"},        {"byte_order", "little"},
    };
    std::ofstream mf(path_prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

CompositeCondition read_condition(const std::string& path_prefix) {
    std::ifstream mf(path_prefix + ".json");
    require(mf.good(), "cannot open: " + path_prefix + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    CompositeCondition cond;
    cond.height = manifest.at("height").get<int>();
    cond.width = manifest.at("width").get<int>();
    require(manifest.at("channels").get<int>() == 7, "condition manifest: expected 7 channels");
    cond.data.resize(size_t(7) * cond.height * cond.width);
    std::ifstream blob(path_prefix + ".f32", std::ios::binary);
    require(blob.good(), "cannot open: " + path_prefix + ".f32");
    blob.read(reinterpret_cast<char*>(cond.data.data()),
              std::streamsize(cond.data.size() * sizeof(float)));
    require(blob.good(), "condition blob truncated: " + path_prefix);
    return cond;
}

}  // namespace miflow
