#pragma once

#include <functional>

#include "miflow/autograd.hpp"
#include "miflow/geometry.hpp"

namespace miflow::testutil {

// Central finite differences against analytic gradients. `build` must rebuild
// the loss graph from the current leaf values and be free of hidden randomness.
inline double fd_max_rel_err(const std::vector<Var<double>>& leaves,
                             const std::function<Var<double>()>& build, int samples_per_leaf,
                             double h, Rng& rng) {
    for (auto& l : leaves) l->grad = Tensor<double>();
    auto loss = build();
    backward(loss);
    double worst = 0;
    for (auto& leaf : leaves) {
        require(!leaf->grad.empty(), "fd check: leaf received no gradient");
        int64_t n = leaf->value.size();
        int take = std::min<int64_t>(samples_per_leaf, n);
        for (int s = 0; s < take; s++) {
            int64_t i = rng.uniform_index(n);
            double saved = leaf->value[i];
            leaf->value[i] = saved + h;
            double lp = build()->value[0];
            leaf->value[i] = saved - h;
            double lm = build()->value[0];
            leaf->value[i] = saved;
            double fd = (lp - lm) / (2 * h);
            double g = leaf->grad[i];
            double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
            worst = std::max(worst, std::abs(fd - g) / denom);
        }
    }
    return worst;
}

inline double trilinear(const SdfGrid& g, const Vec3& p) {
    Vec3 e = g.bounds.extent();
    double fx = (p.x - g.bounds.min.x) / e.x * (g.resolution - 1);
    double fy = (p.y - g.bounds.min.y) / e.y * (g.resolution - 1);
    double fz = (p.z - g.bounds.min.z) / e.z * (g.resolution - 1);
    int x = std::clamp(int(fx), 0, g.resolution - 2);
    int y = std::clamp(int(fy), 0, g.resolution - 2);
    int z = std::clamp(int(fz), 0, g.resolution - 2);
    double tx = fx - x, ty = fy - y, tz = fz - z;
    double v = 0;
    for (int dx = 0; dx < 2; dx++)
        for (int dy = 0; dy < 2; dy++)
            for (int dz = 0; dz < 2; dz++) {
                double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                v += w * g.at(x + dx, y + dy, z + dz);
            }
    return v;
}

inline double mesh_signed_volume(const TriMesh& m) {
    double v = 0;
    for (const auto& t : m.triangles) {
        const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
        v += dot(a, cross(b, c)) / 6.0;
    }
    return v;
}

}  // namespace miflow::testutil
