#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/scene_oracle.hpp"
#include "scene4d/tensor.hpp"

namespace scene4d {

struct CloudPoint {
    Vec3 position;
    Eigen::Vector3f color;
    int frame = 0;           // source frame (0-based)
    std::size_t pixel = 0;   // source pixel index y*W + x

    friend bool operator==(const CloudPoint& a, const CloudPoint& b) {
        return a.position == b.position && a.color == b.color && a.frame == b.frame && a.pixel == b.pixel;
    }
};

using PointList = std::vector<CloudPoint>;

// One shared static cloud plus per-frame dynamic points.
struct FramePointClouds {
    int T = 0;
    PointList static_points;
    std::vector<PointList> dynamic_points;
};

// 1 exactly where the frame's static mask is set and no earlier frame covered the pixel.
inline Mask new_static_mask(const Mask& static_mask, const Mask& union_prev) {
    require_same_shape(static_mask, union_prev, "new_static_mask");
    Mask out(static_mask.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (static_mask[i] == 1.0f && union_prev[i] == 0.0f) ? 1.0f : 0.0f;
    return out;
}

inline CloudPoint point_at(const DynamicSceneBundle& b, int t, std::size_t pixel) {
    const std::size_t plane = b.H * b.W;
    const auto& pm = b.pointmaps[t];
    const auto& fr = b.frames[t];
    CloudPoint p;
    p.position = Vec3(pm[pixel], pm[plane + pixel], pm[2 * plane + pixel]);
    p.color = Eigen::Vector3f(fr[pixel], fr[plane + pixel], fr[2 * plane + pixel]);
    p.frame = t;
    p.pixel = pixel;
    return p;
}

// Progressive static aggregation: frame 0 seeds the static cloud, and each later frame adds
// only static pixels not covered by any earlier static mask. Union is per pixel location.
inline FramePointClouds aggregate(const DynamicSceneBundle& b) {
    b.validate();
    FramePointClouds out;
    out.T = b.T;
    out.dynamic_points.resize(b.T);
    Mask covered({b.H, b.W}, 0.0f);
    for (int t = 0; t < b.T; ++t) {
        const Mask fresh = new_static_mask(b.static_masks[t], covered);
        for (std::size_t p = 0; p < fresh.size(); ++p) {
            if (fresh[p] == 1.0f) out.static_points.push_back(point_at(b, t, p));
            if (b.static_masks[t][p] == 0.0f) out.dynamic_points[t].push_back(point_at(b, t, p));
            if (b.static_masks[t][p] == 1.0f) covered[p] = 1.0f;
        }
    }
    return out;
}

// Static set followed by frame-t dynamic points.
inline PointList frame_cloud(const FramePointClouds& fpc, int t) {
    if (t < 0 || t >= fpc.T) throw std::out_of_range("frame_cloud: frame index out of range");
    PointList out;
    out.reserve(fpc.static_points.size() + fpc.dynamic_points[t].size());
    out.insert(out.end(), fpc.static_points.begin(), fpc.static_points.end());
    out.insert(out.end(), fpc.dynamic_points[t].begin(), fpc.dynamic_points[t].end());
    return out;
}

// ASCII PLY with x y z (float) and 8-bit r g b per vertex.
inline void save_ply(const std::string& path, const PointList& points) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "ply\nformat ascii 1.0\nelement vertex " << points.size()
       << "\nproperty float x\nproperty float y\nproperty float z\n"
          "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (const auto& p : points) {
        os << float(p.position.x()) << ' ' << float(p.position.y()) << ' ' << float(p.position.z());
        for (int c = 0; c < 3; ++c) os << ' ' << std::lround(std::clamp(p.color[c], 0.0f, 1.0f) * 255.0f);
        os << '\n';
    }
}

// Clouds round-trip through TEN1 as [N,8] rows: x y z r g b frame pixel.
inline Tensor<float> cloud_to_tensor(const PointList& pts) {
    Tensor<float> t({pts.size(), 8});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        float* row = &t[i * 8];
        row[0] = float(p.position.x()), row[1] = float(p.position.y()), row[2] = float(p.position.z());
        row[3] = p.color[0], row[4] = p.color[1], row[5] = p.color[2];
        row[6] = float(p.frame), row[7] = float(p.pixel);
    }
    return t;
}

inline PointList cloud_from_tensor(const Tensor<float>& t) {
    if (t.rank() != 2 || (t.dim(0) > 0 && t.dim(1) != 8)) throw std::runtime_error("cloud: expected [N,8] array");
    PointList pts(t.dim(0));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const float* row = &t[i * 8];
        pts[i].position = Vec3(row[0], row[1], row[2]);
        pts[i].color = Eigen::Vector3f(row[3], row[4], row[5]);
        pts[i].frame = int(row[6]);
        pts[i].pixel = std::size_t(row[7]);
    }
    return pts;
}

inline void save_clouds(const std::string& dir, const FramePointClouds& fpc) {
    std::filesystem::create_directories(dir);
    save_ten1(dir + "/static.ten", cloud_to_tensor(fpc.static_points));
    save_ply(dir + "/static.ply", fpc.static_points);
    for (int t = 0; t < fpc.T; ++t) {
        save_ten1(dir + "/" + format_pattern("dynamic_%03d.ten", t), cloud_to_tensor(fpc.dynamic_points[t]));
        save_ply(dir + "/" + format_pattern("frame_cloud_%03d.ply", t), frame_cloud(fpc, t));
    }
    KeyValue kv;
    kv.set("T", fpc.T);
    kv.set("static_points", fpc.static_points.size());
    kv.save(dir + "/clouds.kv");
}

inline FramePointClouds load_clouds(const std::string& dir) {
    const KeyValue kv = KeyValue::load(dir + "/clouds.kv");
    FramePointClouds fpc;
    fpc.T = int(kv.get_int("T"));
    fpc.static_points = cloud_from_tensor(load_ten1(dir + "/static.ten"));
    for (int t = 0; t < fpc.T; ++t)
        fpc.dynamic_points.push_back(cloud_from_tensor(load_ten1(dir + "/" + format_pattern("dynamic_%03d.ten", t))));
    return fpc;
}

}  // namespace scene4d
