#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/kv.hpp"
#include "scene4d/rng.hpp"
#include "scene4d/tensor.hpp"
#include "scene4d/view_grid.hpp"

namespace scene4d {

// Single-view dynamic video with per-frame pointmaps and static masks. The frame-0 camera is
// the world frame.
struct DynamicSceneBundle {
    int T = 0;
    std::size_t H = 0, W = 0;
    std::vector<Image> frames;           // [3,H,W]
    std::vector<Tensor<float>> pointmaps;  // [3,H,W] world xyz (m)
    std::vector<Mask> static_masks;       // [H,W], 1 = static
    Intrinsics intrinsics;
    std::optional<ViewGrid> gt_grid;

    Mask dynamic_mask(int t) const {
        Mask m = static_masks.at(t);
        for (auto& v : m.storage()) v = 1.0f - v;
        return m;
    }

    Camera reference_camera() const {
        Camera c;
        c.K = intrinsics;
        return c;
    }

    void validate() const {
        if (T < 1) throw std::invalid_argument("bundle: T must be positive");
        if (frames.size() != std::size_t(T) || pointmaps.size() != std::size_t(T) ||
            static_masks.size() != std::size_t(T))
            throw std::invalid_argument("bundle: frame count mismatch");
        const std::vector<std::size_t> img{3, H, W}, msk{H, W};
        for (int t = 0; t < T; ++t) {
            if (frames[t].shape() != img || pointmaps[t].shape() != img || static_masks[t].shape() != msk)
                throw std::invalid_argument("bundle: dimension mismatch at frame " + std::to_string(t));
            for (float v : static_masks[t].values())
                if (v != 0.0f && v != 1.0f) throw std::invalid_argument("bundle: static mask is not binary");
            for (float v : pointmaps[t].values())
                if (!std::isfinite(v)) throw std::invalid_argument("bundle: non-finite pointmap entry");
        }
    }
};

enum class MotionKind { none, linear, circular };

inline MotionKind parse_motion_kind(const std::string& s) {
    if (s == "none") return MotionKind::none;
    if (s == "linear") return MotionKind::linear;
    if (s == "circular") return MotionKind::circular;
    throw std::invalid_argument("unknown motion kind '" + s + "'");
}

inline std::string to_string(MotionKind m) {
    switch (m) {
        case MotionKind::none: return "none";
        case MotionKind::linear: return "linear";
        case MotionKind::circular: return "circular";
    }
    return "?";
}

struct SceneSpec {
    std::size_t H = 64, W = 64;
    int T = 8;
    std::uint64_t seed = 0;
    MotionKind motion = MotionKind::linear;
    double speed_px = 1.0;       // image-space speed of the moving sphere, pixels per frame
    double sphere_radius = 0.5;  // m
    // Ground-truth grid along this trajectory; K = 0 skips it.
    TrajectoryKind trajectory = TrajectoryKind::orbit;
    int K = 0;
    TrajectoryParams trajectory_params{};
};

// Analytic scene: textured ground plane (y = 1), textured back wall (z = 6) and a rigidly
// moving sphere. Albedo only, so colors do not depend on the viewing direction.
class OracleScene {
public:
    static constexpr double kGroundY = 1.0;
    static constexpr double kWallZ = 6.0;
    static constexpr double kSphereDepth = 3.0;

    explicit OracleScene(const SceneSpec& spec) : spec_(spec) {
        if (spec.H < 16 || spec.W < 16 || spec.H % 2 || spec.W % 2)
            throw std::invalid_argument("scene: H and W must be even and at least 16");
        if (spec.T < 2) throw std::invalid_argument("scene: T must be at least 2");
        if (!(spec.sphere_radius > 0.0)) throw std::invalid_argument("scene: zero-area primitive (sphere radius)");
        intr_.fx = intr_.fy = 0.9 * double(spec.W);
        intr_.cx = 0.5 * double(spec.W - 1);
        intr_.cy = 0.5 * double(spec.H - 1);

        NoiseStream rng(spec.seed, {std::uint64_t(NoiseOp::misc)});
        for (auto& p : phase_) p = 2.0 * std::numbers::pi * rng.uniform();
        for (auto& c : tint_) c = 0.8 + 0.4 * rng.uniform();
        // sphere rests on the ground, starting left of center so it crosses the view
        const double travel = spec.motion == MotionKind::linear
                                  ? spec.speed_px * kSphereDepth / intr_.fx * double(spec.T - 1)
                                  : 0.0;
        start_ = Vec3(-0.5 * travel + 0.3 * (rng.uniform() - 0.5), kGroundY - spec.sphere_radius, kSphereDepth);
    }

    const Intrinsics& intrinsics() const { return intr_; }
    const SceneSpec& spec() const { return spec_; }

    Vec3 sphere_center(int t) const {
        switch (spec_.motion) {
            case MotionKind::none: return start_;
            case MotionKind::linear: return start_ + Vec3(spec_.speed_px * kSphereDepth / intr_.fx * t, 0.0, 0.0);
            case MotionKind::circular: {
                const double ang = 2.0 * std::numbers::pi * double(t) / double(spec_.T);
                const double r = spec_.speed_px * kSphereDepth / intr_.fx * double(spec_.T) / (2.0 * std::numbers::pi);
                return start_ + Vec3(r * std::sin(ang), 0.0, r * (1.0 - std::cos(ang)));
            }
        }
        return start_;
    }

    struct Hit {
        Vec3 point;
        Vec3 color;
        bool dynamic;
        bool valid;
    };

    Hit trace(const Vec3& origin, const Vec3& dir, int t) const {
        double best = std::numeric_limits<double>::infinity();
        int what = -1;
        const Vec3 c = sphere_center(t);
        {
            const Vec3 oc = origin - c;
            const double bq = oc.dot(dir), cq = oc.squaredNorm() - spec_.sphere_radius * spec_.sphere_radius;
            const double disc = bq * bq - dir.squaredNorm() * cq;
            if (disc >= 0.0) {
                const double s = (-bq - std::sqrt(disc)) / dir.squaredNorm();
                if (s > 1e-9 && s < best) best = s, what = 0;
            }
        }
        if (dir.y() > 1e-12) {
            const double s = (kGroundY - origin.y()) / dir.y();
            if (s > 1e-9 && s < best) best = s, what = 1;
        }
        if (dir.z() > 1e-12) {
            const double s = (kWallZ - origin.z()) / dir.z();
            if (s > 1e-9 && s < best) best = s, what = 2;
        }
        if (what < 0) return {Vec3::Zero(), Vec3::Constant(0.5), false, false};
        const Vec3 p = origin + best * dir;
        return {p, albedo(what, p, c), what == 0 && spec_.motion != MotionKind::none, true};
    }

    Vec3 ray_direction(const Camera& cam, double u, double v) const {
        const Vec3 d_cam((u - cam.K.cx) / cam.K.fx, (v - cam.K.cy) / cam.K.fy, 1.0);
        return cam.R.transpose() * d_cam;
    }

    Image render(const Camera& cam, int t) const {
        Image img = Image::image(3, spec_.H, spec_.W);
        const Vec3 o = cam.center();
        for (std::size_t y = 0; y < spec_.H; ++y)
            for (std::size_t x = 0; x < spec_.W; ++x) {
                const Hit h = trace(o, ray_direction(cam, double(x), double(y)), t);
                for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(h.color[ch]);
            }
        return img;
    }

private:
    // Smooth low-frequency textures; all channels stay inside [0.1, 0.9].
    Vec3 albedo(int what, const Vec3& p, const Vec3& sphere_c) const {
        Vec3 col;
        switch (what) {
            case 0: {
                const Vec3 n = (p - sphere_c) / spec_.sphere_radius;
                col = Vec3(0.75 + 0.12 * n.y(), 0.35 + 0.12 * n.x(), 0.25 + 0.1 * std::sin(2.0 * n.z() + phase_[0]));
                break;
            }
            case 1:
                col = Vec3(0.45 + 0.15 * std::sin(1.7 * p.x() + phase_[1]) * std::cos(1.3 * p.z() + phase_[2]),
                           0.55 + 0.12 * std::sin(1.1 * p.z() + phase_[3]),
                           0.35 + 0.1 * std::cos(1.5 * p.x() - 0.7 * p.z() + phase_[4]));
                break;
            default:
                col = Vec3(0.5 + 0.12 * std::sin(1.2 * p.x() + phase_[5]),
                           0.45 + 0.12 * std::cos(1.4 * p.y() + 0.6 * p.x() + phase_[6]),
                           0.62 + 0.1 * std::sin(0.9 * p.y() + phase_[7]));
                break;
        }
        for (int ch = 0; ch < 3; ++ch) col[ch] = std::clamp(0.5 + (col[ch] - 0.5) * tint_[ch], 0.1, 0.9);
        return col;
    }

    SceneSpec spec_;
    Intrinsics intr_;
    std::array<double, 8> phase_{};
    std::array<double, 3> tint_{};
    Vec3 start_;
};

inline DynamicSceneBundle synth_scene(const SceneSpec& spec) {
    const OracleScene scene(spec);
    DynamicSceneBundle b;
    b.T = spec.T;
    b.H = spec.H;
    b.W = spec.W;
    b.intrinsics = scene.intrinsics();
    const Camera ref = b.reference_camera();
    for (int t = 0; t < spec.T; ++t) {
        Image frame = Image::image(3, spec.H, spec.W);
        Tensor<float> pm({3, spec.H, spec.W});
        Mask sm({spec.H, spec.W}, 1.0f);
        std::size_t sphere_pixels = 0;
        for (std::size_t y = 0; y < spec.H; ++y)
            for (std::size_t x = 0; x < spec.W; ++x) {
                const auto h = scene.trace(Vec3::Zero(), scene.ray_direction(ref, double(x), double(y)), t);
                if (!h.valid) throw std::logic_error("scene: reference ray escaped the scene");
                for (int ch = 0; ch < 3; ++ch) {
                    frame.at(ch, y, x) = static_cast<float>(h.color[ch]);
                    pm.at(ch, y, x) = static_cast<float>(h.point[ch]);
                }
                if (h.dynamic) sm.at(y, x) = 0.0f;
                const Vec3 c = scene.sphere_center(t);
                if ((h.point - c).norm() < spec.sphere_radius + 1e-6) ++sphere_pixels;
            }
        if (t == 0 && sphere_pixels == 0) throw std::invalid_argument("scene: zero-area primitive (sphere not visible)");
        b.frames.push_back(std::move(frame));
        b.pointmaps.push_back(std::move(pm));
        b.static_masks.push_back(std::move(sm));
    }
    if (spec.K > 0) {
        auto cams = make_trajectory(spec.trajectory, spec.K, spec.trajectory_params, b.intrinsics);
        ViewGrid g = ViewGrid::blank(spec.T, spec.K, spec.H, spec.W, cams, Provenance::ground_truth);
        for (int t = 0; t < spec.T; ++t)
            for (int k = 0; k < spec.K; ++k) {
                g.image(t, k) = k == 0 ? b.frames[t] : scene.render(cams[k], t);
                g.mask(t, k) = Mask({spec.H, spec.W}, 1.0f);
            }
        b.gt_grid = std::move(g);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Bundle directory: manifest.kv (T, H, W, fx, fy, cx, cy, file patterns) plus one TEN1 file
// per frame, pointmap and static mask. An optional gt/ subdirectory holds a saved ViewGrid.

inline std::string format_pattern(const std::string& pattern, int t) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern.c_str(), t);
    return buf;
}

inline void save_bundle(const DynamicSceneBundle& b, const std::string& dir) {
    b.validate();
    std::filesystem::create_directories(dir);
    KeyValue kv;
    kv.set("T", b.T);
    kv.set("H", b.H);
    kv.set("W", b.W);
    kv.set("fx", b.intrinsics.fx);
    kv.set("fy", b.intrinsics.fy);
    kv.set("cx", b.intrinsics.cx);
    kv.set("cy", b.intrinsics.cy);
    kv.set("frame_pattern", "frame_%03d.ten");
    kv.set("pointmap_pattern", "pointmap_%03d.ten");
    kv.set("smask_pattern", "smask_%03d.ten");
    kv.set("has_gt_grid", b.gt_grid.has_value());
    for (int t = 0; t < b.T; ++t) {
        save_ten1(dir + "/" + format_pattern("frame_%03d.ten", t), b.frames[t]);
        save_ten1(dir + "/" + format_pattern("pointmap_%03d.ten", t), b.pointmaps[t]);
        save_ten1(dir + "/" + format_pattern("smask_%03d.ten", t), b.static_masks[t]);
    }
    if (b.gt_grid) save_grid(dir + "/gt", *b.gt_grid);
    kv.save(dir + "/manifest.kv");
}

namespace detail {

inline std::size_t count_matching(const std::string& dir, const std::string& pattern) {
    const auto pos = pattern.find('%');
    const std::string prefix = pattern.substr(0, pos);
    const std::string ext = std::filesystem::path(pattern).extension().string();
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && e.path().extension() == ext) ++n;
    }
    return n;
}

}  // namespace detail

inline DynamicSceneBundle load_bundle(const std::string& dir) {
    const KeyValue kv = KeyValue::load(dir + "/manifest.kv");
    DynamicSceneBundle b;
    b.T = int(kv.get_int("T"));
    b.H = std::size_t(kv.get_int("H"));
    b.W = std::size_t(kv.get_int("W"));
    b.intrinsics = {kv.get_double("fx"), kv.get_double("fy"), kv.get_double("cx"), kv.get_double("cy")};
    const std::string fp = kv.get_or("frame_pattern", "frame_%03d.ten");
    const std::string pp = kv.get_or("pointmap_pattern", "pointmap_%03d.ten");
    const std::string sp = kv.get_or("smask_pattern", "smask_%03d.ten");
    for (const auto& [pattern, what] : {std::pair{fp, "frame"}, std::pair{pp, "pointmap"}, std::pair{sp, "mask"}}) {
        const std::size_t n = detail::count_matching(dir, pattern);
        if (n != std::size_t(b.T))
            throw std::runtime_error("frame count mismatch: manifest T=" + std::to_string(b.T) + " but found " +
                                     std::to_string(n) + " " + what + " files in " + dir);
    }
    const std::vector<std::size_t> img{3, b.H, b.W}, msk{b.H, b.W};
    for (int t = 0; t < b.T; ++t) {
        Image f = load_ten1(dir + "/" + format_pattern(fp, t));
        Tensor<float> p = load_ten1(dir + "/" + format_pattern(pp, t));
        Mask m = load_ten1(dir + "/" + format_pattern(sp, t));
        if (f.shape() != img || p.shape() != img || m.shape() != msk)
            throw std::runtime_error("dimension mismatch at frame " + std::to_string(t) + " in " + dir);
        std::size_t soft = 0;
        for (auto& v : m.storage()) {
            if (v != 0.0f && v != 1.0f) ++soft;
            v = v >= 0.5f ? 1.0f : 0.0f;
        }
        if (soft)
            warn("static mask " + std::to_string(t) + ": " + std::to_string(soft) +
                 " non-binary values thresholded at 0.5");
        b.frames.push_back(std::move(f));
        b.pointmaps.push_back(std::move(p));
        b.static_masks.push_back(std::move(m));
    }
    if (std::filesystem::exists(dir + "/gt/grid.kv")) b.gt_grid = load_grid(dir + "/gt");
    b.validate();
    return b;
}

}  // namespace scene4d
