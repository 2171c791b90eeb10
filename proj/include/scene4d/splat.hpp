#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/geometry.hpp"
#include "scene4d/kv.hpp"
#include "scene4d/tensor.hpp"

namespace scene4d {

using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// One dynamic splat. Also used as the gradient record (same fields, same layout).
struct Splat {
    Vec3 mu = Vec3::Zero();         // position at t = 0, m
    Vec3 log_scale = Vec3::Zero();  // per-axis log std, m
    Vec4 q{1, 0, 0, 0};             // orientation (w, x, y, z)
    double opacity = 0.0;           // logit
    Vec3 color = Vec3::Zero();      // logits
    Vec3 v = Vec3::Zero();          // m per unit tau
    Vec3 a = Vec3::Zero();          // m per unit tau^2
};

inline constexpr std::size_t kSplatParams = 20;

inline std::array<double, kSplatParams> pack(const Splat& s) {
    return {s.mu.x(), s.mu.y(), s.mu.z(), s.log_scale.x(), s.log_scale.y(), s.log_scale.z(),
            s.q[0],   s.q[1],   s.q[2],   s.q[3],          s.opacity,       s.color.x(),
            s.color.y(), s.color.z(), s.v.x(), s.v.y(), s.v.z(), s.a.x(), s.a.y(), s.a.z()};
}

inline Splat unpack(const std::array<double, kSplatParams>& p) {
    Splat s;
    s.mu = {p[0], p[1], p[2]};
    s.log_scale = {p[3], p[4], p[5]};
    s.q = {p[6], p[7], p[8], p[9]};
    s.opacity = p[10];
    s.color = {p[11], p[12], p[13]};
    s.v = {p[14], p[15], p[16]};
    s.a = {p[17], p[18], p[19]};
    return s;
}

struct SplatScene {
    int T = 1;  // frames; tau = t / (T - 1)
    std::vector<Splat> splats;
    std::vector<bool> motion_trainable;

    std::size_t size() const { return splats.size(); }
    double tau(double t) const {
        if (t < 0.0 || t > double(T - 1)) throw std::out_of_range("splat scene: time outside [0, T-1]");
        return T > 1 ? t / double(T - 1) : 0.0;
    }
    void normalize_rotations() {
        for (auto& s : splats) {
            const double n = s.q.norm();
            s.q = n > 0.0 ? Vec4(s.q / n) : Vec4(1, 0, 0, 0);
        }
    }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Mat3 quat_to_rot(const Vec4& qr) {
    const Vec4 q = qr / qr.norm();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

// Gradient of L through R(q / |q|) given dL/dR.
inline Vec4 quat_backward(const Vec4& qr, const Mat3& G) {
    const double n = qr.norm();
    const Vec4 q = qr / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 g;
    g[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
    g[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) + w * G(2, 1) -
                2 * x * G(2, 2));
    g[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) + z * G(2, 1) -
                2 * y * G(2, 2));
    g[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) +
                x * G(2, 0) + y * G(2, 1));
    return (g - q * q.dot(g)) / n;
}

struct RenderOptions {
    double cutoff_sigma = 3.5;  // footprint half-width in std devs; 0 = every pixel
    double dilation = 0.3;      // px^2 added to the screen-space covariance
    double near = 0.01;         // m
    double max_alpha = 0.99;
};

// Per-splat forward state kept for the backward pass.
struct ProjectedSplat {
    bool valid = false;
    Vec3 pc;              // camera-space deformed position
    Mat23 Tm;             // J W
    Mat3 Rq, M3, cov3;    // M3 = R S
    Mat2 conic;
    Eigen::Vector2d mean;
    double opacity = 0, depth = 0;
    Vec3 color;
    long x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel box
};

struct SplatRender {
    Tensor<double> image;  // [3,H,W]
    Tensor<double> alpha;  // [H,W]
    std::vector<ProjectedSplat> proj;
    std::vector<std::size_t> order;     // front to back
    std::vector<double> transmittance;  // final per pixel
    double tau = 0.0;
};

inline ProjectedSplat project_splat(const Splat& s, const Camera& cam, double tau, std::size_t H, std::size_t W,
                                    const RenderOptions& opt) {
    ProjectedSplat p;
    const Vec3 world = s.mu + s.v * tau + s.a * (tau * tau);
    p.pc = cam.R * world + cam.t;
    const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z();
    if (z <= opt.near) return p;
    const double fx = cam.K.fx, fy = cam.K.fy;
    Mat23 J;
    J << fx / z, 0, -fx * x / (z * z), 0, fy / z, -fy * y / (z * z);
    p.Tm = J * cam.R;
    p.Rq = quat_to_rot(s.q);
    p.M3 = p.Rq * s.log_scale.array().exp().matrix().asDiagonal();
    p.cov3 = p.M3 * p.M3.transpose();
    Mat2 cov2 = p.Tm * p.cov3 * p.Tm.transpose();
    cov2(0, 0) += opt.dilation;
    cov2(1, 1) += opt.dilation;
    const double det = cov2.determinant();
    if (!(det > 0.0)) return p;
    p.conic = cov2.inverse();
    p.mean = {fx * x / z + cam.K.cx, fy * y / z + cam.K.cy};
    p.opacity = sigmoid(s.opacity);
    p.color = {sigmoid(s.color.x()), sigmoid(s.color.y()), sigmoid(s.color.z())};
    p.depth = z;
    if (opt.cutoff_sigma > 0.0) {
        const double mid = 0.5 * (cov2(0, 0) + cov2(1, 1));
        const double lmax = mid + std::sqrt(std::max(0.1, mid * mid - det));
        const double r = opt.cutoff_sigma * std::sqrt(lmax);
        p.x0 = std::max<long>(0, long(std::ceil(p.mean.x() - r)));
        p.x1 = std::min<long>(long(W) - 1, long(std::floor(p.mean.x() + r)));
        p.y0 = std::max<long>(0, long(std::ceil(p.mean.y() - r)));
        p.y1 = std::min<long>(long(H) - 1, long(std::floor(p.mean.y() + r)));
    } else {
        p.x0 = 0, p.x1 = long(W) - 1, p.y0 = 0, p.y1 = long(H) - 1;
    }
    p.valid = p.x0 <= p.x1 && p.y0 <= p.y1;
    return p;
}

// Screen-space Gaussian, alpha and clamping flag at pixel (px, py).
struct PixelHit {
    double dx, dy, g, alpha;
    bool clamped;
};

inline PixelHit evaluate(const ProjectedSplat& p, long px, long py, const RenderOptions& opt) {
    PixelHit h;
    h.dx = double(px) - p.mean.x();
    h.dy = double(py) - p.mean.y();
    const double power = -0.5 * (p.conic(0, 0) * h.dx * h.dx + 2.0 * p.conic(0, 1) * h.dx * h.dy +
                                 p.conic(1, 1) * h.dy * h.dy);
    h.g = std::exp(power);
    h.alpha = p.opacity * h.g;
    h.clamped = h.alpha > opt.max_alpha;
    if (h.clamped) h.alpha = opt.max_alpha;
    return h;
}

// Front-to-back alpha compositing of depth-sorted splats over a black background.
inline SplatRender render(const SplatScene& scene, const Camera& cam, double t, std::size_t H, std::size_t W,
                          const RenderOptions& opt = {}) {
    SplatRender r;
    r.tau = scene.tau(t);
    r.image = Tensor<double>({3, H, W}, 0.0);
    r.alpha = Tensor<double>({H, W}, 0.0);
    r.transmittance.assign(H * W, 1.0);
    r.proj.resize(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) r.proj[i] = project_splat(scene.splats[i], cam, r.tau, H, W, opt);
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (r.proj[i].valid) r.order.push_back(i);
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](std::size_t a, std::size_t b) { return r.proj[a].depth < r.proj[b].depth; });
    const std::size_t plane = H * W;
    for (std::size_t i : r.order) {
        const auto& p = r.proj[i];
        for (long py = p.y0; py <= p.y1; ++py)
            for (long px = p.x0; px <= p.x1; ++px) {
                const std::size_t pix = std::size_t(py) * W + std::size_t(px);
                const PixelHit h = evaluate(p, px, py, opt);
                double& T = r.transmittance[pix];
                const double w = h.alpha * T;
                for (int c = 0; c < 3; ++c) r.image[c * plane + pix] += p.color[c] * w;
                T *= 1.0 - h.alpha;
            }
    }
    for (std::size_t pix = 0; pix < plane; ++pix) r.alpha[pix] = 1.0 - r.transmittance[pix];
    for (auto& v : r.image.storage()) v = std::clamp(v, 0.0, 1.0);
    return r;
}

// Analytic gradients of L w.r.t. every splat parameter, given dL/dimage and the forward pass.
// Motion gradients are zeroed for splats whose motion is frozen.
inline std::vector<Splat> render_backward(const SplatScene& scene, const Camera& cam, const SplatRender& r,
                                          const Tensor<double>& grad_image, const RenderOptions& opt = {}) {
    const std::size_t H = r.alpha.height(), W = r.alpha.width(), plane = H * W;
    require_same_shape(grad_image, r.image, "render_backward");
    std::vector<Splat> grads(scene.size());
    for (auto& g : grads) g.q = Vec4::Zero();
    std::vector<double> T = r.transmittance;
    std::vector<double> S(3 * plane, 0.0);  // color accumulated behind the current splat

    for (auto it = r.order.rbegin(); it != r.order.rend(); ++it) {
        const std::size_t i = *it;
        const auto& p = r.proj[i];
        Vec3 g_color = Vec3::Zero();
        double g_opacity = 0.0;
        Eigen::Vector2d g_mean = Eigen::Vector2d::Zero();
        Mat2 g_conic = Mat2::Zero();
        for (long py = p.y0; py <= p.y1; ++py)
            for (long px = p.x0; px <= p.x1; ++px) {
                const std::size_t pix = std::size_t(py) * W + std::size_t(px);
                const PixelHit h = evaluate(p, px, py, opt);
                const double Ti = T[pix] / (1.0 - h.alpha);
                double g_alpha = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double gi = grad_image[c * plane + pix];
                    g_color[c] += gi * h.alpha * Ti;
                    g_alpha += gi * (p.color[c] * Ti - S[c * plane + pix] / (1.0 - h.alpha));
                    S[c * plane + pix] += p.color[c] * h.alpha * Ti;
                }
                T[pix] = Ti;
                if (h.clamped) continue;
                g_opacity += g_alpha * h.g;
                const double g_g = g_alpha * p.opacity * h.g;  // dL/dpower
                const Eigen::Vector2d d(h.dx, h.dy);
                g_mean += g_g * (p.conic * d);
                g_conic += g_g * (-0.5) * d * d.transpose();
            }

        Splat& g = grads[i];
        const Splat& s = scene.splats[i];
        for (int c = 0; c < 3; ++c) g.color[c] = g_color[c] * p.color[c] * (1.0 - p.color[c]);
        g.opacity = g_opacity * p.opacity * (1.0 - p.opacity);

        // conic = inv(cov2): dL/dcov2 = -conic G conic
        const Mat2 g_cov2 = -p.conic * g_conic * p.conic;
        const Mat3 g_cov3 = p.Tm.transpose() * g_cov2 * p.Tm;
        const Mat23 g_Tm = g_cov2 * p.Tm * p.cov3 + g_cov2.transpose() * p.Tm * p.cov3.transpose();
        const Mat23 g_J = g_Tm * cam.R.transpose();

        const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z(), fx = cam.K.fx, fy = cam.K.fy;
        Vec3 g_pc;
        g_pc.x() = g_mean.x() * fx / z + g_J(0, 2) * (-fx / (z * z));
        g_pc.y() = g_mean.y() * fy / z + g_J(1, 2) * (-fy / (z * z));
        g_pc.z() = g_mean.x() * (-fx * x / (z * z)) + g_mean.y() * (-fy * y / (z * z)) + g_J(0, 0) * (-fx / (z * z)) +
                   g_J(0, 2) * (2 * fx * x / (z * z * z)) + g_J(1, 1) * (-fy / (z * z)) +
                   g_J(1, 2) * (2 * fy * y / (z * z * z));
        const Vec3 g_world = cam.R.transpose() * g_pc;
        g.mu = g_world;
        if (scene.motion_trainable[i]) {
            g.v = g_world * r.tau;
            g.a = g_world * (r.tau * r.tau);
        }

        // cov3 = M3 M3^T, M3 = Rq diag(exp(log_scale))
        const Mat3 g_M3 = (g_cov3 + g_cov3.transpose()) * p.M3;
        const Vec3 scale = s.log_scale.array().exp();
        for (int k = 0; k < 3; ++k) g.log_scale[k] = p.Rq.col(k).dot(g_M3.col(k)) * scale[k];
        const Mat3 g_R = g_M3 * scale.asDiagonal();
        g.q = quat_backward(s.q, g_R);
    }
    return grads;
}

inline std::vector<Splat> render_grad(const SplatScene& scene, const Camera& cam, double t, std::size_t H,
                                      std::size_t W, const Tensor<double>& grad_image, const RenderOptions& opt = {}) {
    return render_backward(scene, cam, render(scene, cam, t, H, W, opt), grad_image, opt);
}

inline Image to_image(const Tensor<double>& t) { return t.cast<float>(); }

// Seeds splats from a uniform subsample of the first-frame cloud. The initial isotropic scale is
// the distance to the nearest sampled neighbour; splats from dynamic pixels get trainable motion.
inline SplatScene init_scene(const FramePointClouds& fpc, std::size_t max_splats) {
    if (max_splats < 1) throw std::invalid_argument("init_scene: need at least one splat");
    if (fpc.T < 1) throw std::invalid_argument("init_scene: no frames");
    const PointList cloud = frame_cloud(fpc, 0);
    if (cloud.empty()) throw std::invalid_argument("init_scene: empty point cloud");
    const std::size_t n = std::min(max_splats, cloud.size());
    const std::size_t n_static = fpc.static_points.size();
    std::vector<std::size_t> pick(n);
    for (std::size_t j = 0; j < n; ++j) pick[j] = j * cloud.size() / n;

    SplatScene scene;
    scene.T = fpc.T;
    scene.splats.resize(n);
    scene.motion_trainable.resize(n);
    std::vector<double> nn(n, std::numeric_limits<double>::infinity());
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            const double d = (cloud[pick[a]].position - cloud[pick[b]].position).norm();
            if (d > 0.0) {
                nn[a] = std::min(nn[a], d);
                nn[b] = std::min(nn[b], d);
            }
        }
    for (std::size_t j = 0; j < n; ++j) {
        const CloudPoint& pt = cloud[pick[j]];
        Splat& s = scene.splats[j];
        s.mu = pt.position;
        const double scale = std::isfinite(nn[j]) ? nn[j] : 0.01;
        s.log_scale = Vec3::Constant(std::log(scale));
        s.opacity = 0.0;
        for (int c = 0; c < 3; ++c) s.color[c] = logit(std::clamp(double(pt.color[c]), 0.01, 0.99));
        scene.motion_trainable[j] = pick[j] >= n_static;
    }
    return scene;
}

// Checkpoint: scene.kv (N, T) plus one TEN1 array per parameter group.
inline void save_scene(const std::string& dir, const SplatScene& scene) {
    std::filesystem::create_directories(dir);
    const std::size_t n = scene.size();
    auto group = [&](const char* name, std::size_t off, std::size_t width) {
        Tensor<double> t({n, width});
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = pack(scene.splats[i]);
            for (std::size_t c = 0; c < width; ++c) t[i * width + c] = p[off + c];
        }
        save_ten1(dir + "/" + name + ".ten", t);
    };
    group("mu", 0, 3);
    group("log_scale", 3, 3);
    group("q", 6, 4);
    group("opacity", 10, 1);
    group("color", 11, 3);
    group("v", 14, 3);
    group("a", 17, 3);
    Tensor<float> flags({n});
    for (std::size_t i = 0; i < n; ++i) flags[i] = scene.motion_trainable[i] ? 1.0f : 0.0f;
    save_ten1(dir + "/motion_trainable.ten", flags);
    KeyValue kv;
    kv.set("N", n);
    kv.set("T", scene.T);
    kv.set("precision", "f32");
    kv.save(dir + "/scene.kv");
}

inline SplatScene load_scene(const std::string& dir) {
    const KeyValue kv = KeyValue::load(dir + "/scene.kv");
    SplatScene scene;
    const auto n = std::size_t(kv.get_int("N"));
    scene.T = int(kv.get_int("T"));
    std::vector<std::array<double, kSplatParams>> packed(n);
    auto group = [&](const char* name, std::size_t off, std::size_t width) {
        const Tensor<float> t = load_ten1(dir + "/" + name + ".ten");
        if (t.shape() != std::vector<std::size_t>{n, width})
            throw std::runtime_error(std::string("checkpoint: ") + name + " has shape " + shape_string(t.shape()));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < width; ++c) packed[i][off + c] = t[i * width + c];
    };
    group("mu", 0, 3);
    group("log_scale", 3, 3);
    group("q", 6, 4);
    group("opacity", 10, 1);
    group("color", 11, 3);
    group("v", 14, 3);
    group("a", 17, 3);
    const Tensor<float> flags = load_ten1(dir + "/motion_trainable.ten");
    if (flags.size() != n) throw std::runtime_error("checkpoint: motion flags do not match N");
    for (std::size_t i = 0; i < n; ++i) {
        scene.splats.push_back(unpack(packed[i]));
        scene.motion_trainable.push_back(flags[i] == 1.0f);
    }
    return scene;
}

}  // namespace scene4d
