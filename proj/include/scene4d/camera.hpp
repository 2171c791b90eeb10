#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scene4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

// Pinhole camera, world -> camera: q = R p + t. Pixel centers sit at integer (u, v).
// World and camera axes: x right, y down, z forward.
struct Camera {
    Intrinsics K;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 center() const { return -R.transpose() * t; }

    void validate() const {
        if (!(K.fx > 0.0 && K.fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
        if (!(R.transpose() * R).isApprox(Mat3::Identity(), 1e-9))
            throw std::invalid_argument("camera: rotation is not orthonormal");
    }
};

struct Projection {
    double u, v, depth;
};

inline constexpr double kMinDepth = 1e-6;

// Returns nullopt for points at or behind the camera plane (camera-z <= 1e-6).
inline std::optional<Projection> project(const Vec3& p, const Camera& cam) {
    const Vec3 q = cam.R * p + cam.t;
    if (!(q.z() > kMinDepth)) return std::nullopt;
    return Projection{cam.K.fx * q.x() / q.z() + cam.K.cx, cam.K.fy * q.y() / q.z() + cam.K.cy, q.z()};
}

// Rotation whose camera sits at `eye` and looks at `target`, with world +y as image-down.
inline Camera look_at(const Intrinsics& K, const Vec3& eye, const Vec3& target) {
    const Vec3 f = (target - eye).normalized();
    const Vec3 down(0.0, 1.0, 0.0);
    Vec3 x = down.cross(f);
    if (x.norm() < 1e-12) throw std::invalid_argument("look_at: view direction parallel to the vertical axis");
    x.normalize();
    const Vec3 y = f.cross(x);
    Camera cam;
    cam.K = K;
    cam.R.row(0) = x.transpose();
    cam.R.row(1) = y.transpose();
    cam.R.row(2) = f.transpose();
    cam.t = -cam.R * eye;
    return cam;
}

inline Mat3 rotation_y(double radians) {
    return Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix();
}

enum class TrajectoryKind { orbit, arc, lateral };

inline TrajectoryKind parse_trajectory_kind(const std::string& s) {
    if (s == "orbit") return TrajectoryKind::orbit;
    if (s == "arc") return TrajectoryKind::arc;
    if (s == "lateral") return TrajectoryKind::lateral;
    throw std::invalid_argument("unknown trajectory kind '" + s + "'");
}

inline std::string to_string(TrajectoryKind k) {
    switch (k) {
        case TrajectoryKind::orbit: return "orbit";
        case TrajectoryKind::arc: return "arc";
        case TrajectoryKind::lateral: return "lateral";
    }
    return "?";
}

struct TrajectoryParams {
    double radius = 3.0;        // distance from the reference camera to the scene center (m)
    double max_yaw_deg = 30.0;  // orbit/arc sweep; lateral uses radius * tan(max_yaw) as half-width
    bool symmetric = false;     // lateral: sweep [-w, w] instead of [0, w]
};

// The scene center lies on the reference optical axis at depth `radius`; cameras[0] is the
// identity pose and every camera looks at the center.
inline std::vector<Camera> make_trajectory(TrajectoryKind kind, int K, const TrajectoryParams& params,
                                           const Intrinsics& intrinsics) {
    if (K < 1) throw std::invalid_argument("trajectory: K must be at least 1");
    if (!(params.radius > 0.0)) throw std::invalid_argument("trajectory: radius must be positive");
    const Vec3 center(0.0, 0.0, params.radius);
    const double max_yaw = params.max_yaw_deg * std::numbers::pi / 180.0;
    std::vector<Camera> cams;
    cams.reserve(K);
    Camera ref;
    ref.K = intrinsics;
    cams.push_back(ref);
    for (int k = 1; k < K; ++k) {
        const double s = K == 1 ? 0.0 : double(k) / double(K - 1);
        Vec3 eye;
        switch (kind) {
            case TrajectoryKind::orbit:
                eye = center + rotation_y(s * max_yaw) * (-center);
                break;
            case TrajectoryKind::arc: {
                // yaw sweep with a rising elevation of up to half the yaw
                const Mat3 pitch = Eigen::AngleAxisd(-0.5 * s * max_yaw, Vec3::UnitX()).toRotationMatrix();
                eye = center + rotation_y(s * max_yaw) * pitch * (-center);
                break;
            }
            case TrajectoryKind::lateral: {
                const double half = params.radius * std::tan(max_yaw);
                const double x = params.symmetric
                                     ? (K == 2 ? half : -half + 2.0 * half * double(k - 1) / double(K - 2))
                                     : half * s;
                eye = Vec3(x, 0.0, 0.0);
                break;
            }
        }
        cams.push_back(look_at(intrinsics, eye, center));
    }
    return cams;
}

// Trajectory text file: header "fx fy cx cy", then one line per camera with 12 reals
// (R row-major, then t).
inline void save_trajectory(const std::string& path, const std::vector<Camera>& cams) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << std::setprecision(17);
    const Intrinsics K = cams.empty() ? Intrinsics{} : cams.front().K;
    os << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << '\n';
    for (const auto& c : cams) {
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) os << c.R(r, col) << ' ';
        os << c.t.x() << ' ' << c.t.y() << ' ' << c.t.z() << '\n';
    }
}

inline std::vector<Camera> load_trajectory(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing file: " + path);
    std::string line;
    Intrinsics K;
    if (!std::getline(is, line)) throw std::runtime_error("trajectory: empty file " + path);
    {
        std::istringstream ls(line);
        if (!(ls >> K.fx >> K.fy >> K.cx >> K.cy)) throw std::runtime_error("trajectory: bad header in " + path);
    }
    std::vector<Camera> cams;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Camera c;
        c.K = K;
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) ls >> c.R(r, col);
        ls >> c.t.x() >> c.t.y() >> c.t.z();
        if (!ls) throw std::runtime_error("trajectory: expected 12 reals per camera line in " + path);
        c.validate();
        cams.push_back(c);
    }
    return cams;
}

}  // namespace scene4d
