#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/diffusion.hpp"
#include "scene4d/guidance.hpp"
#include "scene4d/kv.hpp"
#include "scene4d/refine.hpp"
#include "scene4d/scene_oracle.hpp"
#include "scene4d/train.hpp"

namespace scene4d {

// Every hyperparameter of a run. Defaults are the paper-scale values; desk_preset() holds
// the small scene the tests use.
struct RunConfig {
    // scene
    std::string bundle;  // existing bundle directory; empty = synthesize
    std::size_t H = 576, W = 1024;
    int T = 16, K = 25;
    std::uint64_t seed = 0;
    MotionKind motion = MotionKind::linear;
    double speed_px = 1.0;
    double sphere_radius = 0.5;
    TrajectoryKind trajectory = TrajectoryKind::orbit;
    TrajectoryParams trajectory_params{};
    int footprint = 1;

    // diffusion and guidance
    int num_steps = 50;
    double beta_start = 0.001, beta_end = 0.2;
    CodecMode codec = CodecMode::identity;
    GuidancePolicy guidance{};
    ToyDenoiserConfig denoiser{};

    // 4D fitting
    RefineConfig refine{};
    int coarse_iters = 9000, fine_iters = 1000;
    double lr_start = 1.6e-3, lr_end = 1.6e-4;
    double lambda = 0.1;
    int refresh_every = 100;
    bool fine_enabled = true;
    bool modulation_enabled = true;
    std::size_t max_splats = 20000;

    static RunConfig desk_preset() {
        RunConfig c;
        c.H = c.W = 64;
        c.T = 8;
        c.K = 9;
        c.max_splats = 5000;
        return c;
    }

    SceneSpec scene_spec() const {
        SceneSpec s;
        s.H = H;
        s.W = W;
        s.T = T;
        s.K = K;
        s.seed = seed;
        s.motion = motion;
        s.speed_px = speed_px;
        s.sphere_radius = sphere_radius;
        s.trajectory = trajectory;
        s.trajectory_params = trajectory_params;
        return s;
    }

    NoiseSchedule schedule() const { return build_schedule(num_steps, beta_start, beta_end); }

    GuidancePolicy policy() const {
        GuidancePolicy p = guidance;
        p.seed = seed;
        return p;
    }

    ToyDenoiserConfig toy() const {
        ToyDenoiserConfig d = denoiser;
        d.seed = seed;
        return d;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.coarse_iters = coarse_iters;
        t.fine_iters = fine_enabled ? fine_iters : 0;
        t.lr_start = lr_start;
        t.lr_end = lr_end;
        t.lambda = lambda;
        t.refresh_every = refresh_every;
        t.modulation = modulation_enabled;
        t.seed = seed;
        return t;
    }

    RefineConfig refine_config() const {
        RefineConfig r = refine;
        if (!modulation_enabled) r.w_start = r.w_end = 0.0;
        return r;
    }
};

inline std::string to_string(CodecMode m) { return m == CodecMode::identity ? "identity" : "avgpool2"; }
inline CodecMode parse_codec_mode(const std::string& s) {
    if (s == "identity") return CodecMode::identity;
    if (s == "avgpool2") return CodecMode::avgpool2;
    throw std::invalid_argument("unknown codec '" + s + "'");
}

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid configuration:";
        for (const auto& e : p) s += "\n  " + e;
        return s;
    }
    std::vector<std::string> problems_;
};

namespace config_detail {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline long long to_int(const std::string& v) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return x;
}

inline double to_real(const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
    return x;
}

inline bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

inline std::string from_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
Field int_field(std::string key, T RunConfig::*member) {
    return {std::move(key), [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member](RunConfig& c, const std::string& v) {
                const long long x = to_int(v);
                if constexpr (std::is_unsigned_v<T>)
                    if (x < 0) throw std::invalid_argument("must be non-negative");
                c.*member = T(x);
            }};
}

inline Field real_field(std::string key, std::function<double&(RunConfig&)> ref) {
    return {std::move(key), [ref](const RunConfig& c) { return format_real(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = to_real(v); }};
}

inline Field bool_field(std::string key, std::function<bool&(RunConfig&)> ref) {
    return {std::move(key), [ref](const RunConfig& c) { return from_bool(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = to_bool(v); }};
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v;
        v.push_back({"bundle", [](const RunConfig& c) { return c.bundle; },
                     [](RunConfig& c, const std::string& s) { c.bundle = s; }});
        v.push_back(int_field("H", &RunConfig::H));
        v.push_back(int_field("W", &RunConfig::W));
        v.push_back(int_field("T", &RunConfig::T));
        v.push_back(int_field("K", &RunConfig::K));
        v.push_back(int_field("seed", &RunConfig::seed));
        v.push_back({"scene.motion", [](const RunConfig& c) { return to_string(c.motion); },
                     [](RunConfig& c, const std::string& s) { c.motion = parse_motion_kind(s); }});
        v.push_back(real_field("scene.speed_px", [](RunConfig& c) -> double& { return c.speed_px; }));
        v.push_back(real_field("scene.sphere_radius", [](RunConfig& c) -> double& { return c.sphere_radius; }));
        v.push_back({"trajectory.kind", [](const RunConfig& c) { return to_string(c.trajectory); },
                     [](RunConfig& c, const std::string& s) { c.trajectory = parse_trajectory_kind(s); }});
        v.push_back(real_field("trajectory.radius", [](RunConfig& c) -> double& { return c.trajectory_params.radius; }));
        v.push_back(real_field("trajectory.max_yaw_deg",
                               [](RunConfig& c) -> double& { return c.trajectory_params.max_yaw_deg; }));
        v.push_back(bool_field("trajectory.symmetric", [](RunConfig& c) -> bool& { return c.trajectory_params.symmetric; }));
        v.push_back(int_field("geometry.footprint", &RunConfig::footprint));
        v.push_back(int_field("diffusion.steps", &RunConfig::num_steps));
        v.push_back(real_field("diffusion.beta_start", [](RunConfig& c) -> double& { return c.beta_start; }));
        v.push_back(real_field("diffusion.beta_end", [](RunConfig& c) -> double& { return c.beta_end; }));
        v.push_back({"diffusion.codec", [](const RunConfig& c) { return to_string(c.codec); },
                     [](RunConfig& c, const std::string& s) { c.codec = parse_codec_mode(s); }});
        v.push_back(real_field("guidance.cfg_scale", [](RunConfig& c) -> double& { return c.guidance.cfg_scale; }));
        v.push_back(bool_field("guidance.adaptive_cfg", [](RunConfig& c) -> bool& { return c.guidance.adaptive_cfg_enabled; }));
        v.push_back(real_field("guidance.pcgd_fraction", [](RunConfig& c) -> double& { return c.guidance.pcgd_fraction; }));
        v.push_back(bool_field("guidance.rlr", [](RunConfig& c) -> bool& { return c.guidance.rlr_enabled; }));
        v.push_back(bool_field("guidance.cfg_later_frames", [](RunConfig& c) -> bool& { return c.guidance.cfg_for_t_gt_1; }));
        v.push_back({"denoiser.target", [](const RunConfig& c) { return to_string(c.denoiser.target); },
                     [](RunConfig& c, const std::string& s) { c.denoiser.target = parse_toy_target(s); }});
        v.push_back(real_field("denoiser.sigma_n", [](RunConfig& c) -> double& { return c.denoiser.sigma_n; }));
        v.push_back(real_field("denoiser.uncond_blur_px", [](RunConfig& c) -> double& { return c.denoiser.uncond_blur_px; }));
        v.push_back({"refine.steps", [](const RunConfig& c) { return std::to_string(c.refine.steps); },
                     [](RunConfig& c, const std::string& s) { c.refine.steps = int(to_int(s)); }});
        v.push_back(real_field("refine.w_start", [](RunConfig& c) -> double& { return c.refine.w_start; }));
        v.push_back(real_field("refine.w_end", [](RunConfig& c) -> double& { return c.refine.w_end; }));
        v.push_back(real_field("refine.std_guard", [](RunConfig& c) -> double& { return c.refine.std_guard; }));
        v.push_back(int_field("train.coarse_iters", &RunConfig::coarse_iters));
        v.push_back(int_field("train.fine_iters", &RunConfig::fine_iters));
        v.push_back(real_field("train.lr_start", [](RunConfig& c) -> double& { return c.lr_start; }));
        v.push_back(real_field("train.lr_end", [](RunConfig& c) -> double& { return c.lr_end; }));
        v.push_back(real_field("train.lambda", [](RunConfig& c) -> double& { return c.lambda; }));
        v.push_back(int_field("train.refresh_every", &RunConfig::refresh_every));
        v.push_back(bool_field("train.fine", [](RunConfig& c) -> bool& { return c.fine_enabled; }));
        v.push_back(bool_field("train.modulation", [](RunConfig& c) -> bool& { return c.modulation_enabled; }));
        v.push_back(int_field("train.max_splats", &RunConfig::max_splats));
        return v;
    }();
    return f;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& f : config_detail::fields()) k.push_back(f.key);
    return k;
}

inline KeyValue to_kv(const RunConfig& c) {
    KeyValue kv;
    for (const auto& f : config_detail::fields()) kv.set(f.key, f.get(c));
    return kv;
}

// Range checks; returns one message per offending key.
inline std::vector<std::string> config_problems(const RunConfig& c) {
    std::vector<std::string> p;
    auto need = [&](bool ok, const std::string& key, const std::string& what) {
        if (!ok) p.push_back(key + ": " + what);
    };
    need(c.H >= 2, "H", "must be at least 2");
    need(c.W >= 2, "W", "must be at least 2");
    need(c.T >= 1, "T", "must be positive");
    need(c.K >= 1, "K", "must be positive");
    need(c.footprint >= 1 && c.footprint % 2 == 1, "geometry.footprint", "must be a positive odd number");
    need(c.num_steps >= 1, "diffusion.steps", "must be positive");
    need(c.beta_start > 0 && c.beta_start < 1, "diffusion.beta_start", "must lie in (0,1)");
    need(c.beta_end > 0 && c.beta_end < 1, "diffusion.beta_end", "must lie in (0,1)");
    need(c.beta_start <= c.beta_end, "diffusion.beta_start", "must not exceed diffusion.beta_end");
    need(c.codec != CodecMode::avgpool2 || (c.H % 2 == 0 && c.W % 2 == 0), "diffusion.codec",
         "avgpool2 needs even H and W");
    need(c.guidance.cfg_scale >= 1.0, "guidance.cfg_scale", "must be >= 1");
    need(c.guidance.pcgd_fraction >= 0 && c.guidance.pcgd_fraction <= 1, "guidance.pcgd_fraction", "must lie in [0,1]");
    need(c.denoiser.sigma_n >= 0, "denoiser.sigma_n", "must be >= 0");
    need(c.denoiser.uncond_blur_px >= 0, "denoiser.uncond_blur_px", "must be >= 0");
    need(c.refine.steps >= 1 && c.refine.steps <= c.num_steps, "refine.steps", "must lie in [1, diffusion.steps]");
    need(c.refine.w_start >= 0 && c.refine.w_start <= 1, "refine.w_start", "must lie in [0,1]");
    need(c.refine.w_end >= 0 && c.refine.w_end <= 1, "refine.w_end", "must lie in [0,1]");
    need(c.refine.std_guard > 0, "refine.std_guard", "must be positive");
    need(c.coarse_iters >= 0, "train.coarse_iters", "must be >= 0");
    need(c.fine_iters >= 0, "train.fine_iters", "must be >= 0");
    need(c.lr_start > 0, "train.lr_start", "must be positive");
    need(c.lr_end > 0, "train.lr_end", "must be positive");
    need(c.lambda >= 0, "train.lambda", "must be >= 0");
    need(c.refresh_every >= 1, "train.refresh_every", "must be positive");
    need(c.max_splats >= 1, "train.max_splats", "must be positive");
    need(c.trajectory_params.radius > 0, "trajectory.radius", "must be positive");
    return p;
}

inline void validate(const RunConfig& c) {
    auto p = config_problems(c);
    if (!p.empty()) throw ConfigError(std::move(p));
}

// Applies key=value pairs in order. Unknown keys and unparsable values are collected and
// reported together, followed by any range violations.
inline RunConfig apply_overrides(RunConfig c, const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<std::string> problems;
    const auto& fs = config_detail::fields();
    for (const auto& [key, value] : pairs) {
        auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.key == key; });
        if (it == fs.end()) {
            problems.push_back(key + ": unknown key");
            continue;
        }
        try {
            it->set(c, value);
        } catch (const std::exception& e) {
            problems.push_back(key + ": " + e.what());
        }
    }
    for (auto& p : config_problems(c)) problems.push_back(std::move(p));
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

inline RunConfig from_kv(const KeyValue& kv, RunConfig base = {}) { return apply_overrides(std::move(base), kv.entries()); }

inline std::pair<std::string, std::string> parse_assignment(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError({"'" + s + "': expected key=value"});
    return {s.substr(0, eq), s.substr(eq + 1)};
}

// Canonical text form; two configs with equal hashes run identically.
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(to_kv(c).str())); }

}  // namespace scene4d
