#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "scene4d/config.hpp"
#include "scene4d/geometry.hpp"
#include "scene4d/guidance.hpp"
#include "scene4d/metrics.hpp"
#include "scene4d/projection.hpp"
#include "scene4d/scene_oracle.hpp"
#include "scene4d/splat.hpp"
#include "scene4d/train.hpp"

namespace scene4d {

// Run directory layout. Every stage reads its inputs from here and writes one subdirectory
// with a stage.kv manifest.
struct RunLayout {
    std::string root;
    std::string config() const { return root + "/config.kv"; }
    std::string bundle() const { return root + "/bundle"; }
    std::string gt() const { return root + "/bundle/gt"; }
    std::string geometry() const { return root + "/geometry"; }
    std::string clouds() const { return root + "/geometry/clouds"; }
    std::string coarse() const { return root + "/geometry/coarse"; }
    std::string generated() const { return root + "/generated"; }
    std::string fit() const { return root + "/fit"; }
    std::string coarse_scene() const { return root + "/fit/coarse"; }
    std::string scene() const { return root + "/fit/scene"; }
    std::string renders() const { return root + "/renders"; }
    std::string metrics() const { return root + "/metrics"; }
    std::string timings() const { return root + "/timings.kv"; }
};

inline constexpr const char* kManifestName = "stage.kv";
// Manifest keys that legitimately differ between identical runs.
inline const std::vector<std::string> kVolatileKeys = {"timestamp", "wall_clock_s"};

class MissingInput : public std::runtime_error {
public:
    MissingInput(const std::string& stage, const std::string& path, const std::string& hint)
        : std::runtime_error(stage + ": missing input " + path + (hint.empty() ? "" : " (" + hint + ")")) {}
};

inline void require_input(const std::string& stage, const std::string& path, const std::string& hint = {}) {
    if (!std::filesystem::exists(path)) throw MissingInput(stage, path, hint);
}

inline std::function<void(const std::string&)>& log_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& m) { std::clog << m << '\n'; };
    return sink;
}
inline void log_line(const std::string& m) {
    if (log_sink()) log_sink()(m);
}

// Content hash of a file or directory tree: sorted relative paths and bytes. Manifests are
// skipped so the hash only covers stage products.
inline std::string hash_tree(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(path)) return hash_file(path);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a("");
    for (const auto& f : files) {
        h = fnv1a(fs::relative(f, path).generic_string(), h);
        std::ifstream is(f, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        h = fnv1a(ss.str(), h);
    }
    return hex64(h);
}

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_;
};

inline void write_manifest(const std::string& dir, const std::string& stage, const RunConfig& cfg,
                           const std::vector<std::pair<std::string, std::string>>& inputs, double seconds) {
    KeyValue kv;
    kv.set("stage", stage);
    kv.set("config_hash", config_hash(cfg));
    kv.set("seed", std::to_string(cfg.seed));
    for (const auto& [name, path] : inputs) kv.set("input." + name, hash_tree(path));
    kv.set("output_hash", hash_tree(dir));
    kv.set("wall_clock_s", seconds);
    kv.set("timestamp", utc_timestamp());
    kv.save(dir + "/" + kManifestName);
}

inline void record_timing(const RunLayout& run, const std::string& stage, double seconds) {
    KeyValue kv;
    if (std::filesystem::exists(run.timings())) kv = KeyValue::load(run.timings());
    kv.set(stage, seconds);
    kv.save(run.timings());
}

inline void reset_dir(const std::string& dir) {
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Stages

inline DynamicSceneBundle cmd_synth(const RunConfig& cfg, const RunLayout& run) {
    StageTimer timer;
    std::filesystem::create_directories(run.root);
    to_kv(cfg).save(run.config());
    DynamicSceneBundle b;
    std::vector<std::pair<std::string, std::string>> inputs;
    if (!cfg.bundle.empty()) {
        require_input("synth", cfg.bundle + "/manifest.kv", "config key 'bundle'");
        b = load_bundle(cfg.bundle);
        inputs.emplace_back("bundle", cfg.bundle);
    } else {
        b = synth_scene(cfg.scene_spec());
    }
    reset_dir(run.bundle());
    save_bundle(b, run.bundle());
    const double s = timer.seconds();
    write_manifest(run.bundle(), "synth", cfg, inputs, s);
    record_timing(run, "synth", s);
    log_line("[synth] " + std::to_string(b.T) + " frames of " + std::to_string(b.W) + "x" + std::to_string(b.H));
    return b;
}

inline std::vector<Camera> run_cameras(const RunConfig& cfg, const DynamicSceneBundle& b) {
    if (b.gt_grid) return b.gt_grid->cameras;
    return make_trajectory(cfg.trajectory, cfg.K, cfg.trajectory_params, b.intrinsics);
}

inline void cmd_geometry(const RunConfig& cfg, const RunLayout& run, unsigned threads = 1) {
    StageTimer timer;
    require_input("geometry", run.bundle() + "/manifest.kv", "run `synth` first");
    const DynamicSceneBundle b = load_bundle(run.bundle());
    const FramePointClouds fpc = aggregate(b);
    const ViewGrid coarse = render_grid(fpc, run_cameras(cfg, b), b.frames, b.H, b.W, cfg.footprint, threads);
    reset_dir(run.geometry());
    save_clouds(run.clouds(), fpc);
    save_grid(run.coarse(), coarse);
    const double s = timer.seconds();
    write_manifest(run.geometry(), "geometry", cfg, {{"bundle", run.bundle()}}, s);
    record_timing(run, "geometry", s);
    log_line("[geometry] " + std::to_string(fpc.static_points.size()) + " static points, " +
             std::to_string(coarse.K) + " views");
}

inline std::optional<ViewGrid> load_gt(const RunLayout& run) {
    if (!std::filesystem::exists(run.gt() + "/grid.kv")) return std::nullopt;
    return load_grid(run.gt());
}

inline void cmd_generate(const RunConfig& cfg, const RunLayout& run, unsigned threads = 1) {
    StageTimer timer;
    require_input("generate", run.coarse() + "/grid.kv", "run `geometry` first");
    const ViewGrid coarse = load_grid(run.coarse());
    const auto gt = load_gt(run);
    const NoiseSchedule schedule = cfg.schedule();
    const LatentCodec codec(cfg.codec);
    const auto factory = make_toy_factory(coarse, gt, cfg.toy(), schedule, codec);
    const ViewGrid out = generate_grid(coarse, factory, cfg.policy(), schedule, codec, threads);
    reset_dir(run.generated());
    save_grid(run.generated(), out);
    const double s = timer.seconds();
    std::vector<std::pair<std::string, std::string>> inputs{{"coarse", run.coarse()}};
    if (gt) inputs.emplace_back("gt", run.gt());
    write_manifest(run.generated(), "generate", cfg, inputs, s);
    record_timing(run, "generate", s);
    log_line("[generate] " + std::to_string(out.T * (out.K - 1)) + " views generated");
}

// Refinement denoiser of the fine stage: the exact toy targeting the generated view.
inline RefineDenoiserFactory refine_denoisers(const RunConfig& cfg) {
    const NoiseSchedule schedule = cfg.schedule();
    const LatentCodec codec(cfg.codec);
    const double blur = cfg.denoiser.uncond_blur_px / double(codec.factor());
    return [=](int, int, const Image& gen) -> std::shared_ptr<const Denoiser> {
        return std::make_shared<ExactToyDenoiser>(codec.encode(gen).data, schedule, blur);
    };
}

inline void cmd_fit(const RunConfig& cfg, const RunLayout& run, unsigned threads = 1) {
    StageTimer timer;
    require_input("fit", run.generated() + "/grid.kv", "run `generate` first");
    require_input("fit", run.clouds() + "/clouds.kv", "run `geometry` first");
    const ViewGrid grid = load_grid(run.generated());
    SplatScene scene = init_scene(load_clouds(run.clouds()), cfg.max_splats);
    const TrainConfig tc = cfg.train();
    reset_dir(run.fit());
    auto progress = [](const char* stage, int total) {
        return [stage, total](int it) {
            if ((it + 1) % 1000 == 0 || it + 1 == total)
                log_line(std::string("[fit] ") + stage + " " + std::to_string(it + 1) + "/" + std::to_string(total));
        };
    };
    const TrainStats coarse = train_coarse(scene, grid, tc, progress("coarse", tc.coarse_iters));
    save_scene(run.coarse_scene(), scene);
    KeyValue stats;
    stats.set("splats", scene.size());
    stats.set("coarse_initial_l1", coarse.initial_loss);
    stats.set("coarse_final_l1", coarse.final_loss);
    if (tc.fine_iters > 0) {
        const FineInputs in{refine_denoisers(cfg), cfg.schedule(), LatentCodec(cfg.codec), cfg.refine_config()};
        const TrainStats fine = train_fine(scene, grid, in, tc, progress("fine", tc.fine_iters), threads);
        stats.set("fine_initial_l1", fine.initial_loss);
        stats.set("fine_final_l1", fine.final_loss);
    }
    save_scene(run.scene(), scene);
    stats.save(run.fit() + "/train.kv");
    const double s = timer.seconds();
    write_manifest(run.fit(), "fit", cfg, {{"generated", run.generated()}, {"clouds", run.clouds()}}, s);
    record_timing(run, "fit", s);
    log_line("[fit] anchor L1 " + format_real(coarse.initial_loss) + " -> " + stats.get(tc.fine_iters > 0 ? "fine_final_l1" : "coarse_final_l1"));
}

// Renders a checkpoint at every (t, k) of the given cameras. Masks are copied from `masks`
// when supplied so co-missing regions stay defined for metrics.
inline ViewGrid render_scene_grid(const SplatScene& scene, const std::vector<Camera>& cameras, int T, std::size_t H,
                                  std::size_t W, const ViewGrid* masks = nullptr, unsigned threads = 1) {
    ViewGrid g = ViewGrid::blank(T, int(cameras.size()), H, W, cameras, Provenance::generated);
    parallel_for(std::size_t(T) * g.K, threads, [&](std::size_t idx) {
        const int t = int(idx / g.K), k = int(idx % g.K);
        g.image(t, k) = to_image(render(scene, cameras[k], double(t), H, W).image);
        g.mask(t, k) = masks ? masks->mask(t, k) : Mask({H, W}, 1.0f);
    });
    return g;
}

// Novel-view rendering of a checkpoint along a trajectory file; one PNG and TEN1 per (t, k).
inline void cmd_render(const RunConfig& cfg, const std::string& checkpoint, const std::string& trajectory,
                       const std::vector<double>& times, std::size_t H, std::size_t W, const std::string& out,
                       unsigned threads = 1) {
    StageTimer timer;
    require_input("render", checkpoint + "/scene.kv", "run `fit` first");
    require_input("render", trajectory);
    const SplatScene scene = load_scene(checkpoint);
    const auto cams = load_trajectory(trajectory);
    reset_dir(out);
    parallel_for(times.size() * cams.size(), threads, [&](std::size_t idx) {
        const std::size_t j = idx / cams.size(), k = idx % cams.size();
        const Image img = to_image(render(scene, cams[k], times[j], H, W).image);
        char name[64];
        std::snprintf(name, sizeof name, "render_f%03zu_k%02zu", j, k);
        save_png(out + "/" + name + ".png", img);
        save_ten1(out + "/" + name + ".ten", img);
    });
    KeyValue kv;
    for (std::size_t j = 0; j < times.size(); ++j) kv.set("time_f" + std::to_string(j), times[j]);
    kv.save(out + "/times.kv");
    write_manifest(out, "render", cfg, {{"checkpoint", checkpoint}, {"trajectory", trajectory}}, timer.seconds());
}

inline std::string metrics_text(const MetricsReport& r) {
    std::ostringstream os;
    if (r.psnr) {
        os << "PSNR mean          " << format_metric(r.psnr->mean) << " dB\n";
        os << "PSNR first row     " << format_metric(r.psnr->first_row) << " dB\n";
        os << "PSNR held-out      " << format_metric(r.psnr->held_out) << " dB\n";
    }
    os << "consistency (L1)   " << format_metric(r.consistency) << '\n';
    os << "flicker            " << format_metric(r.flicker) << '\n';
    os << "visible deviation  " << format_metric(r.visible_deviation) << '\n';
    os << "first-row drift    " << format_metric(r.drift) << '\n';
    return os.str();
}

// Scores a saved grid; gt, coarse and clouds are optional. Writes <name>.kv and <name>.txt,
// plus a manifest unless the caller writes one for the whole directory.
inline MetricsReport cmd_metrics(const RunConfig& cfg, const std::string& grid_dir, const std::string& gt_dir,
                                 const std::string& coarse_dir, const std::string& clouds_dir, const std::string& out,
                                 const std::string& name = "metrics", bool manifest = true) {
    StageTimer timer;
    require_input("metrics", grid_dir + "/grid.kv");
    const ViewGrid g = load_grid(grid_dir);
    std::optional<ViewGrid> gt, coarse;
    std::optional<FramePointClouds> fpc;
    std::vector<std::pair<std::string, std::string>> inputs{{"grid", grid_dir}};
    if (!gt_dir.empty()) {
        require_input("metrics", gt_dir + "/grid.kv");
        gt = load_grid(gt_dir);
        inputs.emplace_back("gt", gt_dir);
    }
    if (!coarse_dir.empty()) {
        require_input("metrics", coarse_dir + "/grid.kv");
        coarse = load_grid(coarse_dir);
        inputs.emplace_back("coarse", coarse_dir);
    }
    if (!clouds_dir.empty()) {
        require_input("metrics", clouds_dir + "/clouds.kv");
        fpc = load_clouds(clouds_dir);
        inputs.emplace_back("clouds", clouds_dir);
    }
    const MetricsReport r = compute_metrics(g, gt ? &*gt : nullptr, coarse ? &*coarse : nullptr, fpc ? &*fpc : nullptr);
    std::filesystem::create_directories(out);
    metrics_kv(r, g).save(out + "/" + name + ".kv");
    std::ofstream(out + "/" + name + ".txt") << metrics_text(r);
    if (manifest) write_manifest(out, "metrics", cfg, inputs, timer.seconds());
    log_line("[metrics] " + name + ": " + (r.psnr ? "PSNR " + format_metric(r.psnr->mean) + " dB" : "no ground truth"));
    return r;
}

// Full chain. Metrics are written for the generated grid and for renders of the coarse-stage
// and final checkpoints at every grid cell.
inline void cmd_run(const RunConfig& cfg, const RunLayout& run, unsigned threads = 1) {
    validate(cfg);
    StageTimer timer;
    std::filesystem::remove_all(run.timings());
    cmd_synth(cfg, run);
    cmd_geometry(cfg, run, threads);
    cmd_generate(cfg, run, threads);
    cmd_fit(cfg, run, threads);

    StageTimer render_timer;
    const ViewGrid coarse = load_grid(run.coarse());
    reset_dir(run.renders());
    for (const auto& [name, ckpt] : {std::pair{std::string("coarse_fit"), run.coarse_scene()},
                                     std::pair{std::string("final_fit"), run.scene()}}) {
        const ViewGrid g = render_scene_grid(load_scene(ckpt), coarse.cameras, coarse.T, coarse.H, coarse.W, &coarse, threads);
        save_grid(run.renders() + "/" + name, g);
    }
    write_manifest(run.renders(), "render", cfg, {{"coarse_scene", run.coarse_scene()}, {"scene", run.scene()}},
                   render_timer.seconds());
    record_timing(run, "render", render_timer.seconds());

    StageTimer metrics_timer;
    reset_dir(run.metrics());
    const std::string gt = std::filesystem::exists(run.gt() + "/grid.kv") ? run.gt() : "";
    cmd_metrics(cfg, run.generated(), gt, run.coarse(), run.clouds(), run.metrics(), "generated", false);
    cmd_metrics(cfg, run.renders() + "/coarse_fit", gt, run.coarse(), run.clouds(), run.metrics(), "coarse_fit", false);
    cmd_metrics(cfg, run.renders() + "/final_fit", gt, run.coarse(), run.clouds(), run.metrics(), "final_fit", false);
    std::vector<std::pair<std::string, std::string>> inputs{{"generated", run.generated()}, {"renders", run.renders()}};
    if (!gt.empty()) inputs.emplace_back("gt", gt);
    write_manifest(run.metrics(), "metrics", cfg, inputs, metrics_timer.seconds());
    record_timing(run, "metrics", metrics_timer.seconds());
    record_timing(run, "total", timer.seconds());
}

// Files that differ between two run trees, ignoring timings.kv and the volatile manifest keys.
inline std::vector<std::string> tree_differences(const std::string& a, const std::string& b) {
    namespace fs = std::filesystem;
    auto listing = [](const std::string& root) {
        std::vector<std::string> out;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
        std::sort(out.begin(), out.end());
        return out;
    };
    auto read = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    auto strip = [](const std::string& text) {
        std::istringstream is(text);
        std::string line, out;
        while (std::getline(is, line)) {
            const std::string key = KeyValue::trim(line.substr(0, line.find('=')));
            if (std::find(kVolatileKeys.begin(), kVolatileKeys.end(), key) == kVolatileKeys.end()) out += line + '\n';
        }
        return out;
    };
    std::vector<std::string> diffs;
    const auto la = listing(a), lb = listing(b);
    std::vector<std::string> all;
    std::set_union(la.begin(), la.end(), lb.begin(), lb.end(), std::back_inserter(all));
    for (const auto& rel : all) {
        if (fs::path(rel).filename() == "timings.kv") continue;
        const fs::path pa = fs::path(a) / rel, pb = fs::path(b) / rel;
        if (!fs::exists(pa) || !fs::exists(pb)) {
            diffs.push_back(rel + " (missing on one side)");
            continue;
        }
        std::string ta = read(pa), tb = read(pb);
        if (fs::path(rel).filename() == kManifestName) ta = strip(ta), tb = strip(tb);
        if (ta != tb) diffs.push_back(rel);
    }
    return diffs;
}

}  // namespace scene4d
