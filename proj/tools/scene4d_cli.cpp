// scene4d: staged 4D scene generation on synthetic scenes.
//
//   scene4d run --run out/desk --preset desk
//   scene4d generate --run out/desk --no-rlr --set seed=3
//
// Every subcommand works inside one run directory. synth and run build their configuration
// from the preset, --config and --set; later stages start from the run's config.kv.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "scene4d/pipeline.hpp"

using namespace scene4d;

namespace {

struct Options {
    std::string run_dir = "run";
    std::string preset;
    std::string config_file;
    std::vector<std::string> sets;
    unsigned threads = 1;
    bool no_adaptive_cfg = false, no_pcgd = false, no_rlr = false, no_fine = false, no_modulation = false;
    bool quiet = false;
};

RunConfig resolve(const Options& o, bool fresh) {
    const RunLayout run{o.run_dir};
    RunConfig base = o.preset == "desk" ? RunConfig::desk_preset() : RunConfig{};
    if (!fresh && o.preset.empty() && std::filesystem::exists(run.config())) base = from_kv(KeyValue::load(run.config()));
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!o.config_file.empty()) pairs = KeyValue::load(o.config_file).entries();
    for (const auto& s : o.sets) pairs.push_back(parse_assignment(s));
    if (o.no_adaptive_cfg) pairs.emplace_back("guidance.adaptive_cfg", "false");
    if (o.no_pcgd) pairs.emplace_back("guidance.pcgd_fraction", "0");
    if (o.no_rlr) pairs.emplace_back("guidance.rlr", "false");
    if (o.no_fine) pairs.emplace_back("train.fine", "false");
    if (o.no_modulation) pairs.emplace_back("train.modulation", "false");
    return apply_overrides(base, pairs);
}

void add_common(CLI::App* app, Options& o) {
    app->add_option("--run", o.run_dir, "run directory")->capture_default_str();
    app->add_option("--preset", o.preset, "base configuration")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--config", o.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", o.sets, "override one key (key=value), repeatable");
    app->add_option("--threads", o.threads, "worker threads; results do not depend on it")->capture_default_str();
    app->add_flag("--no-adaptive-cfg", o.no_adaptive_cfg, "plain CFG everywhere");
    app->add_flag("--no-pcgd", o.no_pcgd, "disable point-cloud-guided denoising");
    app->add_flag("--no-rlr", o.no_rlr, "disable reference latent replacement");
    app->add_flag("--no-fine", o.no_fine, "coarse fitting only");
    app->add_flag("--no-modulation", o.no_modulation, "supervise held-out cells directly by the generated views");
    app->add_flag("-q,--quiet", o.quiet, "no progress output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scene4d: 4D scene generation from a single synthetic video"};
    app.require_subcommand(1);
    Options o;

    auto* synth = app.add_subcommand("synth", "write the input bundle (synthetic or copied)");
    auto* geometry = app.add_subcommand("geometry", "aggregate point clouds and render the coarse grid");
    auto* generate = app.add_subcommand("generate", "fill the multi-view grid with the guided sampler");
    auto* fit = app.add_subcommand("fit", "fit dynamic splats (coarse then fine stage)");
    auto* render = app.add_subcommand("render", "render a checkpoint along a trajectory");
    auto* metrics = app.add_subcommand("metrics", "score a saved grid");
    auto* run = app.add_subcommand("run", "all stages plus metrics");
    auto* show = app.add_subcommand("config", "print the resolved configuration");
    for (auto* s : {synth, geometry, generate, fit, render, metrics, run, show}) add_common(s, o);

    std::string checkpoint, trajectory, out;
    std::vector<double> times;
    std::size_t height = 0, width = 0;
    render->add_option("--checkpoint", checkpoint, "scene checkpoint directory (default <run>/fit/scene)");
    render->add_option("--trajectory", trajectory, "camera file (default: the coarse grid cameras)");
    render->add_option("--times", times, "frame times, 0-based and possibly fractional (default: every frame)");
    render->add_option("--height", height, "image height (default H)");
    render->add_option("--width", width, "image width (default W)");
    render->add_option("--out", out, "output directory (default <run>/novel)");

    std::string grid, gt, coarse, clouds, name = "metrics";
    metrics->add_option("--grid", grid, "grid to score (default <run>/generated)");
    metrics->add_option("--gt", gt, "ground-truth grid (default <run>/bundle/gt when present)");
    metrics->add_option("--coarse", coarse, "coarse grid for visible deviation (default <run>/geometry/coarse)");
    metrics->add_option("--clouds", clouds, "point clouds for consistency (default <run>/geometry/clouds)");
    metrics->add_option("--out", out, "output directory (default <run>/metrics)");
    metrics->add_option("--name", name, "report file stem")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    if (o.quiet) log_sink() = nullptr;

    try {
        const bool fresh = synth->parsed() || run->parsed();
        const RunConfig cfg = resolve(o, fresh);
        const RunLayout layout{o.run_dir};
        const unsigned threads = std::max(1u, o.threads);
        if (show->parsed()) {
            std::cout << to_kv(cfg).str();
        } else if (synth->parsed()) {
            cmd_synth(cfg, layout);
        } else if (geometry->parsed()) {
            cmd_geometry(cfg, layout, threads);
        } else if (generate->parsed()) {
            cmd_generate(cfg, layout, threads);
        } else if (fit->parsed()) {
            cmd_fit(cfg, layout, threads);
        } else if (render->parsed()) {
            if (checkpoint.empty()) checkpoint = layout.scene();
            if (trajectory.empty()) trajectory = layout.coarse() + "/cameras.txt";
            if (out.empty()) out = o.run_dir + "/novel";
            if (times.empty())
                for (int t = 0; t < cfg.T; ++t) times.push_back(double(t));
            cmd_render(cfg, checkpoint, trajectory, times, height ? height : cfg.H, width ? width : cfg.W, out, threads);
        } else if (metrics->parsed()) {
            if (grid.empty()) grid = layout.generated();
            if (gt.empty() && std::filesystem::exists(layout.gt() + "/grid.kv")) gt = layout.gt();
            if (coarse.empty() && std::filesystem::exists(layout.coarse() + "/grid.kv")) coarse = layout.coarse();
            if (clouds.empty() && std::filesystem::exists(layout.clouds() + "/clouds.kv")) clouds = layout.clouds();
            if (out.empty()) out = layout.metrics();
            const MetricsReport r = cmd_metrics(cfg, grid, gt, coarse, clouds, out, name);
            std::cout << metrics_text(r);
        } else if (run->parsed()) {
            cmd_run(cfg, layout, threads);
            std::cout << std::ifstream(layout.metrics() + "/final_fit.txt").rdbuf();
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const MissingInput& e) {
        std::cerr << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
