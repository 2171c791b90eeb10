#include <gtest/gtest.h>

#include "scene4d/geometry.hpp"
#include "scene4d/projection.hpp"
#include "scene4d/scene_oracle.hpp"
#include "scene4d/train.hpp"

using namespace scene4d;

namespace {

Camera cam16() {
    Camera c;
    c.K = {20, 20, 7.5, 7.5};
    return c;
}

SplatScene one_splat(int T, Vec3 color_logits = {0, 0, 0}) {
    SplatScene s;
    s.T = T;
    Splat p;
    p.mu = {0, 0, 2};
    p.log_scale = Vec3::Constant(std::log(0.3));
    p.color = color_logits;
    s.splats.push_back(p);
    s.motion_trainable.push_back(false);
    return s;
}

ViewGrid flat_grid(int T, int K, float value) {
    ViewGrid g = ViewGrid::blank(T, K, 16, 16, std::vector<Camera>(std::size_t(K), cam16()), Provenance::generated);
    for (auto& img : g.images) img.storage().assign(img.size(), value);
    for (int t = 0; t < T; ++t) g.prov(t, 0) = Provenance::reference;
    return g;
}

double mean_intensity(const SplatScene& s) {
    const auto r = render(s, cam16(), 0.0, 16, 16);
    double m = 0;
    for (double v : r.image.values()) m += v;
    return m / double(r.image.size());
}

bool same_params(const SplatScene& a, const SplatScene& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (pack(a.splats[i]) != pack(b.splats[i])) return false;
    return true;
}

double max_param_drift(const SplatScene& a, const SplatScene& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto x = pack(a.splats[i]), y = pack(b.splats[i]);
        for (std::size_t k = 0; k < kSplatParams; ++k) m = std::max(m, std::abs(x[k] - y[k]));
    }
    return m;
}

struct Small {
    DynamicSceneBundle bundle;
    FramePointClouds fpc;
};

const Small& small() {
    static const Small s = [] {
        SceneSpec spec;
        spec.H = spec.W = 16;
        spec.T = 3;
        spec.K = 3;
        spec.seed = 5;
        Small out;
        out.bundle = synth_scene(spec);
        out.fpc = aggregate(out.bundle);
        return out;
    }();
    return s;
}

FineInputs toy_inputs(const NoiseSchedule& sch) {
    FineInputs in{[sch](int, int, const Image& gen) -> std::shared_ptr<const Denoiser> {
                      return std::make_shared<ExactToyDenoiser>(gen.cast<double>(), sch);
                  },
                  sch, LatentCodec{}, RefineConfig{}};
    return in;
}

}  // namespace

TEST(LearningRate, ExponentialEndpoints) {
    EXPECT_DOUBLE_EQ(learning_rate(0, 9000, 1.6e-3, 1.6e-4), 1.6e-3);
    EXPECT_NEAR(learning_rate(8999, 9000, 1.6e-3, 1.6e-4), 1.6e-4, 1e-18);
    const double mid = learning_rate(4, 9, 1.6e-3, 1.6e-4);
    EXPECT_NEAR(mid, std::sqrt(1.6e-3 * 1.6e-4), 1e-15);
}

TEST(TrainCoarse, ZeroIterationsLeavesSceneUnchanged) {
    SplatScene s = one_splat(2);
    const SplatScene before = s;
    TrainConfig cfg;
    cfg.coarse_iters = 0;
    const auto st = train_coarse(s, flat_grid(2, 2, 0.7f), cfg);
    EXPECT_TRUE(same_params(s, before));
    EXPECT_EQ(st.initial_loss, st.final_loss);
}

TEST(TrainCoarse, SingleSplatLossMostlyMonotone) {
    SplatScene s = one_splat(1);
    TrainConfig cfg;
    cfg.coarse_iters = 50;
    cfg.lr_start = cfg.lr_end = 1e-2;
    const auto st = train_coarse(s, flat_grid(1, 1, 0.9f), cfg);
    int violations = 0;
    for (std::size_t j = 1; j < st.history.size(); ++j) violations += st.history[j] > st.history[j - 1];
    EXPECT_LE(violations, 5);
    EXPECT_LT(st.final_loss, st.initial_loss);
}

TEST(TrainCoarse, BlackTargetDimsRender) {
    SplatScene s = one_splat(2, {1, 1, 1});
    const double before = mean_intensity(s);
    TrainConfig cfg;
    cfg.coarse_iters = 100;
    const auto st = train_coarse(s, flat_grid(2, 3, 0.0f), cfg);
    EXPECT_LT(mean_intensity(s), before);
    EXPECT_LT(st.final_loss, st.initial_loss);
}

TEST(TrainCoarse, QuaternionsStayUnit) {
    SplatScene s = init_scene(small().fpc, 64);
    TrainConfig cfg;
    cfg.coarse_iters = 20;
    train_coarse(s, *small().bundle.gt_grid, cfg);
    for (const auto& p : s.splats) EXPECT_NEAR(p.q.norm(), 1.0, 1e-12);
}

TEST(TrainCoarse, FitsOracleAnchors) {
    SplatScene s = init_scene(small().fpc, 1000);
    TrainConfig cfg;
    cfg.coarse_iters = 300;
    const auto st = train_coarse(s, *small().bundle.gt_grid, cfg);
    EXPECT_LT(st.final_loss, st.initial_loss);
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!s.motion_trainable[i]) EXPECT_EQ(s.splats[i].v, Vec3::Zero());
}

TEST(TrainCoarse, MissingAnchorsRejected) {
    ViewGrid g = flat_grid(2, 2, 0.5f);
    g.prov(0, 1) = Provenance::coarse;
    SplatScene s = one_splat(2);
    EXPECT_THROW(train_coarse(s, g, TrainConfig{}), std::invalid_argument);
    SplatScene wrong_t = one_splat(3);
    EXPECT_THROW(train_coarse(wrong_t, flat_grid(2, 2, 0.5f), TrainConfig{}), std::invalid_argument);
}

TEST(TrainFine, ZeroLambdaIsContinuedCoarseTraining) {
    const auto& g = *small().bundle.gt_grid;
    ViewGrid grid = g;
    for (int t = 1; t < grid.T; ++t)
        for (int k = 1; k < grid.K; ++k) grid.prov(t, k) = Provenance::generated;
    SplatScene a = init_scene(small().fpc, 200), b = a;
    TrainConfig cfg;
    cfg.coarse_iters = cfg.fine_iters = 15;
    cfg.lambda = 0.0;
    train_coarse(a, grid, cfg);
    train_fine(b, grid, toy_inputs(build_schedule(50, 0.001, 0.2)), cfg);
    EXPECT_TRUE(same_params(a, b));
}

// Adam steps are roughly lr in size whatever the gradient magnitude, so the near-fixed point
// is checked at lr = 5e-5. The loss itself is not checked: splats seeded on a plane share
// depths and any motion reorders them.
TEST(TrainFine, PerfectRenderBarelyMoves) {
    const auto& sm = small();
    SplatScene s = init_scene(sm.fpc, 200);
    ViewGrid grid = *sm.bundle.gt_grid;
    for (int t = 0; t < grid.T; ++t)
        for (int k = 0; k < grid.K; ++k) {
            grid.image(t, k) = to_image(render(s, grid.cameras[k], double(t), grid.H, grid.W).image);
            grid.prov(t, k) = k == 0 ? Provenance::reference : Provenance::generated;
        }
    const SplatScene before = s;
    TrainConfig cfg;
    cfg.fine_iters = 10;
    cfg.lr_start = cfg.lr_end = 5e-5;
    FineInputs in = toy_inputs(build_schedule(50, 0.001, 0.2));
    in.refine.w_start = in.refine.w_end = 0.0;
    train_fine(s, grid, in, cfg);
    EXPECT_LE(max_param_drift(s, before), 1e-3);
}

TEST(TrainFine, MissingGeneratedCellsRejected) {
    ViewGrid g = flat_grid(2, 2, 0.5f);
    g.prov(1, 1) = Provenance::coarse;
    SplatScene s = one_splat(2);
    EXPECT_THROW(train_fine(s, g, toy_inputs(build_schedule(50, 0.001, 0.2)), TrainConfig{}), std::invalid_argument);
}

TEST(TrainFine, DirectSupervisionWithoutModulation) {
    SplatScene s = one_splat(2);
    ViewGrid g = flat_grid(2, 2, 0.2f);
    g.image(1, 1).storage().assign(g.image(1, 1).size(), 0.0f);
    TrainConfig cfg;
    cfg.fine_iters = 30;
    cfg.modulation = false;
    cfg.lambda = 1.0;
    const double before = mean_intensity(s);
    train_fine(s, g, toy_inputs(build_schedule(50, 0.001, 0.2)), cfg);
    EXPECT_LT(mean_intensity(s), before);
}
