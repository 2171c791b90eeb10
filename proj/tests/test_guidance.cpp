#include <gtest/gtest.h>

#include "scene4d/guidance.hpp"
#include "scene4d/metrics.hpp"
#include "scene4d/scene_oracle.hpp"

using namespace scene4d;

namespace {

const NoiseSchedule& schedule() {
    static const NoiseSchedule s = build_schedule(50, 0.001, 0.2);
    return s;
}

Latent random_latent(std::uint64_t seed, std::vector<std::size_t> shape, int step) {
    NoiseStream s(seed, {42});
    return {s.normal_like<double>(shape), step};
}

// Denoiser with unrelated random conditional/unconditional outputs.
class RandomDenoiser : public Denoiser {
public:
    Latent predict_eps(const Latent& z, int i, const Condition* cond) const override {
        return random_latent(cond ? 1000 + i : 2000 + i, z.shape(), i);
    }
};

Mask checker(std::size_t h, std::size_t w) {
    Mask m({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) m.at(y, x) = float((x + y) % 2);
    return m;
}

struct SmallScene {
    DynamicSceneBundle bundle;
    ViewGrid coarse;
    ViewGrid gt;
};

const SmallScene& small_scene() {
    static const SmallScene s = [] {
        SceneSpec spec;
        spec.H = spec.W = 32;
        spec.T = 3;
        spec.K = 4;
        spec.seed = 3;
        SmallScene out;
        out.bundle = synth_scene(spec);
        out.gt = *out.bundle.gt_grid;
        out.coarse = render_grid(aggregate(out.bundle), out.gt.cameras, out.bundle.frames, spec.H, spec.W);
        return out;
    }();
    return s;
}

}  // namespace

TEST(AdaptiveCfg, AllVisibleIsConditional) {
    RandomDenoiser d;
    const Condition c;
    const Latent z = random_latent(1, {3, 4, 5}, 7);
    const Latent out = adaptive_cfg_eps(d, z, 7, c, Mask({4, 5}, 1.0f), 7.5);
    EXPECT_EQ(out.data, d.predict_eps(z, 7, &c).data);
}

TEST(AdaptiveCfg, AllHiddenIsClassifierFree) {
    RandomDenoiser d;
    const Condition c;
    const Latent z = random_latent(1, {3, 4, 5}, 7);
    const Latent out = adaptive_cfg_eps(d, z, 7, c, Mask({4, 5}, 0.0f), 7.5);
    const Latent ec = d.predict_eps(z, 7, &c), eu = d.predict_eps(z, 7, nullptr);
    for (std::size_t j = 0; j < out.data.size(); ++j) {
        const double cfg = eu.data[j] + 7.5 * (ec.data[j] - eu.data[j]);
        EXPECT_NEAR(out.data[j], cfg, 1e-14 * std::max(1.0, std::abs(cfg)));
    }
}

TEST(AdaptiveCfg, UnitScaleIsConditionalForAnyMask) {
    RandomDenoiser d;
    const Condition c;
    const Latent z = random_latent(1, {3, 4, 6}, 3);
    const Latent out = adaptive_cfg_eps(d, z, 3, c, checker(4, 6), 1.0);
    EXPECT_EQ(out.data, d.predict_eps(z, 3, &c).data);
}

TEST(AdaptiveCfg, MixedMaskSelectsPerPosition) {
    RandomDenoiser d;
    const Condition c;
    const Latent z = random_latent(1, {2, 3, 3}, 4);
    const Mask m = checker(3, 3);
    const Latent out = adaptive_cfg_eps(d, z, 4, c, m, 3.0);
    const Latent ec = d.predict_eps(z, 4, &c), eu = d.predict_eps(z, 4, nullptr);
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t p = 0; p < 9; ++p) {
            const std::size_t j = ch * 9 + p;
            if (m[p] == 1.0f)
                EXPECT_EQ(out.data[j], ec.data[j]);
            else
                EXPECT_NEAR(out.data[j], eu.data[j] + 3.0 * (ec.data[j] - eu.data[j]), 1e-13);
        }
}

TEST(AdaptiveCfg, Errors) {
    RandomDenoiser d;
    const Latent z = random_latent(1, {3, 4, 5}, 7);
    EXPECT_THROW(adaptive_cfg_eps(d, z, 7, Condition{}, Mask({5, 4}, 1.0f), 7.5), std::invalid_argument);
    EXPECT_THROW(adaptive_cfg_eps(d, z, 7, Condition{}, Mask({4, 5}, 1.0f), 0.5), std::invalid_argument);
}

TEST(ToyDenoiser, ExactNoisePrediction) {
    const Tensor<double> target = random_latent(5, {3, 8, 8}, 0).data;
    const ExactToyDenoiser d(target, schedule());
    const Latent z = random_latent(6, {3, 8, 8}, 12);
    const Condition c;
    const Latent ec = d.predict_eps(z, 12, &c);
    const Latent eu = d.predict_eps(z, 12, nullptr);
    const double ab = schedule().alpha_bar(12);
    const Tensor<double> blurred = gaussian_blur(target, 4.0);
    for (std::size_t j = 0; j < z.data.size(); ++j) {
        EXPECT_DOUBLE_EQ(ec.data[j], (z.data[j] - std::sqrt(ab) * target[j]) / std::sqrt(1 - ab));
        EXPECT_DOUBLE_EQ(eu.data[j], (z.data[j] - std::sqrt(ab) * blurred[j]) / std::sqrt(1 - ab));
    }
}

TEST(ToyDenoiser, CleanPredictionIsTarget) {
    const Tensor<double> target = random_latent(5, {3, 8, 8}, 0).data;
    const ExactToyDenoiser d(target, schedule());
    const Latent z = random_latent(6, {3, 8, 8}, 30);
    const Condition c;
    const auto r = ddim_step(z, d.predict_eps(z, 30, &c), 30, schedule());
    for (std::size_t j = 0; j < target.size(); ++j) EXPECT_NEAR(r.z0_hat.data[j], target[j], 1e-12);
}

// With a strongly informative latent the perturbed posterior collapses onto the nearest mode,
// and for target + 0 that mode is the zero perturbation.
TEST(ToyDenoiser, PerturbedPosteriorCollapsesNearCleanEnd) {
    const Tensor<double> target = random_latent(5, {3, 16, 16}, 0).data;
    ToyPerturbation p;
    p.sigma_n = 0.1;
    p.seed = 9;
    const ExactToyDenoiser d(target, schedule(), 4.0, p);
    NoiseStream rng(77);
    const Latent z = forward_noise({target, 0}, 1, rng.normal_like<double>(target.shape()), schedule());
    const Condition c;
    const auto r = ddim_step(z, d.predict_eps(z, 1, &c), 1, schedule());
    // the hidden region is empty by default; the visible region sees modes {0, D1, D2, D3}
    for (std::size_t j = 0; j < target.size(); ++j) EXPECT_NEAR(r.z0_hat.data[j], target[j], 1e-6);
}

TEST(ToyDenoiser, RejectsBadInputs) {
    const Tensor<double> target({3, 4, 4}, 0.5);
    ToyPerturbation p;
    p.sigma_n = -1;
    EXPECT_THROW(ExactToyDenoiser(target, schedule(), 4.0, p), std::invalid_argument);
    const ExactToyDenoiser d(target, schedule());
    EXPECT_THROW(d.predict_eps(random_latent(1, {3, 4, 5}, 2), 2, nullptr), std::invalid_argument);
    EXPECT_THROW(d.predict_eps(random_latent(1, {3, 4, 4}, 2), 3, nullptr), std::invalid_argument);
}

TEST(PcgdFuse, ZeroAndFullMasks) {
    const Latent z = random_latent(1, {3, 4, 4}, 20);
    const Latent c = random_latent(2, {3, 4, 4}, 0);
    EXPECT_EQ(pcgd_fuse(z, c, 20, Mask({4, 4}, 0.0f), schedule(), 99).data, z.data);
    NoiseStream rng(99);
    const Latent expected = forward_noise(c, 20, rng.normal_like<double>(c.shape()), schedule());
    const Latent full = pcgd_fuse(z, c, 20, Mask({4, 4}, 1.0f), schedule(), 99);
    EXPECT_EQ(full.data, expected.data);
    EXPECT_EQ(full.step_index, 20);
}

TEST(PcgdFuse, HalfMaskSelectsElementwise) {
    const Latent z = random_latent(1, {3, 4, 4}, 20);
    const Latent c = random_latent(2, {3, 4, 4}, 0);
    const Mask m = checker(4, 4);
    const Latent out = pcgd_fuse(z, c, 20, m, schedule(), 5);
    const Latent full = pcgd_fuse(z, c, 20, Mask({4, 4}, 1.0f), schedule(), 5);
    for (std::size_t j = 0; j < out.data.size(); ++j)
        EXPECT_EQ(out.data[j], m[j % 16] == 1.0f ? full.data[j] : z.data[j]);
}

TEST(PcgdFuse, IsAProjection) {
    const Latent z = random_latent(1, {3, 4, 4}, 20);
    const Latent c = random_latent(2, {3, 4, 4}, 0);
    const Latent once = pcgd_fuse(z, c, 20, checker(4, 4), schedule(), 5);
    EXPECT_EQ(pcgd_fuse(once, c, 20, checker(4, 4), schedule(), 5).data, once.data);
    EXPECT_THROW(pcgd_fuse(z, random_latent(2, {3, 4, 5}, 0), 20, checker(4, 4), schedule(), 5), std::invalid_argument);
}

TEST(RlrFuse, TruthTable) {
    const Latent z = random_latent(1, {1, 1, 4}, 10);
    const Latent ref = random_latent(2, {1, 1, 4}, 0);
    const Mask cur({1, 4}, std::vector<float>{0, 0, 1, 1});
    const Mask refm({1, 4}, std::vector<float>{0, 1, 0, 1});
    const Latent out = rlr_fuse(z, ref, 10, cur, refm, schedule(), 3);
    NoiseStream rng(3);
    const Latent zr = forward_noise(ref, 10, rng.normal_like<double>(ref.shape()), schedule());
    EXPECT_EQ(out.data[0], zr.data[0]);  // missing in both: replaced
    EXPECT_EQ(out.data[1], z.data[1]);   // reference observed it
    EXPECT_EQ(out.data[2], z.data[2]);
    EXPECT_EQ(out.data[3], z.data[3]);
}

TEST(RlrFuse, TrivialMasksAndProjection) {
    const Latent z = random_latent(1, {3, 4, 4}, 10);
    const Latent ref = random_latent(2, {3, 4, 4}, 0);
    EXPECT_EQ(rlr_fuse(z, ref, 10, Mask({4, 4}, 1.0f), Mask({4, 4}, 0.0f), schedule(), 3).data, z.data);
    NoiseStream rng(3);
    const Latent zr = forward_noise(ref, 10, rng.normal_like<double>(ref.shape()), schedule());
    EXPECT_EQ(rlr_fuse(z, ref, 10, Mask({4, 4}, 0.0f), Mask({4, 4}, 0.0f), schedule(), 3).data, zr.data);
    const Latent once = rlr_fuse(z, ref, 10, checker(4, 4), Mask({4, 4}, 0.0f), schedule(), 3);
    EXPECT_EQ(rlr_fuse(once, ref, 10, checker(4, 4), Mask({4, 4}, 0.0f), schedule(), 3).data, once.data);
}

TEST(PcgdWindow, EarlyStepsOnly) {
    int n = 0;
    for (int i = 1; i <= 50; ++i) n += in_pcgd_window(i, 50, 0.4);
    EXPECT_EQ(n, 20);
    EXPECT_TRUE(in_pcgd_window(31, 50, 0.4));
    EXPECT_FALSE(in_pcgd_window(30, 50, 0.4));
    for (int i = 1; i <= 50; ++i) {
        EXPECT_FALSE(in_pcgd_window(i, 50, 0.0));
        EXPECT_TRUE(in_pcgd_window(i, 50, 1.0));
    }
}

TEST(GuidancePolicy, Validation) {
    GuidancePolicy p;
    p.cfg_scale = 0.9;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = {};
    p.pcgd_fraction = 1.5;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(GenerateView, ReferenceColumnBypass) {
    const auto& s = small_scene();
    const ExactToyDenoiser d(Tensor<double>({3, 32, 32}, 0.0), schedule());
    EXPECT_EQ(generate_view(1, 0, s.coarse, nullptr, d, {}, schedule(), LatentCodec{}), s.bundle.frames[1]);
}

TEST(GenerateView, FullyVisibleCellReproducesCoarse) {
    const auto& s = small_scene();
    ViewGrid g = s.coarse;
    g.mask(0, 2) = Mask({32, 32}, 1.0f);
    const ExactToyDenoiser d(LatentCodec{}.encode(g.image(0, 2)).data, schedule());
    const Image out = generate_view(0, 2, g, nullptr, d, {}, schedule(), LatentCodec{});
    EXPECT_GE(psnr(out, g.image(0, 2)), 45.0);
}

TEST(GenerateView, VisiblePixelsMatchCoarseRender) {
    const auto& s = small_scene();
    ToyDenoiserConfig cfg;
    cfg.target = ToyTarget::conditioned;
    const auto factory = make_toy_factory(s.coarse, s.gt, cfg, schedule(), LatentCodec{});
    const Image out = generate_view(0, 3, s.coarse, nullptr, *factory(0, 3), {}, schedule(), LatentCodec{});
    const Mask& m = s.coarse.mask(0, 3);
    for (std::size_t j = 0; j < out.size(); ++j)
        if (m[j % m.size()] == 1.0f) ASSERT_NEAR(out[j], s.coarse.image(0, 3)[j], 1e-3);
}

TEST(GenerateView, MissingReferencesRejected) {
    const auto& s = small_scene();
    const ExactToyDenoiser d(Tensor<double>({3, 32, 32}, 0.0), schedule());
    EXPECT_THROW(generate_view(1, 1, s.coarse, nullptr, d, {}, schedule(), LatentCodec{}), std::invalid_argument);
    GuidancePolicy no_rlr;
    no_rlr.rlr_enabled = false;
    EXPECT_NO_THROW(generate_view(1, 1, s.coarse, nullptr, d, no_rlr, schedule(), LatentCodec{}));
    ViewGrid bad = s.coarse;
    bad.mask(0, 1) = Mask({16, 16}, 1.0f);
    EXPECT_THROW(generate_view(0, 1, bad, nullptr, d, {}, schedule(), LatentCodec{}), std::invalid_argument);
}

TEST(GenerateGrid, ExactDenoisersReproduceLaterFrames) {
    const auto& s = small_scene();
    const auto factory = make_toy_factory(s.coarse, s.gt, {}, schedule(), LatentCodec{});
    const ViewGrid g = generate_grid(s.coarse, factory, {}, schedule(), LatentCodec{});
    for (int t = 0; t < g.T; ++t) {
        EXPECT_EQ(g.image(t, 0), s.bundle.frames[t]);
        EXPECT_EQ(g.prov(t, 0), Provenance::reference);
        for (int k = 1; k < g.K; ++k) {
            EXPECT_EQ(g.prov(t, k), Provenance::generated);
            // CFG is off after the first frame, so the exact conditional target is reached
            if (t > 0) EXPECT_GE(psnr(g.image(t, k), s.gt.image(t, k)), 60.0);
        }
    }
}

TEST(GenerateGrid, ReproducibleAndThreadIndependent) {
    const auto& s = small_scene();
    ToyDenoiserConfig cfg;
    cfg.target = ToyTarget::conditioned;
    cfg.sigma_n = 0.1;
    cfg.seed = 4;
    const auto factory = make_toy_factory(s.coarse, s.gt, cfg, schedule(), LatentCodec{});
    GuidancePolicy p;
    p.seed = 11;
    const ViewGrid a = generate_grid(s.coarse, factory, p, schedule(), LatentCodec{}, 1);
    const ViewGrid b = generate_grid(s.coarse, factory, p, schedule(), LatentCodec{}, 3);
    for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i], b.images[i]);
    p.seed = 12;
    const ViewGrid c = generate_grid(s.coarse, factory, p, schedule(), LatentCodec{}, 1);
    EXPECT_NE(a.image(1, 2), c.image(1, 2));
}

TEST(GenerateGrid, SingleFrameRunsOnlyFirstSweep) {
    const auto& s = small_scene();
    ViewGrid one = ViewGrid::blank(1, s.coarse.K, 32, 32, s.coarse.cameras);
    ViewGrid gt1 = one;
    for (int k = 0; k < one.K; ++k) {
        one.image(0, k) = s.coarse.image(0, k);
        one.mask(0, k) = s.coarse.mask(0, k);
        gt1.image(0, k) = s.gt.image(0, k);
    }
    const auto factory = make_toy_factory(one, gt1, {}, schedule(), LatentCodec{});
    const ViewGrid g = generate_grid(one, factory, {}, schedule(), LatentCodec{});
    EXPECT_EQ(g.T, 1);
    EXPECT_EQ(g.prov(0, 1), Provenance::generated);
}

// Replacing the co-missing region with the first-frame latent pulls later frames toward the
// first-frame generation there.
TEST(GenerateGrid, ReferenceReplacementReducesCoMissingDifference) {
    const auto& s = small_scene();
    ToyDenoiserConfig cfg;
    cfg.target = ToyTarget::conditioned;
    cfg.sigma_n = 0.1;
    cfg.seed = 2;
    const auto factory = make_toy_factory(s.coarse, s.gt, cfg, schedule(), LatentCodec{});
    GuidancePolicy on, off;
    off.rlr_enabled = false;
    auto diff = [&](const ViewGrid& g) {
        MaskedMean m;
        for (int t = 1; t < g.T; ++t)
            for (int k = 1; k < g.K; ++k) {
                const Mask cm = co_missing_mask(g, t, k);
                for (std::size_t j = 0; j < g.image(t, k).size(); ++j)
                    if (cm[j % cm.size()] == 1.0f) m.add(std::abs(g.image(t, k)[j] - g.image(0, k)[j]));
            }
        return *m.value();
    };
    const double with = diff(generate_grid(s.coarse, factory, on, schedule(), LatentCodec{}));
    const double without = diff(generate_grid(s.coarse, factory, off, schedule(), LatentCodec{}));
    EXPECT_LT(with, without);
}

TEST(FillHoles, KeepsVisiblePixels) {
    Image img = Image::image(3, 8, 8, 0.0f);
    Mask m({8, 8}, 0.0f);
    for (std::size_t x = 0; x < 4; ++x)
        for (std::size_t y = 0; y < 8; ++y) {
            m.at(y, x) = 1.0f;
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = 0.25f;
        }
    const Image out = fill_holes(img, m);
    for (float v : out.values()) EXPECT_NEAR(v, 0.25f, 1e-6);
    EXPECT_EQ(fill_holes(img, Mask({8, 8}, 0.0f)).at(0, 0, 0), 0.5f);
}
