#include <gtest/gtest.h>

#include <random>

#include "scene4d/image_ops.hpp"
#include "scene4d/refine.hpp"

using namespace scene4d;

namespace {

Image random_image(std::uint64_t seed, std::size_t h = 16, std::size_t w = 16) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.05f, 0.95f);
    Image img({3, h, w});
    for (auto& v : img.storage()) v = u(rng);
    return img;
}

NoiseSchedule schedule() { return build_schedule(50, 0.001, 0.2); }

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(double(a[j]) - double(b[j])));
    return m;
}

}  // namespace

TEST(Refine, ZeroWeightMatchesSdedit) {
    const auto sch = schedule();
    const LatentCodec codec;
    const Image rendered = random_image(1), generated = random_image(2);
    const ExactToyDenoiser toy(generated.cast<double>(), sch);
    RefineConfig cfg;
    cfg.w_start = cfg.w_end = 0.0;
    const Condition cond{&generated};
    const Image a = modulation_refine(rendered, generated, toy, sch, codec, cfg, 77);
    const Image b = sdedit(rendered, cond, toy, sch, codec, cfg.steps, 77);
    EXPECT_EQ(a, b);
}

TEST(Refine, FullWeightReproducesGenerated) {
    const auto sch = schedule();
    const LatentCodec codec;
    const Image rendered = random_image(3), generated = random_image(4);
    const ExactToyDenoiser toy(generated.cast<double>(), sch);
    RefineConfig cfg;
    cfg.w_start = cfg.w_end = 1.0;
    EXPECT_LE(max_abs_diff(modulation_refine(rendered, generated, toy, sch, codec, cfg, 5), generated), 1e-3);
}

TEST(Refine, ConsistentRenderIsPreserved) {
    const auto sch = schedule();
    const LatentCodec codec;
    const Image generated = random_image(6, 32, 32);
    const ExactToyDenoiser toy(generated.cast<double>(), sch);
    const Image out = modulation_refine(generated, generated, toy, sch, codec, RefineConfig{}, 9);
    EXPECT_GE(psnr(out, generated), 45.0);
}

TEST(Refine, DefaultWeightsDecayLinearly) {
    RefineConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.weight(0), 0.5);
    EXPECT_DOUBLE_EQ(cfg.weight(2), 0.25);
    EXPECT_DOUBLE_EQ(cfg.weight(4), 0.0);
}

TEST(Refine, ConstantGeneratedImageUsesGuard) {
    const auto sch = schedule();
    const LatentCodec codec;
    const Image rendered = random_image(7);
    const Image flat({3, 16, 16}, 0.4f);
    const ExactToyDenoiser toy(flat.cast<double>(), sch);
    const Image out = modulation_refine(rendered, flat, toy, sch, codec, RefineConfig{}, 1);
    for (float v : out.values()) ASSERT_TRUE(std::isfinite(v));
    EXPECT_GE(psnr(out, flat), 40.0);
}

TEST(Refine, RejectsBadDepth) {
    const auto sch = build_schedule(4, 0.001, 0.2);
    const LatentCodec codec;
    const Image img = random_image(8);
    const ExactToyDenoiser toy(img.cast<double>(), sch);
    EXPECT_THROW(modulation_refine(img, img, toy, sch, codec, RefineConfig{}, 0), std::invalid_argument);
    EXPECT_THROW(sdedit(img, Condition{&img}, toy, sch, codec, 0, 0), std::invalid_argument);
    RefineConfig bad;
    bad.steps = 3;
    bad.w_start = 1.5;
    EXPECT_THROW(bad.validate(sch), std::invalid_argument);
}

TEST(Refine, ShapeMismatchRejected) {
    const auto sch = schedule();
    const Image a = random_image(1, 16, 16), b = random_image(1, 8, 8);
    const ExactToyDenoiser toy(b.cast<double>(), sch);
    EXPECT_THROW(modulation_refine(a, b, toy, sch, LatentCodec{}, RefineConfig{}, 0), std::invalid_argument);
}

TEST(PerceptualLoss, ZeroForIdenticalInputs) {
    const auto a = random_image(10).cast<double>();
    Tensor<double> g;
    EXPECT_EQ(perceptual_loss(a, a, &g), 0.0);
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(PerceptualLoss, UniformOffsetOnlyMovesMeans) {
    const auto a = random_image(11).cast<double>();
    auto b = a;
    for (auto& v : b.storage()) v += 0.1;
    // a uniform offset moves the local means but leaves gradients alone
    EXPECT_NEAR(perceptual_loss(a, b), 0.1, 1e-12);
}

TEST(PerceptualLoss, GradientMatchesFiniteDifferences) {
    const auto a = random_image(12, 12, 12).cast<double>();
    const auto b = random_image(13, 12, 12).cast<double>();
    Tensor<double> g;
    perceptual_loss(a, b, &g);
    const double h = 1e-7;
    int checked = 0;
    for (std::size_t j = 0; j < a.size(); j += 7) {
        auto p = a, m = a;
        p[j] += h;
        m[j] -= h;
        const double fd = (perceptual_loss(p, b) - perceptual_loss(m, b)) / (2 * h);
        // piecewise linear: skip elements where a kink lies within the stencil
        auto p2 = a, m2 = a;
        p2[j] += 2 * h;
        m2[j] -= 2 * h;
        const double fd2 = (perceptual_loss(p2, b) - perceptual_loss(m2, b)) / (4 * h);
        if (std::abs(fd - fd2) > 1e-6) continue;
        EXPECT_NEAR(fd, g[j], 1e-6) << "element " << j;
        ++checked;
    }
    EXPECT_GT(checked, 40);
}
