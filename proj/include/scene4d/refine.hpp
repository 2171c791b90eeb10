#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "scene4d/diffusion.hpp"
#include "scene4d/guidance.hpp"
#include "scene4d/rng.hpp"

namespace scene4d {

struct RefineConfig {
    int steps = 5;         // forward-noising depth
    double w_start = 0.5;  // modulation weight at the noisiest step
    double w_end = 0.0;    // ... and at the last step
    double std_guard = 1e-8;

    double weight(int j) const {  // j = 0 at the first (noisiest) denoising step
        if (steps <= 1) return w_start;
        return w_start + (w_end - w_start) * double(j) / double(steps - 1);
    }
    void validate(const NoiseSchedule& s) const {
        if (steps < 1 || steps > s.num_steps()) throw std::invalid_argument("refine: steps must lie in [1, num_steps]");
        if (w_start < 0 || w_start > 1 || w_end < 0 || w_end > 1)
            throw std::invalid_argument("refine: modulation weights must lie in [0,1]");
    }
};

inline double global_std(const Tensor<double>& t) {
    double m = 0.0, v = 0.0;
    for (double x : t.values()) m += x;
    m /= double(t.size());
    for (double x : t.values()) v += (x - m) * (x - m);
    return std::sqrt(v / double(t.size()));
}

inline Latent refine_start(const Image& rendered, const NoiseSchedule& schedule, const LatentCodec& codec, int steps,
                           std::uint64_t seed) {
    const Latent z0 = codec.encode(rendered);
    NoiseStream rng(stream_key(seed, {std::uint64_t(NoiseOp::refine)}));
    return forward_noise(z0, steps, rng.normal_like<double>(z0.shape()), schedule);
}

// Noise-then-denoise baseline: plain DDIM from the noised render.
inline Image sdedit(const Image& rendered, const Condition& cond, const Denoiser& denoiser,
                    const NoiseSchedule& schedule, const LatentCodec& codec, int steps, std::uint64_t seed) {
    if (steps < 1 || steps > schedule.num_steps()) throw std::invalid_argument("sdedit: steps must lie in [1, num_steps]");
    Latent z = refine_start(rendered, schedule, codec, steps, seed);
    for (int i = steps; i >= 1; --i) z = ddim_step(z, denoiser.predict_eps(z, i, &cond), i, schedule).z_prev;
    return codec.decode(z);
}

// The same loop with the clean prediction pulled toward the generated latent:
// z~ = w_i gamma_i z_gen + (1 - w_i) z_{0<-i}, gamma_i = std(z_{0<-i}) / std(z_gen).
inline Image modulation_refine(const Image& rendered, const Image& generated, const Denoiser& denoiser,
                               const NoiseSchedule& schedule, const LatentCodec& codec, const RefineConfig& cfg,
                               std::uint64_t seed) {
    cfg.validate(schedule);
    require_same_shape(rendered, generated, "modulation_refine");
    const Latent z_gen = codec.encode(generated);
    const double gen_std = global_std(z_gen.data);
    const Condition cond{&generated, "default"};
    Latent z = refine_start(rendered, schedule, codec, cfg.steps, seed);
    for (int i = cfg.steps, j = 0; i >= 1; --i, ++j) {
        const Latent eps = denoiser.predict_eps(z, i, &cond);
        Tensor<double> z0 = predict_clean(z.data, eps.data, i, schedule);
        const double gamma = gen_std < cfg.std_guard ? 1.0 : global_std(z0) / gen_std;
        const double w = cfg.weight(j);
        for (std::size_t e = 0; e < z0.size(); ++e) z0[e] = w * gamma * z_gen.data[e] + (1.0 - w) * z0[e];
        z = Latent{ddim_update(z.data, z0, i, schedule), i - 1};
    }
    return codec.decode(z);
}

// ---------------------------------------------------------------------------
// Feature-free perceptual surrogate: over three pyramid levels (full, 1/2, 1/4 by 2x average
// pooling), L1 between 3x3 local means plus L1 between horizontal and vertical gradient
// magnitudes, averaged over levels. Differentiable w.r.t. the first argument.

namespace percep {

using Buf = Tensor<double>;

inline Buf pool2(const Buf& a) {
    const std::size_t c = a.channels(), h = a.height() / 2, w = a.width() / 2;
    Buf out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.at(ch, y, x) = 0.25 * (a.at(ch, 2 * y, 2 * x) + a.at(ch, 2 * y, 2 * x + 1) + a.at(ch, 2 * y + 1, 2 * x) +
                                           a.at(ch, 2 * y + 1, 2 * x + 1));
    return out;
}

inline void pool2_backward(const Buf& g, Buf& ga) {
    for (std::size_t ch = 0; ch < g.channels(); ++ch)
        for (std::size_t y = 0; y < g.height(); ++y)
            for (std::size_t x = 0; x < g.width(); ++x) {
                const double v = 0.25 * g.at(ch, y, x);
                ga.at(ch, 2 * y, 2 * x) += v;
                ga.at(ch, 2 * y, 2 * x + 1) += v;
                ga.at(ch, 2 * y + 1, 2 * x) += v;
                ga.at(ch, 2 * y + 1, 2 * x + 1) += v;
            }
}

inline std::size_t clampi(long v, std::size_t n) { return std::size_t(std::clamp<long>(v, 0, long(n) - 1)); }

inline Buf box3(const Buf& a) {
    const std::size_t c = a.channels(), h = a.height(), w = a.width();
    Buf out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) s += a.at(ch, clampi(long(y) + dy, h), clampi(long(x) + dx, w));
                out.at(ch, y, x) = s / 9.0;
            }
    return out;
}

inline void box3_backward(const Buf& g, Buf& ga) {
    const std::size_t c = g.channels(), h = g.height(), w = g.width();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx)
                        ga.at(ch, clampi(long(y) + dy, h), clampi(long(x) + dx, w)) += g.at(ch, y, x) / 9.0;
}

inline double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// One pyramid level; accumulates dL/da into ga when requested.
inline double level_loss(const Buf& a, const Buf& b, Buf* ga) {
    const std::size_t c = a.channels(), h = a.height(), w = a.width();
    double loss = 0.0;
    const Buf ma = box3(a), mb = box3(b);
    Buf gm;
    if (ga) gm = Buf(a.shape(), 0.0);
    for (std::size_t e = 0; e < ma.size(); ++e) {
        const double d = ma[e] - mb[e];
        loss += std::abs(d) / double(ma.size());
        if (ga) gm[e] = sgn(d) / double(ma.size());
    }
    if (ga) box3_backward(gm, *ga);
    // horizontal then vertical finite differences
    for (int axis = 0; axis < 2; ++axis) {
        const std::size_t hh = axis == 0 ? h : h - 1, ww = axis == 0 ? w - 1 : w;
        if (hh == 0 || ww == 0) continue;
        const double n = double(c * hh * ww);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < hh; ++y)
                for (std::size_t x = 0; x < ww; ++x) {
                    const std::size_t y2 = axis == 0 ? y : y + 1, x2 = axis == 0 ? x + 1 : x;
                    const double da = a.at(ch, y2, x2) - a.at(ch, y, x);
                    const double db = b.at(ch, y2, x2) - b.at(ch, y, x);
                    const double d = std::abs(da) - std::abs(db);
                    loss += std::abs(d) / n;
                    if (ga) {
                        const double g = sgn(d) * sgn(da) / n;
                        ga->at(ch, y2, x2) += g;
                        ga->at(ch, y, x) -= g;
                    }
                }
    }
    return loss;
}

}  // namespace percep

inline double perceptual_loss(const Tensor<double>& a, const Tensor<double>& b, Tensor<double>* grad_a = nullptr,
                              int levels = 3) {
    require_same_shape(a, b, "perceptual_loss");
    std::vector<percep::Buf> pa{a}, pb{b};
    for (int l = 1; l < levels; ++l) {
        if (pa.back().height() < 2 || pa.back().width() < 2) break;
        pa.push_back(percep::pool2(pa.back()));
        pb.push_back(percep::pool2(pb.back()));
    }
    const double inv = 1.0 / double(pa.size());
    std::vector<percep::Buf> grads;
    double loss = 0.0;
    for (std::size_t l = 0; l < pa.size(); ++l) {
        if (grad_a) grads.emplace_back(pa[l].shape(), 0.0);
        loss += inv * percep::level_loss(pa[l], pb[l], grad_a ? &grads[l] : nullptr);
    }
    if (grad_a) {
        for (std::size_t l = pa.size(); l-- > 1;) percep::pool2_backward(grads[l], grads[l - 1]);
        *grad_a = std::move(grads[0]);
        for (auto& g : grad_a->storage()) g *= inv;
    }
    return loss;
}

}  // namespace scene4d
