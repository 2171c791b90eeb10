#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scene4d/diffusion.hpp"
#include "scene4d/image_ops.hpp"
#include "scene4d/parallel.hpp"
#include "scene4d/rng.hpp"
#include "scene4d/view_grid.hpp"

namespace scene4d {

struct Condition {
    const Image* image = nullptr;
    std::string tag = "default";
};

// eps_theta(z_i, c); a null condition selects the unconditional branch. Implementations must be
// callable concurrently from several threads.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Latent predict_eps(const Latent& z, int i, const Condition* cond) const = 0;
};

// Optional seeded perturbation of the toy denoiser. The clean-latent prior becomes a small
// discrete mixture: in visible latent cells the target plus one of {0, D1, D2, D3}, in hidden
// cells the target plus one of {H0..H3}. Mode fields are smooth, unit-std, scaled by sigma_n.
// Hidden-cell modes depend only on the view index k, so the same "hallucination" vocabulary is
// shared by all frames of a sweep.
struct ToyPerturbation {
    double sigma_n = 0.0;
    Mask visible;  // latent resolution; empty = everything visible
    std::uint64_t seed = 0;
    int t = 0, k = 0;
    double field_blur = 4.0;
};

// Denoiser whose clean-latent prediction is the posterior mean under the prior above. With
// sigma_n = 0 the prediction is the target itself, so
// eps = (z_i - sqrt(abar_i) z*) / sqrt(1 - abar_i) exactly. The unconditional branch uses a
// Gaussian-blurred target.
class ExactToyDenoiser : public Denoiser {
public:
    ExactToyDenoiser(Tensor<double> target, NoiseSchedule schedule, double uncond_blur = 4.0,
                     ToyPerturbation perturbation = {})
        : target_(std::move(target)),
          uncond_(gaussian_blur(target_, uncond_blur)),
          schedule_(std::move(schedule)),
          p_(std::move(perturbation)) {
        if (p_.sigma_n < 0.0) throw std::invalid_argument("toy denoiser: sigma_n must be >= 0");
        if (p_.sigma_n == 0.0) return;
        const std::size_t h = target_.height(), w = target_.width();
        if (p_.visible.size() == 0) p_.visible = Mask({h, w}, 1.0f);
        if (p_.visible.shape() != std::vector<std::size_t>{h, w})
            throw std::invalid_argument("toy denoiser: visibility mask does not match latent size");
        visible_modes_.push_back(Tensor<double>(target_.shape(), 0.0));
        for (std::uint64_t j = 1; j < 4; ++j) visible_modes_.push_back(field({std::uint64_t(p_.t), std::uint64_t(p_.k), j}));
        for (std::uint64_t l = 0; l < 4; ++l) hidden_modes_.push_back(field({0xFFFFu, std::uint64_t(p_.k), l}));
    }

    const Tensor<double>& target() const { return target_; }
    const Tensor<double>& uncond_target() const { return uncond_; }

    Latent predict_eps(const Latent& z, int i, const Condition* cond) const override {
        if (z.step_index != i) throw std::invalid_argument("toy denoiser: latent step tag mismatch");
        require_same_shape(z.data, target_, "toy denoiser");
        const double ab = schedule_.alpha_bar(i);
        const double s = std::sqrt(ab), n = std::sqrt(1.0 - ab);
        const Tensor<double>& mu = cond ? target_ : uncond_;
        Latent eps{Tensor<double>(z.shape()), i};
        if (p_.sigma_n == 0.0) {
            for (std::size_t j = 0; j < eps.data.size(); ++j) eps.data[j] = (z.data[j] - s * mu[j]) / n;
            return eps;
        }
        const Tensor<double> x0 = posterior_mean(z.data, ab, mu);
        for (std::size_t j = 0; j < eps.data.size(); ++j) eps.data[j] = (z.data[j] - s * x0[j]) / n;
        return eps;
    }

private:
    Tensor<double> field(std::initializer_list<std::uint64_t> ids) const {
        std::vector<std::uint64_t> key(ids);
        NoiseStream rng(stream_key(p_.seed, {std::uint64_t(NoiseOp::field), key[0], key[1], key[2]}));
        Tensor<double> f = gaussian_blur(rng.normal_like<double>(target_.shape()), p_.field_blur);
        double m = 0.0, v = 0.0;
        for (double x : f.values()) m += x;
        m /= double(f.size());
        for (double x : f.values()) v += (x - m) * (x - m);
        const double scale = p_.sigma_n / std::sqrt(std::max(v / double(f.size()), 1e-300));
        for (auto& x : f.storage()) x = (x - m) * scale;
        return f;
    }

    // Mixture weights are computed independently for the visible and the hidden region.
    Tensor<double> posterior_mean(const Tensor<double>& z, double ab, const Tensor<double>& mu) const {
        const std::size_t plane = z.height() * z.width(), c = z.channels();
        const double s = std::sqrt(ab), var = 1.0 - ab;
        Tensor<double> x0 = mu;
        for (int region = 0; region < 2; ++region) {
            const bool want_visible = region == 0;
            const auto& modes = want_visible ? visible_modes_ : hidden_modes_;
            std::vector<double> logw(modes.size(), 0.0);
            for (std::size_t j = 0; j < modes.size(); ++j) {
                double cost = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t p = 0; p < plane; ++p) {
                        if ((p_.visible[p] == 1.0f) != want_visible) continue;
                        const std::size_t e = ch * plane + p;
                        const double r = z[e] - s * (mu[e] + modes[j][e]);
                        cost += r * r;
                    }
                logw[j] = -cost / (2.0 * var);
            }
            const double top = *std::max_element(logw.begin(), logw.end());
            double total = 0.0;
            for (auto& l : logw) total += l = std::exp(l - top);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < plane; ++p) {
                    if ((p_.visible[p] == 1.0f) != want_visible) continue;
                    const std::size_t e = ch * plane + p;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < modes.size(); ++j) acc += logw[j] / total * modes[j][e];
                    x0[e] += acc;
                }
        }
        return x0;
    }

    Tensor<double> target_, uncond_;
    NoiseSchedule schedule_;
    ToyPerturbation p_;
    std::vector<Tensor<double>> visible_modes_, hidden_modes_;
};

struct GuidancePolicy {
    double cfg_scale = 7.5;
    bool adaptive_cfg_enabled = true;
    double pcgd_fraction = 0.4;
    bool rlr_enabled = true;
    bool cfg_for_t_gt_1 = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(cfg_scale >= 1.0)) throw std::invalid_argument("guidance: cfg_scale must be >= 1");
        if (!(pcgd_fraction >= 0.0 && pcgd_fraction <= 1.0))
            throw std::invalid_argument("guidance: pcgd_fraction must lie in [0,1]");
    }
};

namespace detail {

inline void require_spatial_mask(const Latent& z, const Mask& m, const char* what) {
    if (m.shape() != std::vector<std::size_t>{z.data.height(), z.data.width()})
        throw std::invalid_argument(std::string(what) + ": mask " + shape_string(m.shape()) +
                                    " does not match latent " + shape_string(z.shape()));
}

// out = m * a + (1 - m) * b with m broadcast over channels
inline Latent select(const Mask& m, const Tensor<double>& a, const Latent& b) {
    const std::size_t plane = m.size();
    Latent out{Tensor<double>(b.shape()), b.step_index};
    for (std::size_t j = 0; j < out.data.size(); ++j) {
        const double w = m[j % plane];
        out.data[j] = w * a[j] + (1.0 - w) * b.data[j];
    }
    return out;
}

}  // namespace detail

// eps = M eps_c + (1 - M) [(1 - s) eps_u + s eps_c]
inline Latent adaptive_cfg_eps(const Denoiser& denoiser, const Latent& z, int i, const Condition& cond,
                               const Mask& mask, double s) {
    detail::require_spatial_mask(z, mask, "adaptive_cfg_eps");
    if (!(s >= 1.0)) throw std::invalid_argument("adaptive_cfg_eps: guidance scale must be >= 1");
    const Latent ec = denoiser.predict_eps(z, i, &cond);
    const Latent eu = denoiser.predict_eps(z, i, nullptr);
    const std::size_t plane = mask.size();
    Latent out{Tensor<double>(z.shape()), i};
    for (std::size_t j = 0; j < out.data.size(); ++j) {
        const double m = mask[j % plane];
        out.data[j] = m * ec.data[j] + (1.0 - m) * ((1.0 - s) * eu.data[j] + s * ec.data[j]);
    }
    return out;
}

inline bool in_pcgd_window(int i, int num_steps, double fraction) {
    const int window = static_cast<int>(std::lround(fraction * num_steps));
    return i > num_steps - window;
}

// Replaces the visible region of z_i with the forward-noised coarse latent.
inline Latent pcgd_fuse(const Latent& z, const Latent& coarse, int i, const Mask& m, const NoiseSchedule& schedule,
                        std::uint64_t noise_key) {
    detail::require_spatial_mask(z, m, "pcgd_fuse");
    require_same_shape(z.data, coarse.data, "pcgd_fuse");
    NoiseStream rng(noise_key);
    const Latent zc = forward_noise(coarse, i, rng.normal_like<double>(coarse.shape()), schedule);
    return detail::select(m, zc.data, z);
}

// Replaces the region missing in both the current view and its first-frame reference with the
// forward-noised reference latent.
inline Latent rlr_fuse(const Latent& z, const Latent& reference, int i, const Mask& m_cur, const Mask& m_ref,
                       const NoiseSchedule& schedule, std::uint64_t noise_key) {
    detail::require_spatial_mask(z, m_cur, "rlr_fuse");
    detail::require_spatial_mask(z, m_ref, "rlr_fuse");
    require_same_shape(z.data, reference.data, "rlr_fuse");
    Mask co_missing(m_cur.shape());
    for (std::size_t p = 0; p < co_missing.size(); ++p) co_missing[p] = (1.0f - m_cur[p]) * (1.0f - m_ref[p]);
    NoiseStream rng(noise_key);
    const Latent zr = forward_noise(reference, i, rng.normal_like<double>(reference.shape()), schedule);
    return detail::select(co_missing, zr.data, z);
}

// Runs the full DDIM loop for cell (t, k) of the coarse grid. references holds the generated
// first-frame row and is required for t > 0 when RLR is on. Column k = 0 is the input video and
// is returned unchanged.
inline Image generate_view(int t, int k, const ViewGrid& coarse, const std::vector<Image>* references,
                           const Denoiser& denoiser, const GuidancePolicy& policy, const NoiseSchedule& schedule,
                           const LatentCodec& codec) {
    policy.validate();
    if (k == 0) return coarse.image(t, 0);
    const bool use_rlr = t > 0 && policy.rlr_enabled;
    if (use_rlr && (!references || static_cast<int>(references->size()) != coarse.K))
        throw std::invalid_argument("generate_view: first-frame references are required for t > 0");

    const Latent coarse_latent = codec.encode(coarse.image(t, k));
    const Mask m = codec.latent_mask(coarse.mask(t, k));
    detail::require_spatial_mask(coarse_latent, m, "generate_view");
    std::optional<Latent> ref_latent;
    Mask m_ref;
    if (use_rlr) {
        ref_latent = codec.encode((*references)[k]);
        require_same_shape(ref_latent->data, coarse_latent.data, "generate_view reference");
        m_ref = codec.latent_mask(coarse.mask(0, k));
    }
    const bool use_cfg = t == 0 || policy.cfg_for_t_gt_1;
    const Mask cfg_mask = policy.adaptive_cfg_enabled ? m : Mask(m.shape(), 0.0f);
    const Condition cond{&coarse.image(t, 0), "default"};

    const int N = schedule.num_steps();
    const auto ut = std::uint64_t(t), uk = std::uint64_t(k);
    NoiseStream init(stream_key(policy.seed, {ut, uk, std::uint64_t(NoiseOp::initial)}));
    Latent z{init.normal_like<double>(coarse_latent.shape()), N};
    for (int i = N; i >= 1; --i) {
        const auto ui = std::uint64_t(i);
        if (in_pcgd_window(i, N, policy.pcgd_fraction))
            z = pcgd_fuse(z, coarse_latent, i, m, schedule, stream_key(policy.seed, {ut, uk, ui, std::uint64_t(NoiseOp::pcgd)}));
        if (use_rlr)
            z = rlr_fuse(z, *ref_latent, i, m, m_ref, schedule, stream_key(policy.seed, {ut, uk, ui, std::uint64_t(NoiseOp::rlr)}));
        const Latent eps = use_cfg ? adaptive_cfg_eps(denoiser, z, i, cond, cfg_mask, policy.cfg_scale)
                                   : denoiser.predict_eps(z, i, &cond);
        z = ddim_step(z, eps, i, schedule).z_prev;
    }
    return codec.decode(z);
}

using DenoiserFactory = std::function<std::shared_ptr<const Denoiser>(int t, int k)>;

// First-frame sweep first, then every later frame against the frozen first-frame row.
inline ViewGrid generate_grid(const ViewGrid& coarse, const DenoiserFactory& make_denoiser, const GuidancePolicy& policy,
                              const NoiseSchedule& schedule, const LatentCodec& codec, unsigned threads = 1) {
    policy.validate();
    if (coarse.images.size() != std::size_t(coarse.T) * coarse.K) throw std::invalid_argument("generate_grid: malformed grid");
    ViewGrid out = coarse;
    auto run_cell = [&](int t, int k, const std::vector<Image>* refs) {
        if (k == 0) {
            out.image(t, 0) = coarse.image(t, 0);
            out.prov(t, 0) = Provenance::reference;
            return;
        }
        const auto d = make_denoiser(t, k);
        out.image(t, k) = generate_view(t, k, coarse, refs, *d, policy, schedule, codec);
        out.prov(t, k) = Provenance::generated;
    };
    parallel_for(std::size_t(coarse.K), threads, [&](std::size_t k) { run_cell(0, int(k), nullptr); });
    if (coarse.T == 1) return out;
    const std::vector<Image> refs(out.images.begin(), out.images.begin() + coarse.K);
    const std::size_t rest = std::size_t(coarse.T - 1) * coarse.K;
    parallel_for(rest, threads, [&](std::size_t c) {
        run_cell(1 + int(c / coarse.K), int(c % coarse.K), &refs);
    });
    return out;
}

enum class ToyTarget { ground_truth, conditioned };

inline std::string to_string(ToyTarget t) { return t == ToyTarget::ground_truth ? "gt" : "conditioned"; }
inline ToyTarget parse_toy_target(const std::string& s) {
    if (s == "gt") return ToyTarget::ground_truth;
    if (s == "conditioned") return ToyTarget::conditioned;
    throw std::invalid_argument("unknown toy target: " + s);
}

struct ToyDenoiserConfig {
    ToyTarget target = ToyTarget::ground_truth;
    double sigma_n = 0.0;
    double uncond_blur_px = 4.0;
    std::uint64_t seed = 0;
};

// Hole filling by normalized Gaussian convolution of the visible pixels; used as the
// conditioned target when no ground truth is available.
inline Image fill_holes(const Image& image, const Mask& mask, double sigma = 4.0) {
    const std::size_t c = image.channels(), plane = mask.size();
    Image weighted(image.shape());
    for (std::size_t j = 0; j < image.size(); ++j) weighted[j] = image[j] * mask[j % plane];
    const Image num = gaussian_blur(weighted, sigma);
    const Mask den = gaussian_blur(mask, sigma);
    Image out = image;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
            if (mask[p] == 1.0f) continue;
            out[ch * plane + p] = den[p] > 1e-6f ? num[ch * plane + p] / den[p] : 0.5f;
        }
    return out;
}

// One toy denoiser per cell. ground_truth targets the oracle view; conditioned targets the
// coarse render where it is visible and the oracle (or a hole fill) elsewhere.
inline DenoiserFactory make_toy_factory(const ViewGrid& coarse, std::optional<ViewGrid> gt, ToyDenoiserConfig cfg,
                                        const NoiseSchedule& schedule, const LatentCodec& codec) {
    if (cfg.target == ToyTarget::ground_truth && !gt)
        throw std::invalid_argument("toy denoiser: ground-truth target needs an oracle grid");
    if (gt && (gt->T != coarse.T || gt->K != coarse.K || gt->H != coarse.H || gt->W != coarse.W))
        throw std::invalid_argument("toy denoiser: oracle grid does not match the coarse grid");
    auto shared_coarse = std::make_shared<const ViewGrid>(coarse);
    auto shared_gt = gt ? std::make_shared<const ViewGrid>(std::move(*gt)) : nullptr;
    return [=](int t, int k) -> std::shared_ptr<const Denoiser> {
        const Mask& m = shared_coarse->mask(t, k);
        Image target;
        if (cfg.target == ToyTarget::ground_truth) {
            target = shared_gt->image(t, k);
        } else {
            const Image& c = shared_coarse->image(t, k);
            const Image hole = shared_gt ? shared_gt->image(t, k) : fill_holes(c, m);
            target = c;
            const std::size_t plane = m.size();
            for (std::size_t j = 0; j < target.size(); ++j)
                if (m[j % plane] != 1.0f) target[j] = hole[j];
        }
        ToyPerturbation p;
        p.sigma_n = cfg.sigma_n;
        p.seed = cfg.seed;
        p.t = t;
        p.k = k;
        p.field_blur = cfg.uncond_blur_px / double(codec.factor());
        if (cfg.sigma_n > 0.0) p.visible = codec.latent_mask(m);
        return std::make_shared<ExactToyDenoiser>(codec.encode(target).data, schedule,
                                                  cfg.uncond_blur_px / double(codec.factor()), p);
    };
}

}  // namespace scene4d
