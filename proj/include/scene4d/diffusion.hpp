#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scene4d/tensor.hpp"

namespace scene4d {

// Discrete diffusion schedule over steps 1..num_steps. alpha_bar(0) is defined as 1 so the
// last DDIM step lands on the predicted clean latent.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) throw std::invalid_argument("schedule: num_steps must be positive");
        NoiseSchedule s;
        s.beta_ = std::move(betas);
        s.alpha_bar_.resize(s.beta_.size());
        double prod = 1.0;
        for (std::size_t i = 0; i < s.beta_.size(); ++i) {
            const double b = s.beta_[i];
            if (!(b > 0.0 && b < 1.0))
                throw std::invalid_argument("schedule: beta must lie in (0,1), got " + std::to_string(b));
            prod *= (1.0 - b);
            s.alpha_bar_[i] = prod;
        }
        return s;
    }

    int num_steps() const { return static_cast<int>(beta_.size()); }

    double beta(int i) const { return beta_.at(check(i, 1) - 1); }

    double alpha_bar(int i) const {
        check(i, 0);
        return i == 0 ? 1.0 : alpha_bar_[i - 1];
    }

    // DDIM coefficients: z_{i-1} = a_i z_i + b_i z_{0<-i}.
    double a(int i) const {
        check(i, 1);
        return std::sqrt((1.0 - alpha_bar(i - 1)) / (1.0 - alpha_bar(i)));
    }
    double b(int i) const { return std::sqrt(alpha_bar(i - 1)) - std::sqrt(alpha_bar(i)) * a(i); }

    const std::vector<double>& betas() const { return beta_; }
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

private:
    int check(int i, int lo) const {
        if (i < lo || i > num_steps())
            throw std::out_of_range("schedule: step index " + std::to_string(i) + " outside [" +
                                    std::to_string(lo) + ", " + std::to_string(num_steps()) + "]");
        return i;
    }

    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

inline NoiseSchedule build_schedule(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw std::invalid_argument("schedule: num_steps must be positive");
    if (!(beta_start > 0.0 && beta_end < 1.0))
        throw std::invalid_argument("schedule: betas must lie in (0,1)");
    if (beta_start > beta_end) throw std::invalid_argument("schedule: beta_start > beta_end");
    std::vector<double> betas(num_steps);
    for (int i = 0; i < num_steps; ++i)
        betas[i] = num_steps == 1 ? beta_start
                                  : beta_start + (beta_end - beta_start) * double(i) / double(num_steps - 1);
    return NoiseSchedule::from_betas(std::move(betas));
}

struct Latent {
    Tensor<double> data;  // [C,H,W]
    int step_index = 0;   // 0 = clean

    const std::vector<std::size_t>& shape() const { return data.shape(); }
};

inline void require_finite(const Tensor<double>& t, const char* what) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite latent entry");
}

// z_i = sqrt(abar_i) z0 + sqrt(1 - abar_i) eps
inline Latent forward_noise(const Latent& z0, int i, const Tensor<double>& eps, const NoiseSchedule& schedule) {
    if (z0.step_index != 0) throw std::invalid_argument("forward_noise: input latent is not clean");
    if (i < 1 || i > schedule.num_steps()) throw std::out_of_range("forward_noise: step index out of range");
    require_same_shape(z0.data, eps, "forward_noise");
    const double s = std::sqrt(schedule.alpha_bar(i));
    const double n = std::sqrt(1.0 - schedule.alpha_bar(i));
    Latent out{Tensor<double>(z0.data.shape()), i};
    for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] = s * z0.data[j] + n * eps[j];
    return out;
}

inline Latent forward_noise(const Latent& z0, int i, const Latent& eps, const NoiseSchedule& schedule) {
    return forward_noise(z0, i, eps.data, schedule);
}

// z_{0<-i} = (z_i - sqrt(1 - abar_i) eps_hat) / sqrt(abar_i)
inline Tensor<double> predict_clean(const Tensor<double>& z_i, const Tensor<double>& eps_hat, int i,
                                    const NoiseSchedule& schedule) {
    require_same_shape(z_i, eps_hat, "predict_clean");
    const double s = std::sqrt(schedule.alpha_bar(i));
    const double n = std::sqrt(1.0 - schedule.alpha_bar(i));
    Tensor<double> out(z_i.shape());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (z_i[j] - n * eps_hat[j]) / s;
    return out;
}

// z_{i-1} = a_i z_i + b_i z_{0<-i}; shared by plain DDIM and the modulated refinement loop.
inline Tensor<double> ddim_update(const Tensor<double>& z_i, const Tensor<double>& z0_hat, int i,
                                  const NoiseSchedule& schedule) {
    require_same_shape(z_i, z0_hat, "ddim_update");
    const double a = schedule.a(i);
    const double b = schedule.b(i);
    Tensor<double> out(z_i.shape());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = a * z_i[j] + b * z0_hat[j];
    return out;
}

struct DdimResult {
    Latent z_prev;
    Latent z0_hat;
};

inline DdimResult ddim_step(const Latent& z_i, const Latent& eps_hat, int i, const NoiseSchedule& schedule) {
    if (i < 1 || i > schedule.num_steps()) throw std::out_of_range("ddim_step: step index must be >= 1");
    if (z_i.step_index != i) throw std::invalid_argument("ddim_step: latent is tagged with a different step");
    require_same_shape(z_i.data, eps_hat.data, "ddim_step");
    Latent z0{predict_clean(z_i.data, eps_hat.data, i, schedule), 0};
    Latent prev{ddim_update(z_i.data, z0.data, i, schedule), i - 1};
    return {std::move(prev), std::move(z0)};
}

// ---------------------------------------------------------------------------

enum class CodecMode { identity, avgpool2 };

// Pixel <-> latent codec standing in for a VAE. avgpool2 halves the spatial resolution by 2x2
// averaging; decoding upsamples bilinearly (pixel-center aligned, edge clamped).
class LatentCodec {
public:
    explicit LatentCodec(CodecMode mode = CodecMode::identity) : mode_(mode) {}

    CodecMode mode() const { return mode_; }
    std::size_t factor() const { return mode_ == CodecMode::avgpool2 ? 2 : 1; }

    Latent encode(const Image& image) const {
        const std::size_t c = image.channels(), h = image.height(), w = image.width();
        if (mode_ == CodecMode::identity) return {image.cast<double>(), 0};
        if (h % 2 || w % 2) throw std::invalid_argument("codec: avgpool2 needs even image dimensions");
        Tensor<double> z({c, h / 2, w / 2});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h / 2; ++y)
                for (std::size_t x = 0; x < w / 2; ++x) {
                    double s = double(image.at(ch, 2 * y, 2 * x)) + double(image.at(ch, 2 * y, 2 * x + 1)) +
                               double(image.at(ch, 2 * y + 1, 2 * x)) + double(image.at(ch, 2 * y + 1, 2 * x + 1));
                    z.at(ch, y, x) = 0.25 * s;
                }
        return {std::move(z), 0};
    }

    Image decode(const Latent& z) const {
        const Tensor<double>& d = z.data;
        const std::size_t c = d.channels(), h = d.height(), w = d.width();
        auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
        if (mode_ == CodecMode::identity) {
            Image out(d.shape());
            for (std::size_t j = 0; j < d.size(); ++j) out[j] = clamp01(d[j]);
            return out;
        }
        Image out({c, 2 * h, 2 * w});
        for (std::size_t y = 0; y < 2 * h; ++y) {
            const double fy = std::clamp((double(y) - 0.5) / 2.0, 0.0, double(h - 1));
            const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
            const double ty = fy - double(y0);
            for (std::size_t x = 0; x < 2 * w; ++x) {
                const double fx = std::clamp((double(x) - 0.5) / 2.0, 0.0, double(w - 1));
                const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
                const double tx = fx - double(x0);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double top = (1 - tx) * d.at(ch, y0, x0) + tx * d.at(ch, y0, x1);
                    const double bot = (1 - tx) * d.at(ch, y1, x0) + tx * d.at(ch, y1, x1);
                    out.at(ch, y, x) = clamp01((1 - ty) * top + ty * bot);
                }
            }
        }
        return out;
    }

    // Visibility at latent resolution: a latent cell is visible iff at least half of the pixels
    // it covers are visible.
    Mask latent_mask(const Mask& mask) const {
        if (mode_ == CodecMode::identity) return mask;
        const std::size_t h = mask.height(), w = mask.width();
        if (h % 2 || w % 2) throw std::invalid_argument("codec: avgpool2 needs even mask dimensions");
        Mask out({h / 2, w / 2});
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) {
                const float s = mask.at(2 * y, 2 * x) + mask.at(2 * y, 2 * x + 1) + mask.at(2 * y + 1, 2 * x) +
                                mask.at(2 * y + 1, 2 * x + 1);
                out.at(y, x) = s >= 2.0f ? 1.0f : 0.0f;
            }
        return out;
    }

private:
    CodecMode mode_;
};

}  // namespace scene4d
