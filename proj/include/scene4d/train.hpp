#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "scene4d/image_ops.hpp"
#include "scene4d/parallel.hpp"
#include "scene4d/refine.hpp"
#include "scene4d/splat.hpp"
#include "scene4d/view_grid.hpp"

namespace scene4d {

struct TrainConfig {
    int coarse_iters = 9000;
    int fine_iters = 1000;
    double lr_start = 1.6e-3;
    double lr_end = 1.6e-4;
    double lambda = 0.1;
    int refresh_every = 100;
    bool modulation = true;  // false: held-out cells are supervised directly by the generated views
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-15;
    std::uint64_t seed = 0;
    RenderOptions render{};
};

// lr(k) = lr_start (lr_end / lr_start)^(k / (n - 1))
inline double learning_rate(int iter, int total, double start, double end) {
    if (total <= 1) return start;
    return start * std::pow(end / start, double(iter) / double(total - 1));
}

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& cfg) : m_(n * kSplatParams, 0.0), v_(n * kSplatParams, 0.0), cfg_(cfg) {}

    void step(SplatScene& scene, const std::vector<Splat>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < scene.size(); ++i) {
            auto p = pack(scene.splats[i]);
            const auto g = pack(grads[i]);
            for (std::size_t k = 0; k < kSplatParams; ++k) {
                if (k >= 14 && !scene.motion_trainable[i]) continue;
                double& m = m_[i * kSplatParams + k];
                double& v = v_[i * kSplatParams + k];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[k];
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g[k] * g[k];
                p[k] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.adam_eps);
            }
            scene.splats[i] = unpack(p);
        }
        scene.normalize_rotations();
    }

private:
    std::vector<double> m_, v_;
    TrainConfig cfg_;
    long t_ = 0;
};

inline void add_grads(std::vector<Splat>& into, const std::vector<Splat>& g, double w = 1.0) {
    for (std::size_t i = 0; i < into.size(); ++i) {
        auto a = pack(into[i]);
        const auto b = pack(g[i]);
        for (std::size_t k = 0; k < kSplatParams; ++k) a[k] += w * b[k];
        into[i] = unpack(a);
    }
}

// Mean absolute error and its gradient w.r.t. the render.
inline double l1_loss(const Tensor<double>& render, const Image& target, Tensor<double>* grad) {
    require_same_shape(render, target, "l1");
    const double n = double(render.size());
    double loss = 0.0;
    if (grad) *grad = Tensor<double>(render.shape(), 0.0);
    for (std::size_t j = 0; j < render.size(); ++j) {
        const double d = render[j] - double(target[j]);
        loss += std::abs(d) / n;
        if (grad) (*grad)[j] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
    }
    return loss;
}

using Cell = std::pair<int, int>;

inline std::vector<Cell> anchor_cells(const ViewGrid& g) {
    std::vector<Cell> out;
    for (int t = 0; t < g.T; ++t)
        for (int k = 0; k < g.K; ++k)
            if (t == 0 || k == 0) out.emplace_back(t, k);
    return out;
}

inline std::vector<Cell> held_out_cells(const ViewGrid& g) {
    std::vector<Cell> out;
    for (int t = 1; t < g.T; ++t)
        for (int k = 1; k < g.K; ++k) out.emplace_back(t, k);
    return out;
}

inline void require_anchors(const SplatScene& s, const ViewGrid& g) {
    if (s.T != g.T)
        throw std::invalid_argument("training: scene has T=" + std::to_string(s.T) + " but the grid has T=" +
                                    std::to_string(g.T));
    for (auto [t, k] : anchor_cells(g)) {
        const Provenance p = g.prov(t, k);
        if (p == Provenance::coarse)
            throw std::invalid_argument("training: anchor cell (" + std::to_string(t) + "," + std::to_string(k) +
                                        ") has not been generated");
    }
}

inline Tensor<double> render_cell(const SplatScene& s, const ViewGrid& g, Cell c, const RenderOptions& opt) {
    return render(s, g.cameras[c.second], double(c.first), g.H, g.W, opt).image;
}

inline double anchor_l1(const SplatScene& s, const ViewGrid& g, const RenderOptions& opt) {
    double total = 0.0;
    const auto cells = anchor_cells(g);
    for (auto c : cells) total += l1_loss(render_cell(s, g, c, opt), g.image(c.first, c.second), nullptr);
    return total / double(cells.size());
}

// Deterministic cell order: reshuffled cycles over the cell list, seeded.
class CellSampler {
public:
    CellSampler(std::vector<Cell> cells, std::uint64_t seed) : cells_(std::move(cells)), rng_(seed) {}
    Cell next() {
        if (pos_ == 0) std::shuffle(cells_.begin(), cells_.end(), rng_);
        const Cell c = cells_[pos_];
        pos_ = (pos_ + 1) % cells_.size();
        return c;
    }

private:
    std::vector<Cell> cells_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
};

// Both stages draw anchors from the same stream, so a fine stage with lambda = 0 replays the
// coarse schedule.
inline std::uint64_t anchor_key(std::uint64_t seed) { return stream_key(seed, {11}); }

struct TrainStats {
    double initial_loss = 0.0, final_loss = 0.0;
    std::vector<double> history;  // per-iteration loss on the sampled cell(s)
};

// Stage one: L1 on the anchor cells (first-frame row and reference column), one cell per
// iteration.
inline TrainStats train_coarse(SplatScene& scene, const ViewGrid& grid, const TrainConfig& cfg,
                               const std::function<void(int)>& progress = {}) {
    require_anchors(scene, grid);
    TrainStats st;
    st.initial_loss = anchor_l1(scene, grid, cfg.render);
    Adam opt(scene.size(), cfg);
    CellSampler sampler(anchor_cells(grid), anchor_key(cfg.seed));
    for (int it = 0; it < cfg.coarse_iters; ++it) {
        const Cell c = sampler.next();
        const auto r = render(scene, grid.cameras[c.second], double(c.first), grid.H, grid.W, cfg.render);
        Tensor<double> g;
        st.history.push_back(l1_loss(r.image, grid.image(c.first, c.second), &g));
        opt.step(scene, render_backward(scene, grid.cameras[c.second], r, g, cfg.render),
                 learning_rate(it, cfg.coarse_iters, cfg.lr_start, cfg.lr_end));
        if (progress) progress(it);
    }
    st.final_loss = anchor_l1(scene, grid, cfg.render);
    return st;
}

// Per-cell refinement denoiser for the fine stage.
using RefineDenoiserFactory = std::function<std::shared_ptr<const Denoiser>(int t, int k, const Image& generated)>;

struct FineInputs {
    RefineDenoiserFactory denoiser;
    NoiseSchedule schedule;
    LatentCodec codec;
    RefineConfig refine;
};

// Stage two: anchor L1 plus lambda times the perceptual surrogate between the render of a
// held-out cell and its refined version. Refined targets are recomputed every
// refresh_every iterations from the current renders.
inline TrainStats train_fine(SplatScene& scene, const ViewGrid& grid, const FineInputs& in, const TrainConfig& cfg,
                             const std::function<void(int)>& progress = {}, unsigned threads = 1) {
    require_anchors(scene, grid);
    const auto held = held_out_cells(grid);
    for (auto [t, k] : held)
        if (grid.prov(t, k) != Provenance::generated)
            throw std::invalid_argument("train_fine: cell (" + std::to_string(t) + "," + std::to_string(k) +
                                        ") has no generated view");
    TrainStats st;
    st.initial_loss = anchor_l1(scene, grid, cfg.render);
    Adam opt(scene.size(), cfg);
    CellSampler anchors(anchor_cells(grid), anchor_key(cfg.seed));
    std::optional<CellSampler> others;
    if (!held.empty()) others.emplace(held, stream_key(cfg.seed, {13}));
    std::vector<Image> refined(grid.images.size());
    const int refresh = std::max(1, cfg.refresh_every);

    for (int it = 0; it < cfg.fine_iters; ++it) {
        if (cfg.modulation && cfg.lambda > 0.0 && it % refresh == 0) {
            parallel_for(held.size(), threads, [&](std::size_t n) {
                const Cell c = held[n];
                const Image& gen = grid.image(c.first, c.second);
                const Image ir = to_image(render_cell(scene, grid, c, cfg.render));
                const auto d = in.denoiser(c.first, c.second, gen);
                refined[grid.index(c.first, c.second)] =
                    modulation_refine(ir, gen, *d, in.schedule, in.codec, in.refine,
                                      stream_key(cfg.seed, {std::uint64_t(c.first), std::uint64_t(c.second),
                                                            std::uint64_t(it / refresh)}));
            });
        }
        const double lr = learning_rate(it, cfg.fine_iters, cfg.lr_start, cfg.lr_end);
        const Cell a = anchors.next();
        const auto ra = render(scene, grid.cameras[a.second], double(a.first), grid.H, grid.W, cfg.render);
        Tensor<double> ga;
        double loss = l1_loss(ra.image, grid.image(a.first, a.second), &ga);
        std::vector<Splat> grads = render_backward(scene, grid.cameras[a.second], ra, ga, cfg.render);
        if (others && cfg.lambda > 0.0) {
            const Cell h = others->next();
            const auto rh = render(scene, grid.cameras[h.second], double(h.first), grid.H, grid.W, cfg.render);
            Tensor<double> gh;
            if (cfg.modulation)
                loss += cfg.lambda * perceptual_loss(rh.image, refined[grid.index(h.first, h.second)].cast<double>(), &gh);
            else
                loss += cfg.lambda * l1_loss(rh.image, grid.image(h.first, h.second), &gh);
            add_grads(grads, render_backward(scene, grid.cameras[h.second], rh, gh, cfg.render), cfg.lambda);
        }
        st.history.push_back(loss);
        opt.step(scene, grads, lr);
        if (progress) progress(it);
    }
    st.final_loss = anchor_l1(scene, grid, cfg.render);
    return st;
}

}  // namespace scene4d
