#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scene4d/geometry.hpp"
#include "scene4d/image_ops.hpp"
#include "scene4d/kv.hpp"
#include "scene4d/projection.hpp"
#include "scene4d/view_grid.hpp"

namespace scene4d {

// Mean over a set of pixels; absent when the set is empty.
struct MaskedMean {
    double sum = 0.0;
    std::size_t count = 0;

    void add(double v, std::size_t n = 1) {
        sum += v;
        count += n;
    }
    std::optional<double> value() const {
        if (count == 0) return std::nullopt;
        return sum / double(count);
    }
};

inline void require_same_layout(const ViewGrid& a, const ViewGrid& b, const char* what) {
    if (a.T != b.T || a.K != b.K || a.H != b.H || a.W != b.W)
        throw std::invalid_argument(std::string(what) + ": grids have different layouts");
}

// PSNR of each cell, plus aggregates pooled over MSE (the mean of per-cell PSNR is undefined
// as soon as one cell is exact).
struct PsnrSummary {
    std::vector<double> cells;
    double mean = 0.0;
    double first_row = 0.0;
    std::optional<double> held_out;  // t > 0, k > 0
};

inline PsnrSummary psnr_summary(const ViewGrid& grid, const ViewGrid& gt) {
    require_same_layout(grid, gt, "psnr");
    PsnrSummary s;
    MaskedMean all, row, held;
    for (int t = 0; t < grid.T; ++t)
        for (int k = 0; k < grid.K; ++k) {
            const double mse = mean_squared_error(grid.image(t, k), gt.image(t, k));
            s.cells.push_back(psnr_from_mse(mse));
            all.add(mse);
            if (t == 0) row.add(mse);
            if (t > 0 && k > 0) held.add(mse);
        }
    s.mean = psnr_from_mse(*all.value());
    s.first_row = psnr_from_mse(*row.value());
    if (held.value()) s.held_out = psnr_from_mse(*held.value());
    return s;
}

inline std::optional<double> cell_psnr_pooled(const std::vector<const Image*>& a, const std::vector<const Image*>& b) {
    MaskedMean m;
    for (std::size_t i = 0; i < a.size(); ++i) m.add(mean_squared_error(*a[i], *b[i]));
    if (!m.value()) return std::nullopt;
    return psnr_from_mse(*m.value());
}

// Region missing in the current view and in its first-frame reference.
inline Mask co_missing_mask(const ViewGrid& g, int t, int k) {
    const Mask& cur = g.mask(t, k);
    const Mask& ref = g.mask(0, k);
    Mask out(cur.shape());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0f - cur[p]) * (1.0f - ref[p]);
    return out;
}

// Mean |I(t,k) - I(t-1,k)| over the co-missing pixels of (t,k), all channels, t >= 1.
inline std::optional<double> temporal_flicker(const ViewGrid& g) {
    MaskedMean m;
    const std::size_t plane = g.H * g.W;
    for (int t = 1; t < g.T; ++t)
        for (int k = 0; k < g.K; ++k) {
            const Mask cm = co_missing_mask(g, t, k);
            const Image& a = g.image(t, k);
            const Image& b = g.image(t - 1, k);
            for (std::size_t p = 0; p < plane; ++p) {
                if (cm[p] != 1.0f) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) m.add(std::abs(double(a[ch * plane + p]) - double(b[ch * plane + p])));
            }
        }
    return m.value();
}

// Mean |I - coarse| over the pixels visible in the coarse render, generated cells only.
inline std::optional<double> visible_deviation(const ViewGrid& g, const ViewGrid& coarse) {
    require_same_layout(g, coarse, "visible deviation");
    MaskedMean m;
    const std::size_t plane = g.H * g.W;
    for (int t = 0; t < g.T; ++t)
        for (int k = 1; k < g.K; ++k) {
            const Mask& vis = coarse.mask(t, k);
            for (std::size_t p = 0; p < plane; ++p) {
                if (vis[p] != 1.0f) continue;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    m.add(std::abs(double(g.image(t, k)[ch * plane + p]) - double(coarse.image(t, k)[ch * plane + p])));
            }
        }
    return m.value();
}

// Population std over k of the mean intensity of view (t, k).
inline double channel_mean_drift(const ViewGrid& g, int t = 0) {
    std::vector<double> means;
    for (int k = 0; k < g.K; ++k) {
        double s = 0.0;
        for (float v : g.image(t, k).values()) s += v;
        means.push_back(s / double(g.image(t, k).size()));
    }
    double mu = 0.0, var = 0.0;
    for (double v : means) mu += v;
    mu /= double(means.size());
    for (double v : means) var += (v - mu) * (v - mu);
    return std::sqrt(var / double(means.size()));
}

// Mean L1 between adjacent views over pixel pairs that see the same point of the frame cloud
// (the point wins the z-buffer in both views).
inline std::optional<double> cross_view_consistency(const ViewGrid& g, const FramePointClouds& fpc) {
    if (fpc.T != g.T) throw std::invalid_argument("consistency: cloud frame count differs from grid");
    MaskedMean m;
    const std::size_t plane = g.H * g.W;
    for (int t = 0; t < g.T; ++t) {
        const PointList cloud = frame_cloud(fpc, t);
        std::vector<CoarseRender> renders;
        for (int k = 0; k < g.K; ++k) renders.push_back(splat_coarse(cloud, g.cameras[k], g.H, g.W));
        for (int k = 0; k + 1 < g.K; ++k) {
            std::vector<long> where(cloud.size(), -1);
            for (std::size_t p = 0; p < plane; ++p)
                if (renders[k].winner[p] >= 0) where[renders[k].winner[p]] = long(p);
            for (std::size_t q = 0; q < plane; ++q) {
                const long w = renders[k + 1].winner[q];
                if (w < 0 || where[w] < 0) continue;
                const std::size_t p = std::size_t(where[w]);
                for (std::size_t ch = 0; ch < 3; ++ch)
                    m.add(std::abs(double(g.image(t, k)[ch * plane + p]) - double(g.image(t, k + 1)[ch * plane + q])));
            }
        }
    }
    return m.value();
}

struct MetricsReport {
    std::optional<PsnrSummary> psnr;
    std::optional<double> consistency;
    std::optional<double> flicker;
    std::optional<double> visible_deviation;
    double drift = 0.0;
    std::map<std::string, double> wall_clock;  // seconds per stage
};

inline std::string format_metric(std::optional<double> v) {
    if (!v) return "absent";
    if (std::isinf(*v)) return "inf";
    return format_real(*v);
}

// Machine-readable part of the report. Wall-clock values are kept out of it so reports of
// identical runs compare equal.
inline KeyValue metrics_kv(const MetricsReport& r, const ViewGrid& g) {
    KeyValue kv;
    if (r.psnr) {
        kv.set("psnr_mean", format_metric(r.psnr->mean));
        kv.set("psnr_first_row", format_metric(r.psnr->first_row));
        kv.set("psnr_held_out", format_metric(r.psnr->held_out));
        for (int t = 0; t < g.T; ++t)
            for (int k = 0; k < g.K; ++k)
                kv.set("psnr_" + provenance_key(t, k), format_metric(r.psnr->cells[std::size_t(t) * g.K + k]));
    } else {
        kv.set("psnr_mean", "absent");
    }
    kv.set("consistency_l1", format_metric(r.consistency));
    kv.set("flicker", format_metric(r.flicker));
    kv.set("visible_deviation", format_metric(r.visible_deviation));
    kv.set("drift_first_row", format_metric(r.drift));
    return kv;
}

inline MetricsReport compute_metrics(const ViewGrid& g, const ViewGrid* gt, const ViewGrid* coarse,
                                     const FramePointClouds* fpc) {
    MetricsReport r;
    if (gt) r.psnr = psnr_summary(g, *gt);
    if (fpc) r.consistency = cross_view_consistency(g, *fpc);
    r.flicker = temporal_flicker(g);
    if (coarse) r.visible_deviation = visible_deviation(g, *coarse);
    r.drift = channel_mean_drift(g, 0);
    return r;
}

}  // namespace scene4d
