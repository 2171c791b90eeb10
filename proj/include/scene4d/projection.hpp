#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/geometry.hpp"
#include "scene4d/parallel.hpp"
#include "scene4d/view_grid.hpp"

namespace scene4d {

struct CoarseRender {
    Image image;               // [3,H,W], 0 where nothing landed
    Mask mask;                 // [H,W]
    std::vector<double> depth;   // per pixel, +inf where empty
    std::vector<long> winner;    // index of the winning point, -1 where empty
};

// Z-buffered point splatting. Each point covers its nearest pixel (footprint 1) or the 3x3
// patch around it (footprint 3). Smallest depth wins; exact ties keep the lower point index.
inline CoarseRender splat_coarse(const PointList& cloud, const Camera& cam, std::size_t H, std::size_t W,
                                 int footprint = 1) {
    if (footprint != 1 && footprint != 3) throw std::invalid_argument("splat_coarse: footprint must be 1 or 3");
    CoarseRender out{Image::image(3, H, W), Mask({H, W}), std::vector<double>(H * W, std::numeric_limits<double>::infinity()),
                     std::vector<long>(H * W, -1)};
    const int r = footprint / 2;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto proj = project(cloud[i].position, cam);
        if (!proj) continue;
        const double px = std::floor(proj->u + 0.5), py = std::floor(proj->v + 0.5);
        if (px < -r || py < -r || px > double(W - 1 + r) || py > double(H - 1 + r)) continue;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const long x = long(px) + dx, y = long(py) + dy;
                if (x < 0 || y < 0 || x >= long(W) || y >= long(H)) continue;
                const std::size_t p = std::size_t(y) * W + std::size_t(x);
                if (proj->depth < out.depth[p]) {
                    out.depth[p] = proj->depth;
                    out.winner[p] = long(i);
                }
            }
    }
    const std::size_t plane = H * W;
    for (std::size_t p = 0; p < plane; ++p) {
        if (out.winner[p] < 0) continue;
        out.mask[p] = 1.0f;
        const auto& c = cloud[std::size_t(out.winner[p])].color;
        for (int ch = 0; ch < 3; ++ch) out.image[ch * plane + p] = c[ch];
    }
    return out;
}

// Coarse multi-view video: cell (t,k) splats frame_cloud(t) through camera k. The reference
// column k = 0 is replaced by the input frames with all-ones masks.
inline ViewGrid render_grid(const FramePointClouds& fpc, const std::vector<Camera>& cameras,
                            const std::vector<Image>& reference_frames, std::size_t H, std::size_t W,
                            int footprint = 1, unsigned threads = 1) {
    if (int(reference_frames.size()) != fpc.T) throw std::invalid_argument("render_grid: need one reference frame per t");
    ViewGrid g = ViewGrid::blank(fpc.T, int(cameras.size()), H, W, cameras, Provenance::coarse);
    std::vector<PointList> clouds(fpc.T);
    for (int t = 0; t < fpc.T; ++t) clouds[t] = frame_cloud(fpc, t);
    parallel_for(std::size_t(g.T) * g.K, threads, [&](std::size_t idx) {
        const int t = int(idx / g.K), k = int(idx % g.K);
        if (k == 0) {
            g.image(t, k) = reference_frames[t];
            g.mask(t, k) = Mask({H, W}, 1.0f);
            g.prov(t, k) = Provenance::reference;
            return;
        }
        auto r = splat_coarse(clouds[t], cameras[k], H, W, footprint);
        g.image(t, k) = std::move(r.image);
        g.mask(t, k) = std::move(r.mask);
    });
    return g;
}

}  // namespace scene4d
