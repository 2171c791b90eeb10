#pragma once

#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "scene4d/camera.hpp"
#include "scene4d/image_ops.hpp"
#include "scene4d/kv.hpp"
#include "scene4d/tensor.hpp"

namespace scene4d {

enum class Provenance { coarse, generated, reference, ground_truth };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::coarse: return "coarse";
        case Provenance::generated: return "generated";
        case Provenance::reference: return "reference";
        case Provenance::ground_truth: return "ground_truth";
    }
    return "?";
}

inline Provenance parse_provenance(const std::string& s) {
    if (s == "coarse") return Provenance::coarse;
    if (s == "generated") return Provenance::generated;
    if (s == "reference") return Provenance::reference;
    if (s == "ground_truth") return Provenance::ground_truth;
    throw std::invalid_argument("unknown provenance '" + s + "'");
}

// T x K lattice of views. Indices are 0-based: t = 0 is the first frame and k = 0 the
// reference (identity) camera.
struct ViewGrid {
    int T = 0, K = 0;
    std::size_t H = 0, W = 0;
    std::vector<Image> images;  // [3,H,W], index t*K + k
    std::vector<Mask> masks;    // [H,W]
    std::vector<Camera> cameras;
    std::vector<Provenance> provenance;

    static ViewGrid blank(int T, int K, std::size_t H, std::size_t W, std::vector<Camera> cameras,
                          Provenance p = Provenance::coarse) {
        if (T < 1 || K < 1) throw std::invalid_argument("view grid: T and K must be positive");
        if (static_cast<int>(cameras.size()) != K) throw std::invalid_argument("view grid: need K cameras");
        ViewGrid g;
        g.T = T;
        g.K = K;
        g.H = H;
        g.W = W;
        g.images.assign(std::size_t(T) * K, Image::image(3, H, W));
        g.masks.assign(std::size_t(T) * K, Mask({H, W}));
        g.cameras = std::move(cameras);
        g.provenance.assign(std::size_t(T) * K, p);
        return g;
    }

    std::size_t index(int t, int k) const {
        if (t < 0 || t >= T || k < 0 || k >= K)
            throw std::out_of_range("view grid: cell (" + std::to_string(t) + "," + std::to_string(k) + ") out of range");
        return std::size_t(t) * K + k;
    }
    Image& image(int t, int k) { return images[index(t, k)]; }
    const Image& image(int t, int k) const { return images[index(t, k)]; }
    Mask& mask(int t, int k) { return masks[index(t, k)]; }
    const Mask& mask(int t, int k) const { return masks[index(t, k)]; }
    Provenance& prov(int t, int k) { return provenance[index(t, k)]; }
    Provenance prov(int t, int k) const { return provenance[index(t, k)]; }
};

inline std::string cell_name(const char* prefix, int t, int k, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_t%02d_k%02d.%s", prefix, t, k, ext);
    return buf;
}

inline std::string provenance_key(int t, int k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "cell_t%02d_k%02d", t, k);
    return buf;
}

// Directory layout: view_tTT_kKK.png (8-bit preview), view_tTT_kKK.ten (exact f32 image),
// mask_tTT_kKK.ten, cameras.txt (trajectory file) and grid.kv listing provenance per cell.
inline void save_grid(const std::string& dir, const ViewGrid& g) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    KeyValue kv;
    kv.set("T", g.T);
    kv.set("K", g.K);
    kv.set("H", g.H);
    kv.set("W", g.W);
    for (int t = 0; t < g.T; ++t)
        for (int k = 0; k < g.K; ++k) {
            save_png(dir + "/" + cell_name("view", t, k, "png"), g.image(t, k));
            save_ten1(dir + "/" + cell_name("view", t, k, "ten"), g.image(t, k));
            save_ten1(dir + "/" + cell_name("mask", t, k, "ten"), g.mask(t, k));
            kv.set(provenance_key(t, k), to_string(g.prov(t, k)));
        }
    save_trajectory(dir + "/cameras.txt", g.cameras);
    kv.save(dir + "/grid.kv");
}

inline ViewGrid load_grid(const std::string& dir) {
    const KeyValue kv = KeyValue::load(dir + "/grid.kv");
    ViewGrid g = ViewGrid::blank(int(kv.get_int("T")), int(kv.get_int("K")), std::size_t(kv.get_int("H")),
                                 std::size_t(kv.get_int("W")), load_trajectory(dir + "/cameras.txt"));
    for (int t = 0; t < g.T; ++t)
        for (int k = 0; k < g.K; ++k) {
            g.image(t, k) = load_ten1(dir + "/" + cell_name("view", t, k, "ten"));
            g.mask(t, k) = load_ten1(dir + "/" + cell_name("mask", t, k, "ten"));
            if (g.image(t, k).shape() != std::vector<std::size_t>{3, g.H, g.W} ||
                g.mask(t, k).shape() != std::vector<std::size_t>{g.H, g.W})
                throw std::runtime_error("grid: dimension mismatch in cell (" + std::to_string(t) + "," +
                                         std::to_string(k) + ") of " + dir);
            g.prov(t, k) = parse_provenance(kv.get(provenance_key(t, k)));
        }
    return g;
}

}  // namespace scene4d
