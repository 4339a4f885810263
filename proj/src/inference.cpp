#include "petrel/inference.hpp"

#include "petrel/parallel.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace petrel::infer {

namespace {

int align_down(int v, int a) { return (v / a) * a; }

} // namespace

int fringe_width(const unet::UNetConfig& config) {
    unet::shape_trace(config);
    return config.depth == 0 ? 0 : (1 << config.depth) - 1;
}

int max_claim_stride(const unet::UNetConfig& config) {
    const int out = unet::output_size(config);
    const int a = 1 << config.depth;
    const int s = align_down(out - 2 * fringe_width(config) - a, a);
    if (s <= 0)
        throw std::runtime_error("tiling: output " + std::to_string(out) +
                                 " too small to yield a clean claim at depth " +
                                 std::to_string(config.depth));
    return s;
}

TilePlan plan_tiles(int scene_w, int scene_h, const unet::UNetConfig& config, int stride) {
    const int in = config.input_size;
    const int out = unet::output_size(config);
    const int m = unet::margin(config);
    const int a = 1 << config.depth;
    const int p = fringe_width(config);
    const int s_max = max_claim_stride(config);
    if (stride == 0) stride = s_max;
    if (stride <= 0 || stride > s_max || stride % a != 0)
        throw std::runtime_error("tiling: stride must be a positive multiple of " +
                                 std::to_string(a) + " no larger than " +
                                 std::to_string(s_max));

    TilePlan plan;
    plan.margin = m;
    plan.stride = stride;
    plan.pad = m + p + a;
    plan.input_size = in;
    plan.output_size = out;
    plan.fringe = p;
    if (scene_w <= 0 || scene_h <= 0)
        throw std::runtime_error("tiling: non-positive scene size");
    if (plan.pad > scene_w - 1 || plan.pad > scene_h - 1 ||
        scene_w + 2 * plan.pad < in || scene_h + 2 * plan.pad < in)
        throw std::runtime_error("tiling: scene " + std::to_string(scene_w) + "x" +
                                 std::to_string(scene_h) + " too small to tile (needs >= " +
                                 std::to_string(std::max(plan.pad + 1, in - 2 * plan.pad)) +
                                 " per side)");

    const int padded_w = scene_w + 2 * plan.pad;
    const int padded_h = scene_h + 2 * plan.pad;
    auto input_origin = [&](int claim, int padded) {
        const int want = align_down(claim + plan.pad - m - p, a);
        const int limit = align_down(padded - in, a);
        const int origin = std::min(want, limit);
        if (origin < 0) throw std::logic_error("tiling: negative input origin");
        return origin;
    };
    for (int cy = 0; cy < scene_h; cy += stride) {
        const int ch = std::min(stride, scene_h - cy);
        const int iy = input_origin(cy, padded_h);
        for (int cx = 0; cx < scene_w; cx += stride) {
            const int cw = std::min(stride, scene_w - cx);
            const int ix = input_origin(cx, padded_w);
            Tile t;
            t.input_x = ix;
            t.input_y = iy;
            t.out_x = ix + m;
            t.out_y = iy + m;
            t.claim_x = cx;
            t.claim_y = cy;
            t.claim_w = cw;
            t.claim_h = ch;
            // The claim must sit inside the clean interior of the output window.
            if (t.out_x + p > cx + plan.pad || t.out_y + p > cy + plan.pad ||
                t.out_x + out - p < cx + plan.pad + cw ||
                t.out_y + out - p < cy + plan.pad + ch)
                throw std::logic_error("tiling: claim escapes the clean output interior");
            plan.tiles.push_back(t);
        }
    }
    return plan;
}

raster::Raster reflect_pad(const raster::Raster& r, int pad) {
    if (pad < 0) throw std::runtime_error("reflect_pad: negative pad");
    if (pad > r.width - 1 || pad > r.height - 1)
        throw std::runtime_error("reflect_pad: pad " + std::to_string(pad) +
                                 " exceeds raster size minus one");
    raster::Raster out =
        raster::Raster::make(r.width + 2 * pad, r.height + 2 * pad, r.bands);
    auto reflect = [](int t, int n) {
        if (t < 0) return -t;
        if (t >= n) return 2 * n - 2 - t;
        return t;
    };
    for (int b = 0; b < r.band_count(); ++b) {
        const float* src = r.plane(b);
        float* dst = out.plane(b);
        for (int y = 0; y < out.height; ++y) {
            const int sy = reflect(y - pad, r.height);
            for (int x = 0; x < out.width; ++x)
                dst[static_cast<std::size_t>(y) * out.width + x] =
                    src[static_cast<std::size_t>(sy) * r.width + reflect(x - pad, r.width)];
        }
    }
    return out;
}

raster::Raster infer_scene(const unet::ModelParams& params, const raster::Raster& scene,
                           int stride) {
    const unet::UNetConfig& c = params.config;
    if (scene.band_count() != c.in_channels)
        throw std::runtime_error("infer: scene has " + std::to_string(scene.band_count()) +
                                 " bands, network expects " + std::to_string(c.in_channels));
    const TilePlan plan = plan_tiles(scene.width, scene.height, c, stride);
    const raster::Raster padded = reflect_pad(scene, plan.pad);

    raster::Raster heatmap = raster::Raster::make(scene.width, scene.height, {"prob"});
    float* hv = heatmap.plane(0);
    par::parallel_for(0, plan.tiles.size(), [&](std::size_t ti) {
        const Tile& t = plan.tiles[ti];
        ad::Graph g;
        const ad::Tensor input =
            raster::crop_patch(padded, t.input_x, t.input_y, plan.input_size);
        const ad::Tensor prob = unet::forward(g, params, input);
        const double* pv = prob.values().data();
        for (int y = 0; y < t.claim_h; ++y) {
            const int oy = t.claim_y + y + plan.pad - t.out_y;
            for (int x = 0; x < t.claim_w; ++x) {
                const int ox = t.claim_x + x + plan.pad - t.out_x;
                hv[static_cast<std::size_t>(t.claim_y + y) * scene.width + t.claim_x + x] =
                    static_cast<float>(
                        pv[static_cast<std::size_t>(oy) * plan.output_size + ox]);
            }
        }
    });
    return heatmap;
}

} // namespace petrel::infer
