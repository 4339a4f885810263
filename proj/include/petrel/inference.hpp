// Seam-free tiled inference over scenes of arbitrary size.
//
// Valid convolutions and aligned pooling make a tile's output a pure
// function of absolute pixel position, with one exception: the fixed
// bilinear upsampling clamps its interpolation taps at tile borders, so a
// fringe of width 2^depth - 1 around each tile's output window depends on
// where the tile was placed.  Tiles therefore claim only the clean interior
// of their output windows; claims are laid out on a stride that is a
// multiple of 2^depth (keeping every tile on the same pooling phase) and
// partition the scene exactly.  The scene is reflect-padded (about the edge
// pixel, no duplication) far enough that edge claims stay clean, which also
// gives every scene pixel a prediction.  Any two plans built this way agree
// exactly on every pixel.
#pragma once

#include "petrel/raster.hpp"
#include "petrel/unet.hpp"

#include <vector>

namespace petrel::infer {

struct Tile {
    int input_x = 0, input_y = 0; // input window origin, padded coordinates
    int out_x = 0, out_y = 0;     // output window origin, padded coordinates
    int claim_x = 0, claim_y = 0; // claimed rectangle origin, scene coordinates
    int claim_w = 0, claim_h = 0;
};

struct TilePlan {
    int margin = 0;      // input->output inset per side
    int stride = 0;      // claim stride, multiple of 2^depth
    int pad = 0;         // reflect padding applied to every scene edge
    int input_size = 0;  // tile input window edge length
    int output_size = 0; // tile output window edge length
    int fringe = 0;      // placement-dependent output frame width
    std::vector<Tile> tiles; // row-major claim order
};

// Width of the placement-dependent frame of a tile's output (2^depth - 1;
// zero when there is no upsampling).
int fringe_width(const unet::UNetConfig& config);

// Largest claim stride that keeps claims clean and pooling-aligned.
int max_claim_stride(const unet::UNetConfig& config);

// stride 0 selects max_claim_stride; otherwise it must be a positive
// multiple of 2^depth no larger than the maximum.
TilePlan plan_tiles(int scene_w, int scene_h, const unet::UNetConfig& config,
                    int stride = 0);

// Reflect about the border pixel (index -k maps to k), not duplicating the
// edge; pad must be at most size-1 on each axis.
raster::Raster reflect_pad(const raster::Raster& r, int pad);

// Full-scene probability heatmap (1 band, "prob"), same dimensions as the
// scene.  Tiles run in parallel; each writes only its claimed rectangle.
raster::Raster infer_scene(const unet::ModelParams& params, const raster::Raster& scene,
                           int stride = 0);

} // namespace petrel::infer
