// Valid-convolution U-Net: shape calculus, parameter initialization,
// forward pass, and checkpoint serialization.
//
// The network is the classic contracting/expanding shape: per level two 3x3
// valid convolutions with ReLU then 2x2 max pooling; a two-conv bottom; per
// expanding level a fixed factor-2 bilinear upsample, center-crop skip
// concatenation, and two 3x3 convolutions; finally a 1x1 convolution to one
// channel with sigmoid.  Upsampling is never learned.  Because convolutions
// are unpadded, the output is smaller than the input by a margin that
// depends only on depth, never on input size.
#pragma once

#include "petrel/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace petrel::unet {

struct UNetConfig {
    int in_channels = 5;
    int depth = 4;        // number of pooling levels
    int base_channels = 64;
    int input_size = 572;

    bool operator==(const UNetConfig&) const = default;
};

struct TraceStage {
    std::string name;
    int size = 0;     // spatial edge length after this stage
    int channels = 0;
};

// Full stage-by-stage trace; throws on infeasible configs (a conv smaller
// than its kernel, an odd or too-small pre-pool size, an odd skip margin).
std::vector<TraceStage> shape_trace(const UNetConfig& config);

int output_size(const UNetConfig& config);
int margin(const UNetConfig& config); // (input_size - output_size) / 2

struct ModelParams {
    UNetConfig config;
    std::vector<std::string> names; // ordered; tensors[i] belongs to names[i]
    std::vector<ad::Tensor> tensors;

    const ad::Tensor& at(const std::string& name) const;
};

// He-normal conv weights (std sqrt(2/fan_in)), zero biases, deterministic
// per seed.  Values are rounded through f32 so a fresh model round-trips
// bit-exactly through the f32 checkpoint format.
ModelParams init_params(const UNetConfig& config, std::uint64_t seed);

// Probability map of shape (1, out, out); input must be
// (in_channels, input_size, input_size).
ad::Tensor forward(ad::Graph& g, const ModelParams& params, const ad::Tensor& input);

// Checkpoints are a `{prefix}.ckpt.json` manifest (config, names, shapes,
// byte offsets) plus a `{prefix}.ckpt.bin` payload of f32 little-endian
// values in manifest order.
void save_checkpoint(const ModelParams& params, const std::string& path_prefix);
ModelParams load_checkpoint(const std::string& path_prefix);
ModelParams load_checkpoint(const std::string& path_prefix, const UNetConfig& expect);

} // namespace petrel::unet
