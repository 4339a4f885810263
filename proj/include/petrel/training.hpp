// Focal loss, Adam, patch dataset assembly, and the training loop.
//
// The focal loss is a fused autodiff op: mean over pixels of
// -(1-p_t)^gamma * log(p_t) with p_t = p for target 1 and 1-p for target 0,
// probabilities clamped to [1e-7, 1-1e-7] before the log.  The backward
// pass evaluates the analytic derivative at the clamped probability and
// passes it straight through, so pixels saturated at the wrong answer keep
// a restoring gradient instead of going silent.
//
// Training is a single logical thread over a mutable model; given a fixed
// seed and thread count it is bitwise reproducible.
#pragma once

#include "petrel/raster.hpp"
#include "petrel/unet.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace petrel::train {

struct FocalLossConfig {
    double gamma = 1.0;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 4;
    int epochs = 0;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double test_fraction = 0.25;
};

enum class Split { train, test };

struct DatasetEntry {
    raster::Patch patch;
    Split split = Split::train;
    std::string scene_tag;
    // Truth centers inside this patch's output window, in output-frame
    // coordinates, kept for point-level evaluation of the test split.
    std::vector<raster::PointLabel> truth_points;
};

struct PatchDataset {
    int input_size = 0;
    int target_size = 0;
    std::vector<DatasetEntry> entries;

    std::vector<std::size_t> indices(Split split) const;
};

// probabilities is the (1,out,out) network output; targets is the
// out*out {0,1} map from rasterize_labels.
ad::Tensor focal_loss(ad::Graph& g, const ad::Tensor& probabilities,
                      const std::vector<std::uint8_t>& targets,
                      const FocalLossConfig& config);

struct AdamState {
    long step = 0;
    std::vector<std::vector<double>> m, v; // parallel to the model's tensors
};

AdamState make_adam_state(const unet::ModelParams& params);

// One bias-corrected update from the gradients currently stored on the
// parameter tensors; increments the step counter.
void adam_step(unet::ModelParams& params, AdamState& state, const TrainConfig& config);

struct SceneData {
    raster::Raster image;
    raster::PointLabelSet truth;
    std::string tag;
};

// Grid-aligned patches at output-size stride: every position whose target
// contains a bird is included, then seeded-random all-negative patches top
// the scene up to per_scene_patches.  The train/test split is stratified
// per scene.  A non-empty exclude_tag drops that scene entirely
// (leave-one-scene-out training).
PatchDataset build_dataset(const std::vector<SceneData>& scenes, int per_scene_patches,
                           const unet::UNetConfig& net, const TrainConfig& config,
                           const std::string& exclude_tag = "");

struct EpochLoss {
    int epoch = 0;
    double mean_train_loss = 0.0;
};

struct TrainResult {
    unet::ModelParams params;
    std::vector<EpochLoss> loss_log;
};

TrainResult train(const PatchDataset& dataset, const unet::UNetConfig& net,
                  const TrainConfig& config, const FocalLossConfig& loss);

struct GammaSweepRow {
    double gamma = 0.0;
    double recall_bin = 0.0;
    double precision_mean = 0.0;
    double precision_std = 0.0;
};

struct GammaSweepResult {
    std::vector<GammaSweepRow> rows;      // one per (gamma, recall bin)
    std::vector<double> gammas;
    std::vector<std::vector<double>> ap;  // [gamma][replicate] average precision
    std::vector<double> mean_ap;          // per gamma
};

// Trains `replicates` models per gamma (distinct derived seeds, shared
// across gammas so comparisons are paired) and evaluates each on the test
// split with point matching at `match_radius`.
GammaSweepResult gamma_sweep(const PatchDataset& dataset, const unet::UNetConfig& net,
                             const TrainConfig& config, const std::vector<double>& gammas,
                             int replicates, double match_radius);

void save_loss_log_csv(const std::vector<EpochLoss>& log, const std::string& path);
void save_gamma_sweep_csv(const GammaSweepResult& sweep, const std::string& path);

} // namespace petrel::train
