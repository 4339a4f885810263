// Synthetic colony scenes and simulated imperfect observers.
//
// A scene is a 5-band raster: a full-resolution pan band where birds appear
// as bright Gaussian dots over darker octave-noise texture, plus four
// quarter-resolution color bands (green-dominant background) generated
// internally and bilinearly upsampled onto the pan grid.  Distractors are
// bright pan blobs that differ from birds in color signature or size.
// Everything is a pure function of its spec, so identical seeds reproduce
// scenes and observer label sets bit-exactly.
#pragma once

#include "petrel/raster.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace petrel::synth {

struct SceneSpec {
    int width = 512;  // multiples of the ms->pan factor 4
    int height = 512;
    int n_birds = 0;
    double bird_radius_px = 2.2; // dot sigma is half this, truncated at 3 sigma
    int n_distractors = 0;
    double background_texture_scale = 24.0; // base noise cell size in pixels
    int edge_margin_px = 48;                // keep-out band for placed objects
    std::uint64_t seed = 0;
};

struct ObserverModel {
    double miss_rate = 0.0;           // per-point drop probability
    double false_alarm_density = 0.0; // expected spurious labels per megapixel
    double jitter_sigma_px = 0.0;     // isotropic position noise
    std::uint64_t seed = 0;
};

struct Scene {
    raster::Raster image;
    raster::PointLabelSet truth; // observer_id "truth", exact centers
};

Scene generate_scene(const SceneSpec& spec);

raster::PointLabelSet simulate_observer(const raster::PointLabelSet& truth,
                                        const raster::Raster& image,
                                        const ObserverModel& model,
                                        const std::string& observer_id);

// JSON scene spec accepted by the command-line `generate`: scene parameters
// plus an optional list of named observer models.
struct GenerateSpec {
    SceneSpec scene;
    std::vector<std::pair<std::string, ObserverModel>> observers;
};

GenerateSpec parse_generate_spec(const std::string& json_text);

} // namespace petrel::synth
