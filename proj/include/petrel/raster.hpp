// Multi-band raster and point-label containers plus their file formats.
//
// Raster pixels are stored band-planar (one full row-major plane per band)
// as 32-bit floats in [0,1].  On disk a raster is a pair of files sharing a
// path prefix: `{prefix}.hdr.json` (width, height, band names, dtype) and
// `{prefix}.bin` (raw f32 little-endian planes).  Point labels are CSV with
// header `observer_id,x,y`; coordinates are written with shortest
// round-trip formatting so save→load is exact.
#pragma once

#include "petrel/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace petrel::raster {

extern const std::vector<std::string> kDefaultBands; // pan,blue,green,red,nir1

struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::string> bands;
    std::vector<float> pixels; // bands.size() planes, each height*width row-major

    static Raster make(int width, int height, std::vector<std::string> bands,
                       float fill = 0.0f);

    int band_count() const { return static_cast<int>(bands.size()); }
    std::size_t plane_size() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    float at(int band, int y, int x) const {
        return pixels[(static_cast<std::size_t>(band) * height + y) * width + x];
    }
    float& at(int band, int y, int x) {
        return pixels[(static_cast<std::size_t>(band) * height + y) * width + x];
    }
    const float* plane(int band) const { return pixels.data() + band * plane_size(); }
    float* plane(int band) { return pixels.data() + band * plane_size(); }
    int band_index(const std::string& name) const; // -1 when absent
};

// Throws std::runtime_error when size, band names, finiteness, or the [0,1]
// value range are violated.
void validate(const Raster& r);

struct PointLabel {
    double x = 0.0;
    double y = 0.0;
};

struct PointLabelSet {
    std::string observer_id;
    std::vector<PointLabel> points;
};

// Bounds and exact-duplicate checks for one observer's labels.
void validate(const PointLabelSet& labels, int width, int height);

struct Patch {
    ad::Tensor image;                 // (bands, size, size)
    std::vector<std::uint8_t> target; // target_size*target_size, values {0,1}
    int target_size = 0;
    int x0 = 0, y0 = 0;               // input-window origin in scene coordinates
};

void save_raster(const Raster& r, const std::string& path_prefix);
Raster load_raster(const std::string& path_prefix); // accepts prefix or .hdr.json path

void save_labels_csv(const PointLabelSet& labels, const std::string& path);
PointLabelSet load_labels_csv(const std::string& path);

// Bilinearly upsamples every ms band to pan's grid (align-corners=false,
// integer scale factor inferred from the dimensions) and returns pan's band
// followed by the upsampled ms bands.
Raster upsample_ms_to_pan(const Raster& ms, const Raster& pan);

// Stamps a 3x3 square of ones around every label whose rounded center falls
// inside the patch's output window: the input window at (x0,y0) inset by
// `margin` pixels on each side.  Squares are clipped at the window edges and
// overlaps merge.  Returns out_size*out_size row-major {0,1} values.
std::vector<std::uint8_t> rasterize_labels(const PointLabelSet& labels, int x0, int y0,
                                           int margin, int out_size);

// Channel-first crop of all bands; band order preserved, float widened to
// double for network consumption.
ad::Tensor crop_patch(const Raster& r, int x0, int y0, int size);

} // namespace petrel::raster
