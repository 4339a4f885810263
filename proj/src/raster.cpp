#include "petrel/raster.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "raster payloads are written as raw little-endian floats");

namespace petrel::raster {

const std::vector<std::string> kDefaultBands = {"pan", "blue", "green", "red", "nir1"};

Raster Raster::make(int width, int height, std::vector<std::string> bands, float fill) {
    Raster r;
    r.width = width;
    r.height = height;
    r.bands = std::move(bands);
    if (width <= 0 || height <= 0 || r.bands.empty())
        throw std::runtime_error("raster: non-positive size or empty band list");
    r.pixels.assign(r.plane_size() * r.bands.size(), fill);
    return r;
}

int Raster::band_index(const std::string& name) const {
    for (int b = 0; b < band_count(); ++b)
        if (bands[b] == name) return b;
    return -1;
}

void validate(const Raster& r) {
    if (r.width <= 0 || r.height <= 0)
        throw std::runtime_error("raster: non-positive dimensions");
    if (r.bands.empty()) throw std::runtime_error("raster: no bands");
    std::set<std::string> seen(r.bands.begin(), r.bands.end());
    if (seen.size() != r.bands.size())
        throw std::runtime_error("raster: duplicate band names");
    if (r.pixels.size() != r.plane_size() * r.bands.size())
        throw std::runtime_error("raster: pixel count does not match header");
    for (float v : r.pixels) {
        if (!std::isfinite(v)) throw std::runtime_error("raster: non-finite pixel value");
        if (v < 0.0f || v > 1.0f)
            throw std::runtime_error("raster: pixel value outside [0,1]");
    }
}

void validate(const PointLabelSet& labels, int width, int height) {
    for (const auto& p : labels.points)
        if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height))
            throw std::runtime_error("labels: point outside raster bounds");
    auto pts = labels.points;
    std::sort(pts.begin(), pts.end(), [](const PointLabel& a, const PointLabel& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].x == pts[i - 1].x && pts[i].y == pts[i - 1].y)
            throw std::runtime_error("labels: exact duplicate point");
}

namespace {

std::string strip_header_suffix(const std::string& path) {
    const std::string suffix = ".hdr.json";
    if (path.size() > suffix.size() &&
        path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return path.substr(0, path.size() - suffix.size());
    return path;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::runtime_error(std::string("labels: bad ") + what + " value '" + s + "'");
    return v;
}

} // namespace

void save_raster(const Raster& r, const std::string& path_prefix) {
    validate(r);
    nlohmann::json hdr;
    hdr["width"] = r.width;
    hdr["height"] = r.height;
    hdr["bands"] = r.bands;
    hdr["dtype"] = "f32le";
    std::ofstream hf(path_prefix + ".hdr.json", std::ios::binary);
    if (!hf) throw std::runtime_error("raster: cannot write " + path_prefix + ".hdr.json");
    hf << hdr.dump(2) << "\n";
    hf.close();
    if (!hf) throw std::runtime_error("raster: write failed for " + path_prefix + ".hdr.json");

    std::ofstream bf(path_prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("raster: cannot write " + path_prefix + ".bin");
    bf.write(reinterpret_cast<const char*>(r.pixels.data()),
             static_cast<std::streamsize>(r.pixels.size() * sizeof(float)));
    bf.close();
    if (!bf) throw std::runtime_error("raster: write failed for " + path_prefix + ".bin");
}

Raster load_raster(const std::string& path) {
    const std::string prefix = strip_header_suffix(path);
    std::ifstream hf(prefix + ".hdr.json", std::ios::binary);
    if (!hf) throw std::runtime_error("raster: cannot open " + prefix + ".hdr.json");
    nlohmann::json hdr;
    try {
        hf >> hdr;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("raster: malformed header: " + std::string(e.what()));
    }
    Raster r;
    try {
        r.width = hdr.at("width").get<int>();
        r.height = hdr.at("height").get<int>();
        r.bands = hdr.at("bands").get<std::vector<std::string>>();
        if (hdr.at("dtype").get<std::string>() != "f32le")
            throw std::runtime_error("raster: unsupported dtype");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("raster: malformed header: " + std::string(e.what()));
    }
    if (r.width <= 0 || r.height <= 0 || r.bands.empty())
        throw std::runtime_error("raster: malformed header fields");

    std::ifstream bf(prefix + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("raster: cannot open " + prefix + ".bin");
    const auto bytes = static_cast<std::size_t>(bf.tellg());
    const std::size_t expected = r.plane_size() * r.bands.size() * sizeof(float);
    if (bytes != expected)
        throw std::runtime_error("raster: payload is " + std::to_string(bytes) +
                                 " bytes, header implies " + std::to_string(expected));
    r.pixels.resize(r.plane_size() * r.bands.size());
    bf.seekg(0);
    bf.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(bytes));
    if (!bf) throw std::runtime_error("raster: short read from " + prefix + ".bin");
    validate(r);
    return r;
}

void save_labels_csv(const PointLabelSet& labels, const std::string& path) {
    if (labels.observer_id.find(',') != std::string::npos ||
        labels.observer_id.find('\n') != std::string::npos)
        throw std::runtime_error("labels: observer id must not contain ',' or newline");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("labels: cannot write " + path);
    f << "observer_id,x,y\n";
    for (const auto& p : labels.points)
        f << labels.observer_id << "," << format_double(p.x) << "," << format_double(p.y)
          << "\n";
    f.close();
    if (!f) throw std::runtime_error("labels: write failed for " + path);
}

PointLabelSet load_labels_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("labels: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "observer_id,x,y")
        throw std::runtime_error("labels: missing 'observer_id,x,y' header in " + path);
    PointLabelSet out;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error("labels: malformed row '" + line + "' in " + path);
        const std::string id = line.substr(0, c1);
        if (first) {
            out.observer_id = id;
            first = false;
        } else if (id != out.observer_id) {
            throw std::runtime_error("labels: multiple observer ids in " + path);
        }
        out.points.push_back({parse_double(line.substr(c1 + 1, c2 - c1 - 1), "x"),
                              parse_double(line.substr(c2 + 1), "y")});
    }
    return out;
}

Raster upsample_ms_to_pan(const Raster& ms, const Raster& pan) {
    validate(ms);
    validate(pan);
    if (pan.band_count() != 1)
        throw std::runtime_error("upsample_ms_to_pan: pan raster must have exactly 1 band");
    if (pan.width % ms.width != 0 || pan.height % ms.height != 0 ||
        pan.width / ms.width != pan.height / ms.height)
        throw std::runtime_error("upsample_ms_to_pan: pan/ms dimensions not an integer factor");
    const int factor = pan.width / ms.width;
    if (factor < 1) throw std::runtime_error("upsample_ms_to_pan: pan smaller than ms");

    std::vector<std::string> bands = pan.bands;
    bands.insert(bands.end(), ms.bands.begin(), ms.bands.end());
    Raster out = Raster::make(pan.width, pan.height, std::move(bands));
    std::copy(pan.pixels.begin(), pan.pixels.end(), out.plane(0));

    // Per-axis source taps, align-corners=false: src = (i+0.5)/factor - 0.5.
    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    auto taps = [factor](int out_size, int in_size) {
        std::vector<Tap> t(out_size);
        for (int i = 0; i < out_size; ++i) {
            const double src = (i + 0.5) / factor - 0.5;
            const double f = std::floor(src);
            const double frac = src - f;
            int i0 = std::clamp(static_cast<int>(f), 0, in_size - 1);
            int i1 = std::clamp(static_cast<int>(f) + 1, 0, in_size - 1);
            t[i] = {i0, i1, 1.0 - frac, frac};
        }
        return t;
    };
    const auto ys = taps(pan.height, ms.height);
    const auto xs = taps(pan.width, ms.width);

    for (int b = 0; b < ms.band_count(); ++b) {
        const float* src = ms.plane(b);
        float* dst = out.plane(1 + b);
        for (int y = 0; y < pan.height; ++y) {
            const Tap ty = ys[y];
            const float* r0 = src + static_cast<std::size_t>(ty.i0) * ms.width;
            const float* r1 = src + static_cast<std::size_t>(ty.i1) * ms.width;
            float* orow = dst + static_cast<std::size_t>(y) * pan.width;
            for (int x = 0; x < pan.width; ++x) {
                const Tap tx = xs[x];
                orow[x] = static_cast<float>(ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                                             ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]));
            }
        }
    }
    validate(out);
    return out;
}

std::vector<std::uint8_t> rasterize_labels(const PointLabelSet& labels, int x0, int y0,
                                           int margin, int out_size) {
    if (margin < 0 || out_size <= 0)
        throw std::runtime_error("rasterize_labels: bad margin or output size");
    std::vector<std::uint8_t> map(static_cast<std::size_t>(out_size) * out_size, 0);
    for (const auto& p : labels.points) {
        const long cx = std::lround(p.x) - (x0 + margin);
        const long cy = std::lround(p.y) - (y0 + margin);
        if (cx < 0 || cx >= out_size || cy < 0 || cy >= out_size) continue;
        for (long dy = -1; dy <= 1; ++dy) {
            const long y = cy + dy;
            if (y < 0 || y >= out_size) continue;
            for (long dx = -1; dx <= 1; ++dx) {
                const long x = cx + dx;
                if (x < 0 || x >= out_size) continue;
                map[static_cast<std::size_t>(y) * out_size + x] = 1;
            }
        }
    }
    return map;
}

ad::Tensor crop_patch(const Raster& r, int x0, int y0, int size) {
    if (size <= 0 || x0 < 0 || y0 < 0 || x0 + size > r.width || y0 + size > r.height)
        throw std::runtime_error("crop_patch: window (" + std::to_string(x0) + "," +
                                 std::to_string(y0) + ")+" + std::to_string(size) +
                                 " outside raster " + std::to_string(r.width) + "x" +
                                 std::to_string(r.height));
    const int B = r.band_count();
    std::vector<double> values(static_cast<std::size_t>(B) * size * size);
    std::size_t k = 0;
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                values[k++] = r.at(b, y0 + y, x0 + x);
    return ad::Tensor::leaf({B, size, size}, std::move(values));
}

} // namespace petrel::raster
