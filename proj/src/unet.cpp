#include "petrel/unet.hpp"

#include "petrel/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace petrel::unet {

namespace {

struct ConvSpec {
    std::string name;
    int in_ch = 0, out_ch = 0, k = 3;
};

int level_channels(const UNetConfig& c, int level) { return c.base_channels << level; }

std::vector<ConvSpec> conv_layers(const UNetConfig& c) {
    if (c.in_channels <= 0 || c.depth < 0 || c.base_channels <= 0 || c.input_size <= 0)
        throw std::runtime_error("unet: non-positive config field");
    std::vector<ConvSpec> layers;
    for (int L = 0; L < c.depth; ++L) {
        const int in = L == 0 ? c.in_channels : level_channels(c, L - 1);
        const int out = level_channels(c, L);
        layers.push_back({"enc" + std::to_string(L) + ".conv1", in, out, 3});
        layers.push_back({"enc" + std::to_string(L) + ".conv2", out, out, 3});
    }
    const int bottom_in = c.depth == 0 ? c.in_channels : level_channels(c, c.depth - 1);
    const int bottom_out = level_channels(c, c.depth);
    layers.push_back({"bottom.conv1", bottom_in, bottom_out, 3});
    layers.push_back({"bottom.conv2", bottom_out, bottom_out, 3});
    for (int L = c.depth - 1; L >= 0; --L) {
        const int skip = level_channels(c, L);
        const int out = skip;
        layers.push_back({"dec" + std::to_string(L) + ".conv1", 3 * skip, out, 3});
        layers.push_back({"dec" + std::to_string(L) + ".conv2", out, out, 3});
    }
    layers.push_back({"out.conv", level_channels(c, 0), 1, 1});
    return layers;
}

} // namespace

std::vector<TraceStage> shape_trace(const UNetConfig& c) {
    conv_layers(c); // validates the config fields
    std::vector<TraceStage> trace;
    auto conv = [&trace](const std::string& name, int size, int channels) {
        if (size < 1)
            throw std::runtime_error("unet: stage " + name + " input size " +
                                     std::to_string(size + 2) + " smaller than kernel");
        trace.push_back({name, size, channels});
    };

    int s = c.input_size;
    trace.push_back({"input", s, c.in_channels});
    std::vector<int> skip_sizes(c.depth);
    for (int L = 0; L < c.depth; ++L) {
        const int ch = level_channels(c, L);
        conv("enc" + std::to_string(L) + ".conv1", s - 2, ch);
        conv("enc" + std::to_string(L) + ".conv2", s - 4, ch);
        s -= 4;
        skip_sizes[L] = s;
        if (s % 2 != 0 || s < 4)
            throw std::runtime_error("unet: pre-pool size " + std::to_string(s) +
                                     " at level " + std::to_string(L) +
                                     " must be even and >= 4");
        s /= 2;
        trace.push_back({"pool" + std::to_string(L), s, ch});
    }
    const int bottom_ch = level_channels(c, c.depth);
    conv("bottom.conv1", s - 2, bottom_ch);
    conv("bottom.conv2", s - 4, bottom_ch);
    s -= 4;
    for (int L = c.depth - 1; L >= 0; --L) {
        const int ch = level_channels(c, L);
        s *= 2;
        trace.push_back({"up" + std::to_string(L), s, L == c.depth - 1 ? bottom_ch : ch * 2});
        if (skip_sizes[L] < s || (skip_sizes[L] - s) % 2 != 0)
            throw std::runtime_error("unet: skip size " + std::to_string(skip_sizes[L]) +
                                     " cannot center-crop to " + std::to_string(s));
        trace.push_back({"concat" + std::to_string(L), s, 3 * ch});
        conv("dec" + std::to_string(L) + ".conv1", s - 2, ch);
        conv("dec" + std::to_string(L) + ".conv2", s - 4, ch);
        s -= 4;
    }
    trace.push_back({"out.conv", s, 1});
    return trace;
}

int output_size(const UNetConfig& c) { return shape_trace(c).back().size; }

int margin(const UNetConfig& c) { return (c.input_size - output_size(c)) / 2; }

const ad::Tensor& ModelParams::at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return tensors[i];
    throw std::runtime_error("unet: no parameter named " + name);
}

ModelParams init_params(const UNetConfig& c, std::uint64_t seed) {
    shape_trace(c); // reject infeasible configs up front
    ModelParams p;
    p.config = c;
    rng::Stream stream(rng::derive(seed, 7));
    for (const auto& layer : conv_layers(c)) {
        const std::size_t fan_in =
            static_cast<std::size_t>(layer.in_ch) * layer.k * layer.k;
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::vector<double> w(static_cast<std::size_t>(layer.out_ch) * fan_in);
        for (double& v : w)
            v = static_cast<double>(static_cast<float>(std_dev * stream.normal()));
        p.names.push_back(layer.name + ".w");
        p.tensors.push_back(ad::Tensor::leaf({layer.out_ch, layer.in_ch, layer.k, layer.k},
                                             std::move(w), true));
        p.names.push_back(layer.name + ".b");
        p.tensors.push_back(ad::Tensor::zeros({layer.out_ch}, true));
    }
    return p;
}

ad::Tensor forward(ad::Graph& g, const ModelParams& p, const ad::Tensor& input) {
    const UNetConfig& c = p.config;
    if (input.rank() != 3 || input.dim(0) != c.in_channels ||
        input.dim(1) != c.input_size || input.dim(2) != c.input_size)
        throw std::runtime_error("unet: input shape " + ad::shape_str(input.shape()) +
                                 " does not match config (" + std::to_string(c.in_channels) +
                                 "," + std::to_string(c.input_size) + "," +
                                 std::to_string(c.input_size) + ")");
    auto conv_block = [&](const ad::Tensor& x, const std::string& name) {
        return ad::relu(g, ad::conv2d_valid(g, x, p.at(name + ".w"), p.at(name + ".b")));
    };

    ad::Tensor x = input;
    std::vector<ad::Tensor> skips;
    for (int L = 0; L < c.depth; ++L) {
        x = conv_block(x, "enc" + std::to_string(L) + ".conv1");
        x = conv_block(x, "enc" + std::to_string(L) + ".conv2");
        skips.push_back(x);
        x = ad::maxpool2(g, x);
    }
    x = conv_block(x, "bottom.conv1");
    x = conv_block(x, "bottom.conv2");
    for (int L = c.depth - 1; L >= 0; --L) {
        x = ad::upsample_bilinear2(g, x);
        x = ad::crop_concat(g, skips[L], x);
        x = conv_block(x, "dec" + std::to_string(L) + ".conv1");
        x = conv_block(x, "dec" + std::to_string(L) + ".conv2");
    }
    x = ad::conv2d_valid(g, x, p.at("out.conv.w"), p.at("out.conv.b"));
    return ad::sigmoid(g, x);
}

namespace {

std::string strip_ckpt_suffix(const std::string& path) {
    for (const char* suffix : {".ckpt.json", ".ckpt.bin"}) {
        const std::size_t n = std::string(suffix).size();
        if (path.size() > n && path.compare(path.size() - n, n, suffix) == 0)
            return path.substr(0, path.size() - n);
    }
    return path;
}

} // namespace

void save_checkpoint(const ModelParams& p, const std::string& path_prefix) {
    const std::string prefix = strip_ckpt_suffix(path_prefix);
    nlohmann::json manifest;
    manifest["format"] = "petrel-checkpoint";
    manifest["config"] = {{"in_channels", p.config.in_channels},
                          {"depth", p.config.depth},
                          {"base_channels", p.config.base_channels},
                          {"input_size", p.config.input_size}};
    std::vector<float> payload;
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < p.names.size(); ++i) {
        const ad::Tensor& t = p.tensors[i];
        entries.push_back({{"name", p.names[i]},
                           {"shape", t.shape()},
                           {"offset", payload.size() * sizeof(float)}});
        for (double v : t.values()) payload.push_back(static_cast<float>(v));
    }
    manifest["params"] = entries;
    manifest["payload_bytes"] = payload.size() * sizeof(float);

    std::ofstream mf(prefix + ".ckpt.json", std::ios::binary);
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + prefix + ".ckpt.json");
    mf << manifest.dump(2) << "\n";
    mf.close();
    if (!mf) throw std::runtime_error("checkpoint: write failed for " + prefix + ".ckpt.json");
    std::ofstream bf(prefix + ".ckpt.bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot write " + prefix + ".ckpt.bin");
    bf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    bf.close();
    if (!bf) throw std::runtime_error("checkpoint: write failed for " + prefix + ".ckpt.bin");
}

ModelParams load_checkpoint(const std::string& path_prefix) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint payloads are raw little-endian floats");
    const std::string prefix = strip_ckpt_suffix(path_prefix);
    std::ifstream mf(prefix + ".ckpt.json", std::ios::binary);
    if (!mf) throw std::runtime_error("checkpoint: cannot open " + prefix + ".ckpt.json");
    nlohmann::json manifest;
    UNetConfig c;
    try {
        mf >> manifest;
        if (manifest.at("format").get<std::string>() != "petrel-checkpoint")
            throw std::runtime_error("checkpoint: unrecognized format field");
        const auto& jc = manifest.at("config");
        c.in_channels = jc.at("in_channels").get<int>();
        c.depth = jc.at("depth").get<int>();
        c.base_channels = jc.at("base_channels").get<int>();
        c.input_size = jc.at("input_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: corrupt manifest: " + std::string(e.what()));
    }

    std::ifstream bf(prefix + ".ckpt.bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("checkpoint: cannot open " + prefix + ".ckpt.bin");
    const auto bytes = static_cast<std::size_t>(bf.tellg());
    if (bytes != manifest.at("payload_bytes").get<std::size_t>() || bytes % sizeof(float) != 0)
        throw std::runtime_error("checkpoint: payload size mismatch");
    std::vector<float> payload(bytes / sizeof(float));
    bf.seekg(0);
    bf.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!bf) throw std::runtime_error("checkpoint: short read from " + prefix + ".ckpt.bin");

    // The stored layer list must match the config's architecture exactly.
    const auto layers = conv_layers(c);
    std::vector<std::pair<std::string, ad::Shape>> expect;
    for (const auto& l : layers) {
        expect.emplace_back(l.name + ".w", ad::Shape{l.out_ch, l.in_ch, l.k, l.k});
        expect.emplace_back(l.name + ".b", ad::Shape{l.out_ch});
    }
    const auto& entries = manifest.at("params");
    if (entries.size() != expect.size())
        throw std::runtime_error("checkpoint: parameter count does not match config");
    ModelParams p;
    p.config = c;
    for (std::size_t i = 0; i < expect.size(); ++i) {
        const auto& e = entries[i];
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<ad::Shape>();
        if (name != expect[i].first || shape != expect[i].second)
            throw std::runtime_error("checkpoint: parameter " + name +
                                     " does not match config architecture");
        const std::size_t offset = e.at("offset").get<std::size_t>() / sizeof(float);
        const std::size_t n = ad::shape_numel(shape);
        if (offset + n > payload.size())
            throw std::runtime_error("checkpoint: payload overrun for " + name);
        std::vector<double> values(n);
        for (std::size_t k = 0; k < n; ++k) values[k] = payload[offset + k];
        p.names.push_back(name);
        p.tensors.push_back(ad::Tensor::leaf(shape, std::move(values), true));
    }
    return p;
}

ModelParams load_checkpoint(const std::string& path_prefix, const UNetConfig& expect) {
    ModelParams p = load_checkpoint(path_prefix);
    if (!(p.config == expect))
        throw std::runtime_error("checkpoint: stored config does not match expected config");
    return p;
}

} // namespace petrel::unet
