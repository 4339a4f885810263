#include "petrel/training.hpp"

#include "petrel/detection.hpp"
#include "petrel/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace petrel::train {

namespace {

constexpr double kClampEps = 1e-7;

template <typename T>
void seeded_shuffle(std::vector<T>& v, rng::Stream& stream) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[stream.below(i)]);
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::vector<std::size_t> PatchDataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(i);
    return out;
}

ad::Tensor focal_loss(ad::Graph& g, const ad::Tensor& probabilities,
                      const std::vector<std::uint8_t>& targets,
                      const FocalLossConfig& config) {
    if (!(config.gamma >= 0.0) || !std::isfinite(config.gamma))
        throw std::runtime_error("focal_loss: gamma must be finite and >= 0");
    const std::size_t n = probabilities.size();
    if (n != targets.size())
        throw std::runtime_error("focal_loss: " + std::to_string(n) + " probabilities vs " +
                                 std::to_string(targets.size()) + " targets");
    if (n == 0) throw std::runtime_error("focal_loss: empty input");
    for (std::uint8_t t : targets)
        if (t > 1) throw std::runtime_error("focal_loss: target value outside {0,1}");

    const double gamma = config.gamma;
    ad::Tensor out = g.make_output({1});
    {
        const double* p = probabilities.values().data();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double pc = std::clamp(p[i], kClampEps, 1.0 - kClampEps);
            const double pt = targets[i] ? pc : 1.0 - pc;
            const double mod = gamma == 0.0 ? 1.0 : std::pow(1.0 - pt, gamma);
            acc += -mod * std::log(pt);
        }
        out.values()[0] = acc / static_cast<double>(n);
    }
    ad::ensure_finite(out, "focal_loss");

    auto tgt = std::make_shared<std::vector<std::uint8_t>>(targets);
    g.record("focal_loss", [probabilities, out, tgt, gamma, n]() {
        if (!probabilities.has_grad()) return;
        const double gout = out.grad()[0] / static_cast<double>(n);
        const double* p = probabilities.values().data();
        double* gp = probabilities.grad().data();
        for (std::size_t i = 0; i < n; ++i) {
            const double pc = std::clamp(p[i], kClampEps, 1.0 - kClampEps);
            double d;
            if ((*tgt)[i]) {
                // d/dp of -(1-p)^g log p
                d = gamma == 0.0 ? -1.0 / pc
                                 : gamma * std::pow(1.0 - pc, gamma - 1.0) * std::log(pc) -
                                       std::pow(1.0 - pc, gamma) / pc;
            } else {
                // d/dp of -p^g log(1-p)
                d = gamma == 0.0 ? 1.0 / (1.0 - pc)
                                 : -gamma * std::pow(pc, gamma - 1.0) * std::log(1.0 - pc) +
                                       std::pow(pc, gamma) / (1.0 - pc);
            }
            gp[i] += gout * d;
        }
    });
    return out;
}

AdamState make_adam_state(const unet::ModelParams& params) {
    AdamState s;
    s.m.reserve(params.tensors.size());
    s.v.reserve(params.tensors.size());
    for (const auto& t : params.tensors) {
        s.m.emplace_back(t.size(), 0.0);
        s.v.emplace_back(t.size(), 0.0);
    }
    return s;
}

void adam_step(unet::ModelParams& params, AdamState& state, const TrainConfig& config) {
    if (state.m.size() != params.tensors.size())
        throw std::runtime_error("adam: state does not match parameter list");
    state.step += 1;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        ad::Tensor& t = params.tensors[i];
        if (state.m[i].size() != t.size())
            throw std::runtime_error("adam: state shape mismatch at tensor " +
                                     std::to_string(i));
        const double* g = t.grad().data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        double* x = t.values().data();
        for (std::size_t k = 0; k < t.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            x[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_eps);
        }
    }
}

PatchDataset build_dataset(const std::vector<SceneData>& scenes, int per_scene_patches,
                           const unet::UNetConfig& net, const TrainConfig& config,
                           const std::string& exclude_tag) {
    if (per_scene_patches <= 0)
        throw std::runtime_error("dataset: per_scene_patches must be positive");
    if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0))
        throw std::runtime_error("dataset: test_fraction must lie in (0,1)");
    const int in = net.input_size;
    const int out = unet::output_size(net);
    const int m = unet::margin(net);

    PatchDataset ds;
    ds.input_size = in;
    ds.target_size = out;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const SceneData& scene = scenes[si];
        if (!exclude_tag.empty() && scene.tag == exclude_tag) continue;
        if (scene.image.width < in || scene.image.height < in)
            throw std::runtime_error("dataset: scene '" + scene.tag + "' (" +
                                     std::to_string(scene.image.width) + "x" +
                                     std::to_string(scene.image.height) +
                                     ") smaller than patch input " + std::to_string(in));

        auto in_window_points = [&](int x0, int y0) {
            std::vector<raster::PointLabel> pts;
            for (const auto& p : scene.truth.points) {
                const long ox = std::lround(p.x) - (x0 + m);
                const long oy = std::lround(p.y) - (y0 + m);
                if (ox >= 0 && ox < out && oy >= 0 && oy < out)
                    pts.push_back({p.x - (x0 + m), p.y - (y0 + m)});
            }
            return pts;
        };
        auto make_entry = [&](int x0, int y0, std::vector<std::uint8_t> target) {
            DatasetEntry e;
            e.patch.image = raster::crop_patch(scene.image, x0, y0, in);
            e.patch.target = std::move(target);
            e.patch.target_size = out;
            e.patch.x0 = x0;
            e.patch.y0 = y0;
            e.scene_tag = scene.tag;
            e.truth_points = in_window_points(x0, y0);
            return e;
        };

        std::vector<DatasetEntry> scene_entries;
        for (int y0 = 0; y0 + in <= scene.image.height; y0 += out) {
            for (int x0 = 0; x0 + in <= scene.image.width; x0 += out) {
                auto target = raster::rasterize_labels(scene.truth, x0, y0, m, out);
                if (std::find(target.begin(), target.end(), 1) != target.end())
                    scene_entries.push_back(make_entry(x0, y0, std::move(target)));
            }
        }
        const int need = per_scene_patches - static_cast<int>(scene_entries.size());
        if (need > 0) {
            rng::Stream neg(rng::derive(config.seed, 1000 + si));
            std::set<std::pair<int, int>> used;
            long attempts = 1000L * need;
            int found = 0;
            while (found < need) {
                if (attempts-- <= 0)
                    throw std::runtime_error("dataset: cannot find " + std::to_string(need) +
                                             " negative patches in scene '" + scene.tag + "'");
                const int x0 = static_cast<int>(neg.below(scene.image.width - in + 1));
                const int y0 = static_cast<int>(neg.below(scene.image.height - in + 1));
                if (!used.insert({x0, y0}).second) continue;
                auto target = raster::rasterize_labels(scene.truth, x0, y0, m, out);
                if (std::find(target.begin(), target.end(), 1) != target.end()) continue;
                scene_entries.push_back(make_entry(x0, y0, std::move(target)));
                ++found;
            }
        }

        // Stratified split: shuffle this scene's entries, first chunk is test.
        std::vector<std::size_t> order(scene_entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream split_stream(rng::derive(config.seed, 2000 + si));
        seeded_shuffle(order, split_stream);
        const auto n_test = static_cast<std::size_t>(
            std::lround(config.test_fraction * static_cast<double>(order.size())));
        for (std::size_t k = 0; k < order.size(); ++k)
            scene_entries[order[k]].split = k < n_test ? Split::test : Split::train;

        for (auto& e : scene_entries) ds.entries.push_back(std::move(e));
    }
    if (ds.entries.empty()) throw std::runtime_error("dataset: no scenes contributed patches");
    return ds;
}

TrainResult train(const PatchDataset& dataset, const unet::UNetConfig& net,
                  const TrainConfig& config, const FocalLossConfig& loss) {
    if (dataset.entries.empty()) throw std::runtime_error("train: empty dataset");
    if (dataset.input_size != net.input_size)
        throw std::runtime_error("train: dataset patch size " +
                                 std::to_string(dataset.input_size) +
                                 " does not match network input " +
                                 std::to_string(net.input_size));
    if (config.batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
    if (!(config.learning_rate > 0.0)) throw std::runtime_error("train: learning_rate must be > 0");

    TrainResult res;
    res.params = unet::init_params(net, config.seed);
    AdamState state = make_adam_state(res.params);
    const auto train_idx = dataset.indices(Split::train);
    if (train_idx.empty() && config.epochs > 0)
        throw std::runtime_error("train: no training patches in dataset");

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto order = train_idx;
        rng::Stream shuffle_stream(rng::derive(config.seed, 500 + epoch));
        seeded_shuffle(order, shuffle_stream);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t b_end = std::min(order.size(), b + config.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(b_end - b);
            const long batch_index = static_cast<long>(b / config.batch_size);
            for (auto& t : res.params.tensors) t.zero_grad();
            for (std::size_t k = b; k < b_end; ++k) {
                const DatasetEntry& e = dataset.entries[order[k]];
                try {
                    ad::Graph g;
                    ad::Tensor prob = unet::forward(g, res.params, e.patch.image);
                    ad::Tensor l = focal_loss(g, prob, e.patch.target, loss);
                    if (!std::isfinite(l.scalar()))
                        throw std::runtime_error("non-finite loss");
                    g.backward(l, inv_batch);
                    loss_sum += l.scalar();
                } catch (const std::exception& ex) {
                    throw std::runtime_error("train: aborted in epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(batch_index) + ": " + ex.what());
                }
            }
            adam_step(res.params, state, config);
        }
        res.loss_log.push_back(
            {epoch, loss_sum / static_cast<double>(std::max<std::size_t>(1, order.size()))});
    }
    return res;
}

namespace {

raster::Raster heatmap_from_tensor(const ad::Tensor& prob) {
    raster::Raster h = raster::Raster::make(prob.dim(2), prob.dim(1), {"prob"});
    for (std::size_t i = 0; i < prob.size(); ++i)
        h.pixels[i] = static_cast<float>(prob.values()[i]);
    return h;
}

// Micro-averaged PR over the test split: detection counts are summed across
// patches at each threshold before precision/recall are formed.
std::vector<detect::PRPoint> test_split_pr(const PatchDataset& dataset,
                                           const unet::ModelParams& params,
                                           const std::vector<double>& thresholds,
                                           double radius) {
    struct Eval {
        raster::Raster heatmap;
        const std::vector<raster::PointLabel>* truths;
    };
    std::vector<Eval> evals;
    for (std::size_t i : dataset.indices(Split::test)) {
        const DatasetEntry& e = dataset.entries[i];
        ad::Graph g;
        ad::Tensor prob = unet::forward(g, params, e.patch.image);
        evals.push_back({heatmap_from_tensor(prob), &e.truth_points});
    }
    std::vector<detect::PRPoint> out;
    for (double t : thresholds) {
        long tp = 0, fp = 0, fn = 0;
        for (const auto& ev : evals) {
            const auto dets = detect::extract_detections(ev.heatmap, t);
            const auto m = detect::match_points(dets, *ev.truths, radius);
            tp += static_cast<long>(m.pairs.size());
            fp += static_cast<long>(m.fp.size());
            fn += static_cast<long>(m.fn.size());
        }
        out.push_back(detect::pr_from_counts(t, tp, fp, fn));
    }
    return out;
}

} // namespace

GammaSweepResult gamma_sweep(const PatchDataset& dataset, const unet::UNetConfig& net,
                             const TrainConfig& config, const std::vector<double>& gammas,
                             int replicates, double match_radius) {
    if (replicates < 1) throw std::runtime_error("gamma_sweep: replicates must be >= 1");
    if (gammas.empty()) throw std::runtime_error("gamma_sweep: no gamma values");
    const auto thresholds = detect::default_thresholds();

    GammaSweepResult res;
    res.gammas = gammas;
    res.ap.resize(gammas.size());
    std::vector<std::vector<std::vector<detect::PRPoint>>> curves(gammas.size());
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        for (int r = 0; r < replicates; ++r) {
            TrainConfig cfg = config;
            cfg.seed = rng::derive(config.seed, 7001 + r); // paired seeds across gammas
            TrainResult tr = train(dataset, net, cfg, {gammas[gi]});
            auto curve = test_split_pr(dataset, tr.params, thresholds, match_radius);
            res.ap[gi].push_back(detect::average_precision(curve));
            curves[gi].push_back(std::move(curve));
        }
        double sum = 0.0;
        for (double a : res.ap[gi]) sum += a;
        res.mean_ap.push_back(sum / static_cast<double>(replicates));
    }

    // Precision statistics per recall bin: for each replicate the precision
    // credited to a bin is the best precision among points reaching at least
    // that recall (0 when the curve never reaches it).
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        for (int bin = 1; bin <= 19; ++bin) {
            const double recall_bin = static_cast<double>(bin * 5) / 100.0;
            std::vector<double> precisions;
            for (const auto& curve : curves[gi]) {
                double best = 0.0;
                for (const auto& p : curve)
                    if (p.recall >= recall_bin) best = std::max(best, p.precision);
                precisions.push_back(best);
            }
            double mean = 0.0;
            for (double p : precisions) mean += p;
            mean /= static_cast<double>(precisions.size());
            double var = 0.0;
            for (double p : precisions) var += (p - mean) * (p - mean);
            var /= static_cast<double>(precisions.size());
            res.rows.push_back({gammas[gi], recall_bin, mean, std::sqrt(var)});
        }
    }
    return res;
}

void save_loss_log_csv(const std::vector<EpochLoss>& log, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("train: cannot write " + path);
    f << "epoch,mean_train_loss\n";
    for (const auto& e : log) f << e.epoch << "," << fmt(e.mean_train_loss) << "\n";
    f.close();
    if (!f) throw std::runtime_error("train: write failed for " + path);
}

void save_gamma_sweep_csv(const GammaSweepResult& sweep, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("train: cannot write " + path);
    f << "gamma,recall_bin,precision_mean,precision_std\n";
    for (const auto& r : sweep.rows)
        f << fmt(r.gamma) << "," << fmt(r.recall_bin) << "," << fmt(r.precision_mean) << ","
          << fmt(r.precision_std) << "\n";
    f.close();
    if (!f) throw std::runtime_error("train: write failed for " + path);
}

} // namespace petrel::train
