#include "petrel/cli.hpp"

#include "petrel/detection.hpp"
#include "petrel/inference.hpp"
#include "petrel/manifest.hpp"
#include "petrel/observer.hpp"
#include "petrel/parallel.hpp"
#include "petrel/plot.hpp"
#include "petrel/raster.hpp"
#include "petrel/synthgen.hpp"
#include "petrel/training.hpp"
#include "petrel/unet.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace petrel::cli {

namespace {

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("PETREL_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0')
        throw std::runtime_error("PETREL_SEED is not an unsigned integer: " + std::string(v));
    return static_cast<std::uint64_t>(parsed);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void ensure_parent_dir(const std::string& path) {
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Shared knobs for the train subcommand; flags beat the config file, the
// config file beats these defaults.
struct TrainOptions {
    unet::UNetConfig net{5, 2, 8, 108};
    train::TrainConfig tc;
    double gamma = 1.0;
    int patches_per_scene = 70;
    double radius = detect::kDefaultMatchRadius;
    std::string exclude_scene;
    std::string sweep_gammas; // comma-separated; non-empty switches to sweep mode
    int replicates = 3;
};

void apply_train_config_file(TrainOptions& o, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config " + path + ": invalid JSON: " + e.what());
    }
    o.net.in_channels = j.value("in_channels", o.net.in_channels);
    o.net.depth = j.value("depth", o.net.depth);
    o.net.base_channels = j.value("base_channels", o.net.base_channels);
    o.net.input_size = j.value("input_size", o.net.input_size);
    o.tc.learning_rate = j.value("learning_rate", o.tc.learning_rate);
    o.tc.batch_size = j.value("batch_size", o.tc.batch_size);
    o.tc.epochs = j.value("epochs", o.tc.epochs);
    o.tc.seed = j.value("seed", o.tc.seed);
    o.tc.test_fraction = j.value("test_fraction", o.tc.test_fraction);
    o.gamma = j.value("gamma", o.gamma);
    o.patches_per_scene = j.value("patches_per_scene", o.patches_per_scene);
    o.radius = j.value("match_radius", o.radius);
}

std::vector<train::SceneData> load_scene_dir(const std::string& dir) {
    std::vector<std::string> tags;
    const std::string suffix = ".truth.csv";
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            tags.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(tags.begin(), tags.end());
    if (tags.empty())
        throw std::runtime_error("no scenes (*.truth.csv) found in " + dir);
    std::vector<train::SceneData> scenes;
    for (const auto& tag : tags) {
        train::SceneData s;
        s.image = raster::load_raster(dir + "/" + tag);
        s.truth = raster::load_labels_csv(dir + "/" + tag + suffix);
        s.tag = tag;
        scenes.push_back(std::move(s));
    }
    return scenes;
}

nlohmann::json net_json(const unet::UNetConfig& c) {
    return {{"in_channels", c.in_channels},
            {"depth", c.depth},
            {"base_channels", c.base_channels},
            {"input_size", c.input_size}};
}

std::vector<std::pair<double, double>> pr_points_from_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "threshold,tp,fp,fn,precision,recall")
        throw std::runtime_error(path + " is not a PR csv");
    std::vector<std::pair<double, double>> pts;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 6) throw std::runtime_error(path + ": malformed row " + line);
        pts.emplace_back(std::stod(fields[5]), std::stod(fields[4]));
    }
    std::sort(pts.begin(), pts.end());
    return pts;
}

std::vector<plot::Series> marker_series_from_matrix_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) ||
        line != "observer_as_truth,observer_as_detector,precision,recall")
        throw std::runtime_error(path + " is not an observer matrix csv");
    plot::Series markers;
    markers.label = "observer pairs";
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string truth, det, prec, rec;
        if (!std::getline(ss, truth, ',') || !std::getline(ss, det, ',') ||
            !std::getline(ss, prec, ',') || !std::getline(ss, rec, ','))
            throw std::runtime_error(path + ": malformed row " + line);
        if (truth == det) continue; // unit diagonal carries no information
        markers.points.emplace_back(std::stod(rec), std::stod(prec));
    }
    return {markers};
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir,
                 const std::string& name) {
    const auto start = std::chrono::steady_clock::now();
    synth::GenerateSpec spec = synth::parse_generate_spec(read_text_file(spec_path));
    if (auto s = env_seed()) spec.scene.seed = *s;
    fs::create_directories(out_dir);

    const synth::Scene scene = synth::generate_scene(spec.scene);
    const std::string prefix = out_dir + "/" + name;
    raster::save_raster(scene.image, prefix);
    raster::save_labels_csv(scene.truth, prefix + ".truth.csv");
    std::vector<std::string> outputs = {prefix + ".hdr.json", prefix + ".bin",
                                        prefix + ".truth.csv"};
    for (const auto& [id, model] : spec.observers) {
        const auto labels = synth::simulate_observer(scene.truth, scene.image, model, id);
        const std::string path = prefix + "." + id + ".csv";
        raster::save_labels_csv(labels, path);
        outputs.push_back(path);
    }

    manifest::RunManifest m;
    m.command = "generate";
    m.resolved_config = {{"scene",
                          {{"width", spec.scene.width},
                           {"height", spec.scene.height},
                           {"n_birds", spec.scene.n_birds},
                           {"bird_radius_px", spec.scene.bird_radius_px},
                           {"n_distractors", spec.scene.n_distractors},
                           {"background_texture_scale", spec.scene.background_texture_scale},
                           {"edge_margin_px", spec.scene.edge_margin_px},
                           {"seed", spec.scene.seed}}},
                         {"observers", spec.observers.size()},
                         {"name", name}};
    m.inputs = {spec_path};
    m.outputs = outputs;
    m.seed = spec.scene.seed;
    m.duration_seconds = seconds_since(start);
    manifest::write(m, prefix + ".generate.manifest.json");
    std::cout << "scene=" << prefix << " birds=" << scene.truth.points.size()
              << " observers=" << spec.observers.size() << "\n";
    return 0;
}

int cmd_train(const TrainOptions& opt, const std::string& data_dir,
              const std::string& out_prefix) {
    const auto start = std::chrono::steady_clock::now();
    const auto scenes = load_scene_dir(data_dir);
    const auto dataset = train::build_dataset(scenes, opt.patches_per_scene, opt.net, opt.tc,
                                              opt.exclude_scene);

    manifest::RunManifest m;
    m.command = "train";
    m.inputs = {data_dir};
    m.seed = opt.tc.seed;
    m.resolved_config = {{"net", net_json(opt.net)},
                         {"learning_rate", opt.tc.learning_rate},
                         {"batch_size", opt.tc.batch_size},
                         {"epochs", opt.tc.epochs},
                         {"seed", opt.tc.seed},
                         {"test_fraction", opt.tc.test_fraction},
                         {"gamma", opt.gamma},
                         {"patches_per_scene", opt.patches_per_scene},
                         {"match_radius", opt.radius},
                         {"exclude_scene", opt.exclude_scene},
                         {"threads", par::threads()}};

    if (!opt.sweep_gammas.empty()) {
        std::vector<double> gammas;
        std::stringstream ss(opt.sweep_gammas);
        std::string tok;
        while (std::getline(ss, tok, ',')) gammas.push_back(std::stod(tok));
        const auto sweep = train::gamma_sweep(dataset, opt.net, opt.tc, gammas,
                                              opt.replicates, opt.radius);
        ensure_parent_dir(out_prefix);
        train::save_gamma_sweep_csv(sweep, out_prefix + ".sweep.csv");
        m.resolved_config["sweep_gammas"] = gammas;
        m.resolved_config["replicates"] = opt.replicates;
        m.outputs = {out_prefix + ".sweep.csv"};
        m.duration_seconds = seconds_since(start);
        manifest::write(m, out_prefix + ".train.manifest.json");
        for (std::size_t gi = 0; gi < sweep.gammas.size(); ++gi)
            std::cout << "gamma=" << sweep.gammas[gi] << " mean_ap=" << sweep.mean_ap[gi]
                      << "\n";
        return 0;
    }

    const auto result = train::train(dataset, opt.net, opt.tc, {opt.gamma});
    ensure_parent_dir(out_prefix);
    unet::save_checkpoint(result.params, out_prefix);
    train::save_loss_log_csv(result.loss_log, out_prefix + ".loss.csv");
    m.outputs = {out_prefix + ".ckpt.json", out_prefix + ".ckpt.bin",
                 out_prefix + ".loss.csv"};
    m.duration_seconds = seconds_since(start);
    manifest::write(m, out_prefix + ".train.manifest.json");
    if (!result.loss_log.empty())
        std::cout << "final_loss=" << result.loss_log.back().mean_train_loss << "\n";
    std::cout << "checkpoint=" << out_prefix << ".ckpt.json\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& scene_path,
              const std::string& out_prefix, int stride) {
    const auto start = std::chrono::steady_clock::now();
    const auto params = unet::load_checkpoint(ckpt);
    const auto scene = raster::load_raster(scene_path);
    const auto heatmap = infer::infer_scene(params, scene, stride);
    ensure_parent_dir(out_prefix);
    raster::save_raster(heatmap, out_prefix);

    manifest::RunManifest m;
    m.command = "infer";
    m.resolved_config = {{"net", net_json(params.config)},
                         {"stride", stride},
                         {"threads", par::threads()}};
    m.inputs = {ckpt, scene_path};
    m.outputs = {out_prefix + ".hdr.json", out_prefix + ".bin"};
    m.duration_seconds = seconds_since(start);
    manifest::write(m, out_prefix + ".infer.manifest.json");
    std::cout << "heatmap=" << out_prefix << ".hdr.json\n";
    return 0;
}

int cmd_evaluate(const std::string& heatmap_path, const std::string& truth_path,
                 const std::string& out_prefix, double radius, double threshold) {
    const auto start = std::chrono::steady_clock::now();
    const auto heatmap = raster::load_raster(heatmap_path);
    const auto truth = raster::load_labels_csv(truth_path);
    auto thresholds = detect::default_thresholds();
    if (std::none_of(thresholds.begin(), thresholds.end(),
                     [&](double t) { return std::abs(t - threshold) < 1e-12; })) {
        thresholds.push_back(threshold);
        std::sort(thresholds.begin(), thresholds.end());
    }
    const auto curve = detect::pr_curve(heatmap, truth, thresholds, radius);
    const auto dets = detect::extract_detections(heatmap, threshold);
    ensure_parent_dir(out_prefix);
    detect::save_pr_csv(curve, out_prefix + ".pr.csv");
    detect::save_detections_csv(dets, out_prefix + ".detections.csv");

    manifest::RunManifest m;
    m.command = "evaluate";
    m.resolved_config = {{"match_radius", radius}, {"threshold", threshold}};
    m.inputs = {heatmap_path, truth_path};
    m.outputs = {out_prefix + ".pr.csv", out_prefix + ".detections.csv"};
    m.duration_seconds = seconds_since(start);
    manifest::write(m, out_prefix + ".evaluate.manifest.json");

    // Operating point reported from the saved detection list itself, so the
    // printed count always equals the number of rows in the detections CSV.
    const auto om = detect::match_points(dets, truth.points, radius);
    const auto op = detect::pr_from_counts(threshold, static_cast<long>(om.pairs.size()),
                                           static_cast<long>(om.fp.size()),
                                           static_cast<long>(om.fn.size()));
    std::cout << "threshold=" << op.threshold << " precision=" << op.precision
              << " recall=" << op.recall << " count_estimate=" << detect::count_estimate(op)
              << "\n";
    return 0;
}

int cmd_observers(const std::vector<std::string>& label_paths,
                  const std::string& heatmap_path, const std::string& out_prefix,
                  double radius) {
    const auto start = std::chrono::steady_clock::now();
    obs::ObserverStudy study;
    study.radius = radius;
    for (const auto& path : label_paths) {
        auto labels = raster::load_labels_csv(path);
        if (labels.observer_id.empty()) labels.observer_id = fs::path(path).stem().string();
        study.label_sets.push_back(std::move(labels));
    }
    if (!heatmap_path.empty()) study.heatmap = raster::load_raster(heatmap_path);

    ensure_parent_dir(out_prefix);
    const auto matrix = obs::observer_matrix(study);
    obs::save_matrix_csv(matrix, out_prefix + ".matrix.csv");
    std::vector<std::string> outputs = {out_prefix + ".matrix.csv"};

    if (study.heatmap) {
        const auto curves = obs::model_vs_observers(study);
        for (std::size_t i = 0; i < curves.size(); ++i) {
            const std::string path =
                out_prefix + ".model_vs_" + matrix.ids[i] + ".pr.csv";
            detect::save_pr_csv(curves[i], path);
            outputs.push_back(path);
        }
        const auto report = obs::within_range_assessment(study);
        obs::save_report_json(report, out_prefix + ".report.json");
        outputs.push_back(out_prefix + ".report.json");
        std::cout << "within_range=" << report.passed << "/" << report.entries.size()
                  << "\n";
    }

    manifest::RunManifest m;
    m.command = "observers";
    m.resolved_config = {{"match_radius", radius},
                         {"observers", static_cast<int>(study.label_sets.size())}};
    m.inputs = label_paths;
    if (!heatmap_path.empty()) m.inputs.push_back(heatmap_path);
    m.outputs = outputs;
    m.duration_seconds = seconds_since(start);
    manifest::write(m, out_prefix + ".observers.manifest.json");
    return 0;
}

int cmd_plot(const std::vector<std::string>& pr_paths, const std::string& points_path,
             const std::string& out_path, const std::string& title) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<plot::Series> curves;
    for (const auto& path : pr_paths) {
        plot::Series s;
        s.label = fs::path(path).stem().string();
        s.points = pr_points_from_csv(path);
        curves.push_back(std::move(s));
    }
    std::vector<plot::Series> markers;
    if (!points_path.empty()) markers = marker_series_from_matrix_csv(points_path);
    ensure_parent_dir(out_path);
    plot::save_svg(plot::pr_figure_svg(curves, markers, title), out_path);

    manifest::RunManifest m;
    m.command = "plot";
    m.resolved_config = {{"title", title}};
    m.inputs = pr_paths;
    if (!points_path.empty()) m.inputs.push_back(points_path);
    m.outputs = {out_path};
    m.duration_seconds = seconds_since(start);
    manifest::write(m, out_path + ".plot.manifest.json");
    std::cout << "figure=" << out_path << "\n";
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"albatross detection pipeline on synthetic satellite scenes"};
    app.set_version_flag("--version", manifest::kToolVersion);
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible)")
        ->capture_default_str();

    // generate
    auto* gen = app.add_subcommand("generate", "synthesize a scene and observer labels");
    std::string gen_spec, gen_out, gen_name = "scene";
    gen->add_option("--spec", gen_spec, "JSON scene spec")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--name", gen_name, "scene name used as the file prefix")
        ->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train a model or run a gamma sweep");
    std::string tr_data, tr_out, tr_config;
    TrainOptions opt;
    double tr_lr = opt.tc.learning_rate, tr_gamma = opt.gamma,
           tr_testfrac = opt.tc.test_fraction, tr_radius = opt.radius;
    int tr_epochs = 0, tr_batch = opt.tc.batch_size, tr_input = opt.net.input_size,
        tr_depth = opt.net.depth, tr_base = opt.net.base_channels,
        tr_channels = opt.net.in_channels, tr_patches = opt.patches_per_scene,
        tr_replicates = opt.replicates;
    std::uint64_t tr_seed = 0;
    tr->add_option("--data", tr_data, "directory of scenes (*.truth.csv + rasters)")
        ->required();
    tr->add_option("--out", tr_out, "output path prefix")->required();
    tr->add_option("--config", tr_config, "JSON config file (flags take precedence)");
    tr->add_option("--epochs", tr_epochs, "training epochs");
    tr->add_option("--gamma", tr_gamma, "focal loss focusing parameter");
    tr->add_option("--lr", tr_lr, "learning rate");
    tr->add_option("--batch", tr_batch, "mini-batch size");
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_option("--input-size", tr_input, "network input patch size");
    tr->add_option("--depth", tr_depth, "pooling levels");
    tr->add_option("--base-channels", tr_base, "first-level feature maps");
    tr->add_option("--in-channels", tr_channels, "input bands");
    tr->add_option("--patches-per-scene", tr_patches, "patches sampled per scene");
    tr->add_option("--test-fraction", tr_testfrac, "held-out patch fraction");
    tr->add_option("--exclude-scene", opt.exclude_scene,
                   "scene tag to leave out of training");
    tr->add_option("--radius", tr_radius, "match radius for sweep evaluation");
    tr->add_option("--sweep-gammas", opt.sweep_gammas,
                   "comma-separated gammas; enables sweep mode");
    tr->add_option("--replicates", tr_replicates, "models per gamma in sweep mode");

    // infer
    auto* in = app.add_subcommand("infer", "run tiled inference over a scene");
    std::string in_ckpt, in_scene, in_out;
    int in_stride = 0;
    in->add_option("--checkpoint", in_ckpt, "checkpoint path prefix")->required();
    in->add_option("--scene", in_scene, "scene raster path prefix")->required();
    in->add_option("--out", in_out, "heatmap output path prefix")->required();
    in->add_option("--stride", in_stride, "tile claim stride (0 = widest valid)");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "PR curve and detections from a heatmap");
    std::string ev_heatmap, ev_truth, ev_out;
    double ev_radius = detect::kDefaultMatchRadius;
    double ev_threshold = detect::kOperatingThreshold;
    ev->add_option("--heatmap", ev_heatmap, "heatmap raster path prefix")->required();
    ev->add_option("--truth", ev_truth, "ground-truth label csv")->required();
    ev->add_option("--out", ev_out, "output path prefix")->required();
    ev->add_option("--radius", ev_radius, "match radius in pixels")->capture_default_str();
    ev->add_option("--threshold", ev_threshold, "operating threshold")
        ->capture_default_str();

    // observers
    auto* ob = app.add_subcommand("observers", "inter-observer matrix and model report");
    std::vector<std::string> ob_labels;
    std::string ob_heatmap, ob_out;
    double ob_radius = detect::kDefaultMatchRadius;
    ob->add_option("--labels", ob_labels, "observer label csv (repeatable)")
        ->required()
        ->expected(-2);
    ob->add_option("--heatmap", ob_heatmap, "model heatmap path prefix (enables report)");
    ob->add_option("--out", ob_out, "output path prefix")->required();
    ob->add_option("--radius", ob_radius, "match radius in pixels")->capture_default_str();

    // plot
    auto* pl = app.add_subcommand("plot", "render PR curves and observer points to SVG");
    std::vector<std::string> pl_pr;
    std::string pl_points, pl_out, pl_title = "precision-recall";
    pl->add_option("--pr", pl_pr, "PR csv to draw as a curve (repeatable)");
    pl->add_option("--points", pl_points, "observer matrix csv to draw as markers");
    pl->add_option("--out", pl_out, "output SVG path")->required();
    pl->add_option("--title", pl_title, "figure title")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        par::set_threads(threads);
        if (*gen) return cmd_generate(gen_spec, gen_out, gen_name);
        if (*tr) {
            if (!tr_config.empty()) apply_train_config_file(opt, tr_config);
            if (tr->count("--epochs")) opt.tc.epochs = tr_epochs;
            if (tr->count("--gamma")) opt.gamma = tr_gamma;
            if (tr->count("--lr")) opt.tc.learning_rate = tr_lr;
            if (tr->count("--batch")) opt.tc.batch_size = tr_batch;
            if (tr->count("--seed")) opt.tc.seed = tr_seed;
            if (tr->count("--input-size")) opt.net.input_size = tr_input;
            if (tr->count("--depth")) opt.net.depth = tr_depth;
            if (tr->count("--base-channels")) opt.net.base_channels = tr_base;
            if (tr->count("--in-channels")) opt.net.in_channels = tr_channels;
            if (tr->count("--patches-per-scene")) opt.patches_per_scene = tr_patches;
            if (tr->count("--test-fraction")) opt.tc.test_fraction = tr_testfrac;
            if (tr->count("--radius")) opt.radius = tr_radius;
            if (tr->count("--replicates")) opt.replicates = tr_replicates;
            if (auto s = env_seed()) opt.tc.seed = *s;
            return cmd_train(opt, tr_data, tr_out);
        }
        if (*in) return cmd_infer(in_ckpt, in_scene, in_out, in_stride);
        if (*ev) return cmd_evaluate(ev_heatmap, ev_truth, ev_out, ev_radius, ev_threshold);
        if (*ob) return cmd_observers(ob_labels, ob_heatmap, ob_out, ob_radius);
        if (*pl) return cmd_plot(pl_pr, pl_points, pl_out, pl_title);
        throw std::runtime_error("no subcommand selected");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace petrel::cli
