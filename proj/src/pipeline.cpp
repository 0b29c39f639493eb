#include "featsplat/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "featsplat/asset.hpp"

namespace fsplat {

namespace fs = std::filesystem;

namespace {

std::string frame_name(const char* stem, int t, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, t, ext);
    return buf;
}

double positive(const Config& cfg, const std::string& key, double fallback) {
    const double v = cfg.get_double(key, fallback);
    if (!(v >= 0.0)) throw ConfigError(key + " must be nonnegative");
    return v;
}

int count(const Config& cfg, const std::string& key, long long fallback, long long lo, long long hi) {
    const long long v = cfg.get_int(key, fallback);
    if (v < lo || v > hi)
        throw ConfigError(key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(v);
}

std::uint64_t seed_of(const Config& cfg, const std::string& key, std::uint64_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key + " must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys{
        "frames",          "image_size",       "scene_resolution", "mask_dilation",   "scene_seed",
        "jitter.pose",     "jitter.expr",      "jitter.tint",      "jitter.seed",     "iterations",
        "seed",            "tcf",              "deterministic",    "resolution",      "lambda.recon",
        "lambda.mask",     "lambda.perceptual", "lambda.background", "lr.features",   "lr.geometry",
        "lr.conv",         "lr.delta",         "lr.temporal",      "delta_regularizer", "holdout_stride",
        "checkpoint_every", "retrack",         "retrack.max_iterations", "retrack.damping"};
    return keys;
}

SynthSettings synth_settings(const Config& cfg) {
    cfg.require_known(known_config_keys());
    SynthSettings s;
    s.scene.frames = count(cfg, "frames", s.scene.frames, 1, 100000);
    s.scene.image_size = count(cfg, "image_size", s.scene.image_size, 8, 4096);
    s.scene.texture_resolution = count(cfg, "scene_resolution", s.scene.texture_resolution, 1, 4096);
    s.scene.mask_dilation = count(cfg, "mask_dilation", s.scene.mask_dilation, 0, 1024);
    s.scene.seed = seed_of(cfg, "scene_seed", s.scene.seed);
    s.jitter.pose_sigma = positive(cfg, "jitter.pose", s.jitter.pose_sigma);
    s.jitter.expr_sigma = positive(cfg, "jitter.expr", s.jitter.expr_sigma);
    s.jitter.tint_sigma = positive(cfg, "jitter.tint", s.jitter.tint_sigma);
    s.jitter.seed = seed_of(cfg, "jitter.seed", s.jitter.seed);
    return s;
}

TrainConfig train_config(const Config& cfg) {
    cfg.require_known(known_config_keys());
    TrainConfig t;
    t.iterations = count(cfg, "iterations", t.iterations, 0, 100000000);
    t.seed = seed_of(cfg, "seed", t.seed);
    t.tcf = cfg.get_bool("tcf", t.tcf);
    t.deterministic = cfg.get_bool("deterministic", t.deterministic);
    t.texture_resolution = count(cfg, "resolution", t.texture_resolution, 1, 4096);
    t.weights.recon = positive(cfg, "lambda.recon", t.weights.recon);
    t.weights.mask = positive(cfg, "lambda.mask", t.weights.mask);
    t.weights.perceptual = positive(cfg, "lambda.perceptual", t.weights.perceptual);
    t.weights.background = positive(cfg, "lambda.background", t.weights.background);
    t.lr.features = positive(cfg, "lr.features", t.lr.features);
    t.lr.geometry = positive(cfg, "lr.geometry", t.lr.geometry);
    t.lr.conv = positive(cfg, "lr.conv", t.lr.conv);
    t.lr.delta = positive(cfg, "lr.delta", t.lr.delta);
    t.lr.temporal = positive(cfg, "lr.temporal", t.lr.temporal);
    t.delta_regularizer = positive(cfg, "delta_regularizer", t.delta_regularizer);
    return t;
}

RetrackOptions retrack_options(const Config& cfg) {
    cfg.require_known(known_config_keys());
    RetrackOptions o;
    o.max_iterations = count(cfg, "retrack.max_iterations", o.max_iterations, 0, 100000);
    o.initial_damping = positive(cfg, "retrack.damping", o.initial_damping);
    return o;
}

std::vector<int> training_frames(int frames, int holdout_stride) {
    std::vector<int> out;
    for (int t = 0; t < frames; ++t)
        if (holdout_stride <= 0 || t % holdout_stride != 0) out.push_back(t);
    return out;
}

std::vector<int> heldout_frames(int frames, int holdout_stride) {
    std::vector<int> out;
    if (holdout_stride > 0)
        for (int t = 0; t < frames; t += holdout_stride) out.push_back(t);
    return out;
}

fs::path write_dataset(const fs::path& dir, const BodyAsset& asset, const SynthOutput& synth) {
    const Dataset& d = synth.dataset;
    d.validate(asset);
    ensure_dir(dir / "frames");
    save_body_asset(asset, dir / "asset.obj");
    write_file_atomic(dir / "cameras.csv", format_cameras_csv(d.cameras));
    write_track(dir / "track_true.csv", asset, d.track);
    write_track(dir / "track_jittered.csv", asset, synth.jittered_track);
    std::ostringstream manifest;
    manifest << "frame,image,alpha,target,background,head_mask,landmarks,clean\n";
    for (int t = 0; t < d.size(); ++t) {
        const FrameData& f = d.frames[static_cast<std::size_t>(t)];
        const std::string names[7] = {frame_name("image", t, "ppm"),      frame_name("alpha", t, "pgm"),
                                      frame_name("target", t, "ppm"),     frame_name("background", t, "ppm"),
                                      frame_name("mask", t, "pgm"),       frame_name("landmarks", t, "csv"),
                                      frame_name("clean", t, "ppm")};
        write_image(dir / "frames" / names[0], f.image);
        write_image(dir / "frames" / names[1], f.alpha);
        write_image(dir / "frames" / names[2], f.target);
        write_image(dir / "frames" / names[3], f.background);
        write_image(dir / "frames" / names[4], f.head_mask);
        write_file_atomic(dir / "frames" / names[5],
                          format_landmarks_csv(d.landmarks.vertices, d.landmarks.observations[static_cast<std::size_t>(t)]));
        const bool clean = static_cast<std::size_t>(t) < synth.clean_images.size();
        if (clean) write_image(dir / "frames" / names[6], synth.clean_images[static_cast<std::size_t>(t)]);
        manifest << t;
        for (int k = 0; k < 7; ++k) manifest << ',' << (k == 6 && !clean ? "" : "frames/" + names[k]);
        manifest << '\n';
    }
    write_file_atomic(dir / "manifest.csv", manifest.str());
    return dir / "manifest.csv";
}

DiskDataset read_dataset(const fs::path& dir) {
    DiskDataset ds;
    ds.asset = load_body_asset(dir / "asset.obj");
    ds.data.cameras = parse_cameras_csv(read_file(dir / "cameras.csv"));
    ds.data.track = read_track(dir / "track_true.csv", ds.asset);
    if (fs::exists(dir / "track_jittered.csv")) ds.jittered = read_track(dir / "track_jittered.csv", ds.asset);

    std::istringstream is(read_file(dir / "manifest.csv"));
    std::string line;
    std::getline(is, line);
    if (line.rfind("frame,image,alpha,target,background,head_mask,landmarks", 0) != 0)
        throw IoError((dir / "manifest.csv").string() + ": unexpected header");
    bool all_clean = true;
    std::vector<Image> clean;
    for (int row = 0; std::getline(is, line);) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() < 7 || cells[0] != std::to_string(row))
            throw IoError("manifest row " + std::to_string(row) + " is malformed");
        FrameData f;
        f.image = read_image(dir / cells[1]);
        f.alpha = read_image(dir / cells[2]);
        f.target = read_image(dir / cells[3]);
        f.background = read_image(dir / cells[4]);
        f.head_mask = read_image(dir / cells[5]);
        std::vector<int> vertices;
        Eigen::MatrixXd obs;
        parse_landmarks_csv(read_file(dir / cells[6]), vertices, obs);
        if (row == 0) ds.data.landmarks.vertices = vertices;
        else if (vertices != ds.data.landmarks.vertices)
            throw IoError("landmark vertex lists differ between frames");
        ds.data.landmarks.observations.push_back(obs);
        if (cells.size() > 7 && !cells[7].empty()) clean.push_back(read_image(dir / cells[7]));
        else all_clean = false;
        ds.data.frames.push_back(std::move(f));
        ++row;
    }
    if (all_clean) ds.clean = std::move(clean);
    try {
        ds.data.validate(ds.asset);
    } catch (const InvalidArgument& e) {
        throw IoError(dir.string() + ": " + e.what());
    }
    return ds;
}

DiskDataset dataset_from_synth(const BodyAsset& asset, const SynthOutput& synth) {
    DiskDataset ds;
    ds.asset = asset;
    ds.data = synth.dataset;
    ds.jittered = synth.jittered_track;
    ds.clean = synth.clean_images;
    return ds;
}

fs::path cmd_synth(const Config& cfg, const fs::path& out_dir, std::ostream& log) {
    const SynthSettings s = synth_settings(cfg);
    const BodyModel body(make_portrait_asset());
    const OracleScene scene = make_oracle_scene(body, s.scene);
    const SynthOutput out = synth_sequence(body, scene, s.jitter);
    const fs::path manifest = write_dataset(out_dir, body.asset(), out);
    log << manifest.string() << '\n';
    return manifest;
}

RetrackReport cmd_retrack(const fs::path& dataset, const Config& cfg, const fs::path& out_track, std::ostream& log) {
    const RetrackOptions opt = retrack_options(cfg);
    const DiskDataset ds = read_dataset(dataset);
    const BodyModel body(ds.asset);
    RetrackReport report;
    const Track track = retrack(body, ds.data.landmarks, ds.data.cameras, ds.data.track, opt, &report);
    write_track(out_track, ds.asset, track);
    log << "retrack: " << report.iterations << " iterations, cost " << report.initial_cost << " -> "
        << report.final_cost << (report.converged ? " (converged)" : " (not converged)") << '\n';
    return report;
}

TrainResult cmd_fit(const fs::path& dataset, const std::optional<fs::path>& track, const Config& cfg,
                    const fs::path& out_ckpt, std::ostream& log) {
    TrainConfig tc = train_config(cfg);
    const int holdout = count(cfg, "holdout_stride", 8, 0, 1000000);
    const int every = count(cfg, "checkpoint_every", 0, 0, 100000000);
    const DiskDataset ds = read_dataset(dataset);
    const BodyModel body(ds.asset);
    const Track tr = track ? read_track(*track, ds.asset) : ds.data.track;
    if (tr.size() != ds.data.size()) throw IoError("track frame count differs from the dataset");
    tc.train_frames = training_frames(ds.data.size(), holdout);
    PortraitModel pm = PortraitModel::create(ds.asset, tc.texture_resolution, ds.data.size(), tc.tcf, tc.seed);
    ensure_dir(out_ckpt);
    const auto hook = [&](int it, const PortraitModel& m) {
        const fs::path dir = out_ckpt / frame_name("iter", it, "ckpt");
        ensure_dir(dir);
        save_checkpoint(dir, ds.asset, m);
    };
    TrainResult result = train(body, ds.data, tr, pm, tc, hook, every);
    save_checkpoint(out_ckpt, ds.asset, pm);
    write_file_atomic(out_ckpt / "loss.csv", format_loss_csv(result.curve));
    if (!result.curve.empty()) log << "fit: final loss " << result.curve.back().loss.total << '\n';
    log << out_ckpt.string() << '\n';
    return result;
}

void cmd_render(const fs::path& ckpt, const fs::path& dataset, const std::optional<fs::path>& track,
                const fs::path& out_dir, std::ostream& log) {
    const DiskDataset ds = read_dataset(dataset);
    const BodyModel body(ds.asset);
    const PortraitModel pm = load_checkpoint(ckpt, ds.asset);
    const Track tr = track ? read_track(*track, ds.asset) : ds.data.track;
    std::vector<Image> backgrounds, masks;
    for (const FrameData& f : ds.data.frames) {
        backgrounds.push_back(f.background);
        masks.push_back(f.head_mask);
    }
    const std::vector<Image> frames = infer(body, pm, tr, ds.data.cameras, backgrounds, masks);
    ensure_dir(out_dir);
    for (std::size_t t = 0; t < frames.size(); ++t)
        write_image(out_dir / frame_name("frame", static_cast<int>(t), "ppm"), clamp_unit(frames[t]));
    log << "render: " << frames.size() << " frames -> " << out_dir.string() << '\n';
}

SwapResult run_swap(const BodyModel& body, const DiskDataset& ds, const Config& cfg, std::ostream& log) {
    TrainConfig tc = train_config(cfg);
    const int holdout = count(cfg, "holdout_stride", 8, 0, 1000000);
    const bool use_retrack = cfg.get_bool("retrack", true);
    SwapResult r;
    r.training_track = ds.data.track;
    if (use_retrack) {
        RetrackReport rep;
        r.training_track = retrack(body, ds.data.landmarks, ds.data.cameras, ds.data.track, retrack_options(cfg), &rep);
        log << "retrack: " << rep.iterations << " iterations, cost " << rep.initial_cost << " -> " << rep.final_cost
            << '\n';
        r.retrack = rep;
    }
    tc.train_frames = training_frames(ds.data.size(), holdout);
    r.model = PortraitModel::create(ds.asset, tc.texture_resolution, ds.data.size(), tc.tcf, tc.seed);
    r.train = train(body, ds.data, r.training_track, r.model, tc);
    for (int t = 0; t < ds.data.size(); ++t) {
        const FrameData& f = ds.data.frames[static_cast<std::size_t>(t)];
        r.frames.push_back(clamp_unit(infer_frame(body, r.model, ds.data.track.frames[static_cast<std::size_t>(t)],
                                                  ds.data.cameras[static_cast<std::size_t>(t)], f.background,
                                                  f.head_mask)));
    }
    const std::vector<int> held = heldout_frames(ds.data.size(), holdout);
    r.report.heldout_frames = static_cast<int>(held.size());
    r.report.heldout_psnr = std::numeric_limits<double>::quiet_NaN();
    if (!held.empty() && !ds.clean.empty()) {
        double sum = 0.0;
        for (int t : held) sum += psnr(r.frames[static_cast<std::size_t>(t)], ds.clean[static_cast<std::size_t>(t)]);
        r.report.heldout_psnr = sum / static_cast<double>(held.size());
        log << "held-out PSNR: " << r.report.heldout_psnr << " dB over " << held.size() << " frames\n";
    }
    return r;
}

SwapReport cmd_swap(const fs::path& dataset, const Config& cfg, const fs::path& out_dir, std::ostream& log) {
    train_config(cfg);  // reject a bad config before any work
    const DiskDataset ds = read_dataset(dataset);
    const BodyModel body(ds.asset);
    const SwapResult r = run_swap(body, ds, cfg, log);
    ensure_dir(out_dir / "frames");
    write_track(out_dir / "track_train.csv", ds.asset, r.training_track);
    save_checkpoint(out_dir, ds.asset, r.model);
    write_file_atomic(out_dir / "loss.csv", format_loss_csv(r.train.curve));
    for (std::size_t t = 0; t < r.frames.size(); ++t)
        write_image(out_dir / "frames" / frame_name("frame", static_cast<int>(t), "ppm"), r.frames[t]);
    return r.report;
}

}  // namespace fsplat
