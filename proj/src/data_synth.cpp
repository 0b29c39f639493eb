#include "featsplat/data_synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "featsplat/asset.hpp"
#include "featsplat/fitting.hpp"

namespace fsplat {

namespace {

double smooth(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

Eigen::Vector3d mix(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double t) { return a + t * (b - a); }

// Albedo of the oracle portrait at a point of the rest-pose template.
Eigen::Vector3d albedo(const Eigen::Vector3d& p) {
    const Eigen::Vector3d skin(0.86, 0.66, 0.55), hair(0.25, 0.16, 0.10), shirt(0.20, 0.35, 0.62);
    const Eigen::Vector3d lips(0.72, 0.30, 0.32), brow(0.30, 0.20, 0.14), sclera(0.95, 0.94, 0.92),
        iris(0.15, 0.22, 0.38);
    const bool front = p.z() > 0.04;
    Eigen::Vector3d c = mix(shirt, skin, smooth(-0.01, 0.02, p.y()));
    // Shirt stripes and a collar.
    c += (1.0 - smooth(-0.01, 0.02, p.y())) * 0.06 * std::sin(p.y() * 70.0) * Eigen::Vector3d::Ones();
    c *= 0.92 + 0.08 * std::cos(p.x() * 12.0);
    // Hair cap and back of the head.
    const double hair_w = std::max(smooth(0.235, 0.26, p.y()), smooth(0.02, -0.04, p.z()) * smooth(0.12, 0.16, p.y()));
    c = mix(c, hair, hair_w);
    if (front && p.y() > 0.09 && p.y() < 0.26) {
        for (double sx : {-1.0, 1.0}) {
            const double de = std::hypot(p.x() - sx * 0.035, (p.y() - 0.205) * 1.6);
            c = mix(c, sclera, 1.0 - smooth(0.010, 0.013, de));
            c = mix(c, iris, 1.0 - smooth(0.005, 0.007, de));
            const double db = std::hypot(p.x() - sx * 0.035, (p.y() - 0.235) * 3.0);
            c = mix(c, brow, 1.0 - smooth(0.014, 0.018, db));
        }
        const double dl = std::hypot(p.x() * 0.8, (p.y() - 0.135) * 3.0);
        c = mix(c, lips, 1.0 - smooth(0.018, 0.024, dl));
        c += 0.05 * std::exp(-std::pow((p.y() - 0.17) / 0.02, 2)) * std::exp(-std::pow(p.x() / 0.01, 2)) *
             Eigen::Vector3d::Ones();
    }
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

PoseParams scripted_pose(const BodyAsset& asset, int t, int frames) {
    PoseParams p = PoseParams::zeros(asset);
    const double s = 2.0 * std::numbers::pi * t / std::max(1, frames);
    p.beta << 0.3, -0.2, 0.1, 0.2;
    const double theta[5][3] = {{0.0, 0.05 * std::sin(s), 0.0},
                                {0.03 * std::sin(2 * s), 0.0, 0.02 * std::cos(s)},
                                {0.08 * std::sin(s), 0.10 * std::sin(s + 1.0), 0.0},
                                {0.10 * std::sin(2 * s), 0.20 * std::sin(s), 0.05 * std::cos(s)},
                                {0.06 * (1.0 + std::sin(3 * s)), 0.0, 0.0}};
    for (int j = 0; j < std::min(5, asset.num_joints()); ++j)
        for (int k = 0; k < 3; ++k) p.theta(3 * j + k) = theta[j][k];
    const double psi[4] = {0.6 * std::sin(s), 0.5 * std::sin(2 * s + 0.5), 0.2 * (1.0 + std::sin(3 * s)),
                           0.3 * std::sin(s + 2.0)};
    for (int e = 0; e < std::min(4, asset.num_expressions()); ++e) p.psi(e) = psi[e];
    return p;
}

Image make_background(int size, int t, int frames) {
    Image bg(size, size, 3);
    const Eigen::Vector3d top(0.55, 0.65, 0.80), bottom(0.85, 0.80, 0.70), silhouette(0.38, 0.33, 0.34);
    const double wobble = 0.01 * std::sin(2.0 * std::numbers::pi * t / std::max(1, frames));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = (y + 0.5) / size;
            Eigen::Vector3d c = mix(top, bottom, v) + wobble * Eigen::Vector3d::Ones();
            // A rounded torso-like silhouette rising from the bottom edge.
            const double dx = ((x + 0.5) / size - 0.5) / 0.42, dy = (v - 1.05) / 0.38;
            const double inside = 1.0 - smooth(0.95, 1.05, dx * dx + dy * dy);
            c = mix(c, silhouette, inside);
            for (int k = 0; k < 3; ++k) bg.at(y, x, k) = std::clamp(c(k), 0.0, 1.0);
        }
    return bg;
}

Camera frontal_camera(int size) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = size * 1.2 / 0.78;
    cam.cx = cam.cy = 0.5 * size;
    Eigen::Matrix3d r = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    const Eigen::Vector3d center(0.0, -0.03, 1.2);
    cam.world_to_camera.linear() = r;
    cam.world_to_camera.translation() = -r * center;
    return cam;
}

Image composite(const RerenderStack& stack, const FeatureFrame& f, const Image& phi, const Image& mask,
                const Image& bg) {
    return decode(stack, fuse(stack, phi, f.alpha, mask, encode_background(stack, bg)));
}

}  // namespace

void JitterSpec::validate() const {
    if (!(pose_sigma >= 0.0) || !(expr_sigma >= 0.0) || !(tint_sigma >= 0.0))
        throw InvalidArgument("jitter sigmas must be nonnegative");
}

OracleScene make_oracle_scene(const BodyModel& model, const SceneOptions& opt) {
    if (opt.frames <= 0 || opt.image_size <= 0) throw InvalidArgument("oracle scene needs frames and an image size");
    const BodyAsset& asset = model.asset();
    OracleScene scene;
    scene.mask_dilation = opt.mask_dilation;
    scene.texture = init_texture(asset, opt.texture_resolution, opt.seed);
    scene.texture.features.setZero();
    scene.texture.opacity_logit.setConstant(std::log(0.9 / 0.1));
    const auto& binding = *scene.texture.binding;
    for (int i = 0; i < scene.texture.size(); ++i) {
        const TexelBinding& tb = binding.texels[static_cast<std::size_t>(i)];
        const Face& f = asset.faces[static_cast<std::size_t>(tb.face)];
        const Eigen::Vector3d p = tb.bary(0) * asset.template_vertices.row(f[0]).transpose() +
                                  tb.bary(1) * asset.template_vertices.row(f[1]).transpose() +
                                  tb.bary(2) * asset.template_vertices.row(f[2]).transpose();
        scene.texture.features.row(i).head<3>() = albedo(p).transpose();
    }
    scene.stack = make_passthrough_stack(scene.texture.channels);
    for (int t = 0; t < opt.frames; ++t) {
        scene.track.frames.push_back(scripted_pose(asset, t, opt.frames));
        scene.cameras.push_back(frontal_camera(opt.image_size));
        scene.backgrounds.push_back(make_background(opt.image_size, t, opt.frames));
    }
    scene.landmark_vertices = portrait_landmark_vertices(asset);
    return scene;
}

Image dilate_mask(const Image& alpha, double threshold, int radius) {
    if (alpha.channels != 1) throw InvalidArgument("dilate_mask: expected a single-channel image");
    Image out(alpha.height, alpha.width, 1);
    for (int y = 0; y < alpha.height; ++y)
        for (int x = 0; x < alpha.width; ++x) {
            if (!(alpha.at(y, x) > threshold)) continue;
            for (int yy = std::max(0, y - radius); yy <= std::min(alpha.height - 1, y + radius); ++yy)
                for (int xx = std::max(0, x - radius); xx <= std::min(alpha.width - 1, x + radius); ++xx)
                    out.at(yy, xx) = 1.0;
        }
    return out;
}

SynthOutput synth_sequence(const BodyModel& model, const OracleScene& scene, const JitterSpec& jitter) {
    jitter.validate();
    const int nt = scene.track.size();
    SynthOutput out;
    out.dataset.track = scene.track;
    out.dataset.cameras = scene.cameras;
    out.dataset.landmarks.vertices = scene.landmark_vertices;
    std::mt19937_64 rng(jitter.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (int t = 0; t < nt; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        const PoseParams& truth = scene.track.frames[tu];
        const Camera& cam = scene.cameras[tu];
        const Image& bg = scene.backgrounds[tu];

        PoseParams jit = truth;
        for (Eigen::Index k = 0; k < jit.theta.size(); ++k) jit.theta(k) += jitter.pose_sigma * normal(rng);
        for (Eigen::Index k = 0; k < jit.psi.size(); ++k) jit.psi(k) += jitter.expr_sigma * normal(rng);
        Eigen::Vector3d tint;
        for (int k = 0; k < 3; ++k) tint(k) = 1.0 + jitter.tint_sigma * normal(rng);

        const FeatureFrame clean = render(model, truth, nullptr, cam, scene.texture, nullptr);
        const Image head_mask = dilate_mask(clean.alpha, 0.05, scene.mask_dilation);
        Image target = composite(scene.stack, clean, clean.phi, head_mask, bg);

        const FeatureFrame gen = render(model, jit, nullptr, cam, scene.texture, nullptr);
        Image phi = gen.phi;
        for (std::size_t p = 0; p < phi.pixel_count(); ++p)
            for (int k = 0; k < 3; ++k) phi.data[p * static_cast<std::size_t>(phi.channels) + static_cast<std::size_t>(k)] *= tint(k);
        Image image = composite(scene.stack, gen, phi, head_mask, bg);

        FrameData fd;
        fd.image = clamp_unit(image);
        fd.alpha = gen.alpha;
        fd.target = clamp_unit(target);
        fd.background = bg;
        fd.head_mask = head_mask;
        out.dataset.frames.push_back(std::move(fd));
        out.clean_images.push_back(clamp_unit(target));
        out.dataset.landmarks.observations.push_back(project_landmarks(model, jit, cam, scene.landmark_vertices));
        out.jittered_track.frames.push_back(jit);
        out.tints.push_back(tint);
    }
    return out;
}

double psnr(const Image& a, const Image& b) {
    require_shape(b, a.height, a.width, a.channels, "psnr");
    if (a.data.empty()) return kPsnrIdentical;
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

double mean_landmark_displacement(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b) {
    if (a.size() != b.size()) throw InvalidArgument("landmark displacement: frame counts differ");
    double sum = 0.0;
    long n = 0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        if (a[t].rows() != b[t].rows() || a[t].cols() != 2 || b[t].cols() != 2)
            throw InvalidArgument("landmark displacement: shapes differ");
        for (Eigen::Index i = 0; i < a[t].rows(); ++i) {
            sum += (a[t].row(i) - b[t].row(i)).norm();
            ++n;
        }
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace fsplat
