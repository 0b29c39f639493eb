#include "featsplat/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include "featsplat/asset.hpp"
#include "featsplat/error.hpp"
#include "featsplat/fitting.hpp"

namespace fsplat {

namespace {

constexpr int kSize = 24;

struct Harness {
    const GradcheckOptions& opt;
    GradcheckReport& report;
    std::mt19937_64 rng;

    // Compares analytic[i] with central differences of f around x[i] on a
    // sample of coordinates.
    void check(const std::string& name, const std::function<double()>& f, double* x, const double* analytic,
               std::size_t n, double threshold) {
        GradcheckEntry e{name, 0.0, threshold, 0};
        const double corrupt = opt.corrupt == name ? 1.05 : 1.0;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        const std::size_t top = std::min<std::size_t>(n, static_cast<std::size_t>((opt.samples + 1) / 2));
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return std::abs(analytic[a]) > std::abs(analytic[b]) ||
                                     (std::abs(analytic[a]) == std::abs(analytic[b]) && a < b);
                          });
        std::vector<std::size_t> picks(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top));
        std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end());
        std::shuffle(rest.begin(), rest.end(), rng);
        for (std::size_t k = 0; k < rest.size() && picks.size() < static_cast<std::size_t>(opt.samples); ++k)
            picks.push_back(rest[k]);
        for (std::size_t i : picks) {
            const double x0 = x[i];
            const double h = opt.step * std::max(1.0, std::abs(x0));
            x[i] = x0 + h;
            const double fp = f();
            x[i] = x0 - h;
            const double fm = f();
            x[i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i] * corrupt;
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel = scale < 1e-7 ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
            e.worst_rel_error = std::max(e.worst_rel_error, rel);
            ++e.checked;
        }
        report.entries.push_back(e);
    }

    Image random_image(int h, int w, int c, double lo, double hi) {
        std::uniform_real_distribution<double> u(lo, hi);
        Image img(h, w, c);
        for (double& v : img.data) v = u(rng);
        return img;
    }
};

double dot(const Image& a, const Image& b) {
    return std::inner_product(a.data.begin(), a.data.end(), b.data.begin(), 0.0);
}

// Gates moved out of the way: every splat covers every pixel and nothing is
// skipped, so the composite is smooth in all inputs.
RasterSettings smooth_settings() {
    RasterSettings rs;
    rs.alpha_min = 0.0;
    rs.transmittance_min = 0.0;
    rs.radius_sigmas = 1e3;
    rs.tile = 8;
    return rs;
}

Camera test_camera() {
    Camera cam;
    cam.width = cam.height = kSize;
    cam.fx = cam.fy = kSize * 1.2 / 0.78;
    cam.cx = cam.cy = 0.5 * kSize;
    const Eigen::Matrix3d r = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    cam.world_to_camera.linear() = r;
    cam.world_to_camera.translation() = -r * Eigen::Vector3d(0.0, -0.03, 1.2);
    return cam;
}

void renderer_suite(Harness& hz) {
    const RasterSettings rs = smooth_settings();
    Camera cam;
    cam.width = cam.height = kSize;
    cam.fx = cam.fy = 30.0;
    cam.cx = cam.cy = 0.5 * kSize;
    const int n = 12, channels = 4;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    EmbeddedGaussians g;
    g.positions.resize(n, 3);
    g.rotations.resize(n, 4);
    g.scales.resize(n, 3);
    g.opacities.resize(n);
    g.features.resize(n, channels);
    for (int i = 0; i < n; ++i) {
        g.positions.row(i) << 0.25 * (u(hz.rng) - 0.5), 0.25 * (u(hz.rng) - 0.5), 0.8 + 0.4 * u(hz.rng);
        Eigen::Vector4d q(normal(hz.rng), normal(hz.rng), normal(hz.rng), normal(hz.rng));
        g.rotations.row(i) = q.normalized().transpose();
        for (int k = 0; k < 3; ++k) g.scales(i, k) = 0.01 + 0.03 * u(hz.rng);
        g.opacities(i) = 0.2 + 0.6 * u(hz.rng);
        for (int c = 0; c < channels; ++c) g.features(i, c) = normal(hz.rng);
    }
    const Image w_phi = hz.random_image(kSize, kSize, channels, -1.0, 1.0);
    const Image w_alpha = hz.random_image(kSize, kSize, 1, -1.0, 1.0);
    auto loss = [&]() {
        const FeatureFrame f = rasterize(project(g, cam, rs), cam, rs);
        return dot(f.phi, w_phi) + dot(f.alpha, w_alpha);
    };
    const SplatSet splats = project(g, cam, rs);
    const FeatureFrame frame = rasterize(splats, cam, rs);
    const SplatGradient ds = rasterize_backward(splats, cam, frame, w_phi, w_alpha, rs);
    const EmbeddedGaussians dg = project_backward(g, cam, splats, ds, rs);
    const double t = hz.opt.threshold;
    hz.check("gaussian.position", loss, g.positions.data(), dg.positions.data(), 3 * n, t);
    hz.check("gaussian.rotation", loss, g.rotations.data(), dg.rotations.data(), 4 * n, t);
    hz.check("gaussian.scale", loss, g.scales.data(), dg.scales.data(), 3 * n, t);
    hz.check("gaussian.opacity", loss, g.opacities.data(), dg.opacities.data(), n, t);
    hz.check("gaussian.feature", loss, g.features.data(), dg.features.data(), static_cast<std::size_t>(n * channels), t);
}

struct BodyScene {
    BodyModel model;
    PoseParams pose;
    Vertices delta;
    GaussianTexture texture;
    TemporalFeatures temporal;
    Camera cam;

    explicit BodyScene(Harness& hz)
        : model(make_portrait_asset({14, 12})), pose(PoseParams::zeros(model.asset())), cam(test_camera()) {
        const BodyAsset& a = model.asset();
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index i = 0; i < pose.beta.size(); ++i) pose.beta(i) = 0.3 * normal(hz.rng);
        for (Eigen::Index i = 0; i < pose.theta.size(); ++i) pose.theta(i) = 0.1 * normal(hz.rng);
        for (Eigen::Index i = 0; i < pose.psi.size(); ++i) pose.psi(i) = 0.3 * normal(hz.rng);
        pose.translation = Eigen::Vector3d(0.01, -0.01, 0.02);
        delta = Vertices::Zero(a.num_vertices(), 3);
        for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = 0.002 * normal(hz.rng);
        texture = init_texture(a, 12, hz.opt.seed, 6);
        texture.opacity_logit.setConstant(0.0);
        for (Eigen::Index i = 0; i < texture.features.size(); ++i) texture.features.data()[i] = normal(hz.rng);
        for (Eigen::Index i = 0; i < texture.rotation.rows(); ++i) {
            Eigen::Vector4d q(1.0 + 0.2 * normal(hz.rng), 0.2 * normal(hz.rng), 0.2 * normal(hz.rng),
                              0.2 * normal(hz.rng));
            texture.rotation.row(i) = q.normalized().transpose();
        }
        texture.log_scale.array() += 0.5;
        temporal = TemporalFeatures::create(3, texture.channels, kTemporalWidth, hz.opt.seed + 1);
        for (Eigen::Index i = 0; i < temporal.codes.size(); ++i) temporal.codes.data()[i] = normal(hz.rng);
        for (Eigen::Index i = 0; i < temporal.mixer_bias.size(); ++i) temporal.mixer_bias(i) = 0.1 * normal(hz.rng);
    }
};

void body_suite(Harness& hz, bool body, bool texture, bool temporal) {
    BodyScene s(hz);
    const RasterSettings rs = smooth_settings();
    const TemporalCondition cond{&s.temporal, 1};
    const Image w_phi = hz.random_image(kSize, kSize, s.texture.channels, -1.0, 1.0);
    const Image w_alpha = hz.random_image(kSize, kSize, 1, -1.0, 1.0);
    auto loss = [&]() {
        const FeatureFrame f = render(s.model, s.pose, &s.delta, s.cam, s.texture, &cond, nullptr, rs);
        return dot(f.phi, w_phi) + dot(f.alpha, w_alpha);
    };
    RenderTrace trace;
    const FeatureFrame f = render(s.model, s.pose, &s.delta, s.cam, s.texture, &cond, &trace, rs);
    RenderGradient g = render_backward(s.model, s.pose, s.cam, s.texture, &cond, trace, f, w_phi, w_alpha, rs);
    const double t = hz.opt.threshold;
    if (body) {
        hz.check("body.beta", loss, s.pose.beta.data(), g.pose.beta.data(), static_cast<std::size_t>(s.pose.beta.size()), t);
        hz.check("body.theta", loss, s.pose.theta.data(), g.pose.theta.data(),
                 static_cast<std::size_t>(s.pose.theta.size()), t);
        hz.check("body.psi", loss, s.pose.psi.data(), g.pose.psi.data(), static_cast<std::size_t>(s.pose.psi.size()), t);
        hz.check("body.translation", loss, s.pose.translation.data(), g.pose.translation.data(), 3, t);
        hz.check("body.delta", loss, s.delta.data(), g.delta.data(), static_cast<std::size_t>(s.delta.size()), t);
    }
    if (texture) {
        GaussianTexture& tx = s.texture;
        hz.check("texture.feature", loss, tx.features.data(), g.texture.features.data(),
                 static_cast<std::size_t>(tx.features.size()), t);
        hz.check("texture.opacity", loss, tx.opacity_logit.data(), g.texture.opacity_logit.data(),
                 static_cast<std::size_t>(tx.opacity_logit.size()), t);
        hz.check("texture.scale", loss, tx.log_scale.data(), g.texture.log_scale.data(),
                 static_cast<std::size_t>(tx.log_scale.size()), t);
        hz.check("texture.rotation", loss, tx.rotation.data(), g.texture.rotation.data(),
                 static_cast<std::size_t>(tx.rotation.size()), t);
    }
    if (temporal) {
        hz.check("temporal.code", loss, s.temporal.codes.row(1).data(), g.temporal.code.data(),
                 static_cast<std::size_t>(s.temporal.width), t);
        hz.check("temporal.mixer", loss, s.temporal.mixer.data(), g.temporal.mixer.data(),
                 static_cast<std::size_t>(s.temporal.mixer.size()), t);
        hz.check("temporal.bias", loss, s.temporal.mixer_bias.data(), g.temporal.mixer_bias.data(),
                 static_cast<std::size_t>(s.temporal.mixer_bias.size()), t);
    }
}

void rerender_suite(Harness& hz) {
    const int h = 12, w = 12, channels = 6;
    RerenderStack stack = RerenderStack::create(channels, hz.opt.seed + 3);
    std::normal_distribution<double> normal(0.0, 0.05);
    // Positive biases keep most ReLUs away from their kink.
    for (ConvLayer* l : {&stack.enc1, &stack.enc2, &stack.dec1, &stack.dec2, &stack.dec3})
        for (double& b : l->bias) b = 0.1 + normal(hz.rng);
    Image phi_fore = hz.random_image(h, w, channels, -1.0, 1.0);
    Image a_out = hz.random_image(h, w, 1, 0.05, 0.95);
    Image m_head(h, w, 1, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m_head.at(y, x) = (x + y) % 5 != 0 ? 1.0 : 0.0;
    Image background = hz.random_image(h, w, 3, 0.0, 1.0);
    Image phi_bg = hz.random_image(h, w, kFusedChannels, -1.0, 1.0);
    const Image w_out = hz.random_image(h, w, 3, -1.0, 1.0);
    const Image w_fused = hz.random_image(h, w, kFusedChannels, -1.0, 1.0);
    const Image w_mask = hz.random_image(h, w, 1, -1.0, 1.0);
    const double t = hz.opt.threshold;

    // Conv weights: output of the whole stack.
    auto stack_loss = [&]() {
        const Image bg = encode_background(stack, background);
        return dot(decode(stack, fuse(stack, phi_fore, a_out, m_head, bg)), w_out);
    };
    RerenderStack grad = stack.zeros_like();
    {
        EncodeTrace et;
        const Image bg = encode_background(stack, background, &et);
        DecodeTrace dt;
        decode(stack, fuse(stack, phi_fore, a_out, m_head, bg), &dt);
        const Image d_fused = decode_backward(stack, dt, w_out, grad);
        const FuseGradient fg = fuse_backward(stack, phi_fore, a_out, m_head, bg, d_fused, Image(), grad);
        encode_background_backward(stack, et, fg.phi_bg, grad);
    }
    std::vector<std::pair<double*, std::size_t>> params;
    std::vector<std::string> names;
    std::vector<const double*> grads;
    stack.for_each_param([&](const char* name, double* p, std::size_t n) {
        const std::string base = std::string("conv.") + name;
        const bool seen = std::find(names.begin(), names.end(), base + ".weight") != names.end();
        names.push_back(base + (std::string(name) == "fg_project" ? "" : seen ? ".bias" : ".weight"));
        params.emplace_back(p, n);
    });
    grad.for_each_param([&](const char*, double* p, std::size_t) { grads.push_back(p); });
    for (std::size_t i = 0; i < params.size(); ++i)
        hz.check(names[i], stack_loss, params[i].first, grads[i], params[i].second, t);

    // Fusion inputs, with an extra upstream gradient on the mask.
    auto fuse_loss = [&]() {
        return dot(fuse(stack, phi_fore, a_out, m_head, phi_bg), w_fused) + dot(fusion_mask(a_out, m_head), w_mask);
    };
    RerenderStack scratch = stack.zeros_like();
    const FuseGradient fg = fuse_backward(stack, phi_fore, a_out, m_head, phi_bg, w_fused, w_mask, scratch);
    hz.check("fusion.phi_fore", fuse_loss, phi_fore.data.data(), fg.phi_fore.data.data(), phi_fore.size(), t);
    hz.check("fusion.alpha", fuse_loss, a_out.data.data(), fg.a_out.data.data(), a_out.size(), t);
    hz.check("fusion.phi_bg", fuse_loss, phi_bg.data.data(), fg.phi_bg.data.data(), phi_bg.size(), t);
}

void loss_suite(Harness& hz) {
    const int h = 16, w = 16;
    Image out = hz.random_image(h, w, 3, 0.0, 1.0);
    Image a_out = hz.random_image(h, w, 1, 0.0, 1.0);
    Image m_fore = hz.random_image(h, w, 1, 0.0, 1.0);
    const Image gen = hz.random_image(h, w, 3, 0.0, 1.0);
    const Image a_gen = hz.random_image(h, w, 1, 0.0, 1.0);
    const Image tgt = hz.random_image(h, w, 3, 0.0, 1.0);
    const PerceptualPyramid perceptual;
    const LossWeights weights;
    LossInputs in{&out, &a_out, &m_fore, &gen, &a_gen, &tgt};
    auto loss = [&]() { return l_total(in, weights, perceptual).total; };
    LossGradients g;
    l_total(in, weights, perceptual, &g);
    const double t = hz.opt.threshold;
    hz.check("loss.output", loss, out.data.data(), g.out.data.data(), out.size(), t);
    hz.check("loss.alpha", loss, a_out.data.data(), g.a_out.data.data(), a_out.size(), t);
    hz.check("loss.mask", loss, m_fore.data.data(), g.m_fore.data.data(), m_fore.size(), t);
}

// Full chain: pose -> mesh -> Gaussians -> splats -> fusion -> decoder -> total loss.
void end_to_end_suite(Harness& hz) {
    BodyScene s(hz);
    const RasterSettings rs = smooth_settings();
    PortraitModel pm;
    pm.texture = s.texture;
    pm.temporal = s.temporal;
    pm.delta = s.delta;
    pm.stack = RerenderStack::create(s.texture.channels, hz.opt.seed + 5);
    for (ConvLayer* l : {&pm.stack.enc1, &pm.stack.enc2, &pm.stack.dec1, &pm.stack.dec2, &pm.stack.dec3})
        for (double& b : l->bias) b = 0.1;
    const Image background = hz.random_image(kSize, kSize, 3, 0.0, 1.0);
    Image head_mask(kSize, kSize, 1, 1.0);
    for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < 3; ++x) head_mask.at(y, x) = 0.0;
    const Image gen = hz.random_image(kSize, kSize, 3, 0.0, 1.0);
    const Image a_gen = hz.random_image(kSize, kSize, 1, 0.0, 1.0);
    const Image tgt = hz.random_image(kSize, kSize, 3, 0.0, 1.0);
    const PerceptualPyramid perceptual;
    const LossWeights weights;
    const int frame = 1;
    auto run = [&](LossGradients* up, FramePass* keep) {
        FramePass fp = forward_frame(s.model, pm, s.pose, s.cam, background, head_mask, frame, rs);
        LossInputs in{&fp.output, &fp.feature_frame.alpha, &fp.m_fore, &gen, &a_gen, &tgt};
        const double l = l_total(in, weights, perceptual, up).total;
        if (keep) *keep = std::move(fp);
        return l;
    };
    auto loss = [&]() { return run(nullptr, nullptr); };
    LossGradients up;
    FramePass fp;
    run(&up, &fp);
    ModelGradient g = backward_frame(s.model, pm, s.pose, s.cam, head_mask, frame, fp, up, rs);
    const double t = hz.opt.end_to_end_threshold;
    hz.check("end_to_end.texture.feature", loss, pm.texture.features.data(), g.texture.features.data(),
             static_cast<std::size_t>(pm.texture.features.size()), t);
    hz.check("end_to_end.texture.opacity", loss, pm.texture.opacity_logit.data(), g.texture.opacity_logit.data(),
             static_cast<std::size_t>(pm.texture.opacity_logit.size()), t);
    hz.check("end_to_end.texture.scale", loss, pm.texture.log_scale.data(), g.texture.log_scale.data(),
             static_cast<std::size_t>(pm.texture.log_scale.size()), t);
    hz.check("end_to_end.texture.rotation", loss, pm.texture.rotation.data(), g.texture.rotation.data(),
             static_cast<std::size_t>(pm.texture.rotation.size()), t);
    hz.check("end_to_end.delta", loss, pm.delta.data(), g.delta.data(), static_cast<std::size_t>(pm.delta.size()), t);
    hz.check("end_to_end.temporal.code", loss, pm.temporal.codes.row(frame).data(), g.temporal.code.data(),
             static_cast<std::size_t>(pm.temporal.width), t);
    hz.check("end_to_end.temporal.mixer", loss, pm.temporal.mixer.data(), g.temporal.mixer.data(),
             static_cast<std::size_t>(pm.temporal.mixer.size()), t);
    std::vector<std::pair<double*, std::size_t>> params;
    std::vector<const double*> grads;
    pm.stack.for_each_param([&](const char*, double* p, std::size_t n) { params.emplace_back(p, n); });
    g.stack.for_each_param([&](const char*, double* p, std::size_t) { grads.push_back(p); });
    // fg_project and the first/last decoder layers cover both fusion branches.
    hz.check("end_to_end.conv.fg_project", loss, params[0].first, grads[0], params[0].second, t);
    hz.check("end_to_end.conv.enc1.weight", loss, params[1].first, grads[1], params[1].second, t);
    hz.check("end_to_end.conv.dec3.weight", loss, params[9].first, grads[9], params[9].second, t);
}

}  // namespace

bool GradcheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
}

std::string GradcheckReport::format() const {
    std::string out;
    char line[160];
    for (const GradcheckEntry& e : entries) {
        std::snprintf(line, sizeof(line), "%-32s worst rel err %.3e (threshold %.0e, %d coords)  %s\n",
                      e.name.c_str(), e.worst_rel_error, e.threshold, e.checked, e.passed() ? "ok" : "FAIL");
        out += line;
    }
    return out;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    static const std::vector<std::string> scopes{"all",      "renderer", "body", "texture",
                                                 "temporal", "rerender", "loss", "end_to_end"};
    if (std::find(scopes.begin(), scopes.end(), options.scope) == scopes.end())
        throw InvalidArgument("gradcheck: unknown scope \"" + options.scope + "\"");
    if (options.samples <= 0 || !(options.step > 0.0)) throw InvalidArgument("gradcheck: bad sampling options");
    const auto start = std::chrono::steady_clock::now();
    GradcheckReport report;
    Harness hz{options, report, std::mt19937_64(options.seed)};
    const auto want = [&](const char* s) { return options.scope == "all" || options.scope == s; };
    if (want("renderer")) renderer_suite(hz);
    if (want("body") || want("texture") || want("temporal"))
        body_suite(hz, want("body"), want("texture"), want("temporal"));
    if (want("rerender")) rerender_suite(hz);
    if (want("loss")) loss_suite(hz);
    if (want("end_to_end")) end_to_end_suite(hz);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace fsplat
