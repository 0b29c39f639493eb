#include "featsplat/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

namespace fsplat {

void Track::validate(const BodyAsset& asset) const {
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const PoseParams& p = frames[t];
        if (p.beta.size() != asset.num_betas() || p.theta.size() != 3 * asset.num_joints() ||
            p.psi.size() != asset.num_expressions())
            throw InvalidArgument("track frame " + std::to_string(t) + " does not match the asset dimensions");
        if (!p.all_finite()) throw InvalidArgument("track frame " + std::to_string(t) + " has non-finite values");
        if (t > 0 && p.beta != frames[0].beta)
            throw InvalidArgument("track frame " + std::to_string(t) + ": beta must be shared across frames");
    }
}

void LandmarkSet::validate(int num_vertices) const {
    for (int v : vertices)
        if (v < 0 || v >= num_vertices) throw InvalidArgument("landmark vertex index out of range");
    for (std::size_t t = 0; t < observations.size(); ++t)
        if (observations[t].rows() != size() || observations[t].cols() != 2 || !observations[t].allFinite())
            throw InvalidArgument("landmark observations for frame " + std::to_string(t) + " are malformed");
}

void Dataset::validate(const BodyAsset& asset) const {
    const auto n = frames.size();
    if (cameras.size() != n || static_cast<std::size_t>(track.size()) != n)
        throw InvalidArgument("dataset: frame, camera and track counts differ");
    if (landmarks.frames() != 0 && static_cast<std::size_t>(landmarks.frames()) != n)
        throw InvalidArgument("dataset: landmark frame count differs from the frame count");
    track.validate(asset);
    landmarks.validate(asset.num_vertices());
    for (std::size_t t = 0; t < n; ++t) {
        const Camera& c = cameras[t];
        c.validate();
        const FrameData& f = frames[t];
        const std::string tag = "dataset frame " + std::to_string(t);
        require_shape(f.image, c.height, c.width, 3, (tag + " image").c_str());
        require_shape(f.alpha, c.height, c.width, 1, (tag + " alpha").c_str());
        require_shape(f.target, c.height, c.width, 3, (tag + " target").c_str());
        require_shape(f.background, c.height, c.width, 3, (tag + " background").c_str());
        require_shape(f.head_mask, c.height, c.width, 1, (tag + " head mask").c_str());
    }
}

// ---------------------------------------------------------------- retracking

Eigen::MatrixXd project_landmarks(const BodyModel& model, const PoseParams& p, const Camera& cam,
                                  const std::vector<int>& vertices) {
    const auto pts = model.posed_points(p, vertices);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = cam.project_point(pts[i]).transpose();
    return out;
}

namespace {

struct FrameSystem {
    Eigen::VectorXd residual;  // 2L
    Eigen::MatrixXd a;         // 2L x nb
    Eigen::MatrixXd b;         // 2L x m
};

FrameSystem linearize(const BodyModel& model, const PoseParams& p, const Camera& cam, const LandmarkSet& lm,
                      const Eigen::MatrixXd& obs, int nb) {
    const ParamLayout layout = model.layout();
    const Eigen::MatrixXd jv = model.vertex_jacobian(p, lm.vertices);
    const auto pts = model.posed_points(p, lm.vertices);
    const int l = lm.size();
    const Eigen::Matrix3d rc = cam.world_to_camera.linear();
    FrameSystem s;
    s.residual.resize(2 * l);
    Eigen::MatrixXd jr(2 * l, layout.size());
    for (int i = 0; i < l; ++i) {
        const Eigen::Vector3d t = cam.world_to_camera * pts[static_cast<std::size_t>(i)];
        const double iz = 1.0 / t.z();
        Eigen::Matrix<double, 2, 3> dp;
        dp << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
        s.residual(2 * i) = cam.fx * t.x() * iz + cam.cx - obs(i, 0);
        s.residual(2 * i + 1) = cam.fy * t.y() * iz + cam.cy - obs(i, 1);
        jr.middleRows(2 * i, 2) = (dp * rc) * jv.middleRows(3 * i, 3);
    }
    s.a = jr.leftCols(layout.betas).leftCols(nb);
    s.b = jr.rightCols(layout.size() - layout.betas);
    return s;
}

double frame_cost(const BodyModel& model, const PoseParams& p, const Camera& cam, const LandmarkSet& lm,
                  const Eigen::MatrixXd& obs) {
    const Eigen::MatrixXd proj = project_landmarks(model, p, cam, lm.vertices);
    return 0.5 * (proj - obs).squaredNorm();
}

PoseParams with_update(const ParamLayout& layout, const PoseParams& p, const Eigen::VectorXd& d_beta,
                       const Eigen::VectorXd& d_local) {
    Eigen::VectorXd flat = layout.flatten(p);
    if (d_beta.size() > 0) flat.head(d_beta.size()) += d_beta;
    flat.tail(d_local.size()) += d_local;
    return layout.unflatten(flat);
}

}  // namespace

Track retrack(const BodyModel& model, const LandmarkSet& lm, const std::vector<Camera>& cameras, const Track& init,
              const RetrackOptions& opt, RetrackReport* report) {
    const BodyAsset& asset = model.asset();
    init.validate(asset);
    lm.validate(asset.num_vertices());
    const int nt = init.size();
    if (lm.frames() != nt || static_cast<int>(cameras.size()) != nt)
        throw InvalidArgument("retrack: landmark, camera and track frame counts differ");
    const ParamLayout layout = model.layout();
    if (2 * lm.size() < layout.thetas + layout.psis)
        throw InvalidArgument("retrack: " + std::to_string(lm.size()) +
                              " landmarks give too few residuals for the pose and expression unknowns");

    const int nb = opt.optimize_beta ? layout.betas : 0;
    Track cur = init;
    auto total_cost = [&](const Track& tr) {
        double c = 0.0;
        for (int t = 0; t < nt; ++t)
            c += frame_cost(model, tr.frames[static_cast<std::size_t>(t)], cameras[static_cast<std::size_t>(t)], lm,
                            lm.observations[static_cast<std::size_t>(t)]);
        return c;
    };
    double cost = total_cost(cur);
    const double initial_cost = cost;
    double lambda = opt.initial_damping;
    bool converged = false;
    int it = 0;
    bool relinearize = true;
    std::vector<FrameSystem> sys(static_cast<std::size_t>(nt));

    for (; it < opt.max_iterations && !converged; ++it) {
        if (relinearize) {
            for (int t = 0; t < nt; ++t)
                sys[static_cast<std::size_t>(t)] =
                    linearize(model, cur.frames[static_cast<std::size_t>(t)], cameras[static_cast<std::size_t>(t)], lm,
                              lm.observations[static_cast<std::size_t>(t)], nb);
            relinearize = false;
        }
        // Schur complement onto the shared block.
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(nb, nb);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nb);
        std::vector<Eigen::LDLT<Eigen::MatrixXd>> hxx(static_cast<std::size_t>(nt));
        std::vector<Eigen::VectorXd> gx(static_cast<std::size_t>(nt));
        std::vector<Eigen::MatrixXd> hxb(static_cast<std::size_t>(nt));
        bool solve_ok = true;
        for (int t = 0; t < nt && solve_ok; ++t) {
            const FrameSystem& f = sys[static_cast<std::size_t>(t)];
            Eigen::MatrixXd h = f.b.transpose() * f.b;
            h.diagonal().array() += lambda;
            hxx[static_cast<std::size_t>(t)].compute(h);
            if (hxx[static_cast<std::size_t>(t)].info() != Eigen::Success) solve_ok = false;
            gx[static_cast<std::size_t>(t)] = f.b.transpose() * f.residual;
            if (nb > 0) {
                hxb[static_cast<std::size_t>(t)] = f.b.transpose() * f.a;
                const Eigen::MatrixXd w = hxx[static_cast<std::size_t>(t)].solve(hxb[static_cast<std::size_t>(t)]);
                s += f.a.transpose() * f.a - hxb[static_cast<std::size_t>(t)].transpose() * w;
                rhs -= f.a.transpose() * f.residual -
                       hxb[static_cast<std::size_t>(t)].transpose() * hxx[static_cast<std::size_t>(t)].solve(gx[static_cast<std::size_t>(t)]);
            }
        }
        Eigen::VectorXd d_beta = Eigen::VectorXd::Zero(nb);
        if (solve_ok && nb > 0) {
            s.diagonal().array() += lambda;
            Eigen::LDLT<Eigen::MatrixXd> sl(s);
            if (sl.info() != Eigen::Success) solve_ok = false;
            else d_beta = sl.solve(rhs);
        }
        std::vector<Eigen::VectorXd> d_local(static_cast<std::size_t>(nt));
        double step2 = d_beta.squaredNorm();
        for (int t = 0; t < nt && solve_ok; ++t) {
            Eigen::VectorXd g = gx[static_cast<std::size_t>(t)];
            if (nb > 0) g += hxb[static_cast<std::size_t>(t)] * d_beta;
            d_local[static_cast<std::size_t>(t)] = -hxx[static_cast<std::size_t>(t)].solve(g);
            step2 += d_local[static_cast<std::size_t>(t)].squaredNorm();
        }
        if (!solve_ok || !std::isfinite(step2)) {
            lambda *= 10.0;
            continue;
        }
        const bool small_step = std::sqrt(step2) < opt.step_tolerance;
        Track cand = cur;
        for (int t = 0; t < nt; ++t) {
            auto& p = cand.frames[static_cast<std::size_t>(t)];
            p = with_update(layout, p, d_beta, d_local[static_cast<std::size_t>(t)]);
        }
        const double new_cost = total_cost(cand);
        if (std::isfinite(new_cost) && new_cost < cost) {
            cur = std::move(cand);
            cost = new_cost;
            lambda = std::max(lambda / 10.0, 1e-12);
            relinearize = true;
        } else {
            lambda = std::min(lambda * 10.0, 1e12);
        }
        if (small_step) converged = true;
    }

    if (report) {
        report->converged = converged;
        report->iterations = it;
        report->initial_cost = initial_cost;
        report->final_cost = cost;
        report->final_damping = lambda;
        report->frame_rms.resize(static_cast<std::size_t>(nt));
        for (int t = 0; t < nt; ++t) {
            const double c = frame_cost(model, cur.frames[static_cast<std::size_t>(t)],
                                        cameras[static_cast<std::size_t>(t)], lm,
                                        lm.observations[static_cast<std::size_t>(t)]);
            report->frame_rms[static_cast<std::size_t>(t)] = std::sqrt(2.0 * c / std::max(1, lm.size()));
        }
    }
    return cur;
}

// ---------------------------------------------------------------- optimizer

void Adam::update(double* param, const double* grad, std::size_t n, double lr, AdamState& st) const {
    if (st.m.size() != n) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
        st.step = 0;
    }
    ++st.step;
    if (lr == 0.0) return;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < n; ++i) {
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
    }
}

// ---------------------------------------------------------------- model

PortraitModel PortraitModel::create(const BodyAsset& asset, int texture_resolution, int frames, bool tcf,
                                    std::uint64_t seed) {
    PortraitModel pm;
    pm.texture = init_texture(asset, texture_resolution, seed);
    pm.temporal = TemporalFeatures::create(tcf ? frames : 0, pm.texture.channels, kTemporalWidth, seed + 101);
    pm.delta = Vertices::Zero(asset.num_vertices(), 3);
    pm.stack = RerenderStack::create(pm.texture.channels, seed + 202);
    return pm;
}

FramePass forward_frame(const BodyModel& model, const PortraitModel& pm, const PoseParams& pose, const Camera& cam,
                        const Image& background, const Image& head_mask, int temporal_index,
                        const RasterSettings& rs) {
    FramePass fp;
    TemporalCondition cond{&pm.temporal, temporal_index};
    const bool use_tc = pm.tcf();
    fp.feature_frame = render(model, pose, &pm.delta, cam, pm.texture, use_tc ? &cond : nullptr, &fp.render, rs);
    fp.phi_bg = encode_background(pm.stack, background, &fp.encode);
    fp.m_fore = fusion_mask(fp.feature_frame.alpha, head_mask);
    fp.fused = fuse(pm.stack, fp.feature_frame.phi, fp.feature_frame.alpha, head_mask, fp.phi_bg);
    fp.output = decode(pm.stack, fp.fused, &fp.decode);
    return fp;
}

ModelGradient backward_frame(const BodyModel& model, const PortraitModel& pm, const PoseParams& pose,
                             const Camera& cam, const Image& head_mask, int temporal_index, const FramePass& fp,
                             const LossGradients& up, const RasterSettings& rs) {
    ModelGradient g;
    g.stack = pm.stack.zeros_like();
    const Image d_fused = decode_backward(pm.stack, fp.decode, up.out, g.stack);
    FuseGradient fg = fuse_backward(pm.stack, fp.feature_frame.phi, fp.feature_frame.alpha, head_mask, fp.phi_bg,
                                    d_fused, up.m_fore, g.stack);
    encode_background_backward(pm.stack, fp.encode, fg.phi_bg, g.stack);
    if (!up.a_out.empty())
        for (std::size_t i = 0; i < fg.a_out.data.size(); ++i) fg.a_out.data[i] += up.a_out.data[i];
    TemporalCondition cond{&pm.temporal, temporal_index};
    const bool use_tc = pm.tcf();
    RenderGradient rg = render_backward(model, pose, cam, pm.texture, use_tc ? &cond : nullptr, fp.render,
                                        fp.feature_frame, fg.phi_fore, fg.a_out, rs, false);
    g.texture = std::move(rg.texture);
    g.temporal = std::move(rg.temporal);
    g.delta = std::move(rg.delta);
    return g;
}

namespace {

struct OptimizerState {
    AdamState features, opacity, log_scale, rotation, delta, codes, mixer, mixer_bias;
    std::vector<AdamState> stack;
};

double norm_of(const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
    return std::sqrt(s);
}

std::string parameter_report(PortraitModel& pm) {
    std::ostringstream os;
    os << "parameter norms: features=" << pm.texture.features.norm() << " opacity_logit=" << pm.texture.opacity_logit.norm()
       << " log_scale=" << pm.texture.log_scale.norm() << " delta=" << pm.delta.norm();
    if (pm.tcf()) os << " codes=" << pm.temporal.codes.norm() << " mixer=" << pm.temporal.mixer.norm();
    double conv = 0.0;
    pm.stack.for_each_param([&](const char*, double* p, std::size_t n) {
        const double v = norm_of(p, n);
        conv += v * v;
    });
    os << " conv=" << std::sqrt(conv);
    return os.str();
}

}  // namespace

TrainResult train(const BodyModel& body, const Dataset& data, const Track& track, PortraitModel& pm,
                  const TrainConfig& cfg, const CheckpointHook& hook, int checkpoint_every) {
    const BodyAsset& asset = body.asset();
    data.validate(asset);
    track.validate(asset);
    if (track.size() != data.size()) throw InvalidArgument("train: track and dataset lengths differ");
    if (pm.texture.binding == nullptr || pm.texture.binding->topology_hash != asset.topology_hash())
        throw TopologyMismatch(asset.topology_hash(), pm.texture.binding ? pm.texture.binding->topology_hash : 0);
    if (pm.tcf() && pm.temporal.frames() != data.size())
        throw InvalidArgument("train: temporal feature count must equal the number of training frames");
    if (pm.delta.rows() != asset.num_vertices()) throw InvalidArgument("train: displacement has the wrong size");
    cfg.weights.validate();

    std::vector<int> frames = cfg.train_frames;
    if (frames.empty()) {
        frames.resize(static_cast<std::size_t>(data.size()));
        std::iota(frames.begin(), frames.end(), 0);
    }
    for (int f : frames)
        if (f < 0 || f >= data.size()) throw InvalidArgument("train: training frame index out of range");

    const PerceptualPyramid perceptual;
    const Adam adam;
    OptimizerState st;
    std::uint64_t shuffle_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
    if (!cfg.deterministic) shuffle_seed ^= (static_cast<std::uint64_t>(std::random_device{}()) << 32) | std::random_device{}();
    std::mt19937_64 rng(shuffle_seed);
    std::vector<int> order;
    std::size_t cursor = 0;
    TrainResult result;
    result.curve.reserve(static_cast<std::size_t>(std::max(0, cfg.iterations)));

    for (int it = 0; it < cfg.iterations; ++it) {
        if (cursor == order.size()) {
            order = frames;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const int t = order[cursor++];
        const FrameData& fd = data.frames[static_cast<std::size_t>(t)];
        const PoseParams& pose = track.frames[static_cast<std::size_t>(t)];
        const Camera& cam = data.cameras[static_cast<std::size_t>(t)];

        const FramePass fp = forward_frame(body, pm, pose, cam, fd.background, fd.head_mask, t, cfg.raster);
        LossInputs li;
        li.out = &fp.output;
        li.a_out = &fp.feature_frame.alpha;
        li.m_fore = &fp.m_fore;
        li.gen = &fd.image;
        li.a_gen = &fd.alpha;
        li.tgt = &fd.target;
        LossGradients up;
        LossBreakdown loss = l_total(li, cfg.weights, perceptual, &up);
        const double reg = cfg.delta_regularizer * pm.delta.squaredNorm() / std::max(1, asset.num_vertices());
        if (!std::isfinite(loss.total) || !std::isfinite(reg))
            throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " on frame " +
                                       std::to_string(t) + "; " + parameter_report(pm),
                                   t);
        result.curve.push_back({it, t, loss});

        ModelGradient g = backward_frame(body, pm, pose, cam, fd.head_mask, t, fp, up, cfg.raster);
        g.delta += (2.0 * cfg.delta_regularizer / std::max(1, asset.num_vertices())) * pm.delta;

        GaussianTexture& tex = pm.texture;
        adam.update(tex.features.data(), g.texture.features.data(), static_cast<std::size_t>(tex.features.size()),
                    cfg.lr.features, st.features);
        adam.update(tex.opacity_logit.data(), g.texture.opacity_logit.data(),
                    static_cast<std::size_t>(tex.opacity_logit.size()), cfg.lr.geometry, st.opacity);
        adam.update(tex.log_scale.data(), g.texture.log_scale.data(), static_cast<std::size_t>(tex.log_scale.size()),
                    cfg.lr.geometry, st.log_scale);
        adam.update(tex.rotation.data(), g.texture.rotation.data(), static_cast<std::size_t>(tex.rotation.size()),
                    cfg.lr.geometry, st.rotation);
        if (cfg.lr.geometry != 0.0) tex.normalize_rotations();
        adam.update(pm.delta.data(), g.delta.data(), static_cast<std::size_t>(pm.delta.size()), cfg.lr.delta, st.delta);
        if (pm.tcf()) {
            RowMatrix dcodes = RowMatrix::Zero(pm.temporal.codes.rows(), pm.temporal.codes.cols());
            dcodes.row(t) = g.temporal.code.transpose();
            adam.update(pm.temporal.codes.data(), dcodes.data(), static_cast<std::size_t>(dcodes.size()),
                        cfg.lr.temporal, st.codes);
            adam.update(pm.temporal.mixer.data(), g.temporal.mixer.data(),
                        static_cast<std::size_t>(pm.temporal.mixer.size()), cfg.lr.temporal, st.mixer);
            adam.update(pm.temporal.mixer_bias.data(), g.temporal.mixer_bias.data(),
                        static_cast<std::size_t>(pm.temporal.mixer_bias.size()), cfg.lr.temporal, st.mixer_bias);
        }
        std::vector<double*> grads;
        g.stack.for_each_param([&](const char*, double* p, std::size_t) { grads.push_back(p); });
        std::size_t k = 0;
        if (st.stack.empty()) st.stack.resize(grads.size());
        pm.stack.for_each_param([&](const char*, double* p, std::size_t n) {
            adam.update(p, grads[k], n, cfg.lr.conv, st.stack[k]);
            ++k;
        });

        if (hook && checkpoint_every > 0 && (it + 1) % checkpoint_every == 0) hook(it + 1, pm);
    }
    return result;
}

Image infer_frame(const BodyModel& body, const PortraitModel& model, const PoseParams& pose, const Camera& cam,
                  const Image& background, const Image& head_mask, const RasterSettings& rs) {
    return forward_frame(body, model, pose, cam, background, head_mask, 0, rs).output;
}

std::vector<Image> infer(const BodyModel& body, const PortraitModel& model, const Track& track,
                         const std::vector<Camera>& cameras, const std::vector<Image>& backgrounds,
                         const std::vector<Image>& head_masks, const RasterSettings& rs) {
    if (model.texture.binding == nullptr || model.texture.binding->topology_hash != body.topology_hash())
        throw TopologyMismatch(body.topology_hash(), model.texture.binding ? model.texture.binding->topology_hash : 0);
    track.validate(body.asset());
    std::vector<Image> out;
    for (int t = 0; t < track.size(); ++t) {
        const auto tu = static_cast<std::size_t>(t);
        if (tu >= cameras.size()) throw InvalidArgument("infer: missing camera for frame " + std::to_string(t));
        if (tu >= backgrounds.size() || backgrounds[tu].empty())
            throw InvalidArgument("infer: missing background for frame " + std::to_string(t));
        if (tu >= head_masks.size() || head_masks[tu].empty())
            throw InvalidArgument("infer: missing head mask for frame " + std::to_string(t));
        out.push_back(infer_frame(body, model, track.frames[tu], cameras[tu], backgrounds[tu], head_masks[tu], rs));
    }
    return out;
}

Image clamp_unit(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace fsplat
