#include "featsplat/splat_renderer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

namespace fsplat {

struct RasterState {
    int width = 0, height = 0, channels = 0;
    int tile = 16, tiles_x = 0, tiles_y = 0;
    std::uint64_t fingerprint = 0;
    std::vector<Eigen::Matrix2d> conics;
    std::vector<std::vector<int>> tile_lists;  // splat indices, front to back
    std::vector<int> processed;                // per pixel: list prefix that was composited
    std::vector<double> final_t;               // per pixel transmittance
};

namespace {

std::uint64_t fnv_mix(std::uint64_t h, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fingerprint(const SplatSet& s, const Camera& cam) {
    std::uint64_t h = 1469598103934665603ull;
    h = fnv_mix(h, cam.width);
    h = fnv_mix(h, cam.height);
    for (const Splat2D& sp : s.splats) {
        h = fnv_mix(h, sp.mean2d.x());
        h = fnv_mix(h, sp.mean2d.y());
        h = fnv_mix(h, sp.cov2d(0, 0));
        h = fnv_mix(h, sp.cov2d(0, 1));
        h = fnv_mix(h, sp.cov2d(1, 1));
        h = fnv_mix(h, sp.depth);
        h = fnv_mix(h, sp.opacity);
    }
    for (Eigen::Index i = 0; i < s.features.size(); ++i) h = fnv_mix(h, s.features.data()[i]);
    return h;
}

Eigen::Matrix<double, 2, 3> pinhole_jacobian(const Camera& cam, const Eigen::Vector3d& t) {
    const double iz = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
    return j;
}

struct Covariance {
    Eigen::Matrix3d rot;  // from the normalized quaternion
    Eigen::Matrix3d sigma;
};

Covariance world_covariance(const Eigen::Vector4d& q, const Eigen::Vector3d& s) {
    Covariance c;
    const Quat<double> qh = q / q.norm();
    c.rot = quat_to_matrix<double>(qh);
    c.sigma = c.rot * s.cwiseAbs2().asDiagonal() * c.rot.transpose();
    return c;
}

}  // namespace

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
    if (!(near > 0.0)) throw InvalidArgument("camera near plane must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
    if (!std::isfinite(cx) || !std::isfinite(cy) || !world_to_camera.matrix().allFinite())
        throw InvalidArgument("camera has non-finite parameters");
}

Eigen::Vector2d Camera::project_point(const Eigen::Vector3d& world) const {
    const Eigen::Vector3d t = world_to_camera * world;
    return {fx * t.x() / t.z() + cx, fy * t.y() / t.z() + cy};
}

void SplatGradient::zeros(int n, int channels) {
    mean2d = RowMatrix::Zero(n, 2);
    cov2d.assign(static_cast<std::size_t>(n), Eigen::Matrix2d::Zero());
    opacity = Eigen::VectorXd::Zero(n);
    features = RowMatrix::Zero(n, channels);
}

SplatSet project(const EmbeddedGaussians& g, const Camera& cam, const RasterSettings& rs) {
    cam.validate();
    const Eigen::Matrix3d w = cam.world_to_camera.linear();
    const Eigen::Vector3d tc = cam.world_to_camera.translation();
    SplatSet out;
    std::vector<int> kept;
    for (int i = 0; i < g.size(); ++i) {
        if (!g.positions.row(i).allFinite() || !g.rotations.row(i).allFinite() || !g.scales.row(i).allFinite() ||
            !std::isfinite(g.opacities(i)) || !g.features.row(i).allFinite())
            throw InvalidArgument("project: Gaussian " + std::to_string(i) + " has non-finite attributes");
        const Eigen::Vector3d t = w * g.positions.row(i).transpose() + tc;
        if (t.z() <= cam.near) continue;
        const Eigen::Vector4d q = g.rotations.row(i).transpose();
        if (q.squaredNorm() == 0.0) throw InvalidArgument("project: Gaussian " + std::to_string(i) + " has a zero quaternion");
        const Covariance cov = world_covariance(q, g.scales.row(i).transpose());
        const Eigen::Matrix<double, 2, 3> m = pinhole_jacobian(cam, t) * w;
        Eigen::Matrix2d c2 = m * cov.sigma * m.transpose();
        c2(0, 1) = c2(1, 0) = 0.5 * (c2(0, 1) + c2(1, 0));
        c2.diagonal().array() += rs.low_pass;
        const double mid = 0.5 * (c2(0, 0) + c2(1, 1));
        const double half = std::sqrt(0.25 * (c2(0, 0) - c2(1, 1)) * (c2(0, 0) - c2(1, 1)) + c2(0, 1) * c2(0, 1));
        const double radius = rs.radius_sigmas * std::sqrt(mid + half);
        Splat2D sp;
        sp.source = i;
        sp.mean2d = Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
        if (sp.mean2d.x() + radius < 0.0 || sp.mean2d.x() - radius > cam.width || sp.mean2d.y() + radius < 0.0 ||
            sp.mean2d.y() - radius > cam.height)
            continue;
        sp.cov2d = c2;
        sp.depth = t.z();
        sp.opacity = g.opacities(i);
        sp.radius = radius;
        out.splats.push_back(sp);
        kept.push_back(i);
    }
    out.features.resize(static_cast<Eigen::Index>(kept.size()), g.channels());
    for (std::size_t k = 0; k < kept.size(); ++k) out.features.row(static_cast<Eigen::Index>(k)) = g.features.row(kept[k]);
    return out;
}

EmbeddedGaussians project_backward(const EmbeddedGaussians& g, const Camera& cam, const SplatSet& splats,
                                   const SplatGradient& d, const RasterSettings&) {
    const Eigen::Matrix3d w = cam.world_to_camera.linear();
    const Eigen::Vector3d tc = cam.world_to_camera.translation();
    EmbeddedGaussians out;
    out.set_zero_like(g);
    for (int k = 0; k < splats.size(); ++k) {
        const Splat2D& sp = splats.splats[static_cast<std::size_t>(k)];
        const int i = sp.source;
        out.opacities(i) += d.opacity(k);
        out.features.row(i) += d.features.row(k);

        const Eigen::Vector3d t = w * g.positions.row(i).transpose() + tc;
        const Eigen::Vector4d q = g.rotations.row(i).transpose();
        const Eigen::Vector3d s = g.scales.row(i).transpose();
        const Covariance cov = world_covariance(q, s);
        const Eigen::Matrix<double, 2, 3> jac = pinhole_jacobian(cam, t);
        const Eigen::Matrix<double, 2, 3> m = jac * w;

        const Eigen::Matrix2d dc = d.cov2d[static_cast<std::size_t>(k)];
        const Eigen::Matrix<double, 2, 3> dm = (dc + dc.transpose()) * m * cov.sigma;
        const Eigen::Matrix3d dsigma = m.transpose() * dc * m;
        const Eigen::Matrix<double, 2, 3> dj = dm * w.transpose();

        const double iz = 1.0 / t.z();
        const double iz2 = iz * iz;
        Eigen::Vector3d dt = Eigen::Vector3d::Zero();
        const double du = d.mean2d(k, 0), dv = d.mean2d(k, 1);
        dt.x() += du * cam.fx * iz;
        dt.y() += dv * cam.fy * iz;
        dt.z() += -du * cam.fx * t.x() * iz2 - dv * cam.fy * t.y() * iz2;
        dt.z() += -dj(0, 0) * cam.fx * iz2 - dj(1, 1) * cam.fy * iz2;
        dt.x() += -dj(0, 2) * cam.fx * iz2;
        dt.y() += -dj(1, 2) * cam.fy * iz2;
        dt.z() += dj(0, 2) * 2.0 * cam.fx * t.x() * iz2 * iz + dj(1, 2) * 2.0 * cam.fy * t.y() * iz2 * iz;
        out.positions.row(i) += (w.transpose() * dt).transpose();

        const Eigen::Matrix3d gs = dsigma + dsigma.transpose();
        const Eigen::Matrix3d dr = gs * cov.rot * s.cwiseAbs2().asDiagonal();
        const Eigen::Matrix3d rtgr = cov.rot.transpose() * dsigma * cov.rot;
        for (int a = 0; a < 3; ++a) out.scales(i, a) += 2.0 * s(a) * rtgr(a, a);
        const Quat<double> qh = q / q.norm();
        out.rotations.row(i) += normalize_vjp(q, quat_to_matrix_vjp(qh, dr)).transpose();
    }
    return out;
}

namespace {

std::shared_ptr<RasterState> build_state(const SplatSet& splats, const Camera& cam, const RasterSettings& rs) {
    if (rs.tile <= 0) throw InvalidArgument("rasterize: tile size must be positive");
    if (splats.features.rows() != splats.size()) throw InvalidArgument("rasterize: feature rows differ from splat count");
    auto st = std::make_shared<RasterState>();
    st->width = cam.width;
    st->height = cam.height;
    st->channels = splats.channels();
    st->tile = rs.tile;
    st->tiles_x = (cam.width + rs.tile - 1) / rs.tile;
    st->tiles_y = (cam.height + rs.tile - 1) / rs.tile;
    st->fingerprint = fingerprint(splats, cam);

    const int n = splats.size();
    st->conics.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const Eigen::Matrix2d& c = splats.splats[static_cast<std::size_t>(k)].cov2d;
        const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        if (!(det > 0.0) || !(c(0, 0) > 0.0))
            throw InvariantViolation("rasterize: splat " + std::to_string(k) + " has a singular 2D covariance");
        Eigen::Matrix2d inv;
        inv << c(1, 1) / det, -c(0, 1) / det, -c(1, 0) / det, c(0, 0) / det;
        st->conics[static_cast<std::size_t>(k)] = inv;
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = splats.splats[static_cast<std::size_t>(a)].depth;
        const double db = splats.splats[static_cast<std::size_t>(b)].depth;
        if (da != db) return da < db;
        return splats.splats[static_cast<std::size_t>(a)].source != splats.splats[static_cast<std::size_t>(b)].source
                   ? splats.splats[static_cast<std::size_t>(a)].source < splats.splats[static_cast<std::size_t>(b)].source
                   : a < b;
    });

    st->tile_lists.assign(static_cast<std::size_t>(st->tiles_x * st->tiles_y), {});
    for (const int k : order) {
        const Splat2D& sp = splats.splats[static_cast<std::size_t>(k)];
        // Pixel centers sit at integer + 0.5.
        const int x0 = std::max(0, static_cast<int>(std::ceil(sp.mean2d.x() - sp.radius - 0.5)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(sp.mean2d.x() + sp.radius - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(sp.mean2d.y() - sp.radius - 0.5)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(sp.mean2d.y() + sp.radius - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / rs.tile; ty <= y1 / rs.tile; ++ty)
            for (int tx = x0 / rs.tile; tx <= x1 / rs.tile; ++tx)
                st->tile_lists[static_cast<std::size_t>(ty * st->tiles_x + tx)].push_back(k);
    }
    st->processed.assign(static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height), 0);
    st->final_t.assign(st->processed.size(), 1.0);
    return st;
}

// Per-pixel weight of one splat, shared by the forward and backward loops.
struct Contribution {
    bool active = false;
    bool clamped = false;
    double gauss = 0;
    double alpha = 0;
    Eigen::Vector2d delta;
};

inline Contribution evaluate(const Splat2D& sp, const Eigen::Matrix2d& conic, double px, double py,
                             const RasterSettings& rs) {
    Contribution c;
    c.delta = Eigen::Vector2d(px - sp.mean2d.x(), py - sp.mean2d.y());
    const double power = c.delta.dot(conic * c.delta);
    if (power > rs.radius_sigmas * rs.radius_sigmas) return c;
    c.gauss = std::exp(-0.5 * power);
    const double a = sp.opacity * c.gauss;
    c.clamped = a > rs.alpha_max;
    c.alpha = c.clamped ? rs.alpha_max : a;
    c.active = c.alpha >= rs.alpha_min;
    return c;
}

}  // namespace

FeatureFrame rasterize(const SplatSet& splats, const Camera& cam, const RasterSettings& rs) {
    cam.validate();
    auto st = build_state(splats, cam, rs);
    const int nc = splats.channels();
    FeatureFrame frame;
    frame.phi = Image(cam.height, cam.width, nc);
    frame.alpha = Image(cam.height, cam.width, 1);
    const int ntiles = st->tiles_x * st->tiles_y;

#pragma omp parallel for schedule(dynamic)
    for (int ti = 0; ti < ntiles; ++ti) {
        const auto& list = st->tile_lists[static_cast<std::size_t>(ti)];
        const int tx = ti % st->tiles_x, ty = ti / st->tiles_x;
        for (int y = ty * rs.tile; y < std::min(cam.height, (ty + 1) * rs.tile); ++y)
            for (int x = tx * rs.tile; x < std::min(cam.width, (tx + 1) * rs.tile); ++x) {
                double t = 1.0;
                int processed = 0;
                double* phi = frame.phi.data.data() + frame.phi.offset(y, x);
                for (std::size_t e = 0; e < list.size(); ++e) {
                    const int k = list[e];
                    const Splat2D& sp = splats.splats[static_cast<std::size_t>(k)];
                    const Contribution c = evaluate(sp, st->conics[static_cast<std::size_t>(k)], x + 0.5, y + 0.5, rs);
                    if (!c.active) continue;
                    const double next = t * (1.0 - c.alpha);
                    if (next < rs.transmittance_min) break;
                    const double wgt = c.alpha * t;
                    const double* f = splats.features.data() + static_cast<std::ptrdiff_t>(k) * nc;
                    for (int ch = 0; ch < nc; ++ch) phi[ch] += wgt * f[ch];
                    t = next;
                    processed = static_cast<int>(e) + 1;
                }
                const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cam.width) +
                                        static_cast<std::size_t>(x);
                st->processed[pix] = processed;
                st->final_t[pix] = t;
                frame.alpha.at(y, x) = 1.0 - t;
            }
    }
    frame.state = std::move(st);
    return frame;
}

SplatGradient rasterize_backward(const SplatSet& splats, const Camera& cam, const FeatureFrame& frame,
                                 const Image& d_phi, const Image& d_alpha, const RasterSettings& rs) {
    const RasterState* st = frame.state.get();
    if (!st) throw InvalidArgument("rasterize_backward: frame carries no forward state");
    if (st->width != cam.width || st->height != cam.height || st->channels != splats.channels() ||
        st->tile != rs.tile || st->fingerprint != fingerprint(splats, cam))
        throw InvalidArgument("rasterize_backward: splats or camera differ from the forward pass");
    const int nc = splats.channels();
    require_shape(d_phi, cam.height, cam.width, nc, "rasterize_backward d_phi");
    require_shape(d_alpha, cam.height, cam.width, 1, "rasterize_backward d_alpha");

    // Per-tile slots: mean(2) conic(3: xx, xy, yy) opacity(1) features(nc).
    const int stride = 6 + nc;
    const int ntiles = st->tiles_x * st->tiles_y;
    std::vector<std::vector<double>> slots(static_cast<std::size_t>(ntiles));

#pragma omp parallel for schedule(dynamic)
    for (int ti = 0; ti < ntiles; ++ti) {
        const auto& list = st->tile_lists[static_cast<std::size_t>(ti)];
        auto& buf = slots[static_cast<std::size_t>(ti)];
        buf.assign(list.size() * static_cast<std::size_t>(stride), 0.0);
        const int tx = ti % st->tiles_x, ty = ti / st->tiles_x;
        for (int y = ty * rs.tile; y < std::min(cam.height, (ty + 1) * rs.tile); ++y)
            for (int x = tx * rs.tile; x < std::min(cam.width, (tx + 1) * rs.tile); ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cam.width) +
                                        static_cast<std::size_t>(x);
                const double* dphi = d_phi.data.data() + d_phi.offset(y, x);
                const double dalpha = d_alpha.at(y, x);
                const double t_final = st->final_t[pix];
                double t = t_final;
                double acc = 0.0;  // sum over later splats of alpha*T*<dphi, f>
                for (int e = st->processed[pix] - 1; e >= 0; --e) {
                    const int k = list[static_cast<std::size_t>(e)];
                    const Splat2D& sp = splats.splats[static_cast<std::size_t>(k)];
                    const Eigen::Matrix2d& conic = st->conics[static_cast<std::size_t>(k)];
                    const Contribution c = evaluate(sp, conic, x + 0.5, y + 0.5, rs);
                    if (!c.active) continue;
                    const double one_minus = 1.0 - c.alpha;
                    t /= one_minus;  // transmittance in front of this splat
                    const double* f = splats.features.data() + static_cast<std::ptrdiff_t>(k) * nc;
                    double dot = 0.0;
                    for (int ch = 0; ch < nc; ++ch) dot += dphi[ch] * f[ch];
                    double* slot = buf.data() + static_cast<std::size_t>(e) * static_cast<std::size_t>(stride);
                    const double wgt = c.alpha * t;
                    for (int ch = 0; ch < nc; ++ch) slot[6 + ch] += wgt * dphi[ch];
                    const double d_a = t * dot - acc / one_minus + dalpha * t_final / one_minus;
                    acc += wgt * dot;
                    if (c.clamped) continue;
                    slot[5] += d_a * c.gauss;
                    const double d_power = d_a * sp.opacity * c.gauss * -0.5;
                    const Eigen::Vector2d cd = conic * c.delta;
                    // power = delta^T conic delta, delta = pixel - mean
                    slot[0] += d_power * -2.0 * cd.x();
                    slot[1] += d_power * -2.0 * cd.y();
                    slot[2] += d_power * c.delta.x() * c.delta.x();
                    slot[3] += d_power * c.delta.x() * c.delta.y();
                    slot[4] += d_power * c.delta.y() * c.delta.y();
                }
            }
    }

    SplatGradient g;
    g.zeros(splats.size(), nc);
    std::vector<Eigen::Matrix2d> d_conic(static_cast<std::size_t>(splats.size()), Eigen::Matrix2d::Zero());
    for (int ti = 0; ti < ntiles; ++ti) {
        const auto& list = st->tile_lists[static_cast<std::size_t>(ti)];
        const auto& buf = slots[static_cast<std::size_t>(ti)];
        for (std::size_t e = 0; e < list.size(); ++e) {
            const int k = list[e];
            const double* slot = buf.data() + e * static_cast<std::size_t>(stride);
            g.mean2d(k, 0) += slot[0];
            g.mean2d(k, 1) += slot[1];
            Eigen::Matrix2d& dcn = d_conic[static_cast<std::size_t>(k)];
            dcn(0, 0) += slot[2];
            dcn(0, 1) += slot[3];
            dcn(1, 0) += slot[3];
            dcn(1, 1) += slot[4];
            g.opacity(k) += slot[5];
            for (int ch = 0; ch < nc; ++ch) g.features(k, ch) += slot[6 + ch];
        }
    }
    for (int k = 0; k < splats.size(); ++k) {
        const Eigen::Matrix2d& conic = st->conics[static_cast<std::size_t>(k)];
        g.cov2d[static_cast<std::size_t>(k)] = -conic.transpose() * d_conic[static_cast<std::size_t>(k)] * conic.transpose();
    }
    return g;
}

FeatureFrame render(const BodyModel& model, const PoseParams& p, const Vertices* delta, const Camera& cam,
                    const GaussianTexture& tex, const TemporalCondition* condition, RenderTrace* trace,
                    const RasterSettings& rs) {
    RenderTrace local;
    RenderTrace& tr = trace ? *trace : local;
    tr.mesh = model.pose(p, delta);
    tr.gaussians = embed(model.asset(), tr.mesh, tex, condition);
    tr.splats = project(tr.gaussians, cam, rs);
    return rasterize(tr.splats, cam, rs);
}

RenderGradient render_backward(const BodyModel& model, const PoseParams& p, const Camera& cam,
                               const GaussianTexture& tex, const TemporalCondition* condition,
                               const RenderTrace& trace, const FeatureFrame& frame, const Image& d_phi,
                               const Image& d_alpha, const RasterSettings& rs, bool pose_gradient) {
    const SplatGradient sg = rasterize_backward(trace.splats, cam, frame, d_phi, d_alpha, rs);
    const EmbeddedGaussians dg = project_backward(trace.gaussians, cam, trace.splats, sg, rs);
    EmbedGradient eg;
    eg.texture.zeros_like(tex);
    eg.vertices = Vertices::Zero(model.asset().num_vertices(), 3);
    if (condition && condition->features) eg.temporal.zeros_like(*condition->features);
    embed_backward(model.asset(), trace.mesh, tex, condition, dg, eg);
    RenderGradient out;
    if (pose_gradient) out.pose = model.pose_vjp(p, eg.vertices);
    out.delta = std::move(eg.vertices);
    out.texture = std::move(eg.texture);
    out.temporal = std::move(eg.temporal);
    return out;
}

}  // namespace fsplat
