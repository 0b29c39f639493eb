#include "featsplat/gaussian_field.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <ceres/jet.h>

namespace fsplat {

namespace {

using Jet9 = ceres::Jet<double, 9>;

// Barycentrics of p in triangle (a, b, c); returns false for degenerate triangles.
bool barycentric(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                 const Eigen::Vector2d& c, Eigen::Vector3d& out) {
    const Eigen::Vector2d v0 = b - a, v1 = c - a, v2 = p - a;
    const double den = v0.x() * v1.y() - v1.x() * v0.y();
    if (std::abs(den) < 1e-300) return false;
    const double l1 = (v2.x() * v1.y() - v1.x() * v2.y()) / den;
    const double l2 = (v0.x() * v2.y() - v2.x() * v0.y()) / den;
    out = Eigen::Vector3d(1.0 - l1 - l2, l1, l2);
    return true;
}

bool separated_on_axis(const FaceUv& a, const FaceUv& b, const Eigen::Vector2d& axis) {
    constexpr double kEps = 1e-9;
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : a) {
        const double d = axis.dot(p);
        amin = std::min(amin, d);
        amax = std::max(amax, d);
    }
    for (const auto& p : b) {
        const double d = axis.dot(p);
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
    }
    return amax <= bmin + kEps || bmax <= amin + kEps;
}

bool interiors_overlap(const FaceUv& a, const FaceUv& b) {
    for (const FaceUv* t : {&a, &b}) {
        for (int k = 0; k < 3; ++k) {
            const Eigen::Vector2d e = (*t)[static_cast<std::size_t>((k + 1) % 3)] - (*t)[static_cast<std::size_t>(k)];
            const double n = e.norm();
            if (n < 1e-300) continue;
            if (separated_on_axis(a, b, Eigen::Vector2d(-e.y(), e.x()) / n)) return false;
        }
    }
    return true;
}

double uv_area(const FaceUv& t) {
    const Eigen::Vector2d e1 = t[1] - t[0], e2 = t[2] - t[0];
    return 0.5 * std::abs(e1.x() * e2.y() - e1.y() * e2.x());
}

template <typename T>
Quat<T> face_quaternion(const Vec3<T>& v0, const Vec3<T>& v1, const Vec3<T>& v2) {
    return matrix_to_quat<T>(face_frame<T>(v0, v1, v2, nullptr));
}

}  // namespace

std::vector<std::pair<int, int>> find_uv_overlaps(const BodyAsset& asset) {
    constexpr int kGrid = 64;
    std::vector<std::vector<int>> cells(kGrid * kGrid);
    const auto nf = static_cast<int>(asset.uv_corners.size());
    for (int f = 0; f < nf; ++f) {
        const FaceUv& t = asset.uv_corners[static_cast<std::size_t>(f)];
        if (uv_area(t) <= 0.0) continue;
        double umin = 1, umax = 0, vmin = 1, vmax = 0;
        for (const auto& p : t) {
            umin = std::min(umin, p.x());
            umax = std::max(umax, p.x());
            vmin = std::min(vmin, p.y());
            vmax = std::max(vmax, p.y());
        }
        const int x0 = std::clamp(static_cast<int>(std::floor(umin * kGrid)), 0, kGrid - 1);
        const int x1 = std::clamp(static_cast<int>(std::floor(umax * kGrid)), 0, kGrid - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor(vmin * kGrid)), 0, kGrid - 1);
        const int y1 = std::clamp(static_cast<int>(std::floor(vmax * kGrid)), 0, kGrid - 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) cells[static_cast<std::size_t>(y * kGrid + x)].push_back(f);
    }
    std::set<std::pair<int, int>> pairs;
    for (const auto& cell : cells) {
        for (std::size_t i = 0; i < cell.size(); ++i)
            for (std::size_t j = i + 1; j < cell.size(); ++j) {
                const std::pair<int, int> key(std::min(cell[i], cell[j]), std::max(cell[i], cell[j]));
                if (pairs.count(key)) continue;
                if (interiors_overlap(asset.uv_corners[static_cast<std::size_t>(key.first)],
                                      asset.uv_corners[static_cast<std::size_t>(key.second)]))
                    pairs.insert(key);
            }
    }
    return {pairs.begin(), pairs.end()};
}

UvBinding build_binding(const BodyAsset& asset, int resolution) {
    if (resolution <= 0) throw InvalidArgument("texture resolution must be positive");
    const auto overlaps = find_uv_overlaps(asset);
    if (!overlaps.empty()) {
        std::ostringstream msg;
        msg << "UV atlas has overlapping faces:";
        std::size_t shown = 0;
        for (const auto& [a, b] : overlaps) {
            if (shown++ == 16) {
                msg << " ...";
                break;
            }
            msg << " (" << a << "," << b << ")";
        }
        throw InvalidArgument(msg.str());
    }

    UvBinding out;
    out.resolution = resolution;
    out.topology_hash = asset.topology_hash();
    const auto u = static_cast<std::size_t>(resolution);
    out.validity.assign(u * u, 0);
    std::vector<int> owner(u * u, -1);
    std::vector<Eigen::Vector3d> bary(u * u);

    for (int f = 0; f < asset.num_faces(); ++f) {
        const FaceUv& t = asset.uv_corners[static_cast<std::size_t>(f)];
        if (uv_area(t) <= 0.0) continue;
        double umin = 1, umax = 0, vmin = 1, vmax = 0;
        for (const auto& p : t) {
            umin = std::min(umin, p.x());
            umax = std::max(umax, p.x());
            vmin = std::min(vmin, p.y());
            vmax = std::max(vmax, p.y());
        }
        const int x0 = std::max(0, static_cast<int>(std::floor(umin * resolution - 0.5)));
        const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(umax * resolution - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(vmin * resolution - 0.5)));
        const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(vmax * resolution - 0.5)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const auto idx = static_cast<std::size_t>(y) * u + static_cast<std::size_t>(x);
                if (owner[idx] >= 0) continue;
                const Eigen::Vector2d center((x + 0.5) / resolution, (y + 0.5) / resolution);
                Eigen::Vector3d b;
                if (!barycentric(center, t[0], t[1], t[2], b)) continue;
                if (b.minCoeff() < -1e-12) continue;
                owner[idx] = f;
                bary[idx] = b;
            }
    }
    for (std::size_t i = 0; i < owner.size(); ++i) {
        if (owner[i] < 0) continue;
        out.validity[i] = 1;
        out.texels.push_back({static_cast<int>(i), owner[i], bary[i]});
    }
    return out;
}

void GaussianTexture::normalize_rotations() {
    for (Eigen::Index i = 0; i < rotation.rows(); ++i) {
        const double n = rotation.row(i).norm();
        if (n > 0.0)
            rotation.row(i) /= n;
        else
            rotation.row(i) << 1.0, 0.0, 0.0, 0.0;
    }
}

TemporalFeatures TemporalFeatures::create(int frames, int channels, int width, std::uint64_t seed) {
    TemporalFeatures tf;
    tf.width = width;
    tf.codes = RowMatrix::Zero(frames, width);
    tf.mixer.resize(channels, width);
    tf.mixer_bias = Eigen::VectorXd::Zero(channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Eigen::Index i = 0; i < tf.mixer.size(); ++i) tf.mixer.data()[i] = normal(rng);
    return tf;
}

void EmbeddedGaussians::set_zero_like(const EmbeddedGaussians& o) {
    positions = RowMatrix::Zero(o.positions.rows(), 3);
    rotations = RowMatrix::Zero(o.rotations.rows(), 4);
    scales = RowMatrix::Zero(o.scales.rows(), 3);
    opacities = Eigen::VectorXd::Zero(o.opacities.size());
    features = RowMatrix::Zero(o.features.rows(), o.features.cols());
}

GaussianTexture init_texture(const BodyAsset& asset, std::shared_ptr<const UvBinding> binding, std::uint64_t seed,
                             int channels) {
    if (!binding) throw InvalidArgument("init_texture: missing binding");
    if (binding->topology_hash != asset.topology_hash())
        throw InvalidArgument("init_texture: binding was built for a different mesh topology");
    const int n = binding->active();
    GaussianTexture tex;
    tex.binding = std::move(binding);
    tex.channels = channels;
    tex.features.resize(n, channels);
    tex.opacity_logit = Eigen::VectorXd::Constant(n, std::log(0.1 / 0.9));
    tex.log_scale.resize(n, 3);
    tex.rotation = RowMatrix::Zero(n, 4);
    tex.rotation.col(0).setOnes();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.01);
    for (Eigen::Index i = 0; i < tex.features.size(); ++i) tex.features.data()[i] = normal(rng);

    const double u = tex.binding->resolution;
    for (int i = 0; i < n; ++i) {
        const TexelBinding& tb = tex.binding->texels[static_cast<std::size_t>(i)];
        const Face& f = asset.faces[static_cast<std::size_t>(tb.face)];
        const FaceUv& uv = asset.uv_corners[static_cast<std::size_t>(tb.face)];
        const double world = (asset.template_vertices.row(f[1]) - asset.template_vertices.row(f[0])).norm();
        const double tex_len = (uv[1] - uv[0]).norm();
        // World length of one texel along the face's first edge.
        const double footprint = tex_len > 0.0 ? world / tex_len / u : world / u;
        tex.log_scale.row(i).setConstant(std::log(0.5 * std::max(footprint, 1e-9)));
    }
    return tex;
}

GaussianTexture init_texture(const BodyAsset& asset, int resolution, std::uint64_t seed, int channels) {
    return init_texture(asset, std::make_shared<const UvBinding>(build_binding(asset, resolution)), seed, channels);
}

namespace {

void check_embed_inputs(const BodyAsset& asset, const PosedMesh& mesh, const GaussianTexture& tex,
                        const TemporalCondition* condition) {
    if (!tex.binding) throw InvalidArgument("embed: texture has no binding");
    if (tex.binding->topology_hash != asset.topology_hash() || mesh.vertices.rows() != asset.num_vertices() ||
        mesh.face_frames.size() != static_cast<std::size_t>(asset.num_faces()))
        throw InvalidArgument("embed: texture, mesh and asset topologies do not match");
    if (condition && condition->features) {
        const TemporalFeatures& tf = *condition->features;
        if (condition->frame < 0 || condition->frame >= tf.frames())
            throw InvalidArgument("embed: temporal frame index out of range");
        if (tf.mixer.rows() != tex.channels) throw InvalidArgument("embed: mixer width differs from texture channels");
    }
}

}  // namespace

EmbeddedGaussians embed(const BodyAsset& asset, const PosedMesh& mesh, const GaussianTexture& tex,
                        const TemporalCondition* condition) {
    check_embed_inputs(asset, mesh, tex, condition);
    const int n = tex.size();
    EmbeddedGaussians g;
    g.positions.resize(n, 3);
    g.rotations.resize(n, 4);
    g.scales = tex.log_scale.array().exp();
    g.opacities = (1.0 + (-tex.opacity_logit.array()).exp()).inverse();
    g.features = tex.features;
    if (condition && condition->features) {
        const TemporalFeatures& tf = *condition->features;
        const Eigen::VectorXd shift = tf.mixer * tf.codes.row(condition->frame).transpose() + tf.mixer_bias;
        g.features.rowwise() += shift.transpose();
    }

    std::vector<Quat<double>> face_q(mesh.face_frames.size());
    for (std::size_t f = 0; f < face_q.size(); ++f) face_q[f] = matrix_to_quat<double>(mesh.face_frames[f]);

    for (int i = 0; i < n; ++i) {
        const TexelBinding& tb = tex.binding->texels[static_cast<std::size_t>(i)];
        const Face& f = asset.faces[static_cast<std::size_t>(tb.face)];
        g.positions.row(i) = tb.bary(0) * mesh.vertices.row(f[0]) + tb.bary(1) * mesh.vertices.row(f[1]) +
                             tb.bary(2) * mesh.vertices.row(f[2]);
        Quat<double> qt = tex.rotation.row(i).transpose();
        qt /= qt.norm();
        g.rotations.row(i) = quat_multiply<double>(face_q[static_cast<std::size_t>(tb.face)], qt).transpose();
    }
    return g;
}

void TextureGradient::zeros_like(const GaussianTexture& tex) {
    features = RowMatrix::Zero(tex.features.rows(), tex.features.cols());
    opacity_logit = Eigen::VectorXd::Zero(tex.opacity_logit.size());
    log_scale = RowMatrix::Zero(tex.log_scale.rows(), 3);
    rotation = RowMatrix::Zero(tex.rotation.rows(), 4);
}

void TemporalGradient::zeros_like(const TemporalFeatures& tf) {
    code = Eigen::VectorXd::Zero(tf.width);
    mixer = RowMatrix::Zero(tf.mixer.rows(), tf.mixer.cols());
    mixer_bias = Eigen::VectorXd::Zero(tf.mixer_bias.size());
}

void embed_backward(const BodyAsset& asset, const PosedMesh& mesh, const GaussianTexture& tex,
                    const TemporalCondition* condition, const EmbeddedGaussians& d_out, EmbedGradient& out) {
    check_embed_inputs(asset, mesh, tex, condition);
    const int n = tex.size();
    if (d_out.size() != n) throw InvalidArgument("embed_backward: gradient size differs from texture");
    if (out.texture.features.rows() != n) out.texture.zeros_like(tex);
    if (out.vertices.rows() != asset.num_vertices()) out.vertices = Vertices::Zero(asset.num_vertices(), 3);

    out.texture.features += d_out.features;
    if (condition && condition->features) {
        const TemporalFeatures& tf = *condition->features;
        if (out.temporal.code.size() != tf.width) out.temporal.zeros_like(tf);
        const Eigen::VectorXd dsum = d_out.features.colwise().sum().transpose();
        out.temporal.code += tf.mixer.transpose() * dsum;
        out.temporal.mixer += dsum * tf.codes.row(condition->frame);
        out.temporal.mixer_bias += dsum;
    }

    for (int i = 0; i < n; ++i) {
        const double o = 1.0 / (1.0 + std::exp(-tex.opacity_logit(i)));
        out.texture.opacity_logit(i) += d_out.opacities(i) * o * (1.0 - o);
        for (int k = 0; k < 3; ++k)
            out.texture.log_scale(i, k) += d_out.scales(i, k) * std::exp(tex.log_scale(i, k));
    }

    std::vector<Quat<double>> d_face(mesh.face_frames.size(), Quat<double>::Zero());
    std::vector<std::uint8_t> touched(mesh.face_frames.size(), 0);
    std::vector<Quat<double>> face_q(mesh.face_frames.size());
    for (std::size_t f = 0; f < face_q.size(); ++f) face_q[f] = matrix_to_quat<double>(mesh.face_frames[f]);

    for (int i = 0; i < n; ++i) {
        const TexelBinding& tb = tex.binding->texels[static_cast<std::size_t>(i)];
        const auto fi = static_cast<std::size_t>(tb.face);
        const Face& f = asset.faces[fi];
        const Eigen::RowVector3d dp = d_out.positions.row(i);
        for (int k = 0; k < 3; ++k) out.vertices.row(f[static_cast<std::size_t>(k)]) += tb.bary(k) * dp;

        const Quat<double> dq = d_out.rotations.row(i).transpose();
        if (dq.squaredNorm() == 0.0) continue;
        const Quat<double> q_raw = tex.rotation.row(i).transpose();
        const Quat<double> qt = q_raw / q_raw.norm();
        Quat<double> d_facequat, d_qt;
        quat_multiply_vjp(face_q[fi], qt, dq, d_facequat, d_qt);
        out.texture.rotation.row(i) += normalize_vjp(q_raw, d_qt).transpose();
        d_face[fi] += d_facequat;
        touched[fi] = 1;
    }

    for (std::size_t fi = 0; fi < d_face.size(); ++fi) {
        if (!touched[fi] || mesh.face_degenerate[fi]) continue;
        const Face& f = asset.faces[fi];
        Vec3<Jet9> v[3];
        for (int k = 0; k < 3; ++k)
            for (int c = 0; c < 3; ++c) {
                v[k](c) = Jet9(mesh.vertices(f[static_cast<std::size_t>(k)], c), 3 * k + c);
            }
        const Quat<Jet9> q = face_quaternion<Jet9>(v[0], v[1], v[2]);
        for (int k = 0; k < 3; ++k)
            for (int c = 0; c < 3; ++c) {
                double g = 0.0;
                for (int r = 0; r < 4; ++r) g += d_face[fi](r) * q(r).v[3 * k + c];
                out.vertices(f[static_cast<std::size_t>(k)], c) += g;
            }
    }
}

}  // namespace fsplat
