#include "featsplat/body_model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <ceres/jet.h>
#include <Eigen/SVD>

namespace fsplat {

namespace {

std::atomic<std::uint64_t> g_degenerate_faces{0};

constexpr int kJetWidth = 8;
using Jet = ceres::Jet<double, kJetWidth>;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

Eigen::Matrix3d polar_rotation(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return u * v.transpose();
}

}  // namespace

std::uint64_t degenerate_face_warnings() { return g_degenerate_faces.load(); }
void reset_degenerate_face_warnings() { g_degenerate_faces.store(0); }

void BodyAsset::validate() const {
    const int v = num_vertices();
    const int j = num_joints();
    if (v == 0) throw InvalidArgument("body asset has no vertices");
    if (j == 0) throw InvalidArgument("body asset has no joints");
    if (uv_corners.size() != faces.size()) throw InvalidArgument("uv_corners count differs from face count");
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (int k = 0; k < 3; ++k) {
            const int idx = faces[f][static_cast<std::size_t>(k)];
            if (idx < 0 || idx >= v)
                throw InvalidArgument("face " + std::to_string(f) + " references vertex " + std::to_string(idx));
            const Eigen::Vector2d& uv = uv_corners[f][static_cast<std::size_t>(k)];
            if (!(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0))
                throw InvalidArgument("face " + std::to_string(f) + " has a UV corner outside [0,1]^2");
        }
    }
    if (shape_basis.rows() != 3 * v || expression_basis.rows() != 3 * v || pose_basis.rows() != 3 * v)
        throw InvalidArgument("blendshape bases must have 3V rows");
    if (pose_basis.cols() != 0 && pose_basis.cols() != 9 * (j - 1))
        throw InvalidArgument("pose basis must have 9(J-1) columns or none");
    if (joint_regressor.rows() != j || joint_regressor.cols() != v)
        throw InvalidArgument("joint regressor must be J x V");
    if (skinning_weights.rows() != v || skinning_weights.cols() != j)
        throw InvalidArgument("skinning weights must be V x J");
    if (parent[0] != -1) throw InvalidArgument("joint 0 must be the root");
    for (int k = 1; k < j; ++k) {
        const int p = parent[static_cast<std::size_t>(k)];
        if (p < 0 || p >= k)
            throw InvalidArgument("joint " + std::to_string(k) + " has invalid parent " + std::to_string(p));
    }
    for (int r = 0; r < v; ++r) {
        double sum = 0.0;
        for (int c = 0; c < j; ++c) {
            const double w = skinning_weights(r, c);
            if (!(w >= 0.0)) throw InvariantViolation("negative skinning weight at vertex " + std::to_string(r));
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw InvariantViolation("skinning weights of vertex " + std::to_string(r) + " sum to " +
                                     std::to_string(sum));
    }
}

std::uint64_t BodyAsset::topology_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    const std::uint32_t dims[6] = {static_cast<std::uint32_t>(num_vertices()),   static_cast<std::uint32_t>(num_faces()),
                                   static_cast<std::uint32_t>(num_joints()),     static_cast<std::uint32_t>(num_betas()),
                                   static_cast<std::uint32_t>(num_expressions()),
                                   static_cast<std::uint32_t>(num_pose_features())};
    fnv_mix(h, dims, sizeof(dims));
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (int k = 0; k < 3; ++k) {
            const auto idx = static_cast<std::uint32_t>(faces[f][static_cast<std::size_t>(k)]);
            fnv_mix(h, &idx, sizeof(idx));
            // Hash UVs at float precision so file round trips keep the hash.
            const float uv[2] = {static_cast<float>(uv_corners[f][static_cast<std::size_t>(k)].x()),
                                 static_cast<float>(uv_corners[f][static_cast<std::size_t>(k)].y())};
            fnv_mix(h, uv, sizeof(uv));
        }
    }
    return h;
}

PoseParams PoseParams::zeros(const BodyAsset& asset) {
    PoseParams p;
    p.beta = Eigen::VectorXd::Zero(asset.num_betas());
    p.theta = Eigen::VectorXd::Zero(3 * asset.num_joints());
    p.psi = Eigen::VectorXd::Zero(asset.num_expressions());
    return p;
}

bool PoseParams::all_finite() const {
    return beta.allFinite() && theta.allFinite() && psi.allFinite() && translation.allFinite();
}

Eigen::VectorXd ParamLayout::flatten(const PoseParams& p) const {
    Eigen::VectorXd x(size());
    x.segment(beta_offset(), betas) = p.beta;
    x.segment(theta_offset(), thetas) = p.theta;
    x.segment(psi_offset(), psis) = p.psi;
    x.segment(translation_offset(), 3) = p.translation;
    return x;
}

PoseParams ParamLayout::unflatten(const Eigen::VectorXd& x) const {
    PoseParams p;
    p.beta = x.segment(beta_offset(), betas);
    p.theta = x.segment(theta_offset(), thetas);
    p.psi = x.segment(psi_offset(), psis);
    p.translation = x.segment(translation_offset(), 3);
    return p;
}

Vertices rest_shape(const BodyAsset& asset, const PoseParams& p) {
    const int v = asset.num_vertices();
    if (p.beta.size() != asset.num_betas() || p.psi.size() != asset.num_expressions() ||
        p.theta.size() != 3 * asset.num_joints())
        throw InvalidArgument("pose parameter dimensions do not match the body asset");
    Eigen::VectorXd flat = asset.shape_basis * p.beta + asset.expression_basis * p.psi;
    if (asset.num_pose_features() > 0) {
        Eigen::VectorXd feature(asset.num_pose_features());
        for (int j = 1; j < asset.num_joints(); ++j) {
            const Eigen::Matrix3d r =
                axis_angle_to_matrix<double>(Eigen::Vector3d(p.theta.segment<3>(3 * j))) - Eigen::Matrix3d::Identity();
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) feature(9 * (j - 1) + 3 * a + b) = r(a, b);
        }
        flat += asset.pose_basis * feature;
    }
    Vertices out = asset.template_vertices;
    for (int i = 0; i < v; ++i)
        for (int k = 0; k < 3; ++k) out(i, k) += flat(3 * i + k);
    return out;
}

JointPositions joints(const BodyAsset& asset, const Vertices& rest_vertices) {
    if (rest_vertices.rows() != asset.num_vertices())
        throw InvalidArgument("rest vertices must be V x 3");
    return asset.joint_regressor * rest_vertices;
}

LbsResult lbs(const Vertices& rest_vertices, const JointPositions& joint_positions, const Eigen::VectorXd& theta,
              const Eigen::MatrixXd& weights, std::span<const int> parent, const Eigen::Isometry3d& root) {
    const auto nj = static_cast<int>(parent.size());
    const auto nv = static_cast<int>(rest_vertices.rows());
    if (joint_positions.rows() != nj || theta.size() != 3 * nj || weights.rows() != nv || weights.cols() != nj)
        throw InvalidArgument("lbs: inconsistent dimensions");
    if (nj == 0 || parent[0] != -1) throw InvalidArgument("lbs: joint 0 must be the root");
    for (int j = 1; j < nj; ++j)
        if (parent[static_cast<std::size_t>(j)] < 0 || parent[static_cast<std::size_t>(j)] >= j)
            throw InvalidArgument("lbs: kinematic tree must list parents before children");
    for (int v = 0; v < nv; ++v) {
        const double s = weights.row(v).sum();
        if (std::abs(s - 1.0) > 1e-12 || weights.row(v).minCoeff() < 0.0)
            throw InvariantViolation("lbs: skinning weights of vertex " + std::to_string(v) + " are not normalized");
    }

    std::vector<Eigen::Matrix3d> grot(static_cast<std::size_t>(nj));
    std::vector<Eigen::Vector3d> gtrans(static_cast<std::size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const Eigen::Matrix3d local = axis_angle_to_matrix<double>(Eigen::Vector3d(theta.segment<3>(3 * j)));
        const Eigen::Vector3d jp = joint_positions.row(j).transpose();
        const int p = parent[ju];
        if (p < 0) {
            grot[ju] = root.linear() * local;
            gtrans[ju] = root.linear() * jp + root.translation();
        } else {
            const auto pu = static_cast<std::size_t>(p);
            grot[ju] = grot[pu] * local;
            gtrans[ju] = grot[pu] * (jp - joint_positions.row(p).transpose()) + gtrans[pu];
        }
    }

    LbsResult out;
    out.vertices.resize(nv, 3);
    out.rotations.resize(static_cast<std::size_t>(nv));
    for (int v = 0; v < nv; ++v) {
        const Eigen::Vector3d x = rest_vertices.row(v).transpose();
        Eigen::Vector3d y = Eigen::Vector3d::Zero();
        Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
        for (int j = 0; j < nj; ++j) {
            const double w = weights(v, j);
            if (w == 0.0) continue;
            const auto ju = static_cast<std::size_t>(j);
            y += w * (grot[ju] * (x - joint_positions.row(j).transpose()) + gtrans[ju]);
            r += w * grot[ju];
        }
        out.vertices.row(v) = y.transpose();
        out.rotations[static_cast<std::size_t>(v)] = polar_rotation(r);
    }
    return out;
}

BodyModel::BodyModel(BodyAsset asset) : asset_(std::move(asset)) {
    asset_.validate();
    topology_hash_ = asset_.topology_hash();
    const int nj = asset_.num_joints();
    const int nv = asset_.num_vertices();
    const int nb = asset_.num_betas();
    joint_template_ = asset_.joint_regressor * asset_.template_vertices;
    joint_shape_dirs_.setZero(3 * nj, nb);
    for (int j = 0; j < nj; ++j)
        for (int k = 0; k < 3; ++k)
            for (int b = 0; b < nb; ++b) {
                double acc = 0.0;
                for (int v = 0; v < nv; ++v) acc += asset_.joint_regressor(j, v) * asset_.shape_basis(3 * v + k, b);
                joint_shape_dirs_(3 * j + k, b) = acc;
            }
    has_pose_basis_ = asset_.num_pose_features() > 0 && asset_.pose_basis.cwiseAbs().maxCoeff() > 0.0;
}

void BodyModel::check_params(const PoseParams& p) const {
    if (p.beta.size() != asset_.num_betas() || p.theta.size() != 3 * asset_.num_joints() ||
        p.psi.size() != asset_.num_expressions())
        throw InvalidArgument("pose parameter dimensions do not match the body asset");
}

JointPositions BodyModel::joint_positions(const Eigen::VectorXd& beta) const {
    Vertices shaped = asset_.template_vertices;
    const Eigen::VectorXd flat = asset_.shape_basis * beta;
    for (int i = 0; i < shaped.rows(); ++i)
        for (int k = 0; k < 3; ++k) shaped(i, k) += flat(3 * i + k);
    return joints(asset_, shaped);
}

PosedMesh BodyModel::pose(const PoseParams& p, const Vertices* delta) const {
    check_params(p);
    const int nv = asset_.num_vertices();
    if (delta && (delta->rows() != nv)) throw InvalidArgument("vertex displacement must be V x 3");

    const Vertices rest = rest_shape(asset_, p);
    const JointPositions jp = joint_positions(p.beta);
    Eigen::Isometry3d root = Eigen::Isometry3d::Identity();
    root.translation() = p.translation;
    LbsResult skinned = lbs(rest, jp, p.theta, asset_.skinning_weights, asset_.parent, root);

    PosedMesh mesh;
    mesh.vertices = std::move(skinned.vertices);
    if (delta) mesh.vertices += *delta;
    mesh.vertex_rotations = std::move(skinned.rotations);

    const auto nf = static_cast<std::size_t>(asset_.num_faces());
    mesh.face_frames.resize(nf);
    mesh.face_degenerate.assign(nf, 0);
    for (std::size_t f = 0; f < nf; ++f) {
        const Face& face = asset_.faces[f];
        bool degenerate = false;
        mesh.face_frames[f] = face_frame<double>(mesh.vertices.row(face[0]).transpose(),
                                                 mesh.vertices.row(face[1]).transpose(),
                                                 mesh.vertices.row(face[2]).transpose(), &degenerate);
        if (degenerate) {
            mesh.face_degenerate[f] = 1;
            ++mesh.degenerate_faces;
        }
    }
    if (mesh.degenerate_faces > 0) g_degenerate_faces.fetch_add(static_cast<std::uint64_t>(mesh.degenerate_faces));
    return mesh;
}

std::vector<Eigen::Vector3d> BodyModel::posed_points(const PoseParams& p, std::span<const int> vertex_ids) const {
    check_params(p);
    std::vector<Eigen::Vector3d> out(vertex_ids.size());
    evaluate<double>(p.beta.data(), p.theta.data(), p.psi.data(), p.translation.data(), vertex_ids, out.data());
    return out;
}

namespace {

// Runs the evaluator with jets seeded on parameters [start, start+kJetWidth).
std::vector<Vec3<Jet>> evaluate_chunk(const BodyModel& model, const Eigen::VectorXd& flat, int start,
                                      std::span<const int> vertex_ids) {
    const ParamLayout layout = model.layout();
    std::vector<Jet> x(static_cast<std::size_t>(flat.size()));
    for (int i = 0; i < flat.size(); ++i) {
        x[static_cast<std::size_t>(i)] = Jet(flat(i));
        if (i >= start && i < start + kJetWidth) x[static_cast<std::size_t>(i)].v[i - start] = 1.0;
    }
    std::vector<Vec3<Jet>> out(vertex_ids.size());
    model.evaluate<Jet>(x.data() + layout.beta_offset(), x.data() + layout.theta_offset(),
                        x.data() + layout.psi_offset(), x.data() + layout.translation_offset(), vertex_ids,
                        out.data());
    return out;
}

}  // namespace

Eigen::MatrixXd BodyModel::vertex_jacobian(const PoseParams& p, std::span<const int> vertex_ids) const {
    check_params(p);
    const ParamLayout layout = this->layout();
    const Eigen::VectorXd flat = layout.flatten(p);
    Eigen::MatrixXd jac(3 * static_cast<Eigen::Index>(vertex_ids.size()), layout.size());
    for (int start = 0; start < layout.size(); start += kJetWidth) {
        const auto pts = evaluate_chunk(*this, flat, start, vertex_ids);
        const int width = std::min(kJetWidth, layout.size() - start);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int k = 0; k < 3; ++k)
                for (int c = 0; c < width; ++c)
                    jac(3 * static_cast<Eigen::Index>(i) + k, start + c) = pts[i](k).v[c];
    }
    return jac;
}

PoseGradient BodyModel::pose_vjp(const PoseParams& p, const Vertices& d_vertices) const {
    check_params(p);
    const int nv = asset_.num_vertices();
    if (d_vertices.rows() != nv) throw InvalidArgument("pose_vjp: gradient must be V x 3");
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(nv));
    for (int v = 0; v < nv; ++v)
        if (d_vertices.row(v).squaredNorm() > 0.0) ids.push_back(v);

    const ParamLayout layout = this->layout();
    const Eigen::VectorXd flat = layout.flatten(p);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.size());
    if (!ids.empty()) {
        for (int start = 0; start < layout.size(); start += kJetWidth) {
            const auto pts = evaluate_chunk(*this, flat, start, ids);
            const int width = std::min(kJetWidth, layout.size() - start);
            for (std::size_t i = 0; i < pts.size(); ++i) {
                const int v = ids[i];
                for (int k = 0; k < 3; ++k) {
                    const double dv = d_vertices(v, k);
                    for (int c = 0; c < width; ++c) g(start + c) += dv * pts[i](k).v[c];
                }
            }
        }
    }
    PoseGradient out;
    out.beta = g.segment(layout.beta_offset(), layout.betas);
    out.theta = g.segment(layout.theta_offset(), layout.thetas);
    out.psi = g.segment(layout.psi_offset(), layout.psis);
    out.translation = g.segment(layout.translation_offset(), 3);
    return out;
}

}  // namespace fsplat
