#pragma once

// Skinned parametric body: template + shape/expression/pose blendshapes,
// linear blend skinning about regressed joints, and a post-skinning
// learnable vertex displacement.

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "featsplat/error.hpp"
#include "featsplat/rotation.hpp"
#include "featsplat/types.hpp"

namespace fsplat {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using JointPositions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<int, 3>;
using FaceUv = std::array<Eigen::Vector2d, 3>;

struct BodyAsset {
    Vertices template_vertices;              // V x 3, meters
    std::vector<Face> faces;                 // F
    std::vector<FaceUv> uv_corners;          // F, per-corner UV in [0,1]^2
    Eigen::MatrixXd shape_basis;             // 3V x Nbeta, row 3v+k
    Eigen::MatrixXd expression_basis;        // 3V x Npsi
    Eigen::MatrixXd pose_basis;              // 3V x Np, Np = 9(J-1) or 0
    Eigen::MatrixXd joint_regressor;         // J x V
    Eigen::MatrixXd skinning_weights;        // V x J
    std::vector<int> parent;                 // parent[0] = -1, parent[j] < j
    std::vector<std::string> joint_names;    // optional, informational

    int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int num_faces() const { return static_cast<int>(faces.size()); }
    int num_joints() const { return static_cast<int>(parent.size()); }
    int num_betas() const { return static_cast<int>(shape_basis.cols()); }
    int num_expressions() const { return static_cast<int>(expression_basis.cols()); }
    int num_pose_features() const { return static_cast<int>(pose_basis.cols()); }

    // Throws InvalidArgument / InvariantViolation describing the first broken invariant.
    void validate() const;

    // FNV-1a over dims, faces and UV corners.
    std::uint64_t topology_hash() const;
};

struct PoseParams {
    Eigen::VectorXd beta;         // Nbeta
    Eigen::VectorXd theta;        // 3J axis-angle, joint-major
    Eigen::VectorXd psi;          // Npsi
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // global root translation

    static PoseParams zeros(const BodyAsset& asset);
    bool all_finite() const;
};

// Flattened parameter ordering used by Jacobians and the tracker:
// [beta | theta | psi | translation].
struct ParamLayout {
    int betas = 0;
    int thetas = 0;
    int psis = 0;

    explicit ParamLayout(const BodyAsset& a)
        : betas(a.num_betas()), thetas(3 * a.num_joints()), psis(a.num_expressions()) {}

    int beta_offset() const { return 0; }
    int theta_offset() const { return betas; }
    int psi_offset() const { return betas + thetas; }
    int translation_offset() const { return betas + thetas + psis; }
    int size() const { return betas + thetas + psis + 3; }

    Eigen::VectorXd flatten(const PoseParams& p) const;
    PoseParams unflatten(const Eigen::VectorXd& x) const;
};

struct PosedMesh {
    Vertices vertices;                               // V x 3
    std::vector<Eigen::Matrix3d> face_frames;        // columns: tangent, bitangent, normal
    std::vector<std::uint8_t> face_degenerate;       // 1 where the identity fallback was used
    std::vector<Eigen::Matrix3d> vertex_rotations;   // skinning-blended, polar-projected
    int degenerate_faces = 0;
};

struct PoseGradient {
    Eigen::VectorXd beta;
    Eigen::VectorXd theta;
    Eigen::VectorXd psi;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Process-wide count of degenerate faces met while building frames.
std::uint64_t degenerate_face_warnings();
void reset_degenerate_face_warnings();

Vertices rest_shape(const BodyAsset& asset, const PoseParams& p);

JointPositions joints(const BodyAsset& asset, const Vertices& rest_vertices);

struct LbsResult {
    Vertices vertices;
    std::vector<Eigen::Matrix3d> rotations;
};

// Forward kinematics + linear blend skinning. `root` is prepended to the
// root joint transform.
LbsResult lbs(const Vertices& rest_vertices, const JointPositions& joint_positions, const Eigen::VectorXd& theta,
              const Eigen::MatrixXd& weights, std::span<const int> parent,
              const Eigen::Isometry3d& root = Eigen::Isometry3d::Identity());

// Per-face orthonormal frame from posed triangle edges. Sets `degenerate`
// and returns identity for zero-area faces.
template <typename T>
Mat3<T> face_frame(const Vec3<T>& v0, const Vec3<T>& v1, const Vec3<T>& v2, bool* degenerate) {
    using std::sqrt;
    const Vec3<T> e1 = v1 - v0;
    const Vec3<T> e2 = v2 - v0;
    const Vec3<T> n = e1.cross(e2);
    const double e1n = value_of(e1.squaredNorm());
    const double e2n = value_of(e2.squaredNorm());
    const double nn = value_of(n.squaredNorm());
    if (e1n <= 0.0 || nn <= 1e-24 * (e1n + e2n) * (e1n + e2n)) {
        if (degenerate) *degenerate = true;
        return Mat3<T>::Identity();
    }
    if (degenerate) *degenerate = false;
    const Vec3<T> t = e1 / sqrt(e1.squaredNorm());
    const Vec3<T> nh = n / sqrt(n.squaredNorm());
    const Vec3<T> b = nh.cross(t);
    Mat3<T> f;
    f.col(0) = t;
    f.col(1) = b;
    f.col(2) = nh;
    return f;
}

// Validated asset plus cached joint-regressor products. All methods are
// const and thread-safe.
class BodyModel {
  public:
    explicit BodyModel(BodyAsset asset);

    const BodyAsset& asset() const { return asset_; }
    ParamLayout layout() const { return ParamLayout(asset_); }
    std::uint64_t topology_hash() const { return topology_hash_; }

    void check_params(const PoseParams& p) const;

    // rest_shape -> joints(beta) -> lbs -> + delta, then face frames.
    PosedMesh pose(const PoseParams& p, const Vertices* delta = nullptr) const;

    // Posed vertex positions only (no frames), for a subset of vertices.
    std::vector<Eigen::Vector3d> posed_points(const PoseParams& p, std::span<const int> vertex_ids) const;

    // d(posed vertex)/d(flattened params), rows 3*i+k for vertex_ids[i].
    Eigen::MatrixXd vertex_jacobian(const PoseParams& p, std::span<const int> vertex_ids) const;

    // Pulls a gradient on posed vertices back to (beta, theta, psi, translation).
    // The displacement gradient equals d_vertices itself.
    PoseGradient pose_vjp(const PoseParams& p, const Vertices& d_vertices) const;

    // Generic evaluator used by the double and jet paths.
    template <typename T>
    void evaluate(const T* beta, const T* theta, const T* psi, const T* translation, std::span<const int> vertex_ids,
                  Vec3<T>* out) const;

    JointPositions joint_positions(const Eigen::VectorXd& beta) const;

  private:
    BodyAsset asset_;
    std::uint64_t topology_hash_ = 0;
    Eigen::MatrixXd joint_template_;     // J x 3
    Eigen::MatrixXd joint_shape_dirs_;   // 3J x Nbeta
    bool has_pose_basis_ = false;
};

template <typename T>
void BodyModel::evaluate(const T* beta, const T* theta, const T* psi, const T* translation,
                         std::span<const int> vertex_ids, Vec3<T>* out) const {
    const int nj = asset_.num_joints();
    const int nb = asset_.num_betas();
    const int ne = asset_.num_expressions();

    std::vector<Vec3<T>> jpos(static_cast<std::size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        for (int k = 0; k < 3; ++k) {
            T acc = T(joint_template_(j, k));
            for (int b = 0; b < nb; ++b) acc += joint_shape_dirs_(3 * j + k, b) * beta[b];
            jpos[static_cast<std::size_t>(j)](k) = acc;
        }
    }

    std::vector<Mat3<T>> local(static_cast<std::size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        const Vec3<T> aa(theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]);
        local[static_cast<std::size_t>(j)] = axis_angle_to_matrix<T>(aa);
    }

    std::vector<Mat3<T>> grot(static_cast<std::size_t>(nj));
    std::vector<Vec3<T>> gtrans(static_cast<std::size_t>(nj));
    const Vec3<T> root_t(translation[0], translation[1], translation[2]);
    for (int j = 0; j < nj; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const int p = asset_.parent[ju];
        if (p < 0) {
            grot[ju] = local[ju];
            gtrans[ju] = jpos[ju] + root_t;
        } else {
            const auto pu = static_cast<std::size_t>(p);
            grot[ju] = grot[pu] * local[ju];
            gtrans[ju] = grot[pu] * (jpos[ju] - jpos[pu]) + gtrans[pu];
        }
    }

    // Pose-corrective feature: (R_j - I) of non-root joints, row-major.
    std::vector<T> pose_feature;
    if (has_pose_basis_) {
        pose_feature.reserve(static_cast<std::size_t>(9 * (nj - 1)));
        for (int j = 1; j < nj; ++j) {
            const Mat3<T>& r = local[static_cast<std::size_t>(j)];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) pose_feature.push_back(r(a, b) - T(a == b ? 1.0 : 0.0));
        }
    }

    for (std::size_t i = 0; i < vertex_ids.size(); ++i) {
        const int v = vertex_ids[i];
        Vec3<T> x;
        for (int k = 0; k < 3; ++k) {
            const int row = 3 * v + k;
            T acc = T(asset_.template_vertices(v, k));
            for (int b = 0; b < nb; ++b) acc += asset_.shape_basis(row, b) * beta[b];
            for (int e = 0; e < ne; ++e) acc += asset_.expression_basis(row, e) * psi[e];
            if (has_pose_basis_) {
                for (std::size_t f = 0; f < pose_feature.size(); ++f)
                    acc += asset_.pose_basis(row, static_cast<Eigen::Index>(f)) * pose_feature[f];
            }
            x(k) = acc;
        }
        Vec3<T> y = Vec3<T>::Zero();
        for (int j = 0; j < nj; ++j) {
            const double w = asset_.skinning_weights(v, j);
            if (w == 0.0) continue;
            const auto ju = static_cast<std::size_t>(j);
            y += w * (grot[ju] * (x - jpos[ju]) + gtrans[ju]);
        }
        out[i] = y;
    }
}

}  // namespace fsplat
