#pragma once

// Projection of feature Gaussians to screen space and tile-based
// front-to-back alpha compositing, with exact adjoints.

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "featsplat/body_model.hpp"
#include "featsplat/gaussian_field.hpp"
#include "featsplat/image.hpp"

namespace fsplat {

struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Eigen::Isometry3d world_to_camera = Eigen::Isometry3d::Identity();
    int width = 0, height = 0;
    double near = 0.01;

    void validate() const;
    // Pixel coordinates of a world point (no culling).
    Eigen::Vector2d project_point(const Eigen::Vector3d& world) const;
};

// Compositing constants. Defaults are the production values; tests relax
// the gates to keep finite differences away from discontinuities.
struct RasterSettings {
    double alpha_max = 0.99;
    double alpha_min = 1.0 / 255.0;
    double transmittance_min = 1e-4;
    double low_pass = 0.3;       // px^2 added to the cov2d diagonal
    double radius_sigmas = 3.0;  // cull radius and per-pixel Mahalanobis gate
    int tile = 16;
};

struct Splat2D {
    int source = -1;  // index into the EmbeddedGaussians
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
    double depth = 0;
    double opacity = 0;
    double radius = 0;
};

struct SplatSet {
    std::vector<Splat2D> splats;
    RowMatrix features;  // one row per splat

    int size() const { return static_cast<int>(splats.size()); }
    int channels() const { return static_cast<int>(features.cols()); }
};

struct RasterState;

struct FeatureFrame {
    Image phi;    // H x W x C
    Image alpha;  // H x W x 1
    std::shared_ptr<const RasterState> state;  // forward bookkeeping for the backward pass
};

struct SplatGradient {
    RowMatrix mean2d;                     // n x 2
    std::vector<Eigen::Matrix2d> cov2d;   // n, full symmetric-matrix gradient
    Eigen::VectorXd opacity;              // n
    RowMatrix features;                   // n x C

    void zeros(int n, int channels);
};

SplatSet project(const EmbeddedGaussians& g, const Camera& cam, const RasterSettings& rs = {});

// Gradients w.r.t. every field of the EmbeddedGaussians (rotations w.r.t. the
// raw quaternion, which project normalizes).
EmbeddedGaussians project_backward(const EmbeddedGaussians& g, const Camera& cam, const SplatSet& splats,
                                   const SplatGradient& d_splats, const RasterSettings& rs = {});

FeatureFrame rasterize(const SplatSet& splats, const Camera& cam, const RasterSettings& rs = {});

SplatGradient rasterize_backward(const SplatSet& splats, const Camera& cam, const FeatureFrame& frame,
                                 const Image& d_phi, const Image& d_alpha, const RasterSettings& rs = {});

// Forward intermediates of the full render, kept for render_backward.
struct RenderTrace {
    PosedMesh mesh;
    EmbeddedGaussians gaussians;
    SplatSet splats;
};

struct RenderGradient {
    PoseGradient pose;
    Vertices delta;  // gradient on the vertex displacement
    TextureGradient texture;
    TemporalGradient temporal;
};

FeatureFrame render(const BodyModel& model, const PoseParams& p, const Vertices* delta, const Camera& cam,
                    const GaussianTexture& tex, const TemporalCondition* condition, RenderTrace* trace = nullptr,
                    const RasterSettings& rs = {});

RenderGradient render_backward(const BodyModel& model, const PoseParams& p, const Camera& cam,
                               const GaussianTexture& tex, const TemporalCondition* condition,
                               const RenderTrace& trace, const FeatureFrame& frame, const Image& d_phi,
                               const Image& d_alpha, const RasterSettings& rs = {}, bool pose_gradient = true);

}  // namespace fsplat
