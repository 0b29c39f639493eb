#pragma once

// Landmark retracking, gradient-based training of the portrait model, and inference.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "featsplat/dataset.hpp"
#include "featsplat/gaussian_field.hpp"
#include "featsplat/neural_rerender.hpp"
#include "featsplat/objectives.hpp"
#include "featsplat/splat_renderer.hpp"

namespace fsplat {

// ---- retracking ----

struct RetrackOptions {
    int max_iterations = 50;
    double initial_damping = 1e-2;
    double step_tolerance = 1e-6;
    bool optimize_beta = true;
};

struct RetrackReport {
    bool converged = false;
    int iterations = 0;
    double initial_cost = 0;  // 0.5 * sum of squared pixel residuals
    double final_cost = 0;
    double final_damping = 0;
    std::vector<double> frame_rms;  // final per-frame RMS reprojection error, px
};

Eigen::MatrixXd project_landmarks(const BodyModel& model, const PoseParams& p, const Camera& cam,
                                  const std::vector<int>& vertices);

// Joint Levenberg-Marquardt over (shared beta, per-frame theta/psi/translation).
Track retrack(const BodyModel& model, const LandmarkSet& landmarks, const std::vector<Camera>& cameras,
              const Track& init, const RetrackOptions& options = {}, RetrackReport* report = nullptr);

// ---- optimizer ----

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    void update(double* param, const double* grad, std::size_t n, double lr, AdamState& state) const;
};

// ---- trainable model ----

struct PortraitModel {
    GaussianTexture texture;
    TemporalFeatures temporal;  // zero frames when the temporal condition is off
    Vertices delta;             // learnable post-skinning displacement
    RerenderStack stack;

    bool tcf() const { return temporal.frames() > 0; }
    static PortraitModel create(const BodyAsset& asset, int texture_resolution, int frames, bool tcf,
                                std::uint64_t seed);
};

struct LearningRates {
    double features = 1e-2;
    double geometry = 5e-3;
    double conv = 1e-3;
    double delta = 1e-4;
    double temporal = 1e-2;
};

struct TrainConfig {
    int iterations = 2000;
    std::uint64_t seed = 0;
    bool tcf = true;
    bool deterministic = true;  // false: frame order also draws from std::random_device
    int texture_resolution = 128;
    LossWeights weights;
    LearningRates lr;
    double delta_regularizer = 1e-3;
    std::vector<int> train_frames;  // empty: every frame
    RasterSettings raster;
};

struct LossRecord {
    int iteration = 0;
    int frame = 0;
    LossBreakdown loss;
};

struct TrainResult {
    std::vector<LossRecord> curve;
};

// Per-frame forward pass with everything the backward pass needs.
struct FramePass {
    RenderTrace render;
    FeatureFrame feature_frame;
    EncodeTrace encode;
    Image phi_bg;
    Image fused;
    DecodeTrace decode;
    Image m_fore;
    Image output;
};

FramePass forward_frame(const BodyModel& model, const PortraitModel& pm, const PoseParams& pose, const Camera& cam,
                        const Image& background, const Image& head_mask, int temporal_index,
                        const RasterSettings& rs = {});

struct ModelGradient {
    TextureGradient texture;
    TemporalGradient temporal;  // for the frame's code only
    Vertices delta;
    RerenderStack stack;
};

// Loss gradients on (I_out, A_out, M_fore) pulled back to every trainable parameter.
ModelGradient backward_frame(const BodyModel& model, const PortraitModel& pm, const PoseParams& pose,
                             const Camera& cam, const Image& head_mask, int temporal_index, const FramePass& pass,
                             const LossGradients& upstream, const RasterSettings& rs = {});

using CheckpointHook = std::function<void(int iteration, const PortraitModel&)>;

// Trains `model` in place on `data` using `track` for the body parameters.
TrainResult train(const BodyModel& body, const Dataset& data, const Track& track, PortraitModel& model,
                  const TrainConfig& config, const CheckpointHook& hook = {}, int checkpoint_every = 0);

// Renders with the first temporal code (when present) for every frame.
Image infer_frame(const BodyModel& body, const PortraitModel& model, const PoseParams& pose, const Camera& cam,
                  const Image& background, const Image& head_mask, const RasterSettings& rs = {});

std::vector<Image> infer(const BodyModel& body, const PortraitModel& model, const Track& track,
                         const std::vector<Camera>& cameras, const std::vector<Image>& backgrounds,
                         const std::vector<Image>& head_masks, const RasterSettings& rs = {});

// Clamp to [0,1] for file output.
Image clamp_unit(const Image& img);

}  // namespace fsplat
