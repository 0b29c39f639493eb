#pragma once

// Synthetic oracle: a known textured portrait rendered along a scripted
// track, with controllable pose, expression and color jitter.

#include <cstdint>
#include <vector>

#include "featsplat/dataset.hpp"
#include "featsplat/gaussian_field.hpp"
#include "featsplat/neural_rerender.hpp"

namespace fsplat {

struct JitterSpec {
    double pose_sigma = 0.05;  // radians, every joint rotation component
    double expr_sigma = 0.05;
    double tint_sigma = 0.05;  // per-frame multiplicative RGB gain
    std::uint64_t seed = 1;

    void validate() const;
    static JitterSpec none() { return {0.0, 0.0, 0.0, 1}; }
};

struct SceneOptions {
    int frames = 64;
    int image_size = 128;
    int texture_resolution = 128;
    int mask_dilation = 4;  // px added around the clean silhouette for the head mask
    std::uint64_t seed = 7;
};

struct OracleScene {
    GaussianTexture texture;  // RGB in channels 0..2
    RerenderStack stack;      // identity compositing
    Track track;              // scripted ground-truth motion
    std::vector<Camera> cameras;
    std::vector<Image> backgrounds;
    std::vector<int> landmark_vertices;
    int mask_dilation = 4;
};

OracleScene make_oracle_scene(const BodyModel& model, const SceneOptions& options = {});

struct SynthOutput {
    Dataset dataset;       // generated frames, masks, landmarks and the true track
    Track jittered_track;  // parameters the generated frames were actually rendered with
    std::vector<Image> clean_images;  // composite at the true pose without tint
    std::vector<Eigen::Vector3d> tints;
};

SynthOutput synth_sequence(const BodyModel& model, const OracleScene& scene, const JitterSpec& jitter);

// Binary mask of pixels within `radius` (Chebyshev) of a pixel with value > threshold.
Image dilate_mask(const Image& alpha, double threshold, int radius);

// 10 log10(1 / MSE); identical images give kPsnrIdentical.
inline constexpr double kPsnrIdentical = 99.0;
double psnr(const Image& a, const Image& b);

// Mean Euclidean distance between two landmark sets over all frames.
double mean_landmark_displacement(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b);

}  // namespace fsplat
