#pragma once

// In-memory training data: per-frame images, masks, cameras, landmarks and tracks.

#include <string>
#include <vector>

#include "featsplat/body_model.hpp"
#include "featsplat/image.hpp"
#include "featsplat/splat_renderer.hpp"

namespace fsplat {

// Per-frame body parameters; beta is shared by every frame.
struct Track {
    std::vector<PoseParams> frames;

    int size() const { return static_cast<int>(frames.size()); }
    void validate(const BodyAsset& asset) const;
};

struct LandmarkSet {
    std::vector<int> vertices;                 // mesh vertex per landmark
    std::vector<Eigen::MatrixXd> observations; // per frame, L x 2 pixels

    int size() const { return static_cast<int>(vertices.size()); }
    int frames() const { return static_cast<int>(observations.size()); }
    void validate(int num_vertices) const;
};

struct FrameData {
    Image image;       // generated frame, H x W x 3
    Image alpha;       // its segmentation alpha, H x W x 1
    Image target;      // original target frame, H x W x 3
    Image background;  // target with the head removed, H x W x 3
    Image head_mask;   // binary, H x W x 1
};

struct Dataset {
    std::vector<Camera> cameras;
    std::vector<FrameData> frames;
    LandmarkSet landmarks;
    Track track;  // parameters tracked on the original target video

    int size() const { return static_cast<int>(frames.size()); }
    void validate(const BodyAsset& asset) const;
};

}  // namespace fsplat
