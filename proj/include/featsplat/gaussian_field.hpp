#pragma once

// Neural Gaussian texture living in the UV atlas of the body mesh, and the
// embedding that lifts it onto a posed mesh.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "featsplat/body_model.hpp"
#include "featsplat/types.hpp"

namespace fsplat {

inline constexpr int kSplatChannels = 32;
inline constexpr int kTemporalWidth = 8;

struct TexelBinding {
    int texel = 0;  // y * U + x
    int face = 0;
    Eigen::Vector3d bary = Eigen::Vector3d::Zero();
};

// Which texels are covered by the atlas, and by which face. Immutable once built.
struct UvBinding {
    int resolution = 0;
    std::uint64_t topology_hash = 0;
    std::vector<std::uint8_t> validity;  // U * U
    std::vector<TexelBinding> texels;    // active texels in raster order

    int active() const { return static_cast<int>(texels.size()); }
};

// Pairs of faces whose UV triangles overlap with nonzero area.
std::vector<std::pair<int, int>> find_uv_overlaps(const BodyAsset& asset);

// Texel (x, y) is active iff its center ((x+.5)/U, (y+.5)/U) lies in a UV
// triangle. Throws InvalidArgument listing overlapping face pairs.
UvBinding build_binding(const BodyAsset& asset, int resolution);

struct GaussianTexture {
    std::shared_ptr<const UvBinding> binding;
    int channels = kSplatChannels;
    RowMatrix features;             // N x C
    Eigen::VectorXd opacity_logit;  // N
    RowMatrix log_scale;            // N x 3
    RowMatrix rotation;             // N x 4, unit quaternions (w, x, y, z)

    int size() const { return static_cast<int>(opacity_logit.size()); }
    int resolution() const { return binding ? binding->resolution : 0; }
    void normalize_rotations();
};

// Per-frame learnable codes broadcast to every Gaussian through a linear mixer.
struct TemporalFeatures {
    int width = kTemporalWidth;
    RowMatrix codes;              // T x width
    RowMatrix mixer;              // C x width
    Eigen::VectorXd mixer_bias;   // C

    int frames() const { return static_cast<int>(codes.rows()); }

    // Codes start at zero, the mixer at small seeded normals, the bias at zero.
    static TemporalFeatures create(int frames, int channels, int width, std::uint64_t seed);
};

struct TemporalCondition {
    const TemporalFeatures* features = nullptr;
    int frame = 0;  // 0-based; inference uses 0 (the first training frame)
};

struct EmbeddedGaussians {
    RowMatrix positions;       // N x 3
    RowMatrix rotations;       // N x 4
    RowMatrix scales;          // N x 3
    Eigen::VectorXd opacities; // N
    RowMatrix features;        // N x C

    int size() const { return static_cast<int>(positions.rows()); }
    int channels() const { return static_cast<int>(features.cols()); }
    void set_zero_like(const EmbeddedGaussians& other);
};

GaussianTexture init_texture(const BodyAsset& asset, std::shared_ptr<const UvBinding> binding, std::uint64_t seed,
                             int channels = kSplatChannels);
GaussianTexture init_texture(const BodyAsset& asset, int resolution, std::uint64_t seed,
                             int channels = kSplatChannels);

EmbeddedGaussians embed(const BodyAsset& asset, const PosedMesh& mesh, const GaussianTexture& tex,
                        const TemporalCondition* condition = nullptr);

struct TextureGradient {
    RowMatrix features;
    Eigen::VectorXd opacity_logit;
    RowMatrix log_scale;
    RowMatrix rotation;

    void zeros_like(const GaussianTexture& tex);
};

struct TemporalGradient {
    Eigen::VectorXd code;
    RowMatrix mixer;
    Eigen::VectorXd mixer_bias;

    void zeros_like(const TemporalFeatures& tf);
};

struct EmbedGradient {
    TextureGradient texture;
    Vertices vertices;
    TemporalGradient temporal;  // filled only when a condition is given
};

// Adjoint of embed. Gradients are accumulated into `out`, which must be
// sized (see zeros_like) beforehand.
void embed_backward(const BodyAsset& asset, const PosedMesh& mesh, const GaussianTexture& tex,
                    const TemporalCondition* condition, const EmbeddedGaussians& d_out, EmbedGradient& out);

}  // namespace fsplat
