#pragma once

// Training losses. Each returns its value and, on request, the gradient
// with respect to its first (predicted) argument.

#include <array>
#include <cstdint>
#include <vector>

#include "featsplat/image.hpp"
#include "featsplat/neural_rerender.hpp"

namespace fsplat {

struct LossWeights {
    double recon = 1.0;
    double mask = 1.0;
    double perceptual = 1.0;
    double background = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double recon = 0, mask = 0, perceptual = 0, background = 0, total = 0;
};

// Mean absolute difference over all elements.
double l_recon(const Image& out, const Image& gen, Image* d_out = nullptr, double scale = 1.0);
double l_mask(const Image& a_out, const Image& a_gen, Image* d_a_out = nullptr, double scale = 1.0);

// Frozen random-convolution pyramid standing in for a pretrained perceptual network.
class PerceptualPyramid {
  public:
    static constexpr int kLevels = 3;
    static constexpr int kFeatures = 8;
    static constexpr double kLeak = 0.2;

    explicit PerceptualPyramid(std::uint64_t seed = 0x5eedf00dULL);

    // Mean over levels of the mean absolute feature difference at that level.
    double loss(const Image& out, const Image& gen, Image* d_out = nullptr, double scale = 1.0) const;
    double level_loss(const Image& out, const Image& gen, int level) const;

    // Leaky-ReLU feature map of an image at native resolution.
    Image features(const Image& img) const;
    const ConvLayer& layer() const { return conv_; }

  private:
    ConvLayer conv_;
};

// Mean over all elements of |(1 - M) * (out - tgt)|, normalized by the full pixel count.
double l_background(const Image& out, const Image& tgt, const Image& m_fore, Image* d_out = nullptr,
                    Image* d_mask = nullptr, double scale = 1.0);

// 2x2 average pooling (odd trailing rows/columns dropped).
Image avg_pool2(const Image& img);
Image avg_pool2_backward(const Image& d_pooled, int height, int width);

struct LossInputs {
    const Image* out = nullptr;     // I_out
    const Image* a_out = nullptr;   // rendered alpha
    const Image* m_fore = nullptr;  // fusion mask
    const Image* gen = nullptr;     // I_gen
    const Image* a_gen = nullptr;   // A_gen
    const Image* tgt = nullptr;     // I_tgt
};

struct LossGradients {
    Image out;
    Image a_out;
    Image m_fore;
};

LossBreakdown l_total(const LossInputs& in, const LossWeights& w, const PerceptualPyramid& perceptual,
                      LossGradients* grads = nullptr);

}  // namespace fsplat
