#pragma once

// Background encoder, feature-domain fusion and the convolutional RGB decoder.

#include <cstdint>
#include <vector>

#include "featsplat/image.hpp"
#include "featsplat/types.hpp"

namespace fsplat {

inline constexpr int kFusedChannels = 8;
inline constexpr int kEncoderChannels = 5;

// 3x3 convolution, zero padding 1, stride 1, optional ReLU.
struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> kernel;  // out x in x 3 x 3
    std::vector<double> bias;    // out
    bool relu = true;

    ConvLayer() = default;
    ConvLayer(int in, int out, bool relu_on)
        : in_channels(in), out_channels(out),
          kernel(static_cast<std::size_t>(in) * static_cast<std::size_t>(out) * 9, 0.0),
          bias(static_cast<std::size_t>(out), 0.0), relu(relu_on) {}

    double& w(int o, int i, int ky, int kx) { return kernel[index(o, i, ky, kx)]; }
    double w(int o, int i, int ky, int kx) const { return kernel[index(o, i, ky, kx)]; }
    std::size_t index(int o, int i, int ky, int kx) const {
        return ((static_cast<std::size_t>(o) * static_cast<std::size_t>(in_channels) + static_cast<std::size_t>(i)) * 3 +
                static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
    }

    // Kaiming-normal weights (fan-in = 9 * in), zero bias.
    void init_kaiming(std::uint64_t seed);
    ConvLayer zeros_like() const { return ConvLayer(in_channels, out_channels, relu); }
};

Image conv_forward(const ConvLayer& layer, const Image& input);

// Given the layer input and output and dL/d(output), accumulates weight
// gradients into `grad` and returns dL/d(input).
Image conv_backward(const ConvLayer& layer, const Image& input, const Image& output, const Image& d_output,
                    ConvLayer& grad);

struct RerenderStack {
    RowMatrix fg_project;  // 8 x C, 1x1 map from splat features into the fused domain
    ConvLayer enc1, enc2;          // 3 -> 8 -> 5
    ConvLayer dec1, dec2, dec3;    // 8 -> 8 -> 8 -> 3

    int feature_channels() const { return static_cast<int>(fg_project.cols()); }

    static RerenderStack create(int feature_channels, std::uint64_t seed);
    RerenderStack zeros_like() const;

    // Visits every parameter array in a fixed order: name, pointer, length.
    template <typename F>
    void for_each_param(F&& f) {
        f("fg_project", fg_project.data(), static_cast<std::size_t>(fg_project.size()));
        ConvLayer* layers[] = {&enc1, &enc2, &dec1, &dec2, &dec3};
        const char* names[] = {"enc1", "enc2", "dec1", "dec2", "dec3"};
        for (int l = 0; l < 5; ++l) {
            f(names[l], layers[l]->kernel.data(), layers[l]->kernel.size());
            f(names[l], layers[l]->bias.data(), layers[l]->bias.size());
        }
    }
    void add_scaled(const RerenderStack& other, double scale);
    void validate() const;
};

struct EncodeTrace {
    Image input, hidden, out5;
};

// Conv stack (5 channels) concatenated with the 3-channel input image.
Image encode_background(const RerenderStack& s, const Image& background, EncodeTrace* trace = nullptr);
void encode_background_backward(const RerenderStack& s, const EncodeTrace& trace, const Image& d_phi_bg,
                                RerenderStack& grad);

// M_fore = A_out * M_head, element-wise.
Image fusion_mask(const Image& a_out, const Image& m_head);

Image project_features(const RerenderStack& s, const Image& phi_fore);

// phi_fused = M * fg_project(phi_fore) + (1 - M) * phi_bg with M the fusion mask.
Image fuse(const RerenderStack& s, const Image& phi_fore, const Image& a_out, const Image& m_head,
           const Image& phi_bg);

struct FuseGradient {
    Image phi_fore;
    Image a_out;
    Image phi_bg;
};

// d_mask is an extra upstream gradient on M_fore (from the background loss), may be empty.
FuseGradient fuse_backward(const RerenderStack& s, const Image& phi_fore, const Image& a_out, const Image& m_head,
                           const Image& phi_bg, const Image& d_fused, const Image& d_mask, RerenderStack& grad);

struct DecodeTrace {
    Image input, h1, h2, out;
};

Image decode(const RerenderStack& s, const Image& fused, DecodeTrace* trace = nullptr);
Image decode_backward(const RerenderStack& s, const DecodeTrace& trace, const Image& d_out, RerenderStack& grad);

// Identity-composite weights: features 0..2 pass straight through as RGB and the
// background image is reproduced unchanged.
RerenderStack make_passthrough_stack(int feature_channels);

}  // namespace fsplat
