#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "featsplat/error.hpp"
#include "featsplat/neural_rerender.hpp"
#include "oracles.hpp"

using namespace fsplat;

namespace {

double sum_sq(const Image& img) {
    double s = 0;
    for (double v : img.data) s += v * v;
    return s;
}

void randomize(ConvLayer& l, std::mt19937_64& rng, double sd = 0.3) {
    std::normal_distribution<double> n(0.0, sd);
    for (double& w : l.kernel) w = n(rng);
    for (double& b : l.bias) b = 0.2 * n(rng);
}

}  // namespace

TEST(Conv, MatchesSlidingWindowOracle) {
    std::mt19937_64 rng(4);
    for (bool relu : {false, true}) {
        ConvLayer l(5, 7, relu);
        randomize(l, rng);
        const Image in = oracle::random_image(rng, 13, 9, 5, -1, 1);
        const Image out = conv_forward(l, in);
        const Image ref = oracle::conv3x3(l, in);
        double worst = 0;
        for (std::size_t i = 0; i < out.data.size(); ++i) worst = std::max(worst, std::abs(out.data[i] - ref.data[i]));
        EXPECT_LT(worst, 1e-12);
        EXPECT_EQ(out.height, 13);
        EXPECT_EQ(out.width, 9);
    }
}

TEST(Conv, WrongChannelCountThrows) {
    ConvLayer l(3, 2, true);
    EXPECT_THROW(conv_forward(l, Image(4, 4, 2)), InvalidArgument);
}

TEST(EncodeBackground, ZeroWeightsPassInputThrough) {
    std::mt19937_64 rng(1);
    RerenderStack s = RerenderStack::create(32, 1);
    for (ConvLayer* l : {&s.enc1, &s.enc2}) *l = l->zeros_like();
    const Image bg = oracle::random_image(rng, 10, 12, 3);
    const Image phi = encode_background(s, bg);
    ASSERT_EQ(phi.channels, kFusedChannels);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) {
            for (int c = 0; c < kEncoderChannels; ++c) EXPECT_EQ(phi.at(y, x, c), 0.0);
            for (int c = 0; c < 3; ++c) EXPECT_EQ(phi.at(y, x, kEncoderChannels + c), bg.at(y, x, c));
        }
}

TEST(EncodeBackground, ConstantInputGivesConstantInterior) {
    const RerenderStack s = RerenderStack::create(32, 8);
    const Image bg(16, 16, 3, 0.4);
    const Image phi = encode_background(s, bg);
    // Two 3x3 layers: pixels at least 2 away from the border see no padding.
    for (int y = 2; y < 14; ++y)
        for (int x = 2; x < 14; ++x)
            for (int c = 0; c < kFusedChannels; ++c) EXPECT_NEAR(phi.at(y, x, c), phi.at(2, 2, c), 1e-14);
}

TEST(EncodeBackground, MatchesConvOracle) {
    std::mt19937_64 rng(2);
    const RerenderStack s = RerenderStack::create(32, 3);
    const Image bg = oracle::random_image(rng, 11, 14, 3);
    const Image phi = encode_background(s, bg);
    const Image ref5 = oracle::conv3x3(s.enc2, oracle::conv3x3(s.enc1, bg));
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 14; ++x)
            for (int c = 0; c < kEncoderChannels; ++c) EXPECT_NEAR(phi.at(y, x, c), ref5.at(y, x, c), 1e-6);
}

TEST(EncodeBackground, WrongChannelsThrow) {
    const RerenderStack s = RerenderStack::create(32, 3);
    EXPECT_THROW(encode_background(s, Image(4, 4, 4)), InvalidArgument);
}

TEST(Fuse, FullMaskGivesProjectedForeground) {
    std::mt19937_64 rng(3);
    const RerenderStack s = RerenderStack::create(32, 3);
    const Image fore = oracle::random_image(rng, 6, 7, 32, -1, 1);
    const Image bg = oracle::random_image(rng, 6, 7, 8);
    const Image one(6, 7, 1, 1.0);
    const Image fused = fuse(s, fore, one, one, bg);
    const Image proj = project_features(s, fore);
    EXPECT_EQ(fused.data, proj.data);
    for (int c = 0; c < 8; ++c) {
        double expected = 0;
        for (int k = 0; k < 32; ++k) expected += s.fg_project(c, k) * fore.at(3, 4, k);
        EXPECT_NEAR(proj.at(3, 4, c), expected, 1e-14);
    }
}

TEST(Fuse, EmptyMaskGivesBackground) {
    std::mt19937_64 rng(3);
    const RerenderStack s = RerenderStack::create(32, 3);
    const Image fore = oracle::random_image(rng, 6, 7, 32, -1, 1);
    const Image bg = oracle::random_image(rng, 6, 7, 8);
    const Image alpha = oracle::random_image(rng, 6, 7, 1);
    EXPECT_EQ(fuse(s, fore, alpha, Image(6, 7, 1, 0.0), bg).data, bg.data);
    EXPECT_EQ(fuse(s, fore, Image(6, 7, 1, 0.0), Image(6, 7, 1, 1.0), bg).data, bg.data);
}

TEST(Fuse, SoftMaskMatchesElementwiseLerp) {
    std::mt19937_64 rng(5);
    const RerenderStack s = RerenderStack::create(32, 3);
    const Image fore = oracle::random_image(rng, 9, 5, 32, -1, 1);
    const Image bg = oracle::random_image(rng, 9, 5, 8);
    const Image alpha = oracle::random_image(rng, 9, 5, 1);
    const Image head = oracle::random_image(rng, 9, 5, 1);
    const Image fused = fuse(s, fore, alpha, head, bg);
    const Image proj = project_features(s, fore);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 5; ++x) {
            const double m = alpha.at(y, x) * head.at(y, x);
            EXPECT_EQ(fusion_mask(alpha, head).at(y, x), m);
            for (int c = 0; c < 8; ++c)
                EXPECT_EQ(fused.at(y, x, c), m * proj.at(y, x, c) + (1.0 - m) * bg.at(y, x, c));
        }
}

TEST(Fuse, ShapeMismatchThrows) {
    const RerenderStack s = RerenderStack::create(32, 3);
    EXPECT_THROW(fuse(s, Image(4, 4, 16), Image(4, 4, 1), Image(4, 4, 1), Image(4, 4, 8)), InvalidArgument);
    EXPECT_THROW(fuse(s, Image(4, 4, 32), Image(4, 5, 1), Image(4, 4, 1), Image(4, 4, 8)), InvalidArgument);
}

TEST(Decode, ZeroWeightsGiveZeroImage) {
    std::mt19937_64 rng(6);
    RerenderStack s = RerenderStack::create(32, 3);
    for (ConvLayer* l : {&s.dec1, &s.dec2, &s.dec3}) *l = l->zeros_like();
    const Image out = decode(s, oracle::random_image(rng, 8, 8, 8));
    ASSERT_EQ(out.channels, 3);
    for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Decode, NegativeBiasIsGatedByRelu) {
    std::mt19937_64 rng(6);
    RerenderStack s = RerenderStack::create(32, 3);
    for (ConvLayer* l : {&s.dec1, &s.dec2, &s.dec3}) *l = l->zeros_like();
    for (int c = 0; c < 8; ++c) {
        s.dec1.w(c, c, 1, 1) = 1.0;
        s.dec2.w(c, c, 1, 1) = 1.0;
        s.dec2.bias[static_cast<std::size_t>(c)] = -2.0;
    }
    for (int c = 0; c < 3; ++c) s.dec3.w(c, c, 1, 1) = 1.0;
    const Image in = oracle::random_image(rng, 8, 8, 8);  // values below 1, so the bias wins
    for (double v : decode(s, in).data) EXPECT_EQ(v, 0.0);
    for (int c = 0; c < 8; ++c) s.dec2.bias[static_cast<std::size_t>(c)] = 0.0;
    const Image out = decode(s, in);
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(4, 4, c), in.at(4, 4, c));
}

TEST(Decode, ImpulseStaysWithinReceptiveField) {
    std::mt19937_64 rng(7);
    RerenderStack s = RerenderStack::create(32, 9);
    for (ConvLayer* l : {&s.dec1, &s.dec2, &s.dec3}) {
        randomize(*l, rng);
        std::fill(l->bias.begin(), l->bias.end(), 0.5);  // keep ReLUs open
    }
    const Image in = oracle::random_image(rng, 21, 21, 8);
    Image poked = in;
    for (int c = 0; c < 8; ++c) poked.at(10, 10, c) += 3.0;
    const Image a = decode(s, in), b = decode(s, poked);
    bool changed_inside = false;
    for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 21; ++x) {
            const int cheb = std::max(std::abs(y - 10), std::abs(x - 10));
            for (int c = 0; c < 3; ++c) {
                const bool diff = a.at(y, x, c) != b.at(y, x, c);
                if (cheb > 3) {
                    EXPECT_FALSE(diff) << y << "," << x;
                }
                changed_inside |= diff;
            }
        }
    EXPECT_TRUE(changed_inside);
}

TEST(Decode, L2GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    RerenderStack s = RerenderStack::create(32, 10);
    for (ConvLayer* l : {&s.dec1, &s.dec2, &s.dec3}) std::fill(l->bias.begin(), l->bias.end(), 0.3);
    const Image in = oracle::random_image(rng, 7, 6, 8);
    DecodeTrace tr;
    const Image out = decode(s, in, &tr);
    Image d_out = out;
    for (double& v : d_out.data) v *= 2.0;
    RerenderStack grad = s.zeros_like();
    decode_backward(s, tr, d_out, grad);

    double worst = 0;
    const double h = 1e-6;
    ConvLayer* layers[] = {&s.dec1, &s.dec2, &s.dec3};
    ConvLayer* glayers[] = {&grad.dec1, &grad.dec2, &grad.dec3};
    for (int l = 0; l < 3; ++l) {
        for (std::size_t k = 0; k < layers[l]->kernel.size(); k += 7) {
            double& w = layers[l]->kernel[k];
            const double w0 = w;
            w = w0 + h;
            const double fp = sum_sq(decode(s, in));
            w = w0 - h;
            const double fm = sum_sq(decode(s, in));
            w = w0;
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = glayers[l]->kernel[k];
            const double scale = std::max(std::abs(numeric), std::abs(analytic));
            if (scale > 1e-7) worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Rerender, EmptyMaskDependsOnlyOnBackgroundPath) {
    std::mt19937_64 rng(12);
    const RerenderStack s = RerenderStack::create(32, 3);
    RerenderStack t = s;
    t.fg_project.setRandom();
    const Image bg = oracle::random_image(rng, 8, 8, 3);
    const Image zero(8, 8, 1, 0.0);
    const Image phi_bg = encode_background(s, bg);
    const Image a = decode(s, fuse(s, oracle::random_image(rng, 8, 8, 32), zero, zero, phi_bg));
    const Image b = decode(t, fuse(t, oracle::random_image(rng, 8, 8, 32), zero, zero, phi_bg));
    EXPECT_EQ(a.data, b.data);
}

TEST(Rerender, PassthroughStackReproducesCompositeInputs) {
    std::mt19937_64 rng(13);
    const RerenderStack s = make_passthrough_stack(32);
    const Image fore = oracle::random_image(rng, 6, 6, 32);
    const Image bg = oracle::random_image(rng, 6, 6, 3);
    const Image mask = oracle::random_image(rng, 6, 6, 1);
    const Image one(6, 6, 1, 1.0);
    const Image out = decode(s, fuse(s, fore, mask, one, encode_background(s, bg)));
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) {
                const double m = mask.at(y, x);
                EXPECT_NEAR(out.at(y, x, c), m * fore.at(y, x, c) + (1 - m) * bg.at(y, x, c), 1e-14);
            }
}

TEST(Rerender, CreateIsDeterministicAndKaimingScaled) {
    const RerenderStack a = RerenderStack::create(32, 77), b = RerenderStack::create(32, 77);
    EXPECT_EQ(a.dec2.kernel, b.dec2.kernel);
    EXPECT_EQ(a.fg_project, b.fg_project);
    double ss = 0;
    for (double w : a.dec2.kernel) ss += w * w;
    const double var = ss / static_cast<double>(a.dec2.kernel.size());
    EXPECT_NEAR(var, 2.0 / 72.0, 0.01);
    for (double bias : a.dec2.bias) EXPECT_EQ(bias, 0.0);
}
