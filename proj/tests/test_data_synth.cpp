#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "featsplat/asset.hpp"
#include "featsplat/data_synth.hpp"
#include "featsplat/error.hpp"
#include "featsplat/fitting.hpp"
#include "oracles.hpp"

using namespace fsplat;

namespace {

const BodyModel& head() {
    static const BodyModel m(make_portrait_asset({20, 16}));
    return m;
}

const OracleScene& scene() {
    static const OracleScene s = [] {
        SceneOptions o;
        o.frames = 5;
        o.image_size = 40;
        o.texture_resolution = 32;
        return make_oracle_scene(head(), o);
    }();
    return s;
}

Eigen::Vector3d channel_means(const Image& img) {
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) m(c) += img.at(y, x, c);
    return m / (img.height * img.width);
}

}  // namespace

TEST(Synth, ZeroJitterReproducesCleanRenders) {
    const SynthOutput out = synth_sequence(head(), scene(), JitterSpec::none());
    ASSERT_EQ(out.dataset.size(), 5);
    for (int t = 0; t < 5; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        EXPECT_EQ(out.dataset.frames[tu].image.data, out.clean_images[tu].data);
        const ParamLayout lay = head().layout();
        EXPECT_EQ(lay.flatten(out.jittered_track.frames[tu]), lay.flatten(out.dataset.track.frames[tu]));
    }
}

TEST(Synth, CleanFramesAreExactlyFittableByTheTrueScene) {
    const SynthOutput out = synth_sequence(head(), scene(), JitterSpec::none());
    PortraitModel pm;
    pm.texture = scene().texture;
    pm.stack = scene().stack;
    pm.delta = Vertices::Zero(head().asset().num_vertices(), 3);
    for (int t = 0; t < out.dataset.size(); ++t) {
        const auto tu = static_cast<std::size_t>(t);
        const FrameData& fd = out.dataset.frames[tu];
        const Image img = infer_frame(head(), pm, out.dataset.track.frames[tu], out.dataset.cameras[tu], fd.background,
                                      fd.head_mask);
        EXPECT_LT(l_recon(img, fd.image), 1e-12);
    }
}

TEST(Synth, TintChangesColourButNotLandmarks) {
    JitterSpec j = JitterSpec::none();
    j.tint_sigma = 0.05;
    const SynthOutput tinted = synth_sequence(head(), scene(), j);
    const SynthOutput clean = synth_sequence(head(), scene(), JitterSpec::none());
    for (int t = 0; t < 5; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        EXPECT_EQ(tinted.dataset.landmarks.observations[tu], clean.dataset.landmarks.observations[tu]);
        EXPECT_GT((channel_means(tinted.dataset.frames[tu].image) - channel_means(clean.dataset.frames[tu].image))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-4);
    }
}

TEST(Synth, LandmarkDisplacementGrowsWithPoseSigma) {
    const SynthOutput clean = synth_sequence(head(), scene(), JitterSpec::none());
    double prev = 0;
    for (double sigma : {0.02, 0.05, 0.1}) {
        JitterSpec j = JitterSpec::none();
        j.pose_sigma = sigma;
        const SynthOutput out = synth_sequence(head(), scene(), j);
        const double d = mean_landmark_displacement(out.dataset.landmarks.observations, clean.dataset.landmarks.observations);
        EXPECT_GT(d, prev) << "sigma " << sigma;
        prev = d;
    }
    EXPECT_GT(prev, 0.0);
}

TEST(Synth, LandmarksFollowTheJitteredTrack) {
    JitterSpec j = JitterSpec::none();
    j.pose_sigma = 0.05;
    j.expr_sigma = 0.05;
    const SynthOutput out = synth_sequence(head(), scene(), j);
    for (int t = 0; t < 5; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        const Eigen::MatrixXd p = project_landmarks(head(), out.jittered_track.frames[tu], out.dataset.cameras[tu],
                                                    out.dataset.landmarks.vertices);
        EXPECT_LT((p - out.dataset.landmarks.observations[tu]).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Synth, RegenerationIsIdentical) {
    const JitterSpec j;
    const SynthOutput a = synth_sequence(head(), scene(), j);
    const OracleScene again = [] {
        SceneOptions o;
        o.frames = 5;
        o.image_size = 40;
        o.texture_resolution = 32;
        return make_oracle_scene(head(), o);
    }();
    const SynthOutput b = synth_sequence(head(), again, j);
    for (int t = 0; t < 5; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        EXPECT_EQ(a.dataset.frames[tu].image.data, b.dataset.frames[tu].image.data);
        EXPECT_EQ(a.dataset.frames[tu].alpha.data, b.dataset.frames[tu].alpha.data);
        EXPECT_EQ(a.dataset.frames[tu].head_mask.data, b.dataset.frames[tu].head_mask.data);
        EXPECT_EQ(a.tints[tu], b.tints[tu]);
    }
}

TEST(Synth, OutputsAreInRangeAndMasksBinary) {
    const SynthOutput out = synth_sequence(head(), scene(), JitterSpec{});
    for (const FrameData& f : out.dataset.frames) {
        for (double v : f.image.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        for (double v : f.head_mask.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
        for (double v : f.alpha.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Synth, NegativeSigmaIsRejected) {
    JitterSpec j;
    j.pose_sigma = -0.1;
    EXPECT_THROW(j.validate(), InvalidArgument);
    EXPECT_THROW(synth_sequence(head(), scene(), j), InvalidArgument);
}

TEST(Dilate, ChebyshevRadius) {
    Image a(9, 9, 1);
    a.at(4, 4) = 1.0;
    const Image m = dilate_mask(a, 0.5, 2);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x)
            EXPECT_EQ(m.at(y, x), std::max(std::abs(y - 4), std::abs(x - 4)) <= 2 ? 1.0 : 0.0);
}

TEST(Psnr, Examples) {
    std::mt19937_64 rng(2);
    const Image a = oracle::random_image(rng, 8, 9, 3);
    EXPECT_GE(psnr(a, a), 99.0);
    EXPECT_DOUBLE_EQ(psnr(Image(4, 4, 3, 0.0), Image(4, 4, 3, 1.0)), 0.0);
    const Image b = oracle::random_image(rng, 8, 9, 3);
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    mse /= static_cast<double>(a.data.size());
    EXPECT_DOUBLE_EQ(psnr(a, b), 10.0 * std::log10(1.0 / mse));
    EXPECT_THROW(psnr(a, Image(8, 8, 3)), InvalidArgument);
}
