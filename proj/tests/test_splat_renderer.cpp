#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "featsplat/error.hpp"
#include "featsplat/splat_renderer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fsplat;

namespace {

Camera image_camera(int w, int h) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = 40.0;
    cam.cx = 0.5 * w;
    cam.cy = 0.5 * h;
    return cam;
}

Splat2D make_splat(int source, Eigen::Vector2d mean, Eigen::Matrix2d cov, double depth, double opacity,
                   const RasterSettings& rs = {}) {
    Splat2D s;
    s.source = source;
    s.mean2d = mean;
    s.cov2d = cov;
    s.depth = depth;
    s.opacity = opacity;
    s.radius = rs.radius_sigmas * std::sqrt(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues().maxCoeff());
    return s;
}

SplatSet random_scene(std::mt19937_64& rng, int n, int size, int channels, bool depth_ties = false) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SplatSet s;
    s.features.resize(n, channels);
    for (int i = 0; i < n; ++i) {
        const double a = 0.5 + 20.0 * u(rng), b = 0.5 + 20.0 * u(rng), ang = 6.283 * u(rng);
        const Eigen::Matrix2d r = Eigen::Rotation2Dd(ang).toRotationMatrix();
        const Eigen::Matrix2d cov = r * Eigen::Vector2d(a, b).asDiagonal() * r.transpose() + 0.3 * Eigen::Matrix2d::Identity();
        const double depth = depth_ties ? 1.0 + std::floor(3.0 * u(rng)) : 0.5 + 5.0 * u(rng);
        s.splats.push_back(make_splat(i, Eigen::Vector2d(-4.0 + (size + 8) * u(rng), -4.0 + (size + 8) * u(rng)), cov,
                                      depth, 0.02 + 0.97 * u(rng)));
        for (int c = 0; c < channels; ++c) s.features(i, c) = 2.0 * u(rng) - 1.0;
    }
    return s;
}

double max_diff(const Image& a, const Image& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

EmbeddedGaussians random_cloud(std::mt19937_64& rng, int n, int channels) {
    std::normal_distribution<double> g(0.0, 1.0);
    EmbeddedGaussians e;
    e.positions.resize(n, 3);
    e.rotations.resize(n, 4);
    e.scales.resize(n, 3);
    e.opacities.resize(n);
    e.features.resize(n, channels);
    for (int i = 0; i < n; ++i) {
        e.positions.row(i) << 0.3 * g(rng), 0.3 * g(rng), 0.3 * g(rng);
        e.rotations.row(i) << g(rng), g(rng), g(rng), g(rng);
        e.scales.row(i) << 0.02 + 0.01 * std::abs(g(rng)), 0.02 + 0.01 * std::abs(g(rng)), 0.02 + 0.01 * std::abs(g(rng));
        e.opacities(i) = 0.5;
        for (int c = 0; c < channels; ++c) e.features(i, c) = g(rng);
    }
    return e;
}

Camera front_camera(int size) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = 1.2 * size;
    cam.cx = cam.cy = 0.5 * size;
    cam.world_to_camera.translation() = Eigen::Vector3d(0.0, 0.0, 2.0);
    return cam;
}

}  // namespace

TEST(Rasterize, EmptyListIsBlack) {
    SplatSet s;
    s.features.resize(0, 4);
    const FeatureFrame f = rasterize(s, image_camera(20, 12));
    EXPECT_EQ(f.phi.channels, 4);
    EXPECT_TRUE(std::all_of(f.phi.data.begin(), f.phi.data.end(), [](double v) { return v == 0.0; }));
    EXPECT_TRUE(std::all_of(f.alpha.data.begin(), f.alpha.data.end(), [](double v) { return v == 0.0; }));
}

TEST(Rasterize, SingleSplatAtItsMean) {
    SplatSet s;
    s.splats.push_back(make_splat(0, Eigen::Vector2d(5.5, 7.5), Eigen::Matrix2d::Identity() * 2.0, 1.0, 0.5));
    s.features.resize(1, 2);
    s.features << 0.8, -0.4;
    const FeatureFrame f = rasterize(s, image_camera(16, 16));
    EXPECT_DOUBLE_EQ(f.alpha.at(7, 5), 0.5);
    EXPECT_DOUBLE_EQ(f.phi.at(7, 5, 0), 0.4);
    EXPECT_DOUBLE_EQ(f.phi.at(7, 5, 1), -0.2);
}

TEST(Rasterize, TwoCoincidentSplatsFrontToBack) {
    SplatSet s;
    s.splats.push_back(make_splat(0, Eigen::Vector2d(3.5, 3.5), Eigen::Matrix2d::Identity(), 2.0, 0.5));
    s.splats.push_back(make_splat(1, Eigen::Vector2d(3.5, 3.5), Eigen::Matrix2d::Identity(), 1.0, 0.5));
    s.features.resize(2, 1);
    s.features << 0.0, 1.0;  // back splat listed first
    const FeatureFrame f = rasterize(s, image_camera(8, 8));
    EXPECT_DOUBLE_EQ(f.phi.at(3, 3), 0.5);
    EXPECT_DOUBLE_EQ(f.alpha.at(3, 3), 0.75);
}

TEST(Rasterize, AlphaClampAndSkipGate) {
    const RasterSettings rs;
    SplatSet s;
    s.splats.push_back(make_splat(0, Eigen::Vector2d(2.5, 2.5), Eigen::Matrix2d::Identity(), 1.0, 1.0));
    s.splats.push_back(make_splat(1, Eigen::Vector2d(9.5, 2.5), Eigen::Matrix2d::Identity(), 1.0, 0.5 / 255.0));
    s.features = RowMatrix::Ones(2, 1);
    const FeatureFrame f = rasterize(s, image_camera(12, 6), rs);
    EXPECT_DOUBLE_EQ(f.alpha.at(2, 2), 0.99);
    EXPECT_EQ(f.alpha.at(2, 9), 0.0);
}

TEST(Rasterize, MatchesPerPixelOracle) {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 64);
        const SplatSet s = random_scene(rng, n, 32, 3, trial % 3 == 0);
        RasterSettings rs;
        rs.tile = trial % 2 ? 16 : 8;
        const FeatureFrame f = rasterize(s, image_camera(32, 32), rs);
        Image phi, alpha;
        oracle::composite(s, 32, 32, rs, phi, alpha);
        EXPECT_LT(max_diff(f.phi, phi), 1e-6) << "trial " << trial;
        EXPECT_LT(max_diff(f.alpha, alpha), 1e-6) << "trial " << trial;
    }
}

TEST(Rasterize, NonSquareImageMatchesOracle) {
    std::mt19937_64 rng(7);
    const SplatSet s = random_scene(rng, 40, 24, 2);
    const FeatureFrame f = rasterize(s, image_camera(37, 21));
    Image phi, alpha;
    oracle::composite(s, 37, 21, RasterSettings{}, phi, alpha);
    EXPECT_LT(max_diff(f.phi, phi), 1e-6);
    EXPECT_LT(max_diff(f.alpha, alpha), 1e-6);
}

TEST(Rasterize, PermutingInputIsInvisible) {
    std::mt19937_64 rng(5);
    const SplatSet s = random_scene(rng, 48, 32, 3, true);
    const FeatureFrame ref = rasterize(s, image_camera(32, 32));
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<int> perm(static_cast<std::size_t>(s.size()));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        SplatSet p;
        p.features.resize(s.size(), s.channels());
        for (int k = 0; k < s.size(); ++k) {
            p.splats.push_back(s.splats[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])]);
            p.features.row(k) = s.features.row(perm[static_cast<std::size_t>(k)]);
        }
        const FeatureFrame f = rasterize(p, image_camera(32, 32));
        EXPECT_EQ(f.phi.data, ref.phi.data);
        EXPECT_EQ(f.alpha.data, ref.alpha.data);
    }
}

TEST(Rasterize, AlphaStaysInUnitInterval) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        SplatSet s = random_scene(rng, 64, 32, 1);
        for (auto& sp : s.splats) sp.opacity = trial % 2 ? 1.0 : sp.opacity;
        const FeatureFrame f = rasterize(s, image_camera(32, 32));
        for (double a : f.alpha.data) {
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
        }
    }
}

TEST(Rasterize, RaisingOneOpacityNeverLowersAlpha) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const SplatSet s = random_scene(rng, 24, 32, 1);
        const FeatureFrame base = rasterize(s, image_camera(32, 32));
        SplatSet t = s;
        auto& sp = t.splats[rng() % t.splats.size()];
        sp.opacity = std::min(1.0, sp.opacity + 0.3);
        const FeatureFrame up = rasterize(t, image_camera(32, 32));
        for (std::size_t i = 0; i < base.alpha.data.size(); ++i) EXPECT_GE(up.alpha.data[i], base.alpha.data[i] - 1e-15);
    }
}

TEST(Rasterize, SingularCovarianceIsAnInvariantError) {
    SplatSet s;
    Splat2D sp = make_splat(0, Eigen::Vector2d(2, 2), Eigen::Matrix2d::Identity(), 1.0, 0.5);
    sp.cov2d << 1, 1, 1, 1;
    s.splats.push_back(sp);
    s.features = RowMatrix::Ones(1, 1);
    EXPECT_THROW(rasterize(s, image_camera(8, 8)), InvariantViolation);
}

TEST(RasterizeBackward, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(3);
    const SplatSet s = random_scene(rng, 20, 16, 3);
    const Camera cam = image_camera(16, 16);
    const FeatureFrame f = rasterize(s, cam);
    const SplatGradient g = rasterize_backward(s, cam, f, Image(16, 16, 3), Image(16, 16, 1));
    EXPECT_EQ(g.mean2d.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.opacity.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.features.cwiseAbs().maxCoeff(), 0.0);
    for (const auto& c : g.cov2d) EXPECT_EQ(c.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RasterizeBackward, SingleSplatOpacityClosedForm) {
    const Camera cam = image_camera(12, 12);
    const Eigen::Matrix2d cov = (Eigen::Matrix2d() << 4.0, 1.0, 1.0, 3.0).finished();
    SplatSet s;
    s.splats.push_back(make_splat(0, Eigen::Vector2d(6.2, 5.7), cov, 1.0, 0.6));
    s.features = RowMatrix::Ones(1, 1);
    const FeatureFrame f = rasterize(s, cam);
    Image target(12, 12, 1);
    for (double& v : target.data) v = 0.25;
    Image d_alpha(12, 12, 1);
    for (std::size_t i = 0; i < d_alpha.data.size(); ++i) d_alpha.data[i] = f.alpha.data[i] - target.data[i];
    const SplatGradient g = rasterize_backward(s, cam, f, Image(12, 12, 1), d_alpha);

    const Eigen::Matrix2d inv = cov.inverse();
    double expected = 0;
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) {
            const Eigen::Vector2d d(x + 0.5 - 6.2, y + 0.5 - 5.7);
            const double m = d.dot(inv * d);
            if (m > 9.0) continue;
            const double gauss = std::exp(-0.5 * m);
            if (0.6 * gauss < 1.0 / 255.0) continue;
            expected += (0.6 * gauss - 0.25) * gauss;
        }
    EXPECT_NEAR(g.opacity(0), expected, 1e-12);
}

TEST(RasterizeBackward, DirectionalDerivativeMatchesForward) {
    std::mt19937_64 rng(23);
    RasterSettings rs;
    rs.alpha_min = 0.0;
    rs.transmittance_min = 0.0;
    rs.radius_sigmas = 1e3;
    rs.alpha_max = 1.0;
    SplatSet s = random_scene(rng, 12, 16, 2);
    for (auto& sp : s.splats) {
        sp.opacity = 0.1 + 0.6 * sp.opacity;
        sp.radius = 1e4;
    }
    const Camera cam = image_camera(16, 16);
    Image w_phi = oracle::random_image(rng, 16, 16, 2, -1, 1), w_alpha = oracle::random_image(rng, 16, 16, 1, -1, 1);
    auto loss = [&](const SplatSet& x) {
        const FeatureFrame f = rasterize(x, cam, rs);
        double l = 0;
        for (std::size_t i = 0; i < f.phi.data.size(); ++i) l += w_phi.data[i] * f.phi.data[i];
        for (std::size_t i = 0; i < f.alpha.data.size(); ++i) l += w_alpha.data[i] * f.alpha.data[i];
        return l;
    };
    const FeatureFrame f = rasterize(s, cam, rs);
    const SplatGradient g = rasterize_backward(s, cam, f, w_phi, w_alpha, rs);

    std::normal_distribution<double> n(0.0, 1.0);
    SplatSet dir = s;
    double predicted = 0;
    for (int k = 0; k < s.size(); ++k) {
        auto& d = dir.splats[static_cast<std::size_t>(k)];
        d.mean2d = Eigen::Vector2d(n(rng), n(rng));
        const double c01 = 0.1 * n(rng);
        d.cov2d << 0.2 * n(rng), c01, c01, 0.2 * n(rng);
        d.opacity = 0.1 * n(rng);
        for (int c = 0; c < s.channels(); ++c) dir.features(k, c) = n(rng);
        predicted += g.mean2d.row(k).dot(d.mean2d.transpose()) + (g.cov2d[static_cast<std::size_t>(k)].array() * d.cov2d.array()).sum() +
                     g.opacity(k) * d.opacity + g.features.row(k).dot(dir.features.row(k));
    }
    const double h = 1e-6;
    auto shifted = [&](double t) {
        SplatSet x = s;
        for (int k = 0; k < s.size(); ++k) {
            auto& a = x.splats[static_cast<std::size_t>(k)];
            const auto& d = dir.splats[static_cast<std::size_t>(k)];
            a.mean2d += t * d.mean2d;
            a.cov2d += t * d.cov2d;
            a.opacity += t * d.opacity;
            x.features.row(k) += t * dir.features.row(k);
        }
        return loss(x);
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    EXPECT_NEAR(numeric, predicted, 1e-5 * std::max(1.0, std::abs(predicted)));
}

TEST(RasterizeBackward, MismatchedForwardStateThrows) {
    std::mt19937_64 rng(3);
    const SplatSet s = random_scene(rng, 10, 16, 1);
    const Camera cam = image_camera(16, 16);
    const FeatureFrame f = rasterize(s, cam);
    SplatSet other = s;
    other.splats[0].opacity *= 0.5;
    EXPECT_THROW(rasterize_backward(other, cam, f, Image(16, 16, 1), Image(16, 16, 1)), InvalidArgument);
    EXPECT_THROW(rasterize_backward(s, image_camera(16, 17), f, Image(17, 16, 1), Image(17, 16, 1)), InvalidArgument);
    FeatureFrame stateless = f;
    stateless.state.reset();
    EXPECT_THROW(rasterize_backward(s, cam, stateless, Image(16, 16, 1), Image(16, 16, 1)), InvalidArgument);
}

TEST(RasterizeBackward, RerunIsBitIdentical) {
    std::mt19937_64 rng(31);
    const SplatSet s = random_scene(rng, 64, 48, 4);
    const Camera cam = image_camera(48, 48);
    const Image dphi = oracle::random_image(rng, 48, 48, 4), da = oracle::random_image(rng, 48, 48, 1);
    const FeatureFrame f1 = rasterize(s, cam);
    const FeatureFrame f2 = rasterize(s, cam);
    const SplatGradient a = rasterize_backward(s, cam, f1, dphi, da);
    const SplatGradient b = rasterize_backward(s, cam, f2, dphi, da);
    EXPECT_EQ(a.mean2d, b.mean2d);
    EXPECT_EQ(a.opacity, b.opacity);
    EXPECT_EQ(a.features, b.features);
}

TEST(Project, OnAxisMeanAndCovariance) {
    const Camera cam = front_camera(64);
    EmbeddedGaussians g;
    g.positions = RowMatrix::Zero(1, 3);
    g.rotations = RowMatrix::Zero(1, 4);
    g.rotations(0, 0) = 1.0;
    g.scales = RowMatrix::Constant(1, 3, 0.05);
    g.opacities = Eigen::VectorXd::Constant(1, 0.5);
    g.features = RowMatrix::Ones(1, 2);
    const SplatSet s = project(g, cam);
    ASSERT_EQ(s.size(), 1);
    EXPECT_NEAR(s.splats[0].mean2d.x(), cam.cx, 1e-12);
    EXPECT_NEAR(s.splats[0].mean2d.y(), cam.cy, 1e-12);
    EXPECT_DOUBLE_EQ(s.splats[0].depth, 2.0);
    const double sx = cam.fx * 0.05 / 2.0;
    EXPECT_NEAR(s.splats[0].cov2d(0, 0), sx * sx + 0.3, 1e-10);
    EXPECT_NEAR(s.splats[0].cov2d(1, 1), sx * sx + 0.3, 1e-10);
    EXPECT_NEAR(s.splats[0].cov2d(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(s.splats[0].radius, 3.0 * std::sqrt(sx * sx + 0.3), 1e-10);
}

TEST(Project, MeansMatchPerPointOracle) {
    std::mt19937_64 rng(41);
    Camera cam = front_camera(96);
    cam.world_to_camera.linear() = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    cam.cx = 40.0;
    cam.fy = 100.0;
    const EmbeddedGaussians g = random_cloud(rng, 500, 3);
    const SplatSet s = project(g, cam);
    ASSERT_GT(s.size(), 200);
    for (const Splat2D& sp : s.splats) {
        const Eigen::Vector2d expected = oracle::project(cam, g.positions.row(sp.source).transpose());
        EXPECT_LT((sp.mean2d - expected).norm(), 1e-10);
        EXPECT_EQ(s.features.row(&sp - s.splats.data()), g.features.row(sp.source));
    }
}

TEST(Project, CullsBehindNearPlaneAndOffscreen) {
    const Camera cam = front_camera(32);
    EmbeddedGaussians g;
    g.positions.resize(3, 3);
    g.positions << 0, 0, -2.5, 10, 0, 0, 0, 0, 0;
    g.rotations = RowMatrix::Zero(3, 4);
    g.rotations.col(0).setOnes();
    g.scales = RowMatrix::Constant(3, 3, 0.01);
    g.opacities = Eigen::VectorXd::Constant(3, 0.5);
    g.features = RowMatrix::Ones(3, 1);
    const SplatSet s = project(g, cam);
    ASSERT_EQ(s.size(), 1);
    EXPECT_EQ(s.splats[0].source, 2);
}

TEST(Project, NonFiniteInputNamesTheGaussian) {
    std::mt19937_64 rng(1);
    EmbeddedGaussians g = random_cloud(rng, 5, 1);
    g.scales(3, 1) = std::nan("");
    try {
        project(g, front_camera(16));
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("Gaussian 3"), std::string::npos);
    }
}

TEST(Render, ZeroOpacityTextureIsBlack) {
    const BodyModel model(fixture::quad_asset());
    GaussianTexture tex = init_texture(model.asset(), 8, 4);
    tex.opacity_logit.setConstant(-1e3);
    const FeatureFrame f = render(model, PoseParams::zeros(model.asset()), nullptr, fixture::quad_camera(24), tex, nullptr);
    EXPECT_TRUE(std::all_of(f.alpha.data.begin(), f.alpha.data.end(), [](double v) { return v == 0.0; }));
    EXPECT_TRUE(std::all_of(f.phi.data.begin(), f.phi.data.end(), [](double v) { return v == 0.0; }));
}

TEST(Render, FirstCodeAcrossIdenticalPosesIsBitIdentical) {
    const BodyModel model(fixture::quad_asset());
    const GaussianTexture tex = init_texture(model.asset(), 8, 4);
    TemporalFeatures tf = TemporalFeatures::create(4, tex.channels, kTemporalWidth, 2);
    tf.codes.setRandom();
    const TemporalCondition c1{&tf, 0};
    const PoseParams p = PoseParams::zeros(model.asset());
    const FeatureFrame a = render(model, p, nullptr, fixture::quad_camera(24), tex, &c1);
    const FeatureFrame b = render(model, p, nullptr, fixture::quad_camera(24), tex, &c1);
    EXPECT_EQ(a.phi.data, b.phi.data);
    EXPECT_EQ(a.alpha.data, b.alpha.data);
}
