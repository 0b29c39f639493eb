#include <algorithm>
#include <cmath>
#include <numbers>

#include "featsplat/asset.hpp"

namespace fsplat {

namespace {

constexpr double kBottom = -0.50;
constexpr double kNeckTop = 0.10;
constexpr double kHeadCenterY = 0.20;
constexpr double kHeadRadiusY = 0.115;
constexpr double kHeadTop = kHeadCenterY + kHeadRadiusY;

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

struct Profile {
    double rx;
    double rz;
    double cz;
};

Profile profile(double y) {
    Profile torso{0.17, 0.10, 0.0};
    Profile neck{0.055, 0.055, -0.01};
    if (y <= -0.08) return torso;
    if (y <= 0.03) {
        const double t = smoothstep(-0.08, 0.03, y);
        return {lerp(torso.rx, neck.rx, t), lerp(torso.rz, neck.rz, t), lerp(torso.cz, neck.cz, t)};
    }
    const double rho = std::sqrt(std::max(0.0, 1.0 - std::pow((y - kHeadCenterY) / kHeadRadiusY, 2.0)));
    const Profile head{0.085 * rho, 0.10 * rho, 0.01};
    if (y <= kNeckTop) return neck;
    const double t = smoothstep(kNeckTop, 0.13, y);
    return {lerp(neck.rx, head.rx, t), lerp(neck.rz, head.rz, t), lerp(neck.cz, head.cz, t)};
}

// Heights spaced uniformly by profile arc length over [y0, y1].
std::vector<double> arc_length_heights(double y0, double y1, int count, bool include_end) {
    constexpr int kSamples = 4000;
    std::vector<double> ys(kSamples + 1), len(kSamples + 1, 0.0);
    for (int i = 0; i <= kSamples; ++i) ys[static_cast<std::size_t>(i)] = y0 + (y1 - y0) * i / kSamples;
    for (int i = 1; i <= kSamples; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const Profile a = profile(ys[iu - 1]);
        const Profile b = profile(ys[iu]);
        const double dr = 0.5 * (b.rx + b.rz - a.rx - a.rz);
        len[iu] = len[iu - 1] + std::hypot(ys[iu] - ys[iu - 1], dr);
    }
    std::vector<double> out;
    const int denom = include_end ? count - 1 : count;
    for (int k = 0; k < count; ++k) {
        const double target = len.back() * k / denom;
        const auto it = std::lower_bound(len.begin(), len.end(), target);
        const auto idx = static_cast<std::size_t>(std::distance(len.begin(), it));
        if (idx == 0) {
            out.push_back(ys.front());
            continue;
        }
        const double t = (target - len[idx - 1]) / std::max(1e-300, len[idx] - len[idx - 1]);
        out.push_back(lerp(ys[idx - 1], ys[idx], t));
    }
    return out;
}

int nearest_front_vertex(const Vertices& verts, double x, double y, std::span<const int> exclude) {
    int best = -1;
    double best_d = 1e300;
    for (int v = 0; v < verts.rows(); ++v) {
        if (std::find(exclude.begin(), exclude.end(), v) != exclude.end()) continue;
        const double cz = profile(verts(v, 1)).cz;
        if (verts(v, 2) <= cz) continue;
        const double d = std::pow(verts(v, 0) - x, 2) + std::pow(verts(v, 1) - y, 2);
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

double bump(const Eigen::Vector3d& p, const Eigen::Vector3d& c, double sigma) {
    return std::exp(-(p - c).squaredNorm() / (2.0 * sigma * sigma));
}

}  // namespace

BodyAsset make_portrait_asset(const PortraitAssetOptions& options) {
    const int rings = std::max(8, options.rings);
    const int segs = std::max(6, options.segments);
    const int body_rings = std::max(3, (rings * 9) / 25);
    const int head_rings = rings - body_rings;

    std::vector<double> heights = arc_length_heights(kBottom, kNeckTop, body_rings, false);
    {
        // Head rings stop one step short of the crown; the pole closes the cap.
        auto head = arc_length_heights(kNeckTop, kHeadTop, head_rings + 1, true);
        head.pop_back();
        heights.insert(heights.end(), head.begin(), head.end());
    }

    BodyAsset a;
    const int nv = rings * segs + 1;
    const int pole = nv - 1;
    a.template_vertices.resize(nv, 3);
    for (int r = 0; r < rings; ++r) {
        const double y = heights[static_cast<std::size_t>(r)];
        const Profile pr = profile(y);
        for (int i = 0; i < segs; ++i) {
            const double phi = 2.0 * std::numbers::pi * (static_cast<double>(i) / segs) - std::numbers::pi;
            a.template_vertices.row(r * segs + i) << pr.rx * std::sin(phi), y, pr.cz + pr.rz * std::cos(phi);
        }
    }
    a.template_vertices.row(pole) << 0.0, kHeadTop, profile(kHeadTop - 1e-9).cz;

    auto vid = [segs](int r, int i) { return r * segs + (i % segs); };
    auto ring_v = [rings](int r) { return static_cast<double>(r) / rings; };
    for (int r = 0; r + 1 < rings; ++r) {
        for (int i = 0; i < segs; ++i) {
            const double u0 = static_cast<double>(i) / segs;
            const double u1 = static_cast<double>(i + 1) / segs;
            const Eigen::Vector2d ta(u0, ring_v(r)), tb(u1, ring_v(r)), tc(u0, ring_v(r + 1)), td(u1, ring_v(r + 1));
            a.faces.push_back({vid(r, i), vid(r, i + 1), vid(r + 1, i)});
            a.uv_corners.push_back({ta, tb, tc});
            a.faces.push_back({vid(r, i + 1), vid(r + 1, i + 1), vid(r + 1, i)});
            a.uv_corners.push_back({tb, td, tc});
        }
    }
    for (int i = 0; i < segs; ++i) {
        const int r = rings - 1;
        const double u0 = static_cast<double>(i) / segs;
        const double u1 = static_cast<double>(i + 1) / segs;
        a.faces.push_back({vid(r, i), vid(r, i + 1), pole});
        a.uv_corners.push_back({Eigen::Vector2d(u0, ring_v(r)), Eigen::Vector2d(u1, ring_v(r)),
                                Eigen::Vector2d(0.5 * (u0 + u1), 1.0)});
    }

    // Skeleton: pelvis, spine, neck, head, jaw. Joints regress from ring means.
    a.joint_names = {"pelvis", "spine", "neck", "head", "jaw"};
    a.parent = {-1, 0, 1, 2, 3};
    const int nj = 5;
    auto ring_near = [&](double y) {
        int best = 0;
        for (int r = 1; r < rings; ++r)
            if (std::abs(heights[static_cast<std::size_t>(r)] - y) < std::abs(heights[static_cast<std::size_t>(best)] - y))
                best = r;
        return best;
    };
    a.joint_regressor.setZero(nj, nv);
    const double joint_heights[4] = {-0.42, -0.17, 0.045, 0.14};
    for (int j = 0; j < 4; ++j) {
        const int r = ring_near(joint_heights[j]);
        for (int i = 0; i < segs; ++i) a.joint_regressor(j, vid(r, i)) = 1.0 / segs;
    }
    {
        const int r = ring_near(0.14);
        for (int i = 0; i < segs; ++i) a.joint_regressor(4, vid(r, i)) = 0.5 / segs;
        const int chin = ring_near(0.11);
        a.joint_regressor(4, vid(chin, segs / 2)) += 0.5;
    }

    // Height-based RBF skinning; the lower front face is handed to the jaw.
    a.skinning_weights.setZero(nv, nj);
    const double centers[4] = {-0.40, -0.16, 0.05, 0.20};
    const double sigma = 0.07;
    for (int v = 0; v < nv; ++v) {
        const double y = a.template_vertices(v, 1);
        double w[5] = {0, 0, 0, 0, 0};
        double sum = 0.0;
        for (int j = 0; j < 4; ++j) {
            w[j] = std::exp(-std::pow(y - centers[j], 2) / (2.0 * sigma * sigma));
            sum += w[j];
        }
        for (double& x : w) x /= sum;
        const Profile pr = profile(y);
        const double front = (a.template_vertices(v, 2) - pr.cz) / std::max(1e-9, pr.rz);
        const double jaw_mask = (1.0 - smoothstep(0.12, 0.155, y)) * smoothstep(0.075, 0.095, y) * smoothstep(0.2, 0.6, front);
        w[4] = jaw_mask * w[3];
        w[3] -= w[4];
        sum = 0.0;
        for (double& x : w) {
            if (x < 1e-4) x = 0.0;
            sum += x;
        }
        for (int j = 0; j < nj; ++j) a.skinning_weights(v, j) = w[j] / sum;
    }

    // Shape directions: head scale, torso width, neck length, lower-face width.
    a.shape_basis.setZero(3 * nv, 4);
    const Eigen::Vector3d head_center(0.0, kHeadCenterY, 0.01);
    for (int v = 0; v < nv; ++v) {
        const Eigen::Vector3d p = a.template_vertices.row(v).transpose();
        const double head = smoothstep(0.08, 0.14, p.y());
        const double torso = 1.0 - smoothstep(-0.05, 0.05, p.y());
        const Eigen::Vector3d d0 = 0.1 * head * (p - head_center);
        const Eigen::Vector3d d1(0.1 * torso * p.x(), 0.0, 0.0);
        const Eigen::Vector3d d2(0.0, 0.02 * smoothstep(0.0, 0.1, p.y()), 0.0);
        const Eigen::Vector3d d3(0.1 * head * (1.0 - smoothstep(0.15, 0.25, p.y())) * p.x(), 0.0, 0.0);
        for (int k = 0; k < 3; ++k) {
            a.shape_basis(3 * v + k, 0) = d0(k);
            a.shape_basis(3 * v + k, 1) = d1(k);
            a.shape_basis(3 * v + k, 2) = d2(k);
            a.shape_basis(3 * v + k, 3) = d3(k);
        }
    }

    // Expression directions: brow raise, smile, mouth open, cheek puff.
    a.expression_basis.setZero(3 * nv, 4);
    auto surface_point = [&](double x, double y) {
        return Eigen::Vector3d(a.template_vertices.row(nearest_front_vertex(a.template_vertices, x, y, {})).transpose());
    };
    const Eigen::Vector3d brow_l = surface_point(-0.03, 0.24), brow_r = surface_point(0.03, 0.24);
    const Eigen::Vector3d mouth_l = surface_point(-0.03, 0.135), mouth_r = surface_point(0.03, 0.135);
    const Eigen::Vector3d lower_lip = surface_point(0.0, 0.122);
    const Eigen::Vector3d cheek_l = surface_point(-0.06, 0.165), cheek_r = surface_point(0.06, 0.165);
    constexpr double s = 0.02;
    for (int v = 0; v < nv; ++v) {
        const Eigen::Vector3d p = a.template_vertices.row(v).transpose();
        const Eigen::Vector3d e0(0.0, 0.012 * (bump(p, brow_l, s) + bump(p, brow_r, s)), 0.0);
        const Eigen::Vector3d e1 = bump(p, mouth_l, s) * Eigen::Vector3d(-0.008, 0.006, 0.0) +
                                   bump(p, mouth_r, s) * Eigen::Vector3d(0.008, 0.006, 0.0);
        const Eigen::Vector3d e2(0.0, -0.012 * bump(p, lower_lip, s), 0.0);
        const Eigen::Vector3d e3 = bump(p, cheek_l, s) * Eigen::Vector3d(-0.008, 0.0, 0.006) +
                                   bump(p, cheek_r, s) * Eigen::Vector3d(0.008, 0.0, 0.006);
        for (int k = 0; k < 3; ++k) {
            a.expression_basis(3 * v + k, 0) = e0(k);
            a.expression_basis(3 * v + k, 1) = e1(k);
            a.expression_basis(3 * v + k, 2) = e2(k);
            a.expression_basis(3 * v + k, 3) = e3(k);
        }
    }

    a.pose_basis.setZero(3 * nv, 9 * (nj - 1));

    return parse_body_asset(serialize_asset_mesh(a), serialize_asset_sidecar(a));
}

std::vector<int> portrait_landmark_vertices(const BodyAsset& asset) {
    static constexpr double kTargets[24][2] = {
        // face
        {-0.03, 0.24}, {0.03, 0.24}, {-0.05, 0.205}, {0.05, 0.205}, {0.0, 0.18}, {-0.03, 0.135},
        {0.03, 0.135}, {0.0, 0.145}, {0.0, 0.122}, {0.0, 0.10}, {-0.06, 0.165}, {0.06, 0.165},
        // neck, shoulders, chest, abdomen
        {0.0, 0.06}, {-0.05, 0.06}, {0.05, 0.06}, {-0.14, -0.04}, {0.14, -0.04}, {-0.08, -0.12},
        {0.0, -0.14}, {0.08, -0.12}, {-0.10, -0.28}, {0.0, -0.30}, {0.10, -0.28}, {0.0, -0.36}};
    std::vector<int> ids;
    for (const auto& t : kTargets) ids.push_back(nearest_front_vertex(asset.template_vertices, t[0], t[1], ids));
    return ids;
}

}  // namespace fsplat
