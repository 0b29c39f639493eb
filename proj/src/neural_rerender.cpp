#include "featsplat/neural_rerender.hpp"

#include <cmath>
#include <random>
#include <string>

#include "featsplat/error.hpp"

namespace fsplat {

void ConvLayer::init_kaiming(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (9.0 * in_channels)));
    for (double& v : kernel) v = normal(rng);
    std::fill(bias.begin(), bias.end(), 0.0);
}

Image conv_forward(const ConvLayer& layer, const Image& input) {
    if (input.channels != layer.in_channels)
        throw InvalidArgument("conv: expected " + std::to_string(layer.in_channels) + " input channels, got " +
                              std::to_string(input.channels));
    const int h = input.height, w = input.width, ci = layer.in_channels, co = layer.out_channels;
    Image out(h, w, co);
    // Re-pack to [ky][kx][o][i] so the inner loop is contiguous.
    std::vector<double> k(layer.kernel.size());
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    k[((static_cast<std::size_t>(ky) * 3 + kx) * co + o) * ci + i] = layer.w(o, i, ky, kx);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double* dst = out.data.data() + out.offset(y, x);
            for (int o = 0; o < co; ++o) dst[o] = layer.bias[static_cast<std::size_t>(o)];
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    const double* src = input.data.data() + input.offset(sy, sx);
                    const double* kk = k.data() + (static_cast<std::size_t>(ky) * 3 + kx) * co * ci;
                    for (int o = 0; o < co; ++o) {
                        double acc = 0.0;
                        const double* row = kk + static_cast<std::size_t>(o) * ci;
                        for (int i = 0; i < ci; ++i) acc += row[i] * src[i];
                        dst[o] += acc;
                    }
                }
            }
            if (layer.relu)
                for (int o = 0; o < co; ++o) dst[o] = dst[o] > 0.0 ? dst[o] : 0.0;
        }
    return out;
}

Image conv_backward(const ConvLayer& layer, const Image& input, const Image& output, const Image& d_output,
                    ConvLayer& grad) {
    const int h = input.height, w = input.width, ci = layer.in_channels, co = layer.out_channels;
    require_shape(output, h, w, co, "conv_backward output");
    require_shape(d_output, h, w, co, "conv_backward d_output");
    if (grad.kernel.size() != layer.kernel.size()) grad = layer.zeros_like();

    Image d_pre = d_output;
    if (layer.relu)
        for (std::size_t i = 0; i < d_pre.data.size(); ++i)
            if (!(output.data[i] > 0.0)) d_pre.data[i] = 0.0;

    // Weight and bias gradients, accumulated in [ky][kx][o][i] then scattered back.
    std::vector<double> dk(layer.kernel.size(), 0.0);
    std::vector<double> db(static_cast<std::size_t>(co), 0.0);
    Image d_in(h, w, ci);
    std::vector<double> k(layer.kernel.size());
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    k[((static_cast<std::size_t>(ky) * 3 + kx) * co + o) * ci + i] = layer.w(o, i, ky, kx);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double* g = d_pre.data.data() + d_pre.offset(y, x);
            for (int o = 0; o < co; ++o) db[static_cast<std::size_t>(o)] += g[o];
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    const double* src = input.data.data() + input.offset(sy, sx);
                    double* dsrc = d_in.data.data() + d_in.offset(sy, sx);
                    const std::size_t base = (static_cast<std::size_t>(ky) * 3 + kx) * co * ci;
                    for (int o = 0; o < co; ++o) {
                        const double go = g[o];
                        if (go == 0.0) continue;
                        double* dkr = dk.data() + base + static_cast<std::size_t>(o) * ci;
                        const double* kr = k.data() + base + static_cast<std::size_t>(o) * ci;
                        for (int i = 0; i < ci; ++i) {
                            dkr[i] += go * src[i];
                            dsrc[i] += go * kr[i];
                        }
                    }
                }
            }
        }
    for (int o = 0; o < co; ++o) {
        grad.bias[static_cast<std::size_t>(o)] += db[static_cast<std::size_t>(o)];
        for (int i = 0; i < ci; ++i)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    grad.w(o, i, ky, kx) += dk[((static_cast<std::size_t>(ky) * 3 + kx) * co + o) * ci + i];
    }
    return d_in;
}

RerenderStack RerenderStack::create(int feature_channels, std::uint64_t seed) {
    if (feature_channels <= 0) throw InvalidArgument("rerender stack needs at least one feature channel");
    RerenderStack s;
    s.fg_project.resize(kFusedChannels, feature_channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / feature_channels));
    for (Eigen::Index i = 0; i < s.fg_project.size(); ++i) s.fg_project.data()[i] = normal(rng);
    s.enc1 = ConvLayer(3, kFusedChannels, true);
    s.enc2 = ConvLayer(kFusedChannels, kEncoderChannels, true);
    s.dec1 = ConvLayer(kFusedChannels, kFusedChannels, true);
    s.dec2 = ConvLayer(kFusedChannels, kFusedChannels, true);
    s.dec3 = ConvLayer(kFusedChannels, 3, true);
    s.enc1.init_kaiming(seed + 1);
    s.enc2.init_kaiming(seed + 2);
    s.dec1.init_kaiming(seed + 3);
    s.dec2.init_kaiming(seed + 4);
    s.dec3.init_kaiming(seed + 5);
    return s;
}

RerenderStack RerenderStack::zeros_like() const {
    RerenderStack g;
    g.fg_project = RowMatrix::Zero(fg_project.rows(), fg_project.cols());
    g.enc1 = enc1.zeros_like();
    g.enc2 = enc2.zeros_like();
    g.dec1 = dec1.zeros_like();
    g.dec2 = dec2.zeros_like();
    g.dec3 = dec3.zeros_like();
    return g;
}

void RerenderStack::add_scaled(const RerenderStack& other, double scale) {
    auto& o = const_cast<RerenderStack&>(other);
    std::vector<std::pair<double*, std::size_t>> mine, theirs;
    for_each_param([&](const char*, double* p, std::size_t n) { mine.emplace_back(p, n); });
    o.for_each_param([&](const char*, double* p, std::size_t n) { theirs.emplace_back(p, n); });
    for (std::size_t a = 0; a < mine.size(); ++a) {
        if (mine[a].second != theirs[a].second) throw InvalidArgument("rerender stacks have different shapes");
        for (std::size_t i = 0; i < mine[a].second; ++i) mine[a].first[i] += scale * theirs[a].first[i];
    }
}

void RerenderStack::validate() const {
    auto check = [](const ConvLayer& l, int in, int out, const char* name) {
        if (l.in_channels != in || l.out_channels != out ||
            l.kernel.size() != static_cast<std::size_t>(in * out * 9) || l.bias.size() != static_cast<std::size_t>(out))
            throw InvalidArgument(std::string("rerender stack layer ") + name + " has the wrong shape");
    };
    if (fg_project.rows() != kFusedChannels) throw InvalidArgument("fg_project must map into the fused domain");
    check(enc1, 3, kFusedChannels, "enc1");
    check(enc2, kFusedChannels, kEncoderChannels, "enc2");
    check(dec1, kFusedChannels, kFusedChannels, "dec1");
    check(dec2, kFusedChannels, kFusedChannels, "dec2");
    check(dec3, kFusedChannels, 3, "dec3");
}

Image encode_background(const RerenderStack& s, const Image& background, EncodeTrace* trace) {
    if (background.channels != 3) throw InvalidArgument("encode_background: background must have 3 channels");
    for (double v : background.data)
        if (!std::isfinite(v)) throw InvalidArgument("encode_background: non-finite background pixel");
    Image hidden = conv_forward(s.enc1, background);
    Image out5 = conv_forward(s.enc2, hidden);
    Image out(background.height, background.width, kFusedChannels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < kEncoderChannels; ++c) out.at(y, x, c) = out5.at(y, x, c);
            for (int c = 0; c < 3; ++c) out.at(y, x, kEncoderChannels + c) = background.at(y, x, c);
        }
    if (trace) {
        trace->input = background;
        trace->hidden = std::move(hidden);
        trace->out5 = std::move(out5);
    }
    return out;
}

void encode_background_backward(const RerenderStack& s, const EncodeTrace& trace, const Image& d_phi_bg,
                                RerenderStack& grad) {
    require_shape(d_phi_bg, trace.input.height, trace.input.width, kFusedChannels, "encode_background_backward");
    Image d5(trace.input.height, trace.input.width, kEncoderChannels);
    for (int y = 0; y < d5.height; ++y)
        for (int x = 0; x < d5.width; ++x)
            for (int c = 0; c < kEncoderChannels; ++c) d5.at(y, x, c) = d_phi_bg.at(y, x, c);
    const Image dh = conv_backward(s.enc2, trace.hidden, trace.out5, d5, grad.enc2);
    conv_backward(s.enc1, trace.input, trace.hidden, dh, grad.enc1);
}

Image fusion_mask(const Image& a_out, const Image& m_head) {
    require_shape(m_head, a_out.height, a_out.width, 1, "fusion mask head mask");
    require_shape(a_out, m_head.height, m_head.width, 1, "fusion mask alpha");
    Image m(a_out.height, a_out.width, 1);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = a_out.data[i] * m_head.data[i];
    return m;
}

Image project_features(const RerenderStack& s, const Image& phi_fore) {
    if (phi_fore.channels != s.feature_channels())
        throw InvalidArgument("fuse: foreground has " + std::to_string(phi_fore.channels) + " channels, expected " +
                              std::to_string(s.feature_channels()));
    Image out(phi_fore.height, phi_fore.width, kFusedChannels);
    const int c = phi_fore.channels;
    for (std::size_t p = 0; p < phi_fore.pixel_count(); ++p) {
        const Eigen::Map<const Eigen::VectorXd> f(phi_fore.data.data() + p * static_cast<std::size_t>(c), c);
        Eigen::Map<Eigen::Matrix<double, kFusedChannels, 1>> o(out.data.data() + p * kFusedChannels);
        o = s.fg_project * f;
    }
    return out;
}

namespace {

void check_fuse_shapes(const Image& phi_fore, const Image& a_out, const Image& m_head, const Image& phi_bg) {
    require_shape(a_out, phi_fore.height, phi_fore.width, 1, "fuse alpha");
    require_shape(m_head, phi_fore.height, phi_fore.width, 1, "fuse head mask");
    require_shape(phi_bg, phi_fore.height, phi_fore.width, kFusedChannels, "fuse background features");
}

}  // namespace

Image fuse(const RerenderStack& s, const Image& phi_fore, const Image& a_out, const Image& m_head,
           const Image& phi_bg) {
    check_fuse_shapes(phi_fore, a_out, m_head, phi_bg);
    const Image fg = project_features(s, phi_fore);
    Image out(phi_fore.height, phi_fore.width, kFusedChannels);
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        const double m = a_out.data[p] * m_head.data[p];
        for (int c = 0; c < kFusedChannels; ++c) {
            const std::size_t i = p * kFusedChannels + static_cast<std::size_t>(c);
            out.data[i] = m * fg.data[i] + (1.0 - m) * phi_bg.data[i];
        }
    }
    return out;
}

FuseGradient fuse_backward(const RerenderStack& s, const Image& phi_fore, const Image& a_out, const Image& m_head,
                           const Image& phi_bg, const Image& d_fused, const Image& d_mask, RerenderStack& grad) {
    check_fuse_shapes(phi_fore, a_out, m_head, phi_bg);
    require_shape(d_fused, phi_fore.height, phi_fore.width, kFusedChannels, "fuse_backward d_fused");
    const bool has_dm = !d_mask.empty();
    if (has_dm) require_shape(d_mask, phi_fore.height, phi_fore.width, 1, "fuse_backward d_mask");
    if (grad.fg_project.size() != s.fg_project.size()) grad = s.zeros_like();

    const Image fg = project_features(s, phi_fore);
    const int c = phi_fore.channels;
    FuseGradient out;
    out.phi_fore = Image(phi_fore.height, phi_fore.width, c);
    out.a_out = Image(phi_fore.height, phi_fore.width, 1);
    out.phi_bg = Image(phi_fore.height, phi_fore.width, kFusedChannels);
    Eigen::Matrix<double, kFusedChannels, Eigen::Dynamic> dproj =
        Eigen::Matrix<double, kFusedChannels, Eigen::Dynamic>::Zero(kFusedChannels, c);
    for (std::size_t p = 0; p < phi_fore.pixel_count(); ++p) {
        const double m = a_out.data[p] * m_head.data[p];
        double dm = has_dm ? d_mask.data[p] : 0.0;
        Eigen::Matrix<double, kFusedChannels, 1> dfg;
        for (int k = 0; k < kFusedChannels; ++k) {
            const std::size_t i = p * kFusedChannels + static_cast<std::size_t>(k);
            const double g = d_fused.data[i];
            dfg(k) = m * g;
            out.phi_bg.data[i] = (1.0 - m) * g;
            dm += g * (fg.data[i] - phi_bg.data[i]);
        }
        out.a_out.data[p] = dm * m_head.data[p];
        const Eigen::Map<const Eigen::VectorXd> f(phi_fore.data.data() + p * static_cast<std::size_t>(c), c);
        Eigen::Map<Eigen::VectorXd> df(out.phi_fore.data.data() + p * static_cast<std::size_t>(c), c);
        df = s.fg_project.transpose() * dfg;
        dproj += dfg * f.transpose();
    }
    grad.fg_project += dproj;
    return out;
}

Image decode(const RerenderStack& s, const Image& fused, DecodeTrace* trace) {
    if (fused.channels != kFusedChannels) throw InvalidArgument("decode: expected 8 fused channels");
    Image h1 = conv_forward(s.dec1, fused);
    Image h2 = conv_forward(s.dec2, h1);
    Image out = conv_forward(s.dec3, h2);
    if (trace) {
        trace->input = fused;
        trace->h1 = std::move(h1);
        trace->h2 = std::move(h2);
        trace->out = out;
    }
    return out;
}

Image decode_backward(const RerenderStack& s, const DecodeTrace& trace, const Image& d_out, RerenderStack& grad) {
    if (grad.fg_project.size() != s.fg_project.size()) grad = s.zeros_like();
    const Image d2 = conv_backward(s.dec3, trace.h2, trace.out, d_out, grad.dec3);
    const Image d1 = conv_backward(s.dec2, trace.h1, trace.h2, d2, grad.dec2);
    return conv_backward(s.dec1, trace.input, trace.h1, d1, grad.dec1);
}

RerenderStack make_passthrough_stack(int feature_channels) {
    if (feature_channels < 3) throw InvalidArgument("passthrough stack needs at least 3 feature channels");
    RerenderStack s = RerenderStack::create(feature_channels, 0);
    s.fg_project.setZero();
    for (int c = 0; c < 3; ++c) s.fg_project(kEncoderChannels + c, c) = 1.0;
    for (ConvLayer* l : {&s.enc1, &s.enc2, &s.dec1, &s.dec2, &s.dec3}) {
        std::fill(l->kernel.begin(), l->kernel.end(), 0.0);
        std::fill(l->bias.begin(), l->bias.end(), 0.0);
    }
    for (int c = 0; c < 3; ++c) {
        s.dec1.w(kEncoderChannels + c, kEncoderChannels + c, 1, 1) = 1.0;
        s.dec2.w(kEncoderChannels + c, kEncoderChannels + c, 1, 1) = 1.0;
        s.dec3.w(c, kEncoderChannels + c, 1, 1) = 1.0;
    }
    return s;
}

}  // namespace fsplat
