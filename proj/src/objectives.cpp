#include "featsplat/objectives.hpp"

#include <cmath>

#include "featsplat/error.hpp"

namespace fsplat {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void prepare(Image* d, const Image& like) {
    if (d && !d->same_shape(like)) *d = Image(like.height, like.width, like.channels);
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {recon, mask, perceptual, background})
        if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("loss weights must be finite and nonnegative");
}

double l_recon(const Image& out, const Image& gen, Image* d_out, double scale) {
    require_shape(gen, out.height, out.width, out.channels, "l_recon target");
    prepare(d_out, out);
    if (out.data.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(out.data.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double d = out.data[i] - gen.data[i];
        sum += std::abs(d);
        if (d_out) d_out->data[i] += scale * inv * sign(d);
    }
    return sum * inv;
}

double l_mask(const Image& a_out, const Image& a_gen, Image* d_a_out, double scale) {
    if (a_out.channels != 1) throw InvalidArgument("l_mask: alpha must have one channel");
    return l_recon(a_out, a_gen, d_a_out, scale);
}

double l_background(const Image& out, const Image& tgt, const Image& m_fore, Image* d_out, Image* d_mask,
                    double scale) {
    require_shape(tgt, out.height, out.width, out.channels, "l_background target");
    require_shape(m_fore, out.height, out.width, 1, "l_background mask");
    prepare(d_out, out);
    prepare(d_mask, m_fore);
    if (out.data.empty()) return 0.0;
    const auto c = static_cast<std::size_t>(out.channels);
    const double inv = 1.0 / static_cast<double>(out.data.size());
    double sum = 0.0;
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        const double keep = 1.0 - m_fore.data[p];
        for (std::size_t k = 0; k < c; ++k) {
            const std::size_t i = p * c + k;
            const double diff = out.data[i] - tgt.data[i];
            const double v = keep * diff;
            sum += std::abs(v);
            const double s = sign(v);
            if (d_out) d_out->data[i] += scale * inv * s * keep;
            if (d_mask) d_mask->data[p] -= scale * inv * s * diff;
        }
    }
    return sum * inv;
}

Image avg_pool2(const Image& img) {
    Image out(img.height / 2, img.width / 2, img.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = 0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                          img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

Image avg_pool2_backward(const Image& d_pooled, int height, int width) {
    Image d(height, width, d_pooled.channels);
    for (int y = 0; y < d_pooled.height; ++y)
        for (int x = 0; x < d_pooled.width; ++x)
            for (int c = 0; c < d_pooled.channels; ++c) {
                const double g = 0.25 * d_pooled.at(y, x, c);
                d.at(2 * y, 2 * x, c) += g;
                d.at(2 * y, 2 * x + 1, c) += g;
                d.at(2 * y + 1, 2 * x, c) += g;
                d.at(2 * y + 1, 2 * x + 1, c) += g;
            }
    return d;
}

PerceptualPyramid::PerceptualPyramid(std::uint64_t seed) : conv_(3, kFeatures, false) {
    conv_.init_kaiming(seed);
}

Image PerceptualPyramid::features(const Image& img) const {
    Image f = conv_forward(conv_, img);
    for (double& v : f.data) v = v > 0.0 ? v : kLeak * v;
    return f;
}

double PerceptualPyramid::level_loss(const Image& out, const Image& gen, int level) const {
    Image a = out, b = gen;
    for (int l = 0; l < level; ++l) {
        a = avg_pool2(a);
        b = avg_pool2(b);
    }
    if (a.data.empty()) return 0.0;
    const Image fa = features(a), fb = features(b);
    double sum = 0.0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) sum += std::abs(fa.data[i] - fb.data[i]);
    return sum / static_cast<double>(fa.data.size());
}

double PerceptualPyramid::loss(const Image& out, const Image& gen, Image* d_out, double scale) const {
    require_shape(gen, out.height, out.width, out.channels, "l_perceptual target");
    if (out.channels != 3) throw InvalidArgument("l_perceptual: images must have 3 channels");
    prepare(d_out, out);
    std::vector<Image> pa{out}, pb{gen};
    for (int l = 1; l < kLevels; ++l) {
        pa.push_back(avg_pool2(pa.back()));
        pb.push_back(avg_pool2(pb.back()));
    }
    double total = 0.0;
    ConvLayer scratch = conv_.zeros_like();
    Image carry;  // gradient flowing down from coarser levels
    for (int l = kLevels - 1; l >= 0; --l) {
        const Image& a = pa[static_cast<std::size_t>(l)];
        const Image& b = pb[static_cast<std::size_t>(l)];
        Image d_level(a.height, a.width, a.channels);
        if (!a.data.empty()) {
            const Image pre_a = conv_forward(conv_, a);
            const Image pre_b = conv_forward(conv_, b);
            const double inv = 1.0 / static_cast<double>(pre_a.data.size());
            double sum = 0.0;
            Image d_pre(pre_a.height, pre_a.width, pre_a.channels);
            for (std::size_t i = 0; i < pre_a.data.size(); ++i) {
                const double fa = pre_a.data[i] > 0.0 ? pre_a.data[i] : kLeak * pre_a.data[i];
                const double fb = pre_b.data[i] > 0.0 ? pre_b.data[i] : kLeak * pre_b.data[i];
                sum += std::abs(fa - fb);
                d_pre.data[i] = sign(fa - fb) * inv * (pre_a.data[i] > 0.0 ? 1.0 : kLeak) * scale / kLevels;
            }
            total += sum * inv;
            if (d_out) d_level = conv_backward(conv_, a, pre_a, d_pre, scratch);
        }
        if (d_out) {
            if (!carry.empty())
                for (std::size_t i = 0; i < d_level.data.size(); ++i) d_level.data[i] += carry.data[i];
            if (l > 0) {
                const Image& finer = pa[static_cast<std::size_t>(l - 1)];
                carry = avg_pool2_backward(d_level, finer.height, finer.width);
            } else {
                for (std::size_t i = 0; i < d_level.data.size(); ++i) d_out->data[i] += d_level.data[i];
            }
        }
    }
    return total / kLevels;
}

LossBreakdown l_total(const LossInputs& in, const LossWeights& w, const PerceptualPyramid& perceptual,
                      LossGradients* grads) {
    w.validate();
    if (!in.out || !in.a_out || !in.m_fore || !in.gen || !in.a_gen || !in.tgt)
        throw InvalidArgument("l_total: missing input");
    LossBreakdown b;
    Image* d_out = grads ? &grads->out : nullptr;
    Image* d_a = grads ? &grads->a_out : nullptr;
    Image* d_m = grads ? &grads->m_fore : nullptr;
    if (grads) {
        grads->out = Image(in.out->height, in.out->width, in.out->channels);
        grads->a_out = Image(in.a_out->height, in.a_out->width, 1);
        grads->m_fore = Image(in.m_fore->height, in.m_fore->width, 1);
    }
    b.recon = l_recon(*in.out, *in.gen, w.recon != 0.0 ? d_out : nullptr, w.recon);
    b.mask = l_mask(*in.a_out, *in.a_gen, w.mask != 0.0 ? d_a : nullptr, w.mask);
    b.perceptual = perceptual.loss(*in.out, *in.gen, w.perceptual != 0.0 ? d_out : nullptr, w.perceptual);
    b.background = l_background(*in.out, *in.tgt, *in.m_fore, w.background != 0.0 ? d_out : nullptr,
                                w.background != 0.0 ? d_m : nullptr, w.background);
    b.total = w.recon * b.recon + w.mask * b.mask + w.perceptual * b.perceptual + w.background * b.background;
    return b;
}

}  // namespace fsplat
