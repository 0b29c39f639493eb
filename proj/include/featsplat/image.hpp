#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featsplat/error.hpp"

namespace fsplat {

// Dense H x W x C image in row-major, channel-interleaved (HWC) order.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t offset(int y, int x) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels);
    }
    double& at(int y, int x, int c = 0) { return data[offset(y, x) + static_cast<std::size_t>(c)]; }
    double at(int y, int x, int c = 0) const { return data[offset(y, x) + static_cast<std::size_t>(c)]; }

    std::span<double> pixel(int y, int x) { return {data.data() + offset(y, x), static_cast<std::size_t>(channels)}; }
    std::span<const double> pixel(int y, int x) const {
        return {data.data() + offset(y, x), static_cast<std::size_t>(channels)};
    }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
};

inline void require_shape(const Image& img, int h, int w, int c, const char* what) {
    if (img.height != h || img.width != w || img.channels != c) {
        throw InvalidArgument(std::string(what) + ": expected " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                              std::to_string(c) + ", got " + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + "x" + std::to_string(img.channels));
    }
}

}  // namespace fsplat
