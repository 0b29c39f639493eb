#pragma once

// Little-endian byte packing shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "featsplat/error.hpp"

namespace fsplat {

class ByteWriter {
  public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }

    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

    template <typename Range>
    void f32_range(const Range& r) {
        for (const auto& v : r) f32(static_cast<double>(v));
    }

    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    const std::string& bytes() const { return bytes_; }
    std::string take() { return std::move(bytes_); }

  private:
    std::string bytes_;
};

class ByteReader {
  public:
    ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

    void expect_magic(std::string_view m) {
        need(m.size());
        if (data_.substr(pos_, m.size()) != m)
            throw IoError(context_ + ": bad magic, expected \"" + std::string(m) + "\"");
        pos_ += m.size();
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string_view raw(std::size_t n) {
        need(n);
        const auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    const std::string& context() const { return context_; }

  private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw IoError(context_ + ": truncated file");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string context_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace fsplat
