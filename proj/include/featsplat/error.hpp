#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fsplat {

// Bad shapes, dimensions or values passed across a public boundary.
class InvalidArgument : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// An internal invariant was broken (non-normalized skinning weights,
// singular covariance after regularization, stale forward state, ...).
class InvariantViolation : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class TopologyMismatch : public std::runtime_error {
  public:
    TopologyMismatch(std::uint64_t expected, std::uint64_t found)
        : std::runtime_error("topology hash mismatch: expected " + hex(expected) + ", found " + hex(found)),
          expected_(expected), found_(found) {}

    std::uint64_t expected() const noexcept { return expected_; }
    std::uint64_t found() const noexcept { return found_; }

    static std::string hex(std::uint64_t v) {
        static constexpr char digits[] = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        return s;
    }

  private:
    std::uint64_t expected_;
    std::uint64_t found_;
};

// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(const std::string& what, int frame) : std::runtime_error(what), frame_(frame) {}
    int frame() const noexcept { return frame_; }

  private:
    int frame_;
};

}  // namespace fsplat
