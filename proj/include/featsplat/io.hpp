#pragma once

// File formats: NTF1 tensors, PPM/PGM images, CSV tracks, cameras and
// landmarks, and the texture / rerender / displacement checkpoints.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "featsplat/binary.hpp"
#include "featsplat/dataset.hpp"
#include "featsplat/fitting.hpp"

namespace fsplat {

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t count() const;
};

std::string serialize_tensor(const Tensor& t);
Tensor parse_tensor(ByteReader& r);
Tensor parse_tensor(const std::string& bytes, const std::string& context = "tensor");
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor tensor_from(const double* data, std::vector<std::uint32_t> dims);
Tensor tensor_from(const Image& img);
Image image_from(const Tensor& t);  // rank 3 (H, W, C)

// 8-bit binary PPM (P6, 3 channels) and PGM (P5, 1 channel); values clamped to
// [0,1] and rounded to the nearest of 256 levels.
std::string encode_pnm(const Image& img);
Image decode_pnm(const std::string& bytes, const std::string& context = "image");
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

// Track CSV with 9 significant digits.
std::string format_track_csv(const BodyAsset& asset, const Track& track);
Track parse_track_csv(const BodyAsset& asset, const std::string& text);
void write_track(const std::filesystem::path& path, const BodyAsset& asset, const Track& track);
Track read_track(const std::filesystem::path& path, const BodyAsset& asset);

std::string format_cameras_csv(const std::vector<Camera>& cams);
std::vector<Camera> parse_cameras_csv(const std::string& text);

// One row per landmark: index, vertex, x, y (pixels).
std::string format_landmarks_csv(const std::vector<int>& vertices, const Eigen::MatrixXd& obs);
void parse_landmarks_csv(const std::string& text, std::vector<int>& vertices, Eigen::MatrixXd& obs);

// `key = value` lines, `#` comments. Values keep their raw text.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& source = "config");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws ConfigError naming the first key not in `known`.
    void require_known(const std::vector<std::string>& known) const;
    std::string format() const;
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
    std::string source_;
};

// Texture checkpoint ("GPT1"): topology hash, resolution, channel counts,
// then the per-texel arrays and temporal features as NTF1 tensors.
std::string serialize_texture(const GaussianTexture& tex, const TemporalFeatures& temporal);
void parse_texture(const std::string& bytes, const BodyAsset& asset, GaussianTexture& tex,
                   TemporalFeatures& temporal);

// Rerender checkpoint ("GPR1"): topology hash, layer dims, weights as NTF1 tensors.
std::string serialize_stack(const RerenderStack& s, std::uint64_t topology_hash);
RerenderStack parse_stack(const std::string& bytes, std::uint64_t topology_hash);

// Directory holding texture.gpt, rerender.gpr and delta.ntf.
void save_checkpoint(const std::filesystem::path& dir, const BodyAsset& asset, const PortraitModel& model);
PortraitModel load_checkpoint(const std::filesystem::path& dir, const BodyAsset& asset);

// Loss curve CSV: iteration, recon, mask, perceptual, background, total.
std::string format_loss_csv(const std::vector<LossRecord>& curve);

}  // namespace fsplat
