#pragma once

// Command pipelines over on-disk datasets and checkpoints.
//
// Dataset directory layout:
//   manifest.csv            frame, image, alpha, target, background, head_mask, landmarks, clean
//   asset.obj, asset.gpa    body asset
//   cameras.csv
//   track_true.csv          track of the original target video
//   track_jittered.csv      parameters the generated frames were rendered with
//   frames/                 per-frame PPM/PGM images and landmark CSVs

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "featsplat/data_synth.hpp"
#include "featsplat/fitting.hpp"
#include "featsplat/io.hpp"

namespace fsplat {

// Every key the command-line config understands.
const std::vector<std::string>& known_config_keys();

struct SynthSettings {
    SceneOptions scene;
    JitterSpec jitter;
};

SynthSettings synth_settings(const Config& cfg);
TrainConfig train_config(const Config& cfg);
RetrackOptions retrack_options(const Config& cfg);

// Every `stride`-th frame starting at 0 is held out of training; 0 disables.
std::vector<int> training_frames(int frames, int holdout_stride);
std::vector<int> heldout_frames(int frames, int holdout_stride);

struct DiskDataset {
    BodyAsset asset;
    Dataset data;
    Track jittered;
    std::vector<Image> clean;  // empty when the dataset has no clean renders
};

// Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const BodyAsset& asset,
                                    const SynthOutput& synth);
DiskDataset read_dataset(const std::filesystem::path& dir);

std::filesystem::path cmd_synth(const Config& cfg, const std::filesystem::path& out_dir, std::ostream& log);

RetrackReport cmd_retrack(const std::filesystem::path& dataset, const Config& cfg,
                          const std::filesystem::path& out_track, std::ostream& log);

// Trains from scratch on `track` (the dataset's true track when empty) and
// writes the checkpoint plus loss.csv into `out_ckpt`.
TrainResult cmd_fit(const std::filesystem::path& dataset, const std::optional<std::filesystem::path>& track,
                    const Config& cfg, const std::filesystem::path& out_ckpt, std::ostream& log);

// Inference with the first temporal code; frames go to out_dir/frame_NNNN.ppm.
void cmd_render(const std::filesystem::path& ckpt, const std::filesystem::path& dataset,
                const std::optional<std::filesystem::path>& track, const std::filesystem::path& out_dir,
                std::ostream& log);

struct SwapReport {
    double heldout_psnr = 0;  // NaN when the dataset has no clean renders or no held-out frames
    int heldout_frames = 0;
};

struct SwapResult {
    PortraitModel model;
    Track training_track;       // retracked, or the dataset track when retracking is off
    std::optional<RetrackReport> retrack;
    TrainResult train;
    std::vector<Image> frames;  // inference at the dataset track, clamped to [0,1]
    SwapReport report;
};

DiskDataset dataset_from_synth(const BodyAsset& asset, const SynthOutput& synth);

// In-memory swap over a loaded dataset.
SwapResult run_swap(const BodyModel& body, const DiskDataset& ds, const Config& cfg, std::ostream& log);

// retrack (optional) -> fit -> render with the target track.
SwapReport cmd_swap(const std::filesystem::path& dataset, const Config& cfg, const std::filesystem::path& out_dir,
                    std::ostream& log);

}  // namespace fsplat
