#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "featsplat/body_model.hpp"

namespace fsplat {

// Procedural head + torso lathe mesh with five joints (pelvis, spine, neck,
// head, jaw), four shape and four expression directions, and a zero
// pose-corrective basis.
struct PortraitAssetOptions {
    int rings = 50;      // vertical vertex rings, bottom of torso to crown
    int segments = 40;   // vertices per ring
};

// The returned asset has already been through a save/load cycle, so it is
// identical to what load_body_asset yields for the saved files.
BodyAsset make_portrait_asset(const PortraitAssetOptions& options = {});

// Twelve face landmarks (brows, eye corners, nose, lips, mouth corners,
// chin, cheeks) followed by twelve neck/shoulder/torso landmarks.
std::vector<int> portrait_landmark_vertices(const BodyAsset& asset);

// Text mesh (OBJ-style `v`, `vt`, `f`, plus `j name parent` lines) at
// `mesh_path` and a binary "GPA1" sidecar next to it with extension .gpa.
void save_body_asset(const BodyAsset& asset, const std::filesystem::path& mesh_path);
BodyAsset load_body_asset(const std::filesystem::path& mesh_path);

std::filesystem::path asset_sidecar_path(const std::filesystem::path& mesh_path);

std::string serialize_asset_mesh(const BodyAsset& asset);
std::string serialize_asset_sidecar(const BodyAsset& asset);
BodyAsset parse_body_asset(const std::string& mesh_text, const std::string& sidecar_bytes);

}  // namespace fsplat
