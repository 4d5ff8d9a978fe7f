#pragma once

#include <json.hpp>
#include <string>

#include "scene/scene.hpp"

namespace mvi::scene {

// Spec as it appears in meta.json and in gen-data configs; absent keys keep
// the SceneSpec defaults.
nlohmann::json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

// Flow file: magic "MVFL", uint32 H, uint32 W (little endian), then H*W*2
// float32 little endian, row-major, (dx,dy) per pixel. Invalid pixels are
// stored as zeros; validity is reconstructed from masks and homographies.
void write_flow_file(const std::string& path, const FlowField& flow);
FlowField read_flow_file(const std::string& path);

// Bundle directory: frames/%03d.png, object_masks/%03d.png,
// plane_masks/%03d.png, flows/%03d.mvfl, background/%03d.png, meta.json.
void save_bundle(const std::string& dir, const SceneBundle& bundle);
SceneBundle load_bundle(const std::string& dir);

std::string frame_name(int index);  // zero padded "%03d"

}  // namespace mvi::scene
