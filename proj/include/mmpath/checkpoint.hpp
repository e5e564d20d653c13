#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpath/params.hpp"
#include "mmpath/world.hpp"

namespace mmpath {

// Checkpoint file: magic "MMP1", u64 little-endian header length, JSON
// header, then a contiguous little-endian f32 payload (row-major per
// parameter, at the manifest offsets). Parameters are trained and held in
// f32, so save -> load restores them bit-exactly.
struct CheckpointMeta {
    int format_version = 1;
    nlohmann::json config;        // TrainConfig snapshot
    nlohmann::json extras;        // task head info, label scaling, ...
    std::vector<NodeId> vocab;    // index -> node id
    std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& file, const ParamStore<float>& store,
                     const CheckpointMeta& meta);

// Header only; used to reconstruct the model before loading parameters.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

// Overwrites `store` values by name. Throws InputError when the manifest
// and the store disagree on names or shapes.
CheckpointMeta load_checkpoint(const std::filesystem::path& file, ParamStore<float>& store);

} // namespace mmpath
