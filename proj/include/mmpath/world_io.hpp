#pragma once

#include <filesystem>
#include <string>

#include "mmpath/world.hpp"

namespace mmpath {

// On-disk dataset layout inside a directory:
//   network.jsonl  one {"kind":"node",...} or {"kind":"edge",...} per line
//   tiles.json     grid parameters and per-tile raster file names
//   rasters/       raw u8 arrays, row-major, channel-last, r*r*c bytes
//   paths.jsonl    {"path_id":...,"nodes":[...]} per line
//   labels.csv     path_id,travel_time_s,ranking_score
void save_world(const World& world, const std::filesystem::path& dir);
World load_world(const std::filesystem::path& dir);

void save_labels(const LabelSet& labels, const std::filesystem::path& file);
LabelSet load_labels(const std::filesystem::path& file);

void save_vocab(const std::vector<NodeId>& ids, const std::filesystem::path& file);
std::vector<NodeId> load_vocab(const std::filesystem::path& file);

// Raw little-endian f32 array with a JSON sidecar (<file>.json) giving
// {"shape":[rows,cols]}. Used by the file-backed embedding initializers.
void save_f32_matrix(const std::vector<float>& data, int rows, int cols,
                     const std::filesystem::path& file);
std::vector<float> load_f32_matrix(const std::filesystem::path& file, int& rows, int& cols);

} // namespace mmpath
