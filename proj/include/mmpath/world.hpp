#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "mmpath/common.hpp"

namespace mmpath {

using NodeId = int32_t;
using TileId = int32_t; // row-major linear index into the tile grid

struct Point {
    double x = 0; // meters east of origin
    double y = 0; // meters north of origin
};

struct RoadNode {
    NodeId id = -1;
    double x = 0;
    double y = 0;
    bool operator==(const RoadNode&) const = default;
};

struct RoadEdge {
    NodeId u = -1;
    NodeId v = -1; // undirected
    bool operator==(const RoadEdge&) const = default;
};

struct RoadNetwork {
    std::vector<RoadNode> nodes;
    std::vector<RoadEdge> edges;

    bool operator==(const RoadNetwork&) const = default;

    const RoadNode& node(NodeId id) const;
    bool has_edge(NodeId a, NodeId b) const;
    std::vector<NodeId> neighbors(NodeId id) const;

    // Throws ConsistencyError on duplicate ids, dangling edges or self-loops.
    void validate() const;

private:
    mutable std::map<NodeId, size_t> index_; // lazy id -> position cache
    mutable std::set<std::pair<NodeId, NodeId>> edge_set_;
    void build_index() const;
};

struct TileCoord {
    int cx = 0; // column (east)
    int cy = 0; // row (north)
    bool operator==(const TileCoord&) const = default;
};

struct TileGrid {
    double origin_x = 0;
    double origin_y = 0;
    double meters_per_pixel = 2.0;
    int r = 500;      // pixels per tile side
    int channels = 3; // c
    int cols = 4;
    int rows = 4;

    bool operator==(const TileGrid&) const = default;

    double tile_side_m() const { return r * meters_per_pixel; }
    TileId tile_id(TileCoord c) const { return static_cast<TileId>(c.cy) * cols + c.cx; }
    TileCoord tile_coord(TileId id) const { return {static_cast<int>(id % cols), static_cast<int>(id / cols)}; }
    int tile_count() const { return cols * rows; }
};

struct RoadPath {
    int path_id = -1;
    std::vector<NodeId> nodes;

    bool operator==(const RoadPath&) const = default;
};

// Span [start, end) into the road path's node list; one per visited tile.
struct SubPathSpan {
    int start = 0;
    int end = 0;
    bool operator==(const SubPathSpan&) const = default;
};

struct ImagePath {
    int path_id = -1;
    std::vector<TileId> tiles;          // one entry per maximal run, revisits repeat
    std::vector<SubPathSpan> sub_paths; // aligned with tiles

    bool operator==(const ImagePath&) const = default;
};

struct Labels {
    double travel_time_s = 0;
    double ranking_score = 0;
    bool operator==(const Labels&) const = default;
};

using LabelSet = std::map<int, Labels>; // keyed by path_id

// Raw little-endian u8 raster, row-major, channel-last, length r*r*c.
// Pixel row j covers y in [origin + j*mpp, origin + (j+1)*mpp).
using Raster = std::vector<uint8_t>;

struct World {
    RoadNetwork network;
    TileGrid grid;
    std::vector<Raster> rasters; // indexed by TileId
    std::vector<RoadPath> paths;

    bool operator==(const World&) const = default;

    const RoadPath& path(int path_id) const;
    void validate() const;
};

struct WorldConfig {
    int cols = 4;
    int rows = 4;
    double origin_x = 0;
    double origin_y = 0;
    int r = 500;
    double meters_per_pixel = 2.0;
    int channels = 3;
    int node_count = 24;
    double target_edge_len = 400; // meters
    int path_count = 64;
    int path_min_nodes = 4;
    int path_max_nodes = 10;
};

enum class Task { TravelTime, Ranking };

Task parse_task(const std::string& name);
std::string task_name(Task t);

// --- Operations ---------------------------------------------------------

// Half-open square [x0+i*S, x0+(i+1)*S) x [y0+j*S, y0+(j+1)*S).
// Throws DomainError when the point lies outside the grid extent.
TileCoord locate_tile(const TileGrid& grid, Point p);

struct PatchLocation {
    TileCoord tile;
    int k = 1; // 1-based, row-major within the (r/o) x (r/o) lattice
    bool operator==(const PatchLocation&) const = default;
};

// o = patch side in pixels; throws ConfigError when r % o != 0.
PatchLocation locate_patch(const TileGrid& grid, int patch_o, Point p);

ImagePath derive_image_path(const RoadPath& path, const RoadNetwork& network, const TileGrid& grid);

World generate_synthetic_world(uint64_t seed, const WorldConfig& cfg);

// Constants behind the travel-time labels; exposed so tests can pin them.
// node_delay is indexed by node id (synthetic worlds number nodes 0..n-1).
struct TravelTimeGen {
    double seconds_per_meter = 0.1;
    std::vector<double> node_delay;

    static TravelTimeGen from_seed(uint64_t seed, size_t node_count);
};

// travel_time = a * length_m + sum of per-node delays + N(0, noise_level);
// ranking_score = min-max normalized negative detour ratio, clamped to [0,1].
// `task` selects which field the noise applies to.
LabelSet synth_labels(const World& world, Task task, uint64_t seed, double noise_level);
LabelSet synth_labels_with(const World& world, const TravelTimeGen& gen, Task task, uint64_t seed,
                           double noise_level);

double path_length_m(const RoadPath& path, const RoadNetwork& network);

} // namespace mmpath
