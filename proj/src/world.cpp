#include "mmpath/world.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "mmpath/rng.hpp"

namespace mmpath {

void RoadNetwork::build_index() const {
    if (index_.size() == nodes.size() && !nodes.empty()) return;
    index_.clear();
    for (size_t i = 0; i < nodes.size(); ++i) index_[nodes[i].id] = i;
    edge_set_.clear();
    for (const auto& e : edges) {
        edge_set_.insert({std::min(e.u, e.v), std::max(e.u, e.v)});
    }
}

const RoadNode& RoadNetwork::node(NodeId id) const {
    build_index();
    auto it = index_.find(id);
    if (it == index_.end()) {
        throw ConsistencyError("unknown node id " + std::to_string(id));
    }
    return nodes[it->second];
}

bool RoadNetwork::has_edge(NodeId a, NodeId b) const {
    build_index();
    return edge_set_.count({std::min(a, b), std::max(a, b)}) > 0;
}

std::vector<NodeId> RoadNetwork::neighbors(NodeId id) const {
    std::vector<NodeId> out;
    for (const auto& e : edges) {
        if (e.u == id) out.push_back(e.v);
        if (e.v == id) out.push_back(e.u);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void RoadNetwork::validate() const {
    std::set<NodeId> ids;
    for (const auto& n : nodes) {
        if (!ids.insert(n.id).second) {
            throw ConsistencyError("duplicate node id " + std::to_string(n.id));
        }
    }
    for (const auto& e : edges) {
        if (e.u == e.v) {
            throw ConsistencyError("self-loop edge at node " + std::to_string(e.u));
        }
        if (!ids.count(e.u) || !ids.count(e.v)) {
            throw ConsistencyError("edge endpoint does not exist: " + std::to_string(e.u) +
                                   "-" + std::to_string(e.v));
        }
    }
}

const RoadPath& World::path(int path_id) const {
    for (const auto& p : paths) {
        if (p.path_id == path_id) return p;
    }
    throw DomainError("unknown path_id " + std::to_string(path_id));
}

void World::validate() const {
    network.validate();
    double max_x = grid.origin_x + grid.cols * grid.tile_side_m();
    double max_y = grid.origin_y + grid.rows * grid.tile_side_m();
    for (const auto& n : network.nodes) {
        if (n.x < grid.origin_x || n.x >= max_x || n.y < grid.origin_y || n.y >= max_y) {
            throw DomainError("node " + std::to_string(n.id) + " outside grid extent");
        }
    }
    if (rasters.size() != static_cast<size_t>(grid.tile_count())) {
        throw ConsistencyError("raster count does not match tile count");
    }
    size_t raster_len = static_cast<size_t>(grid.r) * grid.r * grid.channels;
    for (const auto& ras : rasters) {
        if (ras.size() != raster_len) throw ConsistencyError("raster byte length mismatch");
    }
    for (const auto& p : paths) {
        if (p.nodes.size() < 2) {
            throw ConsistencyError("path " + std::to_string(p.path_id) + " shorter than 2 nodes");
        }
        for (size_t i = 0; i + 1 < p.nodes.size(); ++i) {
            if (!network.has_edge(p.nodes[i], p.nodes[i + 1])) {
                throw ConsistencyError("path " + std::to_string(p.path_id) +
                                       " uses a non-edge between " + std::to_string(p.nodes[i]) +
                                       " and " + std::to_string(p.nodes[i + 1]));
            }
        }
    }
}

Task parse_task(const std::string& name) {
    if (name == "travel_time") return Task::TravelTime;
    if (name == "ranking") return Task::Ranking;
    throw ConfigError("unknown task '" + name + "' (expected travel_time or ranking)");
}

std::string task_name(Task t) {
    return t == Task::TravelTime ? "travel_time" : "ranking";
}

TileCoord locate_tile(const TileGrid& grid, Point p) {
    double side = grid.tile_side_m();
    double rel_x = p.x - grid.origin_x;
    double rel_y = p.y - grid.origin_y;
    int cx = static_cast<int>(std::floor(rel_x / side));
    int cy = static_cast<int>(std::floor(rel_y / side));
    if (cx < 0 || cx >= grid.cols || cy < 0 || cy >= grid.rows) {
        std::ostringstream os;
        os << "point (" << p.x << ", " << p.y << ") outside grid extent";
        throw DomainError(os.str());
    }
    return {cx, cy};
}

PatchLocation locate_patch(const TileGrid& grid, int patch_o, Point p) {
    if (patch_o <= 0 || grid.r % patch_o != 0) {
        throw ConfigError("tile resolution r=" + std::to_string(grid.r) +
                          " not divisible by patch size o=" + std::to_string(patch_o));
    }
    TileCoord tile = locate_tile(grid, p);
    int lattice = grid.r / patch_o;
    double patch_side = patch_o * grid.meters_per_pixel;
    double side = grid.tile_side_m();
    double in_x = p.x - grid.origin_x - tile.cx * side;
    double in_y = p.y - grid.origin_y - tile.cy * side;
    int pc = std::min(lattice - 1, static_cast<int>(std::floor(in_x / patch_side)));
    int pr = std::min(lattice - 1, static_cast<int>(std::floor(in_y / patch_side)));
    return {tile, pr * lattice + pc + 1};
}

ImagePath derive_image_path(const RoadPath& path, const RoadNetwork& network, const TileGrid& grid) {
    ImagePath out;
    out.path_id = path.path_id;
    for (size_t i = 0; i < path.nodes.size(); ++i) {
        const RoadNode& n = network.node(path.nodes[i]);
        TileId tile = grid.tile_id(locate_tile(grid, {n.x, n.y}));
        if (out.tiles.empty() || out.tiles.back() != tile) {
            out.tiles.push_back(tile);
            out.sub_paths.push_back({static_cast<int>(i), static_cast<int>(i) + 1});
        } else {
            out.sub_paths.back().end = static_cast<int>(i) + 1;
        }
    }
    return out;
}

double path_length_m(const RoadPath& path, const RoadNetwork& network) {
    double len = 0;
    for (size_t i = 0; i + 1 < path.nodes.size(); ++i) {
        const RoadNode& a = network.node(path.nodes[i]);
        const RoadNode& b = network.node(path.nodes[i + 1]);
        len += std::hypot(b.x - a.x, b.y - a.y);
    }
    return len;
}

namespace {

// Procedural land-use texture. High contrast on purpose: each tile gets
// its own palette and each 4x4-pixel cell flips between the palette
// extremes through a hash, so different tiles and different regions of a
// tile produce distinct patch content, the way real remote sensing
// imagery would. Deterministic in (seed, tile coord, class).
Raster make_raster(uint64_t seed, const TileGrid& grid, TileCoord tc, int land_class) {
    Raster ras(static_cast<size_t>(grid.r) * grid.r * grid.channels);
    uint64_t tile_key = splitmix64(seed) ^ (static_cast<uint64_t>(tc.cx) << 32) ^
                        static_cast<uint64_t>(static_cast<uint32_t>(tc.cy * 2654435761u + 7));
    // Per-tile palette: two colors drawn from the full range.
    uint64_t pk = tile_key;
    int lo[3], hi[3];
    for (int ch = 0; ch < 3; ++ch) {
        uint64_t r1 = splitmix64(pk);
        lo[ch] = static_cast<int>(r1 % 96);          // dark end
        hi[ch] = 160 + static_cast<int>((r1 >> 8) % 96); // bright end
    }
    // Class controls the stripe direction and frequency layered on top.
    double fx = 0.15 + 0.1 * (land_class % 3);
    double fy = 0.1 + 0.12 * (land_class % 2);
    for (int j = 0; j < grid.r; ++j) {
        for (int i = 0; i < grid.r; ++i) {
            uint64_t cell = tile_key ^ static_cast<uint64_t>((i / 4) * 7919 + (j / 4) * 104729);
            uint64_t bits = splitmix64(cell);
            double wave = 0.5 + 0.5 * std::sin(fx * i + fy * j + static_cast<double>(land_class));
            for (int ch = 0; ch < grid.channels; ++ch) {
                bool bright = (bits >> (ch * 4)) & 1;
                int a = bright ? hi[ch % 3] : lo[ch % 3];
                int v = static_cast<int>(a * (0.7 + 0.3 * wave)) +
                        static_cast<int>((bits >> (16 + ch * 8)) & 0x1f) - 16;
                size_t idx = (static_cast<size_t>(j) * grid.r + i) * grid.channels + ch;
                ras[idx] = static_cast<uint8_t>(std::clamp(v, 0, 255));
            }
        }
    }
    return ras;
}

} // namespace

World generate_synthetic_world(uint64_t seed, const WorldConfig& cfg) {
    if (cfg.node_count < 2) throw ConfigError("node_count must be at least 2");
    if (cfg.path_count < 0) throw ConfigError("path_count must be non-negative");
    if (cfg.path_min_nodes < 2 || cfg.path_max_nodes < cfg.path_min_nodes) {
        throw ConfigError("invalid path length range");
    }
    if (cfg.cols < 1 || cfg.rows < 1 || cfg.r < 1 || cfg.channels < 1) {
        throw ConfigError("invalid grid dimensions");
    }

    World w;
    w.grid.origin_x = cfg.origin_x;
    w.grid.origin_y = cfg.origin_y;
    w.grid.meters_per_pixel = cfg.meters_per_pixel;
    w.grid.r = cfg.r;
    w.grid.channels = cfg.channels;
    w.grid.cols = cfg.cols;
    w.grid.rows = cfg.rows;

    double width = cfg.cols * w.grid.tile_side_m();
    double height = cfg.rows * w.grid.tile_side_m();

    // Nodes: uniform in the box, with a small inset so boundary arithmetic
    // never puts a node exactly on the outer edge.
    Rng node_rng = substream(seed, "world.nodes");
    double inset = 1e-6 * std::min(width, height);
    for (int i = 0; i < cfg.node_count; ++i) {
        RoadNode n;
        n.id = i;
        n.x = cfg.origin_x + node_rng.uniform(inset, width - inset);
        n.y = cfg.origin_y + node_rng.uniform(inset, height - inset);
        w.network.nodes.push_back(n);
    }

    // Edges: connect each node to near neighbors within 2x the target
    // length, then join any remaining components through their closest
    // cross pair so every walk start can reach the whole network.
    auto dist = [&](NodeId a, NodeId b) {
        const RoadNode& na = w.network.nodes[a];
        const RoadNode& nb = w.network.nodes[b];
        return std::hypot(na.x - nb.x, na.y - nb.y);
    };
    std::set<std::pair<NodeId, NodeId>> edge_set;
    auto add_edge = [&](NodeId a, NodeId b) {
        if (a == b) return;
        auto key = std::make_pair(std::min(a, b), std::max(a, b));
        if (edge_set.insert(key).second) w.network.edges.push_back({key.first, key.second});
    };
    for (NodeId a = 0; a < cfg.node_count; ++a) {
        std::vector<std::pair<double, NodeId>> near;
        for (NodeId b = 0; b < cfg.node_count; ++b) {
            if (a != b) near.push_back({dist(a, b), b});
        }
        std::sort(near.begin(), near.end());
        int added = 0;
        for (const auto& [d, b] : near) {
            if (added >= 3) break;
            if (d <= 2.0 * cfg.target_edge_len || added == 0) {
                add_edge(a, b);
                ++added;
            }
        }
    }
    // Union-find over components.
    std::vector<int> parent(cfg.node_count);
    for (int i = 0; i < cfg.node_count; ++i) parent[i] = i;
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
    for (const auto& e : w.network.edges) unite(e.u, e.v);
    for (;;) {
        std::pair<NodeId, NodeId> best{-1, -1};
        double best_d = 0;
        for (NodeId a = 0; a < cfg.node_count; ++a) {
            for (NodeId b = a + 1; b < cfg.node_count; ++b) {
                if (find(a) == find(b)) continue;
                double d = dist(a, b);
                if (best.first < 0 || d < best_d) {
                    best = {a, b};
                    best_d = d;
                }
            }
        }
        if (best.first < 0) break;
        add_edge(best.first, best.second);
        unite(best.first, best.second);
    }

    // Rasters keyed by a per-tile land-use class.
    for (int cy = 0; cy < cfg.rows; ++cy) {
        for (int cx = 0; cx < cfg.cols; ++cx) {
            uint64_t class_key = seed ^ fnv1a("world.landclass") ^
                                 (static_cast<uint64_t>(cx) * 1000003 + static_cast<uint64_t>(cy));
            int land_class = static_cast<int>(splitmix64(class_key) % 5);
            w.rasters.push_back(make_raster(seed, w.grid, {cx, cy}, land_class));
        }
    }

    // Paths: seeded random walks without immediate backtracking.
    for (int pid = 0; pid < cfg.path_count; ++pid) {
        Rng walk = substream(seed, "world.path", static_cast<uint64_t>(pid));
        RoadPath path;
        path.path_id = pid;
        for (int attempt = 0; attempt < 64 && path.nodes.empty(); ++attempt) {
            int target_len = static_cast<int>(walk.uniform_int(cfg.path_min_nodes, cfg.path_max_nodes));
            std::vector<NodeId> nodes;
            nodes.push_back(static_cast<NodeId>(walk.uniform_int(0, cfg.node_count - 1)));
            NodeId prev = -1;
            while (static_cast<int>(nodes.size()) < target_len) {
                auto nbrs = w.network.neighbors(nodes.back());
                if (prev >= 0 && nbrs.size() > 1) {
                    nbrs.erase(std::remove(nbrs.begin(), nbrs.end(), prev), nbrs.end());
                }
                if (nbrs.empty()) break;
                NodeId next = nbrs[static_cast<size_t>(walk.uniform_int(0, static_cast<int64_t>(nbrs.size()) - 1))];
                prev = nodes.back();
                nodes.push_back(next);
            }
            if (static_cast<int>(nodes.size()) >= cfg.path_min_nodes) path.nodes = std::move(nodes);
        }
        if (path.nodes.empty()) {
            throw ConfigError("could not generate a path of the requested length; "
                              "network too sparse for path " + std::to_string(pid));
        }
        w.paths.push_back(std::move(path));
    }

    w.validate();
    return w;
}

TravelTimeGen TravelTimeGen::from_seed(uint64_t seed, size_t node_count) {
    Rng const_rng = substream(seed, "labels.constants");
    TravelTimeGen gen;
    gen.seconds_per_meter = const_rng.uniform(0.05, 0.15);
    gen.node_delay.resize(node_count);
    for (auto& d : gen.node_delay) d = const_rng.uniform(0.0, 20.0);
    return gen;
}

LabelSet synth_labels(const World& world, Task task, uint64_t seed, double noise_level) {
    return synth_labels_with(world, TravelTimeGen::from_seed(seed, world.network.nodes.size()),
                             task, seed, noise_level);
}

LabelSet synth_labels_with(const World& world, const TravelTimeGen& gen, Task task, uint64_t seed,
                           double noise_level) {
    Rng noise_rng = substream(seed, "labels.noise");

    // Detour ratio per path; capped so coincident endpoints stay finite.
    std::vector<double> ratios;
    for (const auto& p : world.paths) {
        const RoadNode& first = world.network.node(p.nodes.front());
        const RoadNode& last = world.network.node(p.nodes.back());
        double straight = std::hypot(last.x - first.x, last.y - first.y);
        double len = path_length_m(p, world.network);
        double ratio = straight > 1e-9 ? len / straight : 50.0;
        ratios.push_back(std::min(ratio, 50.0));
    }
    double rmin = ratios.empty() ? 0 : *std::min_element(ratios.begin(), ratios.end());
    double rmax = ratios.empty() ? 0 : *std::max_element(ratios.begin(), ratios.end());

    LabelSet labels;
    for (size_t i = 0; i < world.paths.size(); ++i) {
        const auto& p = world.paths[i];
        double tt = gen.seconds_per_meter * path_length_m(p, world.network);
        for (NodeId id : p.nodes) tt += gen.node_delay[static_cast<size_t>(id)];
        double rank = rmax > rmin ? (rmax - ratios[i]) / (rmax - rmin) : 0.5;
        double noise = noise_level > 0 ? noise_rng.normal(0.0, noise_level) : 0.0;
        if (task == Task::TravelTime) {
            tt += noise;
        } else {
            rank += noise;
        }
        labels[p.path_id] = {std::max(tt, 1e-6), std::clamp(rank, 0.0, 1.0)};
    }
    return labels;
}

} // namespace mmpath
