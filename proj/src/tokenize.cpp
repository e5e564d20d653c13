#include "mmpath/tokenize.hpp"

#include <algorithm>

namespace mmpath {

Vocab Vocab::from_world(const World& w) {
    std::vector<NodeId> ids;
    ids.reserve(w.network.nodes.size());
    for (const auto& n : w.network.nodes) ids.push_back(n.id);
    std::sort(ids.begin(), ids.end());
    return from_ids(std::move(ids));
}

Vocab Vocab::from_ids(std::vector<NodeId> ids) {
    Vocab v;
    v.ids = std::move(ids);
    for (size_t i = 0; i < v.ids.size(); ++i) v.index_[v.ids[i]] = static_cast<int>(i);
    return v;
}

int Vocab::index_of(NodeId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw VocabError("node id " + std::to_string(id) + " not in vocabulary");
    return it->second;
}

RoadTokenSeq tokenize_road(const RoadPath& path, const ImagePath& image_path) {
    if (path.path_id != image_path.path_id) {
        throw ConsistencyError("road path " + std::to_string(path.path_id) +
                               " paired with image path " + std::to_string(image_path.path_id));
    }
    if (image_path.sub_paths.empty() || image_path.sub_paths.back().end != static_cast<int>(path.nodes.size())) {
        throw ConsistencyError("image path sub-path spans do not cover the road path");
    }
    RoadTokenSeq seq;
    seq.path_id = path.path_id;
    seq.sub_path_count = static_cast<int>(image_path.sub_paths.size());
    seq.tokens.push_back({RoadTok::Cls, -1, -1});
    for (const auto& span : image_path.sub_paths) {
        for (int i = span.start; i < span.end; ++i) {
            seq.tokens.push_back({RoadTok::Node, path.nodes[static_cast<size_t>(i)], i});
        }
        seq.tokens.push_back({RoadTok::Sep, -1, -1});
    }
    return seq;
}

ImageTokenSeq tokenize_image(const ImagePath& image_path, const TileGrid& grid, int patch_o) {
    if (patch_o <= 0 || grid.r % patch_o != 0) {
        throw ConfigError("tile resolution r=" + std::to_string(grid.r) +
                          " not divisible by patch size o=" + std::to_string(patch_o));
    }
    int lattice = grid.r / patch_o;
    int g = lattice * lattice;
    ImageTokenSeq seq;
    seq.path_id = image_path.path_id;
    seq.patches_per_image = g;
    seq.tokens.push_back({ImageTok::Cls, -1, 0, -1});
    for (size_t img = 0; img < image_path.tiles.size(); ++img) {
        for (int k = 1; k <= g; ++k) {
            seq.tokens.push_back({ImageTok::Patch, image_path.tiles[img], k, static_cast<int>(img)});
        }
        seq.tokens.push_back({ImageTok::Sep, -1, 0, static_cast<int>(img)});
    }
    return seq;
}

std::vector<int> sep_positions_road(const RoadTokenSeq& seq) {
    std::vector<int> out;
    for (int i = 0; i < seq.length(); ++i) {
        if (seq.tokens[static_cast<size_t>(i)].kind == RoadTok::Sep) out.push_back(i);
    }
    return out;
}

std::vector<int> sep_positions_image(const ImageTokenSeq& seq) {
    std::vector<int> out;
    for (int i = 0; i < seq.length(); ++i) {
        if (seq.tokens[static_cast<size_t>(i)].kind == ImageTok::Sep) out.push_back(i);
    }
    return out;
}

Correspondence build_correspondence(const RoadTokenSeq& road_seq, const ImageTokenSeq& image_seq,
                                    const RoadPath& path, const RoadNetwork& network,
                                    const TileGrid& grid, int patch_o) {
    if (road_seq.path_id != image_seq.path_id || road_seq.path_id != path.path_id) {
        throw ConsistencyError("correspondence inputs come from different paths");
    }
    auto road_seps = sep_positions_road(road_seq);
    auto image_seps = sep_positions_image(image_seq);
    if (road_seps.size() != image_seps.size()) {
        throw ConsistencyError("sep count mismatch between modalities");
    }

    // Locate the first token of each image entry so patch k of entry i can
    // be addressed directly.
    std::vector<int> image_entry_base;
    for (int i = 0; i < image_seq.length(); ++i) {
        const auto& t = image_seq.tokens[static_cast<size_t>(i)];
        if (t.kind == ImageTok::Patch && t.k == 1) image_entry_base.push_back(i);
    }

    Correspondence corr;
    corr.cls_pair = {0, 0};
    for (size_t i = 0; i < road_seps.size(); ++i) {
        corr.sep_pairs.push_back({road_seps[i], image_seps[i]});
    }

    // Track which sub-path each node position belongs to while scanning.
    int sub_path = 0;
    for (int pos = 0; pos < road_seq.length(); ++pos) {
        const auto& tok = road_seq.tokens[static_cast<size_t>(pos)];
        if (tok.kind == RoadTok::Sep) {
            ++sub_path;
            continue;
        }
        if (tok.kind != RoadTok::Node && tok.kind != RoadTok::Mask) continue;
        if (tok.path_index < 0) continue;
        const RoadNode& n = network.node(path.nodes[static_cast<size_t>(tok.path_index)]);
        PatchLocation loc = locate_patch(grid, patch_o, {n.x, n.y});
        if (sub_path >= static_cast<int>(image_entry_base.size())) {
            throw ConsistencyError("node position beyond image path entries");
        }
        int base = image_entry_base[static_cast<size_t>(sub_path)];
        const auto& entry_tok = image_seq.tokens[static_cast<size_t>(base)];
        if (entry_tok.tile != grid.tile_id(loc.tile)) {
            throw ConsistencyError("node maps to tile " + std::to_string(grid.tile_id(loc.tile)) +
                                   " absent from its image path entry");
        }
        corr.node_pairs.push_back({pos, base + loc.k - 1});
    }
    return corr;
}

} // namespace mmpath
