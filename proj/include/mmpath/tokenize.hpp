#pragma once

#include <map>
#include <vector>

#include "mmpath/world.hpp"

namespace mmpath {

enum class RoadTok : uint8_t { Cls, Node, Sep, Mask };
enum class ImageTok : uint8_t { Cls, Patch, Sep };

struct RoadToken {
    RoadTok kind = RoadTok::Cls;
    NodeId node = -1;     // for Node tokens
    int path_index = -1;  // position of the node within the road path
    bool operator==(const RoadToken&) const = default;
};

struct ImageToken {
    ImageTok kind = ImageTok::Cls;
    TileId tile = -1;     // for Patch tokens
    int k = 0;            // 1-based row-major patch index within the tile
    int image_index = -1; // which entry of the image path this token belongs to
    bool operator==(const ImageToken&) const = default;
};

// [cls, v.., sep, v.., sep, ...]; length n2 = |R(p)| + |M(p)| + 1.
struct RoadTokenSeq {
    int path_id = -1;
    std::vector<RoadToken> tokens;
    int sub_path_count = 0;
    bool operator==(const RoadTokenSeq&) const = default;

    int length() const { return static_cast<int>(tokens.size()); }
};

// [cls, m1_patches.., sep, m2_patches.., sep, ...]; length n1 = 1 + |M(p)|*(g+1).
struct ImageTokenSeq {
    int path_id = -1;
    std::vector<ImageToken> tokens;
    int patches_per_image = 0; // g = (r/o)^2
    bool operator==(const ImageTokenSeq&) const = default;

    int length() const { return static_cast<int>(tokens.size()); }
};

// Node <-> patch position pairs plus the structural sep/cls pairings.
struct Correspondence {
    std::vector<std::pair<int, int>> node_pairs; // (road pos holding NODE, image pos holding PATCH)
    std::vector<std::pair<int, int>> sep_pairs;  // index-aligned road/image SEP positions
    std::pair<int, int> cls_pair{0, 0};
    bool operator==(const Correspondence&) const = default;
};

struct Vocab {
    std::vector<NodeId> ids; // index -> node id

    static Vocab from_world(const World& w);
    static Vocab from_ids(std::vector<NodeId> ids);

    int index_of(NodeId id) const; // throws VocabError on unknown id
    int size() const { return static_cast<int>(ids.size()); }

private:
    std::map<NodeId, int> index_;
};

RoadTokenSeq tokenize_road(const RoadPath& path, const ImagePath& image_path);

ImageTokenSeq tokenize_image(const ImagePath& image_path, const TileGrid& grid, int patch_o);

Correspondence build_correspondence(const RoadTokenSeq& road_seq, const ImageTokenSeq& image_seq,
                                    const RoadPath& path, const RoadNetwork& network,
                                    const TileGrid& grid, int patch_o);

// Positions of SEP tokens in sequence order.
std::vector<int> sep_positions_road(const RoadTokenSeq& seq);
std::vector<int> sep_positions_image(const ImageTokenSeq& seq);

} // namespace mmpath
