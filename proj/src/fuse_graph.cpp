#include "mmpath/fuse.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace mmpath {

namespace {

std::string road_kind_name(RoadTok k) {
    switch (k) {
        case RoadTok::Cls: return "road.cls";
        case RoadTok::Node: return "road.node";
        case RoadTok::Sep: return "road.sep";
        case RoadTok::Mask: return "road.mask";
    }
    return "?";
}

std::string image_kind_name(ImageTok k) {
    switch (k) {
        case ImageTok::Cls: return "image.cls";
        case ImageTok::Patch: return "image.patch";
        case ImageTok::Sep: return "image.sep";
    }
    return "?";
}

} // namespace

CrossModalGraph build_graph(const RoadTokenSeq& road_seq, const ImageTokenSeq& image_seq,
                            const Correspondence& corr) {
    const int n2 = road_seq.length();
    const int n1 = image_seq.length();
    const int n = n1 + n2;

    CrossModalGraph g;
    g.n_road = n2;
    g.n_image = n1;
    g.adj.assign(static_cast<size_t>(n) * n, 0);
    for (const auto& t : road_seq.tokens) g.layout.push_back(road_kind_name(t.kind));
    for (const auto& t : image_seq.tokens) g.layout.push_back(image_kind_name(t.kind));

    for (const auto& [rp, ip] : corr.node_pairs) {
        if (rp < 0 || rp >= n2 || ip < 0 || ip >= n1) {
            throw ConsistencyError("correspondence pair outside token sequences");
        }
    }

    // No self-loops here; the diagonal belongs to I'.
    auto edge = [&](int dst, int src) {
        if (dst != src) g.set(dst, src);
    };

    // Road token positions of the path nodes, in path order, and each
    // node's patch position (global index).
    std::vector<int> node_pos;
    for (int i = 0; i < n2; ++i) {
        RoadTok k = road_seq.tokens[static_cast<size_t>(i)].kind;
        if (k == RoadTok::Node || k == RoadTok::Mask) node_pos.push_back(i);
    }
    std::vector<int> patch_of(node_pos.size(), -1);
    {
        std::vector<int> by_road_pos(static_cast<size_t>(n2), -1);
        for (const auto& [rp, ip] : corr.node_pairs) by_road_pos[static_cast<size_t>(rp)] = ip;
        for (size_t i = 0; i < node_pos.size(); ++i) {
            int ip = by_road_pos[static_cast<size_t>(node_pos[i])];
            if (ip < 0) throw ConsistencyError("node position missing from correspondence");
            patch_of[i] = n2 + ip;
            g.node_bearing_patches.insert(ip);
        }
    }

    const int k_count = static_cast<int>(node_pos.size());
    for (int i = 0; i < k_count; ++i) {
        int v = node_pos[static_cast<size_t>(i)];
        int lv = patch_of[static_cast<size_t>(i)];
        int v_prev = i > 0 ? node_pos[static_cast<size_t>(i - 1)] : -1;
        int v_next = i + 1 < k_count ? node_pos[static_cast<size_t>(i + 1)] : -1;
        int l_prev = i > 0 ? patch_of[static_cast<size_t>(i - 1)] : -1;
        int l_next = i + 1 < k_count ? patch_of[static_cast<size_t>(i + 1)] : -1;

        // Node v_i: adjacent context nodes, its patch, their patches.
        if (v_prev >= 0) edge(v, v_prev);
        if (v_next >= 0) edge(v, v_next);
        edge(v, lv);
        if (l_prev >= 0) edge(v, l_prev);
        if (l_next >= 0) edge(v, l_next);

        // Patch L(v_i): the node, its context nodes, their patches.
        edge(lv, v);
        if (v_prev >= 0) edge(lv, v_prev);
        if (v_next >= 0) edge(lv, v_next);
        if (l_prev >= 0) edge(lv, l_prev);
        if (l_next >= 0) edge(lv, l_next);
    }

    // Lattice neighbors feed node-bearing patches, within one image entry.
    const int lattice =
        static_cast<int>(std::lround(std::sqrt(static_cast<double>(image_seq.patches_per_image))));
    for (int ip : g.node_bearing_patches) {
        const ImageToken& t = image_seq.tokens[static_cast<size_t>(ip)];
        int col = (t.k - 1) % lattice;
        int row = (t.k - 1) / lattice;
        int dst = n2 + ip;
        if (col > 0) edge(dst, dst - 1);
        if (col < lattice - 1) edge(dst, dst + 1);
        if (row > 0) edge(dst, dst - lattice);
        if (row < lattice - 1) edge(dst, dst + lattice);
    }

    // Sep tokens: context seps plus the aligned and context seps of the
    // other modality.
    auto road_seps = sep_positions_road(road_seq);
    auto image_seps = sep_positions_image(image_seq);
    if (road_seps.size() != image_seps.size()) {
        throw ConsistencyError("sep count mismatch between modalities");
    }
    const int s_count = static_cast<int>(road_seps.size());
    for (int s = 0; s < s_count; ++s) {
        int rs = road_seps[static_cast<size_t>(s)];
        int is = n2 + image_seps[static_cast<size_t>(s)];
        for (int delta : {-1, 1}) {
            int sn = s + delta;
            if (sn < 0 || sn >= s_count) continue;
            edge(rs, road_seps[static_cast<size_t>(sn)]);
            edge(rs, n2 + image_seps[static_cast<size_t>(sn)]);
            edge(is, n2 + image_seps[static_cast<size_t>(sn)]);
            edge(is, road_seps[static_cast<size_t>(sn)]);
        }
        edge(rs, is);
        edge(is, rs);
    }

    // Cls tokens collect every sep of both modalities and each other.
    const int road_cls = 0;
    const int image_cls = n2;
    for (int s = 0; s < s_count; ++s) {
        edge(road_cls, road_seps[static_cast<size_t>(s)]);
        edge(road_cls, n2 + image_seps[static_cast<size_t>(s)]);
        edge(image_cls, road_seps[static_cast<size_t>(s)]);
        edge(image_cls, n2 + image_seps[static_cast<size_t>(s)]);
    }
    edge(road_cls, image_cls);
    edge(image_cls, road_cls);

    return g;
}

std::vector<uint8_t> augment_diag(const CrossModalGraph& graph) {
    std::vector<uint8_t> diag(static_cast<size_t>(graph.size()), 1);
    for (int i = 0; i < graph.n_image; ++i) {
        if (graph.layout[static_cast<size_t>(graph.n_road + i)] == "image.patch" &&
            !graph.node_bearing_patches.count(i)) {
            diag[static_cast<size_t>(graph.n_road + i)] = 0;
        }
    }
    return diag;
}

std::string graph_dump_json(const CrossModalGraph& graph) {
    nlohmann::json j;
    j["size"] = graph.size();
    j["n_road"] = graph.n_road;
    j["n_image"] = graph.n_image;
    j["layout"] = graph.layout;
    std::vector<std::pair<int, int>> edges;
    for (int dst = 0; dst < graph.size(); ++dst) {
        for (int src = 0; src < graph.size(); ++src) {
            if (graph.at(dst, src)) edges.push_back({src, dst});
        }
    }
    std::sort(edges.begin(), edges.end());
    nlohmann::json je = nlohmann::json::array();
    for (const auto& [src, dst] : edges) je.push_back({src, dst});
    j["edges"] = je;
    auto diag = augment_diag(graph);
    j["diag"] = std::vector<int>(diag.begin(), diag.end());
    j["node_bearing_patches"] = std::vector<int>(graph.node_bearing_patches.begin(),
                                                 graph.node_bearing_patches.end());
    return j.dump(2) + "\n";
}

CrossModalGraph graph_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    CrossModalGraph g;
    g.n_road = j.at("n_road").get<int>();
    g.n_image = j.at("n_image").get<int>();
    int n = g.size();
    if (j.at("size").get<int>() != n) throw InputError("graph dump: size mismatch");
    g.layout = j.at("layout").get<std::vector<std::string>>();
    g.adj.assign(static_cast<size_t>(n) * n, 0);
    for (const auto& e : j.at("edges")) {
        int src = e.at(0).get<int>();
        int dst = e.at(1).get<int>();
        if (src < 0 || src >= n || dst < 0 || dst >= n) throw InputError("graph dump: edge out of range");
        g.set(dst, src);
    }
    for (const auto& p : j.at("node_bearing_patches")) {
        g.node_bearing_patches.insert(p.get<int>());
    }
    return g;
}

} // namespace mmpath
