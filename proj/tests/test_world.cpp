#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmpath/rng.hpp"
#include "mmpath/world.hpp"
#include "mmpath/world_io.hpp"

using namespace mmpath;

namespace {

TileGrid paper_grid() {
    TileGrid g;
    g.r = 500;
    g.meters_per_pixel = 2.0; // 1 km tiles
    g.cols = 4;
    g.rows = 4;
    g.channels = 3;
    return g;
}

WorldConfig tiny_world_cfg() {
    WorldConfig cfg;
    cfg.cols = 4;
    cfg.rows = 4;
    cfg.r = 16;
    cfg.meters_per_pixel = 62.5; // 1 km tiles
    cfg.channels = 3;
    cfg.node_count = 24;
    cfg.target_edge_len = 400;
    cfg.path_count = 24;
    cfg.path_min_nodes = 3;
    cfg.path_max_nodes = 8;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("locate_tile basic cases") {
    TileGrid g = paper_grid();
    CHECK(locate_tile(g, {0, 0}) == TileCoord{0, 0});
    CHECK(locate_tile(g, {1500, 250}) == TileCoord{1, 0});
    // half-open intervals put an exact boundary point in the right tile
    CHECK(locate_tile(g, {1000, 0}) == TileCoord{1, 0});
    CHECK_THROWS_AS(locate_tile(g, {-1, 0}), DomainError);
    CHECK_THROWS_AS(locate_tile(g, {4000.0, 10}), DomainError);
}

TEST_CASE("locate_tile matches the integer-division oracle on random points") {
    TileGrid g = paper_grid();
    Rng rng(7);
    double side = g.tile_side_m();
    for (int i = 0; i < 500; ++i) {
        Point p{rng.uniform(0, g.cols * side - 1e-9), rng.uniform(0, g.rows * side - 1e-9)};
        TileCoord t = locate_tile(g, p);
        CHECK(t.cx == static_cast<int>(std::floor(p.x / side)));
        CHECK(t.cy == static_cast<int>(std::floor(p.y / side)));
    }
}

TEST_CASE("locate_patch row-major indexing") {
    TileGrid g = paper_grid();
    // o = 125 -> 4x4 lattice of 250 m patches
    auto loc = locate_patch(g, 125, {260, 10});
    CHECK(loc.tile == TileCoord{0, 0});
    CHECK(loc.k == 2);
    CHECK(locate_patch(g, 125, {0, 0}).k == 1);
    auto last = locate_patch(g, 125, {999, 999});
    CHECK(last.tile == TileCoord{0, 0});
    CHECK(last.k == 16);
    CHECK_THROWS_AS(locate_patch(g, 123, {10, 10}), ConfigError);
}

TEST_CASE("locate_patch agrees with locate_tile and the row-major oracle") {
    TileGrid g = paper_grid();
    Rng rng(11);
    double side = g.tile_side_m();
    double patch_side = 125 * g.meters_per_pixel;
    for (int i = 0; i < 500; ++i) {
        Point p{rng.uniform(0, g.cols * side - 1e-9), rng.uniform(0, g.rows * side - 1e-9)};
        auto loc = locate_patch(g, 125, p);
        CHECK(loc.tile == locate_tile(g, p));
        double in_x = p.x - loc.tile.cx * side;
        double in_y = p.y - loc.tile.cy * side;
        int pc = static_cast<int>(std::floor(in_x / patch_side));
        int pr = static_cast<int>(std::floor(in_y / patch_side));
        CHECK(loc.k == pr * 4 + pc + 1);
    }
}

TEST_CASE("derive_image_path splits runs of tiles") {
    // Hand-built two-tile world: nodes 0..7 walk east across a tile border.
    World w;
    w.grid = paper_grid();
    for (int i = 0; i < 8; ++i) {
        double x = (i < 3) ? 100.0 * (i + 1) : (i < 6 ? 1000.0 + 100.0 * (i - 2) : 2000.0 + 100.0 * (i - 5));
        w.network.nodes.push_back({i, x, 50.0});
    }
    for (int i = 0; i + 1 < 8; ++i) w.network.edges.push_back({i, i + 1});
    RoadPath p{0, {0, 1, 2, 3, 4, 5, 6, 7}};

    ImagePath ip = derive_image_path(p, w.network, w.grid);
    REQUIRE(ip.tiles.size() == 3);
    CHECK(ip.tiles[0] == w.grid.tile_id({0, 0}));
    CHECK(ip.tiles[1] == w.grid.tile_id({1, 0}));
    CHECK(ip.tiles[2] == w.grid.tile_id({2, 0}));
    REQUIRE(ip.sub_paths.size() == 3);
    CHECK(ip.sub_paths[0] == SubPathSpan{0, 3});
    CHECK(ip.sub_paths[1] == SubPathSpan{3, 6});
    CHECK(ip.sub_paths[2] == SubPathSpan{6, 8});
}

TEST_CASE("derive_image_path single tile and revisit cases") {
    World w;
    w.grid = paper_grid();
    w.network.nodes.push_back({0, 100, 100});
    w.network.nodes.push_back({1, 200, 100});
    w.network.edges.push_back({0, 1});
    RoadPath p{0, {0, 1}};
    ImagePath single = derive_image_path(p, w.network, w.grid);
    CHECK(single.tiles.size() == 1);
    CHECK(single.sub_paths[0] == SubPathSpan{0, 2});

    // node tiles A, A, B, A -> image path A, B, A (run-length oracle)
    World w2;
    w2.grid = paper_grid();
    w2.network.nodes.push_back({0, 100, 100});
    w2.network.nodes.push_back({1, 300, 100});
    w2.network.nodes.push_back({2, 1200, 100}); // tile B
    w2.network.nodes.push_back({3, 500, 100});  // back to A
    w2.network.edges.push_back({0, 1});
    w2.network.edges.push_back({1, 2});
    w2.network.edges.push_back({2, 3});
    RoadPath p2{1, {0, 1, 2, 3}};
    ImagePath ip2 = derive_image_path(p2, w2.network, w2.grid);
    TileId a = w2.grid.tile_id({0, 0});
    TileId b = w2.grid.tile_id({1, 0});
    CHECK(ip2.tiles == std::vector<TileId>{a, b, a});
    CHECK(ip2.sub_paths.size() == 3);
}

TEST_CASE("image path spans partition the road path on random worlds") {
    World w = generate_synthetic_world(3, tiny_world_cfg());
    for (const auto& p : w.paths) {
        ImagePath ip = derive_image_path(p, w.network, w.grid);
        REQUIRE(ip.tiles.size() == ip.sub_paths.size());
        int expect = 0;
        for (const auto& span : ip.sub_paths) {
            CHECK(span.start == expect);
            CHECK(span.end > span.start);
            expect = span.end;
        }
        CHECK(expect == static_cast<int>(p.nodes.size()));
        // each run is maximal: adjacent runs sit in different tiles
        for (size_t i = 0; i + 1 < ip.tiles.size(); ++i) {
            CHECK(ip.tiles[i] != ip.tiles[i + 1]);
        }
    }
}

TEST_CASE("generate_synthetic_world is deterministic and valid") {
    WorldConfig cfg = tiny_world_cfg();
    World a = generate_synthetic_world(5, cfg);
    World b = generate_synthetic_world(5, cfg);
    CHECK(a == b);

    World c = generate_synthetic_world(6, cfg);
    CHECK(a != c);

    // invariants: consecutive-edge membership, bounding box
    double max_x = a.grid.origin_x + a.grid.cols * a.grid.tile_side_m();
    double max_y = a.grid.origin_y + a.grid.rows * a.grid.tile_side_m();
    for (const auto& n : a.network.nodes) {
        CHECK(n.x >= a.grid.origin_x);
        CHECK(n.x < max_x);
        CHECK(n.y >= a.grid.origin_y);
        CHECK(n.y < max_y);
    }
    for (const auto& p : a.paths) {
        REQUIRE(p.nodes.size() >= 2);
        for (size_t i = 0; i + 1 < p.nodes.size(); ++i) {
            CHECK(a.network.has_edge(p.nodes[i], p.nodes[i + 1]));
        }
    }

    CHECK_THROWS_AS(generate_synthetic_world(1, WorldConfig{.node_count = 0}), ConfigError);
}

TEST_CASE("world serialization round-trips byte-for-byte") {
    World w = generate_synthetic_world(9, tiny_world_cfg());
    auto dir = std::filesystem::temp_directory_path() / "mmpath_world_rt";
    std::filesystem::remove_all(dir);
    save_world(w, dir);
    World loaded = load_world(dir);
    CHECK(w == loaded);

    auto dir2 = std::filesystem::temp_directory_path() / "mmpath_world_rt2";
    std::filesystem::remove_all(dir2);
    save_world(loaded, dir2);
    CHECK(slurp(dir / "network.jsonl") == slurp(dir2 / "network.jsonl"));
    CHECK(slurp(dir / "paths.jsonl") == slurp(dir2 / "paths.jsonl"));
    CHECK(slurp(dir / "tiles.json") == slurp(dir2 / "tiles.json"));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("synth_labels: noiseless linear case and clamping") {
    World w = generate_synthetic_world(13, tiny_world_cfg());

    // all delays zero -> exactly a * length
    TravelTimeGen gen;
    gen.seconds_per_meter = 0.08;
    gen.node_delay.assign(w.network.nodes.size(), 0.0);
    LabelSet labels = synth_labels_with(w, gen, Task::TravelTime, 13, 0.0);
    for (const auto& p : w.paths) {
        double expect = 0.08 * path_length_m(p, w.network);
        CHECK(labels.at(p.path_id).travel_time_s == doctest::Approx(expect).epsilon(1e-12));
    }

    // ranking scores clamp to [0, 1] even under noise
    LabelSet noisy = synth_labels(w, Task::Ranking, 13, 0.5);
    for (const auto& [pid, lab] : noisy) {
        CHECK(lab.ranking_score >= 0.0);
        CHECK(lab.ranking_score <= 1.0);
        CHECK(lab.travel_time_s > 0.0);
    }
}

TEST_CASE("synth_labels: travel time correlates with path length") {
    WorldConfig cfg = tiny_world_cfg();
    cfg.path_count = 64;
    World w = generate_synthetic_world(17, cfg);
    LabelSet base = synth_labels(w, Task::TravelTime, 17, 0.0);
    double mean_tt = 0;
    for (const auto& [pid, lab] : base) mean_tt += lab.travel_time_s;
    mean_tt /= static_cast<double>(base.size());

    LabelSet labels = synth_labels(w, Task::TravelTime, 17, 0.05 * mean_tt);
    std::vector<double> lens, tts;
    for (const auto& p : w.paths) {
        lens.push_back(path_length_m(p, w.network));
        tts.push_back(labels.at(p.path_id).travel_time_s);
    }
    // sample-correlation oracle
    double ml = 0, mt = 0;
    for (size_t i = 0; i < lens.size(); ++i) {
        ml += lens[i];
        mt += tts[i];
    }
    ml /= static_cast<double>(lens.size());
    mt /= static_cast<double>(tts.size());
    double cov = 0, vl = 0, vt = 0;
    for (size_t i = 0; i < lens.size(); ++i) {
        cov += (lens[i] - ml) * (tts[i] - mt);
        vl += (lens[i] - ml) * (lens[i] - ml);
        vt += (tts[i] - mt) * (tts[i] - mt);
    }
    CHECK(cov / std::sqrt(vl * vt) > 0.9);
}

TEST_CASE("labels csv round-trip") {
    World w = generate_synthetic_world(19, tiny_world_cfg());
    LabelSet labels = synth_labels(w, Task::TravelTime, 19, 1.0);
    auto file = std::filesystem::temp_directory_path() / "mmpath_labels.csv";
    save_labels(labels, file);
    LabelSet loaded = load_labels(file);
    REQUIRE(loaded.size() == labels.size());
    for (const auto& [pid, lab] : labels) {
        CHECK(loaded.at(pid).travel_time_s == doctest::Approx(lab.travel_time_s).epsilon(1e-15));
        CHECK(loaded.at(pid).ranking_score == doctest::Approx(lab.ranking_score).epsilon(1e-15));
    }
    std::filesystem::remove(file);
}
