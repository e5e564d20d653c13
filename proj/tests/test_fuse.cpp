#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "graph_oracle.hpp"
#include "mmpath/fuse.hpp"
#include "mmpath/model.hpp"
#include "mmpath/rng.hpp"
#include "mmpath/train.hpp"

using namespace mmpath;
using ad::Mat;
using ad::Tape;

namespace {

Mat<double> random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
    Mat<double> m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

// Figure-style world: v1..v3 in tile 0, v4..v6 in tile 1, v7..v8 in tile 2,
// with v4 placed so its patch has all four lattice neighbors (o=4 -> 4x4).
World figure_world() {
    World w;
    w.grid.r = 16;
    w.grid.meters_per_pixel = 62.5;
    w.grid.cols = 4;
    w.grid.rows = 4;
    w.grid.channels = 3;
    // patch side = 250 m
    std::vector<std::pair<double, double>> pts = {
        {100, 50},   {350, 60},   {650, 70},   // tile 0, patches 1,2,3
        {1375, 375}, {1650, 630}, {1900, 390}, // tile 1; v4 in k=6, v5 diagonal k=11
        {2100, 50},  {2400, 60},               // tile 2
    };
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        w.network.nodes.push_back({i, pts[static_cast<size_t>(i)].first,
                                   pts[static_cast<size_t>(i)].second});
    }
    for (int i = 0; i + 1 < static_cast<int>(pts.size()); ++i) w.network.edges.push_back({i, i + 1});
    w.paths.push_back({0, {0, 1, 2, 3, 4, 5, 6, 7}});
    size_t raster_len = static_cast<size_t>(w.grid.r) * w.grid.r * w.grid.channels;
    for (int t = 0; t < w.grid.tile_count(); ++t) w.rasters.push_back(Raster(raster_len, 128));
    return w;
}

struct Built {
    RoadTokenSeq road;
    ImageTokenSeq image;
    Correspondence corr;
    CrossModalGraph graph;
};

Built build_for(const World& w, const RoadPath& p, int patch_o) {
    Built b;
    ImagePath ip = derive_image_path(p, w.network, w.grid);
    b.road = tokenize_road(p, ip);
    b.image = tokenize_image(ip, w.grid, patch_o);
    b.corr = build_correspondence(b.road, b.image, p, w.network, w.grid, patch_o);
    b.graph = build_graph(b.road, b.image, b.corr);
    return b;
}

std::vector<int> in_neighbors(const CrossModalGraph& g, int dst) {
    std::vector<int> out;
    for (int src = 0; src < g.size(); ++src) {
        if (g.at(dst, src)) out.push_back(src);
    }
    return out;
}

} // namespace

TEST_CASE("interior node collects exactly the five Figure-4 entities") {
    World w = figure_world();
    Built b = build_for(w, w.paths[0], 4);

    // v4 = node index 3, road position 1 + 3 + sub(3)=1 -> 5
    int v4 = 5;
    REQUIRE(b.road.tokens[static_cast<size_t>(v4)].node == 3);
    auto nbrs = in_neighbors(b.graph, v4);
    REQUIRE(nbrs.size() == 5);

    // expected: road positions of v3, v5 and patches L(v3), L(v4), L(v5)
    std::map<int, int> patch_of; // node path-index -> global patch pos
    for (const auto& [rp, ipos] : b.corr.node_pairs) {
        patch_of[b.road.tokens[static_cast<size_t>(rp)].path_index] = b.road.length() + ipos;
    }
    std::set<int> expect = {3, 6, patch_of[2], patch_of[3], patch_of[4]};
    CHECK(std::set<int>(nbrs.begin(), nbrs.end()) == expect);
}

TEST_CASE("interior patch collects exactly the nine Figure-4 entities") {
    World w = figure_world();
    Built b = build_for(w, w.paths[0], 4);

    std::map<int, int> patch_of;
    for (const auto& [rp, ipos] : b.corr.node_pairs) {
        patch_of[b.road.tokens[static_cast<size_t>(rp)].path_index] = b.road.length() + ipos;
    }
    int lv4 = patch_of[3]; // k=6, all four lattice neighbors inside the tile
    auto nbrs = in_neighbors(b.graph, lv4);
    REQUIRE(nbrs.size() == 9);
    std::set<int> expect = {3, 5, 6, patch_of[2], patch_of[4],
                            lv4 - 1, lv4 + 1, lv4 - 4, lv4 + 4};
    CHECK(std::set<int>(nbrs.begin(), nbrs.end()) == expect);
}

TEST_CASE("cls in-degree and node in-degree invariants") {
    WorldConfig cfg;
    cfg.cols = 4;
    cfg.rows = 4;
    cfg.r = 16;
    cfg.meters_per_pixel = 62.5;
    cfg.node_count = 20;
    cfg.path_count = 16;
    cfg.path_min_nodes = 3;
    cfg.path_max_nodes = 8;
    World w = generate_synthetic_world(41, cfg);
    for (const auto& p : w.paths) {
        Built b = build_for(w, p, 8);
        int n2 = b.road.length();
        int seps = b.road.sub_path_count;
        CHECK(static_cast<int>(in_neighbors(b.graph, 0).size()) == 2 * seps + 1);
        CHECK(static_cast<int>(in_neighbors(b.graph, n2).size()) == 2 * seps + 1);
        for (int pos = 0; pos < n2; ++pos) {
            if (b.road.tokens[static_cast<size_t>(pos)].kind == RoadTok::Node) {
                CHECK(in_neighbors(b.graph, pos).size() >= 1);
            }
        }
        // zero diagonal, binary entries by construction
        for (int i = 0; i < b.graph.size(); ++i) CHECK(b.graph.at(i, i) == 0);
    }
}

TEST_CASE("graph depends only on structure, not path ids") {
    World w = figure_world();
    Built a = build_for(w, w.paths[0], 4);
    RoadPath renamed = w.paths[0];
    renamed.path_id = 777;
    Built b = build_for(w, renamed, 4);
    CHECK(a.graph.adj == b.graph.adj);
    CHECK(a.graph.node_bearing_patches == b.graph.node_bearing_patches);
}

TEST_CASE("build_graph matches the brute-force rule oracle") {
    WorldConfig cfg;
    cfg.cols = 4;
    cfg.rows = 4;
    cfg.r = 16;
    cfg.meters_per_pixel = 62.5;
    cfg.node_count = 18;
    cfg.path_count = 24;
    cfg.path_min_nodes = 2;
    cfg.path_max_nodes = 8;
    World w = generate_synthetic_world(43, cfg);
    for (const auto& p : w.paths) {
        Built b = build_for(w, p, 8); // 2x2 patch lattice
        oracle::GraphOracle og = oracle::analyze(w, p, 8);
        REQUIRE(og.size() == b.graph.size());
        for (int dst = 0; dst < og.size(); ++dst) {
            for (int src = 0; src < og.size(); ++src) {
                if (b.graph.at(dst, src) != (oracle::edge_exists(og, dst, src) ? 1 : 0)) {
                    CAPTURE(p.path_id);
                    CAPTURE(dst);
                    CAPTURE(src);
                    FAIL("adjacency mismatch against the rule oracle");
                }
            }
        }
        auto diag = augment_diag(b.graph);
        for (int i = 0; i < og.size(); ++i) {
            CHECK(diag[static_cast<size_t>(i)] == (oracle::diag_one(og, i) ? 1 : 0));
        }
    }
}

TEST_CASE("augment diagonal rules") {
    World w = figure_world();

    SUBCASE("single-patch tiles make every patch node-bearing") {
        Built b = build_for(w, w.paths[0], 16); // g = 1
        auto diag = augment_diag(b.graph);
        for (uint8_t d : diag) CHECK(d == 1);
    }

    SUBCASE("a patch seen only as a lattice neighbor keeps diagonal 0") {
        Built b = build_for(w, w.paths[0], 4);
        auto diag = augment_diag(b.graph);
        std::set<int> bearing = b.graph.node_bearing_patches;
        int zero_count = 0;
        for (int i = 0; i < b.image.length(); ++i) {
            bool is_patch = b.image.tokens[static_cast<size_t>(i)].kind == ImageTok::Patch;
            int global = b.road.length() + i;
            if (is_patch && !bearing.count(i)) {
                CHECK(diag[static_cast<size_t>(global)] == 0);
                ++zero_count;
            } else {
                CHECK(diag[static_cast<size_t>(global)] == 1);
            }
        }
        CHECK(zero_count > 0); // the 4x4 lattice leaves unvisited patches
    }
}

TEST_CASE("residual concat stacks blocks in the documented layout") {
    Rng rng(3);
    int n2 = 3, n1 = 2, d = 4;
    auto p0 = random_mat(rng, n2, d);
    auto h = random_mat(rng, n1, d);
    auto p = random_mat(rng, n2, d);
    auto h0 = random_mat(rng, n1, d);
    Tape<double> t;
    auto [u, q] = residual_concat(t.leaf(p0), t.leaf(h), t.leaf(p), t.leaf(h0));
    CHECK(u.rows() == n1 + n2);
    CHECK((u.val().topRows(n2) - p0).norm() == 0.0);
    for (int k = 0; k < n1; ++k) {
        CHECK((u.val().row(n2 + k) - h.row(k)).norm() == 0.0);
        CHECK((q.val().row(n2 + k) - h0.row(k)).norm() == 0.0);
    }
    CHECK((q.val().topRows(n2) - p).norm() == 0.0);

    Tape<double> t2;
    auto [uz, qz] = residual_concat(t2.leaf(Mat<double>::Zero(n2, d)), t2.leaf(Mat<double>::Zero(n1, d)),
                                    t2.leaf(Mat<double>::Zero(n2, d)), t2.leaf(Mat<double>::Zero(n1, d)));
    CHECK(uz.val().norm() == 0.0);
    CHECK(qz.val().norm() == 0.0);

    CHECK_THROWS_AS(residual_concat(t.leaf(p0), t.leaf(h), t.leaf(p), t.leaf(random_mat(rng, n1, d + 1))),
                    DimensionError);
}

TEST_CASE("gcn identity propagation and dense oracle") {
    SUBCASE("identity adjacency with identity weights passes X through") {
        Tape<double> t;
        Mat<double> x(3, 2);
        x << 1, 2, 0, 3, 4, 0; // non-negative
        Mat<double> a_tilde = Mat<double>::Identity(3, 3);
        auto out = gcn(t.leaf(x), a_tilde, t.leaf(Mat<double>::Identity(2, 2)),
                       t.leaf(Mat<double>::Identity(2, 2)));
        CHECK((out.val() - x).norm() == 0.0);
    }

    SUBCASE("three-token chain matches a dense matrix oracle") {
        // chain 0 <- 1 <- 2 plus self loops
        Mat<double> a_tilde(3, 3);
        a_tilde << 1, 1, 0, 0, 1, 1, 0, 0, 1;
        Rng rng(5);
        Mat<double> x = random_mat(rng, 3, 2);
        Mat<double> w1 = random_mat(rng, 2, 2);
        Mat<double> w2 = random_mat(rng, 2, 2);

        Tape<double> t;
        auto out = gcn(t.leaf(x), a_tilde, t.leaf(w1), t.leaf(w2));

        Eigen::Vector3d deg = a_tilde.rowwise().sum();
        Eigen::Matrix3d dinv = Eigen::Vector3d(deg.array().rsqrt()).asDiagonal();
        Eigen::MatrixXd norm = dinv * a_tilde * dinv;
        Eigen::MatrixXd inner = (norm * x * w1).cwiseMax(0.0);
        Eigen::MatrixXd expect = (norm * inner * w2).cwiseMax(0.0);
        CHECK((out.val() - expect).cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("rows with no edges at all stay zero") {
        Mat<double> a_tilde = Mat<double>::Zero(3, 3);
        a_tilde(0, 0) = 1;
        a_tilde(1, 1) = 1; // row 2 fully isolated
        Rng rng(6);
        Tape<double> t;
        auto out = gcn(t.leaf(random_mat(rng, 3, 2)), a_tilde, t.leaf(random_mat(rng, 2, 2)),
                       t.leaf(random_mat(rng, 2, 2)));
        CHECK(out.val().row(2).norm() == 0.0);
    }

    SUBCASE("negative adjacency entries are rejected") {
        Tape<double> t;
        Mat<double> bad = -Mat<double>::Identity(2, 2);
        CHECK_THROWS_AS(gcn(t.leaf(Mat<double>::Zero(2, 2)), bad,
                            t.leaf(Mat<double>::Identity(2, 2)), t.leaf(Mat<double>::Identity(2, 2))),
                        DimensionError);
    }

    SUBCASE("gradients w.r.t. both weight matrices match finite differences") {
        Mat<double> a_tilde(3, 3);
        a_tilde << 1, 1, 0, 1, 1, 1, 0, 0, 1;
        Rng rng(7);
        Mat<double> x = random_mat(rng, 3, 4);
        Mat<double> w1 = random_mat(rng, 4, 4);
        Mat<double> w2 = random_mat(rng, 4, 4);

        auto eval = [&](const Mat<double>& a, const Mat<double>& b) {
            Tape<double> t;
            auto out = gcn(t.leaf(x), a_tilde, t.leaf(a), t.leaf(b));
            return ad::sum_all(ad::mul(out, out)).scalar();
        };
        Tape<double> t;
        auto w1v = t.leaf(w1, true);
        auto w2v = t.leaf(w2, true);
        auto out = gcn(t.leaf(x), a_tilde, w1v, w2v);
        t.backward(ad::sum_all(ad::mul(out, out)));
        for (auto [wv, wm, which] : {std::tuple{w1v, &w1, 0}, std::tuple{w2v, &w2, 1}}) {
            Mat<double> an = t.grad(wv.idx);
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) {
                    double orig = (*wm)(i, j);
                    double h = 1e-6 * std::max(1.0, std::abs(orig));
                    (*wm)(i, j) = orig + h;
                    double up = eval(w1, w2);
                    (*wm)(i, j) = orig - h;
                    double down = eval(w1, w2);
                    (*wm)(i, j) = orig;
                    double fd = (up - down) / (2 * h);
                    CHECK(std::abs(fd - an(i, j)) <=
                          std::max(1e-8, 1e-4 * std::max(std::abs(fd), std::abs(an(i, j)))));
                }
            }
        }
    }
}

TEST_CASE("pool is the arithmetic row mean") {
    Tape<double> t;
    Mat<double> c = Mat<double>::Constant(5, 3, 2.5);
    CHECK((pool(t.leaf(c)).val() - Mat<double>::Constant(1, 3, 2.5)).norm() == 0.0);
    CHECK(pool(t.leaf(Mat<double>::Zero(4, 2))).val().norm() == 0.0);
    Rng rng(8);
    auto x = random_mat(rng, 7, 3);
    CHECK((pool(t.leaf(x)).val() - x.colwise().mean()).norm() < 1e-12);
}

TEST_CASE("quadruplet loss cases") {
    Tape<double> t;
    auto mk = [&](std::initializer_list<double> vals) {
        Mat<double> m(1, static_cast<Eigen::Index>(vals.size()));
        int j = 0;
        for (double v : vals) m(0, j++) = v;
        return t.leaf(m);
    };

    SUBCASE("satisfied margins give zero") {
        auto y = mk({1, 1});
        auto z = mk({1, 1});
        auto yn = mk({9, 9});
        auto zn = mk({-9, 5});
        CHECK(fuse_loss_terms(y, z, yn, zn, 1.0).scalar() == 0.0);
    }

    SUBCASE("total collapse gives 2 beta") {
        auto y = mk({2, 3});
        CHECK(fuse_loss_terms(y, y, y, y, 1.5).scalar() == doctest::Approx(3.0));
    }

    SUBCASE("random vectors match the direct formula") {
        Rng rng(9);
        for (int trial = 0; trial < 30; ++trial) {
            Mat<double> ym = random_mat(rng, 1, 3), zm = random_mat(rng, 1, 3);
            Mat<double> ynm = random_mat(rng, 1, 3), znm = random_mat(rng, 1, 3);
            double beta = 0.7;
            double pos = (ym - zm).squaredNorm();
            double expect = std::max(0.0, pos - (ym - znm).squaredNorm() + beta) +
                            std::max(0.0, pos - (zm - ynm).squaredNorm() + beta);
            Tape<double> t2;
            double got = fuse_loss_terms(t2.leaf(ym), t2.leaf(zm), t2.leaf(ynm), t2.leaf(znm),
                                         beta).scalar();
            CHECK(got == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    SUBCASE("invariant under a simultaneous orthogonal rotation") {
        Rng rng(10);
        Mat<double> ym = random_mat(rng, 1, 3), zm = random_mat(rng, 1, 3);
        Mat<double> ynm = random_mat(rng, 1, 3), znm = random_mat(rng, 1, 3);
        // Householder reflection: orthogonal by construction
        Eigen::Vector3d v = Eigen::Vector3d(1.0, -2.0, 0.5).normalized();
        Eigen::Matrix3d rot = Eigen::Matrix3d::Identity() - 2.0 * v * v.transpose();
        Tape<double> t2;
        double base = fuse_loss_terms(t2.leaf(ym), t2.leaf(zm), t2.leaf(ynm), t2.leaf(znm), 1.0).scalar();
        double rotated = fuse_loss_terms(t2.leaf(Mat<double>(ym * rot)), t2.leaf(Mat<double>(zm * rot)),
                                         t2.leaf(Mat<double>(ynm * rot)), t2.leaf(Mat<double>(znm * rot)),
                                         1.0).scalar();
        CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
    }

    SUBCASE("gradients match finite differences") {
        Rng rng(11);
        Mat<double> vals[4] = {random_mat(rng, 1, 4), random_mat(rng, 1, 4), random_mat(rng, 1, 4),
                               random_mat(rng, 1, 4)};
        auto eval = [&] {
            Tape<double> t2;
            return fuse_loss_terms(t2.leaf(vals[0]), t2.leaf(vals[1]), t2.leaf(vals[2]),
                                   t2.leaf(vals[3]), 2.0).scalar();
        };
        Tape<double> t2;
        ad::Var<double> vars[4];
        for (int k = 0; k < 4; ++k) vars[k] = t2.leaf(vals[k], true);
        auto loss = fuse_loss_terms(vars[0], vars[1], vars[2], vars[3], 2.0);
        t2.backward(loss);
        for (int k = 0; k < 4; ++k) {
            Mat<double> an = t2.grad_live(vars[k].idx) ? t2.grad(vars[k].idx) : Mat<double>::Zero(1, 4);
            for (int j = 0; j < 4; ++j) {
                double orig = vals[k](0, j);
                double h = 1e-6;
                vals[k](0, j) = orig + h;
                double up = eval();
                vals[k](0, j) = orig - h;
                double down = eval();
                vals[k](0, j) = orig;
                double fd = (up - down) / (2 * h);
                CHECK(std::abs(fd - an(0, j)) <=
                      std::max(1e-8, 1e-4 * std::max(std::abs(fd), std::abs(an(0, j)))));
            }
        }
    }
}

TEST_CASE("path embedding concatenates y then z") {
    Tape<double> t;
    Mat<double> y(1, 2), z(1, 2);
    y << 1, 2;
    z << 3, 4;
    auto x = path_embedding(t.leaf(y), t.leaf(z));
    Mat<double> expect(1, 4);
    expect << 1, 2, 3, 4;
    CHECK((x.val() - expect).norm() == 0.0);
    CHECK((x.val().leftCols(2) - y).norm() == 0.0);
    CHECK((x.val().rightCols(2) - z).norm() == 0.0);

    auto zeros = path_embedding(t.leaf(Mat<double>::Zero(1, 3)), t.leaf(Mat<double>::Zero(1, 3)));
    CHECK(zeros.val().norm() == 0.0);
    CHECK(zeros.cols() == 6);

    CHECK_THROWS_AS(path_embedding(t.leaf(y), t.leaf(Mat<double>::Zero(1, 3))), DimensionError);
}

TEST_CASE("graph dump round-trips and is byte-stable") {
    World w = figure_world();
    Built b = build_for(w, w.paths[0], 4);
    std::string dump1 = graph_dump_json(b.graph);
    std::string dump2 = graph_dump_json(b.graph);
    CHECK(dump1 == dump2);

    CrossModalGraph parsed = graph_from_json(dump1);
    CHECK(parsed.adj == b.graph.adj);
    CHECK(parsed.n_road == b.graph.n_road);
    CHECK(parsed.n_image == b.graph.n_image);
    CHECK(parsed.node_bearing_patches == b.graph.node_bearing_patches);
}
