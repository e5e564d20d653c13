#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mmpath/align.hpp"
#include "mmpath/rng.hpp"

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

Correspondence pair_all(int n) {
    Correspondence corr;
    for (int i = 0; i < n; ++i) corr.node_pairs.push_back({i, i});
    return corr;
}

} // namespace

TEST_CASE("fine loss: identical, orthogonal and oracle cases") {
    Rng rng(1);
    auto p = random_mat(rng, 4, 6);

    CHECK(fine_loss_value<double>(p, p, pair_all(4)) == doctest::Approx(0.0).epsilon(1e-9));

    Mat<double> a = Mat<double>::Zero(1, 4), b = Mat<double>::Zero(1, 4);
    a(0, 0) = 2.0;
    b(0, 1) = 3.0; // orthogonal -> cos 0 -> contributes exactly 1
    CHECK(fine_loss_value<double>(a, b, pair_all(1)) == doctest::Approx(1.0));

    auto h = random_mat(rng, 4, 6);
    double expect = 0;
    for (int i = 0; i < 4; ++i) {
        double cos = p.row(i).dot(h.row(i)) / (p.row(i).norm() * h.row(i).norm() + 1e-12);
        expect += 1.0 - cos;
    }
    CHECK(std::abs(fine_loss_value<double>(p, h, pair_all(4)) - expect) <= 1e-9);

    CHECK_THROWS_AS(fine_loss_value<double>(p, h, {}), ConsistencyError);
}

TEST_CASE("fine loss range per pair is [0, 2]") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = random_mat(rng, 1, 5);
        auto h = random_mat(rng, 1, 5);
        double v = fine_loss_value<double>(p, h, pair_all(1));
        CHECK(v >= 0.0);
        CHECK(v <= 2.0 + 1e-12);
    }
}

TEST_CASE("medium loss: identical, antiparallel and oracle cases") {
    Rng rng(3);
    auto rows = random_mat(rng, 3, 5);
    CHECK(medium_loss_value<double>(rows, rows) == doctest::Approx(0.0).epsilon(1e-9));

    Mat<double> a = random_mat(rng, 1, 5);
    Mat<double> b = -2.0 * a; // antiparallel -> cos -1 -> contributes 2
    CHECK(medium_loss_value<double>(a, b) == doctest::Approx(2.0));

    auto other = random_mat(rng, 3, 5);
    double expect = 0;
    for (int i = 0; i < 3; ++i) {
        double cos = rows.row(i).dot(other.row(i)) / (rows.row(i).norm() * other.row(i).norm() + 1e-12);
        expect += 1.0 - cos;
    }
    CHECK(std::abs(medium_loss_value<double>(rows, other) - expect) <= 1e-9);

    Mat<double> mismatched = random_mat(rng, 2, 5);
    CHECK_THROWS_AS(medium_loss_value<double>(rows, mismatched), ConsistencyError);
}

TEST_CASE("cosine losses are invariant to positive rescaling") {
    Rng rng(4);
    auto p = random_mat(rng, 3, 6);
    auto h = random_mat(rng, 3, 6);
    double base = fine_loss_value<double>(p, h, pair_all(3));
    CHECK(fine_loss_value<double>(Mat<double>(3.7 * p), h, pair_all(3)) ==
          doctest::Approx(base).epsilon(1e-9));
    CHECK(fine_loss_value<double>(p, Mat<double>(0.02 * h), pair_all(3)) ==
          doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("coarse loss closed forms") {
    SUBCASE("batch of one has no negatives") {
        Mat<double> a(1, 4), b(1, 4);
        a << 1, 2, 3, 4;
        b << 0, 1, 0, 1;
        CHECK(coarse_loss_value<double>(a, b, 0.1) == doctest::Approx(0.0));
    }

    SUBCASE("two identical pairs give 2 ln 2 per path") {
        Mat<double> cls(2, 4);
        cls << 1, 1, 1, 1, 1, 1, 1, 1;
        CHECK(coarse_loss_value<double>(cls, cls, 0.1) == doctest::Approx(2.0 * std::log(2.0)));
    }

    SUBCASE("separated negatives drive the loss to zero") {
        Mat<double> road(2, 2), image(2, 2);
        road << 0, 0, 1000, 1000;
        image << 0, 0, 1000, 1000; // matched pairs coincide, negatives far
        CHECK(coarse_loss_value<double>(road, image, 0.1) < 1e-9);
    }
}

TEST_CASE("coarse loss decreases as the matched pair tightens") {
    // two-path batch: shrink path 0's matched distance, negatives fixed
    Mat<double> image(2, 2);
    image << 0, 0, 5, 5;
    double prev = 1e30;
    for (double dist : {4.0, 2.0, 1.0, 0.5, 0.25}) {
        Mat<double> road(2, 2);
        road << dist, 0, 5, 5;
        double v = coarse_loss_value<double>(road, image, 0.5);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("coarse loss matches a direct softmax oracle") {
    Rng rng(5);
    int b = 4, d = 6;
    auto road = random_mat(rng, b, d);
    auto image = random_mat(rng, b, d);
    double sigma = 0.37;

    double expect = 0;
    for (int i = 0; i < b; ++i) {
        auto s = [&](int r, int c) {
            return -std::sqrt((road.row(r) - image.row(c)).squaredNorm() + 1e-12) / sigma;
        };
        double denom_row = 0, denom_col = 0;
        for (int j = 0; j < b; ++j) {
            denom_row += std::exp(s(i, j));
            denom_col += std::exp(s(j, i));
        }
        expect += -std::log(std::exp(s(i, i)) / denom_row) - std::log(std::exp(s(i, i)) / denom_col);
    }
    expect /= b;
    CHECK(coarse_loss_value<double>(road, image, sigma) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("multi loss is the exact sum") {
    Tape<double> t;
    auto mk = [&](double v) { return t.scalar_leaf(v); };
    CHECK(multi_loss(mk(0.0), mk(0.0), mk(0.0)).scalar() == 0.0);
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
        CHECK(multi_loss(mk(a), mk(b), mk(c)).scalar() == doctest::Approx(a + b + c).epsilon(1e-15));
        CHECK(multi_loss(mk(a), mk(b), mk(c)).scalar() >= 0.0);
    }
}

TEST_CASE("alignment loss gradients match finite differences at d=8") {
    Rng rng(7);
    int b = 3, d = 8;
    Mat<double> p = random_mat(rng, b, d);
    Mat<double> h = random_mat(rng, b, d);
    Mat<double> sl(1, 1);
    sl(0, 0) = std::log(0.1);

    struct Case {
        const char* name;
        std::function<ad::Var<double>(Tape<double>&, ad::Var<double>, ad::Var<double>, ad::Var<double>)> f;
    };
    std::vector<Case> cases = {
        {"fine",
         [](Tape<double>&, auto pv, auto hv, auto) { return fine_loss_path(pv, hv, pair_all(3)); }},
        {"medium",
         [](Tape<double>&, auto pv, auto hv, auto) {
             return medium_loss_path(pv, hv, {0, 1, 2}, {0, 1, 2});
         }},
        {"coarse",
         [](Tape<double>&, auto pv, auto hv, auto sv) { return coarse_loss_sum(pv, hv, sv); }},
    };

    for (auto& c : cases) {
        CAPTURE(c.name);
        Tape<double> tape;
        auto pv = tape.leaf(p, true);
        auto hv = tape.leaf(h, true);
        auto sv = tape.leaf(sl, true);
        auto loss = c.f(tape, pv, hv, sv);
        tape.backward(loss);
        Mat<double> gp = tape.grad(pv.idx);
        Mat<double> gh = tape.grad(hv.idx);
        Mat<double> gs = tape.grad_live(sv.idx) ? tape.grad(sv.idx) : Mat<double>::Zero(1, 1);

        auto eval = [&](const Mat<double>& pp, const Mat<double>& hh, const Mat<double>& ss) {
            Tape<double> t2;
            return c.f(t2, t2.leaf(pp, false), t2.leaf(hh, false), t2.leaf(ss, false)).scalar();
        };
        auto probe = [&](Mat<double>& target, const Mat<double>& an) {
            for (int i = 0; i < target.rows(); ++i) {
                for (int j = 0; j < target.cols(); ++j) {
                    double orig = target(i, j);
                    double step = 1e-6 * std::max(1.0, std::abs(orig));
                    target(i, j) = orig + step;
                    double up = eval(p, h, sl);
                    target(i, j) = orig - step;
                    double down = eval(p, h, sl);
                    target(i, j) = orig;
                    double fd = (up - down) / (2 * step);
                    CHECK(std::abs(fd - an(i, j)) <=
                          std::max(1e-8, 1e-4 * std::max(std::abs(fd), std::abs(an(i, j)))));
                }
            }
        };
        probe(p, gp);
        probe(h, gh);
        if (std::string(c.name) == "coarse") probe(sl, gs);
    }
}
