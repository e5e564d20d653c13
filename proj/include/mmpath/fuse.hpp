#pragma once

#include <set>
#include <string>
#include <vector>

#include "mmpath/autodiff.hpp"
#include "mmpath/tokenize.hpp"

namespace mmpath {

// Per-path directed graph over all tokens of both modalities.
// A[i][j] = 1 iff a directed edge j -> i exists. Road tokens occupy rows
// 0..n2-1 in sequence order, image tokens rows n2..N-1.
struct CrossModalGraph {
    int n_road = 0;  // n2
    int n_image = 0; // n1
    std::vector<uint8_t> adj; // row-major N x N
    std::set<int> node_bearing_patches; // image token positions (local, 0-based)
    std::vector<std::string> layout;    // token kind per global index

    int size() const { return n_road + n_image; }
    uint8_t at(int dst, int src) const { return adj[static_cast<size_t>(dst) * size() + src]; }
    void set(int dst, int src) { adj[static_cast<size_t>(dst) * size() + src] = 1; }

    bool operator==(const CrossModalGraph&) const = default;
};

CrossModalGraph build_graph(const RoadTokenSeq& road_seq, const ImageTokenSeq& image_seq,
                            const Correspondence& corr);

// Diagonal of the modified identity I': 1 for every road token and image
// cls/sep, 1 for node-bearing patches, 0 for the rest.
std::vector<uint8_t> augment_diag(const CrossModalGraph& graph);

// JSON dump used by tests and the CLI inspector; parse restores the graph.
std::string graph_dump_json(const CrossModalGraph& graph);
CrossModalGraph graph_from_json(const std::string& text);

// A_tilde = A + I' as a dense scalar matrix.
template <class S>
ad::Mat<S> augmented_adjacency(const CrossModalGraph& graph) {
    int n = graph.size();
    auto diag = augment_diag(graph);
    ad::Mat<S> m = ad::Mat<S>::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (graph.at(i, j)) m(i, j) = S(1);
        }
        if (diag[static_cast<size_t>(i)]) m(i, i) = S(1);
    }
    return m;
}

// D^{-1/2} A_tilde D^{-1/2} with D the diagonal of row sums; zero-degree
// rows get a zero scaling factor.
template <class S>
ad::Mat<S> normalize_adjacency(const ad::Mat<S>& a_tilde) {
    if ((a_tilde.array() < S(0)).any()) {
        throw DimensionError("adjacency has negative entries");
    }
    Eigen::Index n = a_tilde.rows();
    Eigen::Matrix<S, Eigen::Dynamic, 1> dinv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        S deg = a_tilde.row(i).sum();
        dinv(i) = deg > S(0) ? S(1) / std::sqrt(deg) : S(0);
    }
    return dinv.asDiagonal() * a_tilde * dinv.asDiagonal();
}

// ---- fusion forward ------------------------------------------------------

// U = P0 stacked over H; Q = P stacked over H0.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> residual_concat(ad::Var<S> p0, ad::Var<S> h, ad::Var<S> p,
                                                  ad::Var<S> h0) {
    if (p0.cols() != h.cols() || p.cols() != h0.cols() || p0.cols() != p.cols()) {
        throw DimensionError("residual_concat: embedding widths differ");
    }
    if (p0.rows() != p.rows() || h.rows() != h0.rows()) {
        throw DimensionError("residual_concat: sequence lengths differ");
    }
    return {ad::concat_rows<S>({p0, h}), ad::concat_rows<S>({p, h0})};
}

// Two-layer propagation: relu(N relu(N X Wa) Wb) with N the normalized
// augmented adjacency.
template <class S>
ad::Var<S> gcn(ad::Var<S> x, const ad::Mat<S>& a_tilde, ad::Var<S> w_a, ad::Var<S> w_b) {
    if (a_tilde.rows() != x.rows() || a_tilde.cols() != x.rows()) {
        throw DimensionError("gcn: adjacency size does not match token count");
    }
    ad::Mat<S> norm = normalize_adjacency(a_tilde);
    auto n = x.tape->leaf(std::move(norm), false);
    auto h1 = ad::relu(ad::matmul(n, ad::matmul(x, w_a)));
    return ad::relu(ad::matmul(n, ad::matmul(h1, w_b)));
}

// Arithmetic mean over all rows -> 1 x d.
template <class S>
ad::Var<S> pool(ad::Var<S> x) {
    if (x.rows() < 1) throw DimensionError("pool: empty input");
    return ad::mean_rows(x);
}

// Quadruplet hinge, one anchor: [ ||y-z||^2 - ||y-zN||^2 + beta ]_+ +
// [ ||y-z||^2 - ||z-yN||^2 + beta ]_+.
template <class S>
ad::Var<S> fuse_loss_terms(ad::Var<S> y, ad::Var<S> z, ad::Var<S> y_neg, ad::Var<S> z_neg, S beta) {
    auto sq = [](ad::Var<S> a, ad::Var<S> b) {
        auto d = ad::sub(a, b);
        return ad::sum_all(ad::mul(d, d));
    };
    auto pos = sq(y, z);
    auto t1 = ad::relu(ad::affine(ad::sub(pos, sq(y, z_neg)), S(1), beta));
    auto t2 = ad::relu(ad::affine(ad::sub(pos, sq(z, y_neg)), S(1), beta));
    return ad::add(t1, t2);
}

// x = y || z.
template <class S>
ad::Var<S> path_embedding(ad::Var<S> y, ad::Var<S> z) {
    if (y.rows() != 1 || z.rows() != 1 || y.cols() != z.cols()) {
        throw DimensionError("path_embedding: expected two 1 x d vectors");
    }
    return ad::concat_cols<S>({y, z});
}

} // namespace mmpath
