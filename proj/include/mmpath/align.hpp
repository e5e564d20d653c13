#pragma once

#include "mmpath/autodiff.hpp"
#include "mmpath/tokenize.hpp"

namespace mmpath {

inline constexpr double kNormEps = 1e-12; // guards all norm divisions

// Row-wise cosine similarity of two m x d matrices -> m x 1.
template <class S>
ad::Var<S> cosine_rows(ad::Var<S> a, ad::Var<S> b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("cosine_rows: shape mismatch");
    }
    auto dots = ad::sum_cols(ad::mul(a, b));
    auto na = ad::sqrt(ad::sum_cols(ad::mul(a, a)));
    auto nb = ad::sqrt(ad::sum_cols(ad::mul(b, b)));
    auto denom = ad::affine(ad::mul(na, nb), S(1), static_cast<S>(kNormEps));
    return ad::div(dots, denom);
}

// Sum over pairs of (1 - cos(p_i, h_j)) for the node/patch correspondence
// of one path.
template <class S>
ad::Var<S> fine_loss_path(ad::Var<S> p_encoded, ad::Var<S> h_encoded, const Correspondence& corr) {
    if (corr.node_pairs.empty()) throw ConsistencyError("fine loss: empty correspondence");
    std::vector<int> road_rows, image_rows;
    for (const auto& [rp, ip] : corr.node_pairs) {
        road_rows.push_back(rp);
        image_rows.push_back(ip);
    }
    auto cos = cosine_rows(ad::gather_rows(p_encoded, road_rows), ad::gather_rows(h_encoded, image_rows));
    auto ones = p_encoded.tape->leaf(ad::Mat<S>::Ones(cos.rows(), 1), false);
    return ad::sum_all(ad::sub(ones, cos));
}

// Same cosine-distance form over index-aligned sep rows.
template <class S>
ad::Var<S> medium_loss_path(ad::Var<S> p_encoded, ad::Var<S> h_encoded,
                            const std::vector<int>& road_seps, const std::vector<int>& image_seps) {
    if (road_seps.size() != image_seps.size()) {
        throw ConsistencyError("medium loss: sep count mismatch");
    }
    if (road_seps.empty()) throw ConsistencyError("medium loss: no sep rows");
    auto cos = cosine_rows(ad::gather_rows(p_encoded, road_seps), ad::gather_rows(h_encoded, image_seps));
    auto ones = p_encoded.tape->leaf(ad::Mat<S>::Ones(cos.rows(), 1), false);
    return ad::sum_all(ad::sub(ones, cos));
}

// Symmetric InfoNCE over the batch of (p_cls, h_cls) rows. Similarity is
// the negated Euclidean distance scaled by 1/sigma with sigma = exp(
// sigma_log). Both denominators run over all |B| candidates including the
// matched pair. Returns the SUM over paths; callers divide by |B|.
template <class S>
ad::Var<S> coarse_loss_sum(ad::Var<S> road_cls, ad::Var<S> image_cls, ad::Var<S> sigma_log) {
    if (road_cls.rows() != image_cls.rows()) {
        throw DimensionError("coarse loss: batch sizes differ");
    }
    auto dist = ad::pairwise_dist(road_cls, image_cls, static_cast<S>(kNormEps));
    auto inv_sigma = ad::exp(ad::affine(sigma_log, S(-1)));
    auto logits = ad::scale_by(ad::affine(dist, S(-1)), inv_sigma); // sim/sigma, sim = -dist
    auto matched = ad::diag(logits);                                // B x 1
    auto row_lse = ad::logsumexp_rows(logits);                      // over image candidates
    auto col_lse = ad::logsumexp_rows(ad::transpose(logits));       // over road candidates
    auto per_path = ad::add(ad::sub(row_lse, matched), ad::sub(col_lse, matched));
    return ad::sum_all(per_path);
}

// L_multi = L_fine + L_medium + L_coarse (exact sum).
template <class S>
ad::Var<S> multi_loss(ad::Var<S> fine, ad::Var<S> medium, ad::Var<S> coarse) {
    return ad::add(ad::add(fine, medium), coarse);
}

// ---- value-level wrappers (tests, diagnostics) ----------------------------

template <class S>
S fine_loss_value(const ad::Mat<S>& p, const ad::Mat<S>& h, const Correspondence& corr) {
    ad::Tape<S> tape;
    return fine_loss_path(tape.leaf(p), tape.leaf(h), corr).scalar();
}

template <class S>
S medium_loss_value(const ad::Mat<S>& road_sep_rows, const ad::Mat<S>& image_sep_rows) {
    ad::Tape<S> tape;
    if (road_sep_rows.rows() != image_sep_rows.rows()) {
        throw ConsistencyError("medium loss: sep count mismatch");
    }
    auto cos = cosine_rows(tape.leaf(road_sep_rows), tape.leaf(image_sep_rows));
    auto ones = tape.leaf(ad::Mat<S>::Ones(cos.rows(), 1), false);
    return ad::sum_all(ad::sub(ones, cos)).scalar();
}

// Mean over paths of the two negated log ratios.
template <class S>
S coarse_loss_value(const ad::Mat<S>& road_cls, const ad::Mat<S>& image_cls, S sigma) {
    ad::Tape<S> tape;
    auto sum = coarse_loss_sum(tape.leaf(road_cls), tape.leaf(image_cls),
                               tape.scalar_leaf(std::log(sigma)));
    return sum.scalar() / static_cast<S>(road_cls.rows());
}

} // namespace mmpath
