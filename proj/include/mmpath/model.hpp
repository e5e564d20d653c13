#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmpath/align.hpp"
#include "mmpath/encoder.hpp"
#include "mmpath/fuse.hpp"
#include "mmpath/params.hpp"
#include "mmpath/tokenize.hpp"
#include "mmpath/world.hpp"
#include "mmpath/world_io.hpp"

namespace mmpath {

inline const std::vector<std::string> kVariants = {
    "full",      "no_alignment", "no_fusion", "no_gcn", "no_fine",
    "no_medium", "no_coarse",    "y_only",    "z_only"};

inline void check_variant(const std::string& v) {
    for (const auto& k : kVariants) {
        if (k == v) return;
    }
    throw ConfigError("unknown ablation variant '" + v + "'");
}

struct ModelDims {
    int d = 64;
    int layers = 5;
    int heads = 4;
    int ffn = 256;
    int patch_o = 125;  // pixels per patch side
    int channels = 3;
    int lattice = 4;    // r / o
    int g = 16;         // patches per image
    int patch_dim = 0;  // o * o * c
    int vocab_size = 0;
    int n1_max = 0;
    int n2_max = 0;

    static ModelDims derive(int d, int layers, int heads, int ffn_mult, int patch_o,
                            const TileGrid& grid, int vocab_size, int max_path_nodes) {
        if (patch_o <= 0 || grid.r % patch_o != 0) {
            throw ConfigError("tile resolution r=" + std::to_string(grid.r) +
                              " not divisible by patch size o=" + std::to_string(patch_o));
        }
        ModelDims m;
        m.d = d;
        m.layers = layers;
        m.heads = heads;
        m.ffn = ffn_mult * d;
        m.patch_o = patch_o;
        m.channels = grid.channels;
        m.lattice = grid.r / patch_o;
        m.g = m.lattice * m.lattice;
        m.patch_dim = patch_o * patch_o * grid.channels;
        m.vocab_size = vocab_size;
        m.n2_max = 2 * max_path_nodes + 1;
        m.n1_max = 1 + max_path_nodes * (m.g + 1);
        return m;
    }

    EncoderConfig encoder_config(double dropout) const {
        return {layers, d, heads, ffn, dropout};
    }
};

// Everything about one path the forward pass needs; pure function of the
// world, cacheable and parallel to compute.
struct PathTokens {
    int path_id = -1;
    RoadPath path;
    ImagePath image_path;
    RoadTokenSeq road_seq; // unmasked
    ImageTokenSeq image_seq;
    Correspondence corr;
    CrossModalGraph graph;
    std::vector<int> sep_road, sep_image;
    Eigen::MatrixXd pixels; // (#patch tokens) x patch_dim, scaled to [0,1]
};

PathTokens prepare_path(const World& world, const RoadPath& path, const ModelDims& dims);

// Extended road lookup table rows: vocab nodes, then cls, sep, mask.
inline std::vector<int> road_gather_ids(const RoadTokenSeq& seq, const Vocab& vocab,
                                        const MaskPlan* plan) {
    int v = vocab.size();
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(seq.length()));
    for (const auto& t : seq.tokens) {
        switch (t.kind) {
            case RoadTok::Cls: ids.push_back(v); break;
            case RoadTok::Sep: ids.push_back(v + 1); break;
            case RoadTok::Mask: ids.push_back(v + 2); break;
            case RoadTok::Node: ids.push_back(vocab.index_of(t.node)); break;
        }
    }
    if (plan) {
        for (int pos : plan->positions) ids[static_cast<size_t>(pos)] = v + 2;
    }
    return ids;
}

// Patch tokens index their row in the projected pixel block; cls and sep
// take the two rows appended after it.
inline std::vector<int> image_gather_ids(const ImageTokenSeq& seq) {
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(seq.length()));
    int patch_row = 0;
    int patch_total = 0;
    for (const auto& t : seq.tokens) {
        if (t.kind == ImageTok::Patch) ++patch_total;
    }
    for (const auto& t : seq.tokens) {
        switch (t.kind) {
            case ImageTok::Patch: ids.push_back(patch_row++); break;
            case ImageTok::Cls: ids.push_back(patch_total); break;
            case ImageTok::Sep: ids.push_back(patch_total + 1); break;
        }
    }
    return ids;
}

template <class S>
void register_model_params(ParamStore<S>& store, const ModelDims& dims, uint64_t seed,
                           const std::string& node_init, const std::string& patch_init,
                           double sigma_init, const std::string& variant) {
    check_variant(variant);

    auto load_file_matrix = [](const std::string& spec, Eigen::Index rows, Eigen::Index cols,
                               bool allow_bias_row) -> ad::Mat<S> {
        std::string path = spec.substr(5);
        int r = 0, c = 0;
        auto data = load_f32_matrix(path, r, c);
        bool ok = (r == rows && c == cols) || (allow_bias_row && r == rows + 1 && c == cols);
        if (!ok) {
            throw InputError("initializer file " + path + " has shape " + std::to_string(r) + "x" +
                             std::to_string(c) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(cols));
        }
        ad::Mat<S> m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < c; ++j) {
                m(i, j) = static_cast<S>(data[static_cast<size_t>(i * c + j)]);
            }
        }
        return m;
    };

    // Token embeddings start unit-scale so paths are distinguishable from
    // step one; projections get fan-based widths.
    const double emb_std = 1.0;
    const double patch_std = 1.0 / std::sqrt(static_cast<double>(dims.patch_dim));

    // Node table (pluggable init).
    if (node_init.rfind("file:", 0) == 0) {
        store.add("tok.node_table", load_file_matrix(node_init, dims.vocab_size, dims.d, false));
    } else if (node_init == "random") {
        store.add("tok.node_table",
                  random_init<S>(seed, "tok.node_table", dims.vocab_size, dims.d, emb_std));
    } else {
        throw ConfigError("node_init must be 'random' or 'file:<path>'");
    }

    // Patch projection (pluggable init; file may carry the bias as an
    // extra final row).
    if (patch_init.rfind("file:", 0) == 0) {
        ad::Mat<S> m = load_file_matrix(patch_init, dims.patch_dim, dims.d, true);
        if (m.rows() == dims.patch_dim + 1) {
            store.add("tok.patch_w", ad::Mat<S>(m.topRows(dims.patch_dim)));
            store.add("tok.patch_b", ad::Mat<S>(m.bottomRows(1)));
        } else {
            store.add("tok.patch_w", std::move(m));
            store.add("tok.patch_b", ad::Mat<S>::Zero(1, dims.d));
        }
    } else if (patch_init == "random") {
        store.add("tok.patch_w",
                  random_init<S>(seed, "tok.patch_w", dims.patch_dim, dims.d, patch_std));
        store.add("tok.patch_b", ad::Mat<S>::Zero(1, dims.d));
    } else {
        throw ConfigError("patch_init must be 'random' or 'file:<path>'");
    }

    for (const char* nm : {"tok.road_cls", "tok.road_sep", "tok.road_mask", "tok.img_cls",
                           "tok.img_sep"}) {
        store.add(nm, random_init<S>(seed, nm, 1, dims.d, emb_std));
    }
    store.add("tok.t_road", random_init<S>(seed, "tok.t_road", dims.n2_max, dims.d, emb_std));
    store.add("tok.t_image", random_init<S>(seed, "tok.t_image", dims.n1_max, dims.d, emb_std));

    EncoderConfig enc = dims.encoder_config(0);
    register_encoder_params(store, "road_encoder", enc, seed);
    register_encoder_params(store, "image_encoder", enc, seed);
    register_mnm_params(store, dims.d, dims.vocab_size, seed);

    ad::Mat<S> sl(1, 1);
    sl(0, 0) = static_cast<S>(std::log(sigma_init));
    store.add("align.sigma_log", sl);

    double fuse_std = std::sqrt(2.0 / (dims.d + dims.d));
    if (variant == "no_gcn") {
        for (const char* nm : {"fuse.xattn_u.wq", "fuse.xattn_u.wk", "fuse.xattn_u.wv",
                               "fuse.xattn_q.wq", "fuse.xattn_q.wk", "fuse.xattn_q.wv"}) {
            store.add(nm, random_init<S>(seed, nm, dims.d, dims.d, fuse_std));
        }
    } else if (variant != "no_fusion") {
        for (const char* nm : {"fuse.w1", "fuse.w2", "fuse.w3", "fuse.w4"}) {
            store.add(nm, random_init<S>(seed, nm, dims.d, dims.d, fuse_std));
        }
    }
}

// Task head: affine d_in -> 32, rectifier, affine 32 -> 1.
template <class S>
void register_head_params(ParamStore<S>& store, int d_in, uint64_t seed) {
    store.add("head.w1", random_init<S>(seed, "head.w1", d_in, 32, 0.1));
    store.add("head.b1", ad::Mat<S>::Zero(1, 32));
    store.add("head.w2", random_init<S>(seed, "head.w2", 32, 1, 0.1));
    store.add("head.b2", ad::Mat<S>::Zero(1, 1));
}

template <class S>
ad::Var<S> head_forward(TapeParams<S>& tp, ad::Var<S> x) {
    auto h = ad::relu(ad::add_rowvec(ad::matmul(x, tp.use("head.w1")), tp.use("head.b1")));
    return ad::add_rowvec(ad::matmul(h, tp.use("head.w2")), tp.use("head.b2"));
}

// ---- initial embeddings ----------------------------------------------------

template <class S>
ad::Var<S> road_initial_embeddings(TapeParams<S>& tp, const ModelDims& dims,
                                   const std::vector<int>& gather_ids, ad::Var<S> ext_road) {
    int n2 = static_cast<int>(gather_ids.size());
    if (n2 > dims.n2_max) {
        throw ConfigError("road sequence length " + std::to_string(n2) +
                          " exceeds configured maximum " + std::to_string(dims.n2_max));
    }
    auto tokens = ad::gather_rows(ext_road, gather_ids);
    return ad::add(tokens, ad::slice_rows(tp.use("tok.t_road"), 0, n2));
}

template <class S>
ad::Var<S> build_ext_road(TapeParams<S>& tp) {
    return ad::concat_rows<S>({tp.use("tok.node_table"), tp.use("tok.road_cls"),
                               tp.use("tok.road_sep"), tp.use("tok.road_mask")});
}

template <class S>
ad::Var<S> image_initial_embeddings(TapeParams<S>& tp, const ModelDims& dims,
                                    const PathTokens& pt, ad::Tape<S>& tape) {
    int n1 = pt.image_seq.length();
    if (n1 > dims.n1_max) {
        throw ConfigError("image sequence length " + std::to_string(n1) +
                          " exceeds configured maximum " + std::to_string(dims.n1_max));
    }
    auto pixels = tape.leaf(pt.pixels.template cast<S>(), false);
    auto proj = ad::add_rowvec(ad::matmul(pixels, tp.use("tok.patch_w")), tp.use("tok.patch_b"));
    auto ext = ad::concat_rows<S>({proj, tp.use("tok.img_cls"), tp.use("tok.img_sep")});
    auto tokens = ad::gather_rows(ext, image_gather_ids(pt.image_seq));
    return ad::add(tokens, ad::slice_rows(tp.use("tok.t_image"), 0, n1));
}

// ---- forward ----------------------------------------------------------------

template <class S>
struct PathVars {
    ad::Var<S> p0, h0, p, h; // unpadded initial / encoded embeddings
    ad::Var<S> y, z, x;      // fused embeddings and the generic representation
};

template <class S>
struct BatchVars {
    ad::Var<S> l_mask, l_fine, l_medium, l_coarse, l_fuse, total;
    std::vector<PathVars<S>> paths;
};

struct ForwardOptions {
    std::string variant = "full";
    double lambda_mask = 1, lambda_multi = 1, lambda_fuse = 1;
    double beta = 1.0;
    bool fuse_warn_batch1 = false; // set by the trainer to log once
};

// Weighted sum of the three objectives.
template <class S>
ad::Var<S> total_loss(ad::Var<S> l_mask, ad::Var<S> l_multi, ad::Var<S> l_fuse, double lambda_mask,
                      double lambda_multi, double lambda_fuse) {
    return ad::add(ad::add(ad::affine(l_mask, static_cast<S>(lambda_mask)),
                           ad::affine(l_multi, static_cast<S>(lambda_multi))),
                   ad::affine(l_fuse, static_cast<S>(lambda_fuse)));
}

template <class S>
ad::Var<S> pad_rows(ad::Var<S> x, int target) {
    int n = static_cast<int>(x.rows());
    if (n == target) return x;
    if (n > target) throw DimensionError("pad_rows: input longer than target");
    auto zeros = x.tape->leaf(ad::Mat<S>::Zero(target - n, x.cols()), false);
    return ad::concat_rows<S>({x, zeros});
}

// Runs both encoder branches with batch-max padding, then the alignment
// and fusion objectives. `plans` empty means no masking (evaluation);
// `neg_index[i]` is the in-batch negative slot for the quadruplet loss,
// -1 for none.
template <class S>
BatchVars<S> forward_batch(ad::Tape<S>& tape, TapeParams<S>& tp, const ModelDims& dims,
                           const Vocab& vocab, const ForwardOptions& opt,
                           const std::vector<const PathTokens*>& batch,
                           const std::vector<MaskPlan>& plans, const std::vector<int>& neg_index,
                           Dropout<S> drop = {}) {
    check_variant(opt.variant);
    if (batch.empty()) throw ConsistencyError("forward_batch: empty batch");
    if (!plans.empty() && plans.size() != batch.size()) {
        throw ConsistencyError("forward_batch: one mask plan per path required");
    }
    const int b = static_cast<int>(batch.size());
    const S inv_b = S(1) / static_cast<S>(b);
    EncoderConfig enc = dims.encoder_config(drop.rate);

    int pad_n2 = 0, pad_n1 = 0;
    for (const auto* pt : batch) {
        pad_n2 = std::max(pad_n2, pt->road_seq.length());
        pad_n1 = std::max(pad_n1, pt->image_seq.length());
    }

    auto ext_road = build_ext_road(tp);

    BatchVars<S> out;
    auto zero = [&] { return tape.scalar_leaf(S(0)); };
    out.l_mask = zero();
    out.l_fine = zero();
    out.l_medium = zero();
    out.l_fuse = zero();

    std::vector<ad::Var<S>> road_cls_rows, image_cls_rows;
    for (int i = 0; i < b; ++i) {
        const PathTokens& pt = *batch[i];
        const MaskPlan* plan = plans.empty() ? nullptr : &plans[static_cast<size_t>(i)];
        int n2 = pt.road_seq.length();
        int n1 = pt.image_seq.length();

        PathVars<S> pv;
        pv.p0 = road_initial_embeddings(tp, dims, road_gather_ids(pt.road_seq, vocab, plan), ext_road);
        pv.h0 = image_initial_embeddings(tp, dims, pt, tape);

        std::vector<uint8_t> valid_road(static_cast<size_t>(pad_n2), 0);
        std::fill(valid_road.begin(), valid_road.begin() + n2, 1);
        std::vector<uint8_t> valid_img(static_cast<size_t>(pad_n1), 0);
        std::fill(valid_img.begin(), valid_img.begin() + n1, 1);

        pv.p = ad::slice_rows(encode(tp, "road_encoder", enc, pad_rows(pv.p0, pad_n2), valid_road, drop),
                              0, n2);
        pv.h = ad::slice_rows(encode(tp, "image_encoder", enc, pad_rows(pv.h0, pad_n1), valid_img, drop),
                              0, n1);

        if (plan) {
            out.l_mask = ad::add(out.l_mask, mnm_loss_path(tp, pv.p, *plan, vocab));
        }
        out.l_fine = ad::add(out.l_fine, fine_loss_path(pv.p, pv.h, pt.corr));
        out.l_medium = ad::add(out.l_medium, medium_loss_path(pv.p, pv.h, pt.sep_road, pt.sep_image));

        road_cls_rows.push_back(ad::slice_rows(pv.p, 0, 1));
        image_cls_rows.push_back(ad::slice_rows(pv.h, 0, 1));
        out.paths.push_back(pv);
    }

    out.l_mask = ad::affine(out.l_mask, inv_b);
    out.l_fine = ad::affine(out.l_fine, inv_b);
    out.l_medium = ad::affine(out.l_medium, inv_b);
    out.l_coarse = ad::affine(coarse_loss_sum(ad::concat_rows(road_cls_rows),
                                              ad::concat_rows(image_cls_rows),
                                              tp.use("align.sigma_log")),
                              inv_b);

    // Fusion branch per path.
    for (int i = 0; i < b; ++i) {
        const PathTokens& pt = *batch[i];
        PathVars<S>& pv = out.paths[static_cast<size_t>(i)];
        if (opt.variant == "no_fusion") {
            pv.y = pool(pv.h);
            pv.z = pool(pv.p);
        } else {
            auto [u, q] = residual_concat(pv.p0, pv.h, pv.p, pv.h0);
            if (opt.variant == "no_gcn") {
                const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dims.d)));
                auto cross = [&](ad::Var<S> a, ad::Var<S> bmat, const char* wq, const char* wk,
                                 const char* wv) {
                    auto scores = ad::affine(
                        ad::matmul_nt(ad::matmul(a, tp.use(wq)), ad::matmul(bmat, tp.use(wk))), scale);
                    return ad::relu(ad::matmul(ad::softmax_rows(scores), ad::matmul(bmat, tp.use(wv))));
                };
                pv.y = pool(cross(u, q, "fuse.xattn_u.wq", "fuse.xattn_u.wk", "fuse.xattn_u.wv"));
                pv.z = pool(cross(q, u, "fuse.xattn_q.wq", "fuse.xattn_q.wk", "fuse.xattn_q.wv"));
            } else {
                ad::Mat<S> a_tilde = augmented_adjacency<S>(pt.graph);
                pv.y = pool(gcn(u, a_tilde, tp.use("fuse.w1"), tp.use("fuse.w2")));
                pv.z = pool(gcn(q, a_tilde, tp.use("fuse.w3"), tp.use("fuse.w4")));
            }
        }
        if (opt.variant == "y_only") {
            pv.x = pv.y;
        } else if (opt.variant == "z_only") {
            pv.x = pv.z;
        } else {
            pv.x = path_embedding(pv.y, pv.z);
        }
    }

    if (!neg_index.empty()) {
        if (static_cast<int>(neg_index.size()) != b) {
            throw ConsistencyError("forward_batch: one negative index per path required");
        }
        for (int i = 0; i < b; ++i) {
            int ni = neg_index[static_cast<size_t>(i)];
            if (ni < 0) continue;
            if (ni >= b || ni == i) throw ConsistencyError("forward_batch: bad negative index");
            out.l_fuse = ad::add(out.l_fuse,
                                 fuse_loss_terms(out.paths[static_cast<size_t>(i)].y,
                                                 out.paths[static_cast<size_t>(i)].z,
                                                 out.paths[static_cast<size_t>(ni)].y,
                                                 out.paths[static_cast<size_t>(ni)].z,
                                                 static_cast<S>(opt.beta)));
        }
        out.l_fuse = ad::affine(out.l_fuse, inv_b);
    }

    // L_multi per the configured variant.
    auto multi = zero();
    if (opt.variant != "no_fine") multi = ad::add(multi, out.l_fine);
    if (opt.variant != "no_medium") multi = ad::add(multi, out.l_medium);
    if (opt.variant != "no_coarse") multi = ad::add(multi, out.l_coarse);
    double lambda_multi = opt.variant == "no_alignment" ? 0.0 : opt.lambda_multi;

    out.total = total_loss(out.l_mask, multi, out.l_fuse, opt.lambda_mask, lambda_multi,
                           opt.lambda_fuse);
    return out;
}

// ---- value-level wrappers ---------------------------------------------------

template <class S>
ad::Mat<S> initial_embeddings_road_value(ParamStore<S>& store, const ModelDims& dims,
                                         const RoadTokenSeq& seq, const Vocab& vocab,
                                         const MaskPlan* plan = nullptr) {
    ad::Tape<S> tape;
    TapeParams<S> tp(tape, store, false);
    auto ext = build_ext_road(tp);
    return road_initial_embeddings(tp, dims, road_gather_ids(seq, vocab, plan), ext).val();
}

template <class S>
ad::Mat<S> initial_embeddings_image_value(ParamStore<S>& store, const ModelDims& dims,
                                          const PathTokens& pt) {
    ad::Tape<S> tape;
    TapeParams<S> tp(tape, store, false);
    return image_initial_embeddings(tp, dims, pt, tape).val();
}

} // namespace mmpath
