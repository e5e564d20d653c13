#pragma once

#include <string>
#include <vector>

#include "mmpath/autodiff.hpp"
#include "mmpath/params.hpp"
#include "mmpath/rng.hpp"
#include "mmpath/tokenize.hpp"

namespace mmpath {

// Bidirectional transformer stack, pre-norm arrangement:
//   x += MHA(LN(x)); x += FFN(LN(x))
struct EncoderConfig {
    int layers = 5;
    int d = 64;
    int heads = 4;
    int ffn = 256; // hidden width of the position-wise feed-forward
    double dropout = 0.1;

    void check() const {
        if (d <= 0 || layers < 0 || heads <= 0 || ffn <= 0) {
            throw ConfigError("encoder dimensions must be positive");
        }
        if (d % heads != 0) {
            throw ConfigError("embedding width " + std::to_string(d) +
                              " not divisible by head count " + std::to_string(heads));
        }
    }
};

template <class S>
struct Dropout {
    double rate = 0;
    Rng* rng = nullptr;

    ad::Var<S> apply(ad::Var<S> x) {
        if (rate <= 0 || rng == nullptr) return x;
        ad::Mat<S> mask(x.rows(), x.cols());
        S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
        for (Eigen::Index i = 0; i < mask.rows(); ++i) {
            for (Eigen::Index j = 0; j < mask.cols(); ++j) {
                mask(i, j) = rng->uniform() < rate ? S(0) : keep_scale;
            }
        }
        return ad::cmul(x, std::move(mask));
    }
};

template <class S>
void register_encoder_params(ParamStore<S>& store, const std::string& prefix,
                             const EncoderConfig& cfg, uint64_t seed) {
    cfg.check();
    double attn_std = std::sqrt(2.0 / (cfg.d + cfg.d));
    double ffn_std = std::sqrt(2.0 / (cfg.d + cfg.ffn));
    for (int layer = 0; layer < cfg.layers; ++layer) {
        std::string lp = prefix + ".layer" + std::to_string(layer) + ".";
        store.add(lp + "ln1.gain", ad::Mat<S>::Ones(1, cfg.d));
        store.add(lp + "ln1.bias", ad::Mat<S>::Zero(1, cfg.d));
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            store.add(lp + w, random_init<S>(seed, lp + w, cfg.d, cfg.d, attn_std));
        }
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
            store.add(lp + b, ad::Mat<S>::Zero(1, cfg.d));
        }
        store.add(lp + "ln2.gain", ad::Mat<S>::Ones(1, cfg.d));
        store.add(lp + "ln2.bias", ad::Mat<S>::Zero(1, cfg.d));
        store.add(lp + "ffn.w1", random_init<S>(seed, lp + "ffn.w1", cfg.d, cfg.ffn, ffn_std));
        store.add(lp + "ffn.b1", ad::Mat<S>::Zero(1, cfg.ffn));
        store.add(lp + "ffn.w2", random_init<S>(seed, lp + "ffn.w2", cfg.ffn, cfg.d, ffn_std));
        store.add(lp + "ffn.b2", ad::Mat<S>::Zero(1, cfg.d));
    }
}

// Runs the stack on one sequence matrix. `valid[i]` marks real rows; rows
// with valid[i] == 0 are padding and are excluded from attention so they
// can never influence real outputs.
template <class S>
ad::Var<S> encode(TapeParams<S>& tp, const std::string& prefix, const EncoderConfig& cfg,
                  ad::Var<S> x, const std::vector<uint8_t>& valid, Dropout<S> drop = {}) {
    cfg.check();
    if (x.cols() != cfg.d) throw DimensionError("encode: input width does not match d");
    if (!valid.empty() && static_cast<Eigen::Index>(valid.size()) != x.rows()) {
        throw DimensionError("encode: pad mask length does not match row count");
    }
    const int dh = cfg.d / cfg.heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int layer = 0; layer < cfg.layers; ++layer) {
        std::string lp = prefix + ".layer" + std::to_string(layer) + ".";
        auto h = ad::layer_norm_rows(x, tp.use(lp + "ln1.gain"), tp.use(lp + "ln1.bias"), S(1e-5));
        auto q = ad::add_rowvec(ad::matmul(h, tp.use(lp + "attn.wq")), tp.use(lp + "attn.bq"));
        auto k = ad::add_rowvec(ad::matmul(h, tp.use(lp + "attn.wk")), tp.use(lp + "attn.bk"));
        auto v = ad::add_rowvec(ad::matmul(h, tp.use(lp + "attn.wv")), tp.use(lp + "attn.bv"));
        std::vector<ad::Var<S>> heads;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            auto qh = ad::slice_cols(q, hd * dh, dh);
            auto kh = ad::slice_cols(k, hd * dh, dh);
            auto vh = ad::slice_cols(v, hd * dh, dh);
            auto scores = ad::affine(ad::matmul_nt(qh, kh), scale);
            auto probs = ad::softmax_rows(scores, valid);
            heads.push_back(ad::matmul(probs, vh));
        }
        auto attn = ad::add_rowvec(ad::matmul(ad::concat_cols(heads), tp.use(lp + "attn.wo")),
                                   tp.use(lp + "attn.bo"));
        x = ad::add(x, drop.apply(attn));
        auto h2 = ad::layer_norm_rows(x, tp.use(lp + "ln2.gain"), tp.use(lp + "ln2.bias"), S(1e-5));
        auto f = ad::add_rowvec(ad::matmul(h2, tp.use(lp + "ffn.w1")), tp.use(lp + "ffn.b1"));
        f = ad::add_rowvec(ad::matmul(ad::relu(f), tp.use(lp + "ffn.w2")), tp.use(lp + "ffn.b2"));
        x = ad::add(x, drop.apply(f));
    }
    return x;
}

// Value-level wrapper matching the operation contract: pad_mask[i] == true
// flags row i as padding.
template <class S>
ad::Mat<S> encode_value(ParamStore<S>& store, const std::string& prefix, const EncoderConfig& cfg,
                        const ad::Mat<S>& x, const std::vector<uint8_t>& pad_mask = {}) {
    ad::Tape<S> tape;
    TapeParams<S> tp(tape, store, false);
    std::vector<uint8_t> valid(pad_mask.size());
    for (size_t i = 0; i < pad_mask.size(); ++i) valid[i] = pad_mask[i] ? 0 : 1;
    auto out = encode(tp, prefix, cfg, tape.leaf(x, false), valid);
    return out.val();
}

// ---- masked node modeling --------------------------------------------------

struct MaskPlan {
    std::vector<int> positions;    // road token positions holding NODE
    std::vector<NodeId> originals; // node id at each position
    uint64_t seed = 0;

    bool empty() const { return positions.empty(); }
};

// Samples |D| = max(1, round(ratio * node_count)) node positions without
// replacement; CLS/SEP are never candidates. ratio 0 gives an empty plan.
inline MaskPlan plan_mask(const RoadTokenSeq& seq, double ratio, Rng& rng, uint64_t seed = 0) {
    if (ratio < 0 || ratio >= 1) throw ConfigError("mask ratio must be in [0, 1)");
    MaskPlan plan;
    plan.seed = seed;
    if (ratio == 0) return plan;
    std::vector<int> candidates;
    for (int i = 0; i < seq.length(); ++i) {
        if (seq.tokens[static_cast<size_t>(i)].kind == RoadTok::Node) candidates.push_back(i);
    }
    size_t want = static_cast<size_t>(
        std::max<int64_t>(1, std::llround(ratio * static_cast<double>(candidates.size()))));
    want = std::min(want, candidates.size());
    for (size_t i = 0; i < want; ++i) {
        size_t j = i + static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(candidates.size() - 1 - i)));
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(want);
    std::sort(candidates.begin(), candidates.end());
    plan.positions = candidates;
    for (int pos : plan.positions) {
        plan.originals.push_back(seq.tokens[static_cast<size_t>(pos)].node);
    }
    return plan;
}

// Full replacement with the mask token (identity hidden, position kept).
inline RoadTokenSeq apply_mask(const RoadTokenSeq& seq, const MaskPlan& plan) {
    RoadTokenSeq out = seq;
    for (int pos : plan.positions) {
        RoadToken& t = out.tokens[static_cast<size_t>(pos)];
        if (t.kind != RoadTok::Node) throw ConsistencyError("mask plan targets a non-node token");
        t.kind = RoadTok::Mask;
        t.node = -1;
    }
    return out;
}

// Per-path masked-node loss: sum over masked positions of the negative
// log-softmax probability of the true node id. Returns a 1x1 Var.
template <class S>
ad::Var<S> mnm_loss_path(TapeParams<S>& tp, ad::Var<S> p_encoded, const MaskPlan& plan,
                         const Vocab& vocab) {
    ad::Tape<S>& tape = *p_encoded.tape;
    if (plan.empty()) return tape.scalar_leaf(S(0));
    auto rows = ad::gather_rows(p_encoded, plan.positions);
    auto logits = ad::add_rowvec(ad::matmul(rows, tp.use("mnm_head.weight")), tp.use("mnm_head.bias"));
    std::vector<int> targets;
    for (NodeId id : plan.originals) targets.push_back(vocab.index_of(id));
    return ad::sum_all(ad::cross_entropy_rows(logits, std::move(targets)));
}

template <class S>
void register_mnm_params(ParamStore<S>& store, int d, int vocab_size, uint64_t seed) {
    double std = std::sqrt(2.0 / (d + vocab_size));
    store.add("mnm_head.weight", random_init<S>(seed, "mnm_head.weight", d, vocab_size, std));
    store.add("mnm_head.bias", ad::Mat<S>::Zero(1, vocab_size));
}

} // namespace mmpath
