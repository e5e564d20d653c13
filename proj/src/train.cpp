#include "mmpath/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

namespace mmpath {

namespace {

void check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

// Static stripes so the result layout is independent of scheduling.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int w = std::min(workers, n);
    std::vector<std::thread> threads;
    for (int t = 0; t < w; ++t) {
        threads.emplace_back([&, t] {
            for (int i = t; i < n; i += w) fn(i);
        });
    }
    for (auto& th : threads) th.join();
}

} // namespace

void TrainConfig::validate() const {
    check(d > 0 && layers >= 0 && heads > 0 && ffn_mult > 0, "model dimensions must be positive");
    check(d % heads == 0, "d must be divisible by heads");
    check(dropout >= 0 && dropout < 1, "dropout must be in [0, 1)");
    check(mask_ratio >= 0 && mask_ratio < 1, "mask_ratio must be in [0, 1)");
    check(lr > 0 && finetune_lr > 0, "learning rates must be positive");
    check(epochs >= 0 && finetune_epochs >= 0, "epoch counts must be non-negative");
    check(batch_size > 0, "batch_size must be positive");
    check(beta >= 0, "beta must be non-negative");
    check(sigma_init > 0, "sigma_init must be positive");
    check(optimizer == "adam" || optimizer == "sgd", "optimizer must be adam or sgd");
    check(workers >= 1, "workers must be at least 1");
    check(train_frac > 0 && train_frac <= 1, "train_frac must be in (0, 1]");
    check_variant(ablation);
}

nlohmann::json TrainConfig::to_json() const {
    return {{"d", d},
            {"layers", layers},
            {"heads", heads},
            {"ffn_mult", ffn_mult},
            {"dropout", dropout},
            {"mask_ratio", mask_ratio},
            {"lambda_mask", lambda_mask},
            {"lambda_multi", lambda_multi},
            {"lambda_fuse", lambda_fuse},
            {"beta", beta},
            {"sigma_init", sigma_init},
            {"lr", lr},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"ablation", ablation},
            {"optimizer", optimizer},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"patch_o", patch_o},
            {"max_path_nodes", max_path_nodes},
            {"node_init", node_init},
            {"patch_init", patch_init},
            {"finetune_epochs", finetune_epochs},
            {"finetune_lr", finetune_lr},
            {"freeze_encoder", freeze_encoder},
            {"train_frac", train_frac},
            {"workers", workers}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d", c.d);
    get("layers", c.layers);
    get("heads", c.heads);
    get("ffn_mult", c.ffn_mult);
    get("dropout", c.dropout);
    get("mask_ratio", c.mask_ratio);
    get("lambda_mask", c.lambda_mask);
    get("lambda_multi", c.lambda_multi);
    get("lambda_fuse", c.lambda_fuse);
    get("beta", c.beta);
    get("sigma_init", c.sigma_init);
    get("lr", c.lr);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("ablation", c.ablation);
    get("optimizer", c.optimizer);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("patch_o", c.patch_o);
    get("max_path_nodes", c.max_path_nodes);
    get("node_init", c.node_init);
    get("patch_init", c.patch_init);
    get("finetune_epochs", c.finetune_epochs);
    get("finetune_lr", c.finetune_lr);
    get("freeze_encoder", c.freeze_encoder);
    get("train_frac", c.train_frac);
    get("workers", c.workers);
    c.validate();
    return c;
}

TrainConfig TrainConfig::effective() const {
    TrainConfig c = *this;
    if (ablation == "no_alignment") c.lambda_multi = 0;
    return c;
}

PathTokens prepare_path(const World& world, const RoadPath& path, const ModelDims& dims) {
    PathTokens pt;
    pt.path_id = path.path_id;
    pt.path = path;
    pt.image_path = derive_image_path(path, world.network, world.grid);
    pt.road_seq = tokenize_road(path, pt.image_path);
    pt.image_seq = tokenize_image(pt.image_path, world.grid, dims.patch_o);
    pt.corr = build_correspondence(pt.road_seq, pt.image_seq, path, world.network, world.grid,
                                   dims.patch_o);
    pt.graph = build_graph(pt.road_seq, pt.image_seq, pt.corr);
    pt.sep_road = sep_positions_road(pt.road_seq);
    pt.sep_image = sep_positions_image(pt.image_seq);
    if (pt.road_seq.length() > dims.n2_max || pt.image_seq.length() > dims.n1_max) {
        throw ConfigError("path " + std::to_string(path.path_id) +
                          " exceeds the configured maximum sequence length");
    }

    // Flattened pixel block per patch token, row-major, channel-last.
    int patch_tokens = 0;
    for (const auto& t : pt.image_seq.tokens) {
        if (t.kind == ImageTok::Patch) ++patch_tokens;
    }
    pt.pixels.resize(patch_tokens, dims.patch_dim);
    const int o = dims.patch_o;
    const int c = dims.channels;
    const int r = world.grid.r;
    int row = 0;
    for (const auto& t : pt.image_seq.tokens) {
        if (t.kind != ImageTok::Patch) continue;
        const Raster& ras = world.rasters[static_cast<size_t>(t.tile)];
        int pr = (t.k - 1) / dims.lattice;
        int pc = (t.k - 1) % dims.lattice;
        int col = 0;
        for (int y = pr * o; y < (pr + 1) * o; ++y) {
            for (int x = pc * o; x < (pc + 1) * o; ++x) {
                for (int ch = 0; ch < c; ++ch) {
                    size_t idx = (static_cast<size_t>(y) * r + x) * c + ch;
                    pt.pixels(row, col++) = static_cast<double>(ras[idx]) / 255.0;
                }
            }
        }
        ++row;
    }
    return pt;
}

Model build_model(const World& world, const TrainConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.vocab = Vocab::from_world(world);
    m.dims = ModelDims::derive(cfg.d, cfg.layers, cfg.heads, cfg.ffn_mult, cfg.patch_o, world.grid,
                               m.vocab.size(), cfg.max_path_nodes);
    register_model_params(m.store, m.dims, cfg.seed, cfg.node_init, cfg.patch_init, cfg.sigma_init,
                          cfg.ablation);
    return m;
}

Dataset prepare_dataset(const World& world, const ModelDims& dims,
                        const std::vector<int>& path_indexes, int workers) {
    Dataset ds;
    ds.items.resize(path_indexes.size());
    parallel_for(static_cast<int>(path_indexes.size()), workers, [&](int i) {
        ds.items[static_cast<size_t>(i)] =
            prepare_path(world, world.paths[static_cast<size_t>(path_indexes[static_cast<size_t>(i)])], dims);
    });
    return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_paths(const World& world, double frac) {
    int n = static_cast<int>(world.paths.size());
    int n_train = static_cast<int>(std::llround(frac * n));
    n_train = std::clamp(n_train, 1, n);
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) {
        (i < n_train ? train : test).push_back(i);
    }
    return {train, test};
}

namespace {

struct LossParts {
    double l_mask, l_fine, l_medium, l_coarse, l_fuse, total;
};

LossParts read_losses(const BatchVars<float>& bv) {
    auto v = [](ad::Var<float> x) { return static_cast<double>(x.scalar()); };
    return {v(bv.l_mask), v(bv.l_fine), v(bv.l_medium), v(bv.l_coarse), v(bv.l_fuse), v(bv.total)};
}

void check_finite(const LossParts& p) {
    auto bad = [](double x) { return !std::isfinite(x); };
    const char* name = nullptr;
    if (bad(p.l_mask)) name = "l_mask";
    else if (bad(p.l_fine)) name = "l_fine";
    else if (bad(p.l_medium)) name = "l_medium";
    else if (bad(p.l_coarse)) name = "l_coarse";
    else if (bad(p.l_fuse)) name = "l_fuse";
    else if (bad(p.total)) name = "total";
    if (name) {
        throw Error(std::string("non-finite loss component during training: ") + name);
    }
}

ForwardOptions forward_options(const TrainConfig& cfg) {
    ForwardOptions opt;
    opt.variant = cfg.ablation;
    opt.lambda_mask = cfg.lambda_mask;
    opt.lambda_multi = cfg.lambda_multi;
    opt.lambda_fuse = cfg.lambda_fuse;
    opt.beta = cfg.beta;
    return opt;
}

std::vector<uint8_t> trainable_mask(const ParamStore<float>& store, bool head_only) {
    std::vector<uint8_t> mask(static_cast<size_t>(store.count()), 1);
    if (!head_only) return mask;
    for (int i = 0; i < store.count(); ++i) {
        mask[static_cast<size_t>(i)] = store.name(i).rfind("head.", 0) == 0 ? 1 : 0;
    }
    return mask;
}

} // namespace

PretrainResult pretrain(Model& model, const Dataset& train) {
    const TrainConfig& cfg = model.cfg;
    const int n = static_cast<int>(train.items.size());
    if (n < 1) throw ConfigError("pretraining requires at least one path");

    Adam<float> adam(static_cast<float>(cfg.lr), static_cast<float>(cfg.adam_beta1),
                     static_cast<float>(cfg.adam_beta2), static_cast<float>(cfg.adam_eps));
    Sgd<float> sgd(static_cast<float>(cfg.lr));
    ForwardOptions opt = forward_options(cfg);

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    bool warned_batch1 = false;
    PretrainResult result;
    Rng master = substream(cfg.seed, "train.master");
    std::vector<ad::Mat<float>> grads;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng = substream(cfg.seed, "train.shuffle", static_cast<uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.uniform_int(0, i));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        Rng neg_rng = substream(cfg.seed, "train.negatives", static_cast<uint64_t>(epoch));
        Rng drop_rng = substream(cfg.seed, "train.dropout", static_cast<uint64_t>(epoch));

        LossParts sums{0, 0, 0, 0, 0, 0};
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int b = std::min(cfg.batch_size, n - start);
            std::vector<const PathTokens*> batch;
            std::vector<MaskPlan> plans;
            std::vector<int> negs;
            for (int s = 0; s < b; ++s) {
                int di = order[static_cast<size_t>(start + s)];
                const PathTokens& pt = train.items[static_cast<size_t>(di)];
                batch.push_back(&pt);
                Rng mask_rng = substream(cfg.seed, "train.mask",
                                         (static_cast<uint64_t>(epoch) << 32) |
                                             static_cast<uint64_t>(di));
                plans.push_back(plan_mask(pt.road_seq, cfg.mask_ratio, mask_rng));
            }
            for (int s = 0; s < b; ++s) {
                if (b == 1) {
                    if (!warned_batch1) {
                        std::cerr << "warning: batch of size 1 has no quadruplet negative; "
                                     "fusion loss contributes 0\n";
                        warned_batch1 = true;
                    }
                    negs.push_back(-1);
                } else {
                    int ni = static_cast<int>(neg_rng.uniform_int(0, b - 2));
                    if (ni >= s) ++ni;
                    negs.push_back(ni);
                }
            }

            ad::Tape<float> tape;
            TapeParams<float> tp(tape, model.store);
            Dropout<float> drop{cfg.dropout, cfg.dropout > 0 ? &drop_rng : nullptr};
            auto bv = forward_batch(tape, tp, model.dims, model.vocab, opt, batch, plans, negs, drop);
            LossParts parts = read_losses(bv);
            check_finite(parts);
            tape.backward(bv.total);
            tp.collect_grads(grads);
            if (cfg.optimizer == "adam") {
                adam.step(model.store, grads);
            } else {
                sgd.step(model.store, grads);
            }

            sums.l_mask += parts.l_mask;
            sums.l_fine += parts.l_fine;
            sums.l_medium += parts.l_medium;
            sums.l_coarse += parts.l_coarse;
            sums.l_fuse += parts.l_fuse;
            sums.total += parts.total;
            ++batches;
        }
        double inv = 1.0 / std::max(1, batches);
        result.log.push_back({epoch, sums.l_mask * inv, sums.l_fine * inv, sums.l_medium * inv,
                              sums.l_coarse * inv, sums.l_fuse * inv, sums.total * inv});
        master.next_u64(); // one tick per epoch; recorded in the checkpoint
    }
    result.rng_state = master.serialize();
    return result;
}

FinetuneResult finetune(Model& model, const Dataset& train, const LabelSet& labels, Task task) {
    const TrainConfig& cfg = model.cfg;
    const int n = static_cast<int>(train.items.size());
    if (n < 1) throw ConfigError("fine-tuning requires at least one labeled path");

    int d_in = (cfg.ablation == "y_only" || cfg.ablation == "z_only") ? cfg.d : 2 * cfg.d;
    if (!model.store.has("head.w1")) {
        register_head_params(model.store, d_in, cfg.seed);
    }

    std::vector<double> targets(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const PathTokens& pt = train.items[static_cast<size_t>(i)];
        auto it = labels.find(pt.path_id);
        if (it == labels.end()) {
            throw InputError("no label for path " + std::to_string(pt.path_id));
        }
        targets[static_cast<size_t>(i)] =
            task == Task::TravelTime ? it->second.travel_time_s : it->second.ranking_score;
    }
    double mean = 0, var = 0;
    for (double t : targets) mean += t;
    mean /= n;
    for (double t : targets) var += (t - mean) * (t - mean);
    double stddev = std::sqrt(var / n);
    if (stddev < 1e-9) stddev = 1.0;

    FinetuneResult result;
    result.label_mean = mean;
    result.label_std = stddev;
    result.task = task;

    Adam<float> adam(static_cast<float>(cfg.finetune_lr), static_cast<float>(cfg.adam_beta1),
                     static_cast<float>(cfg.adam_beta2), static_cast<float>(cfg.adam_eps));
    Sgd<float> sgd(static_cast<float>(cfg.finetune_lr));
    auto mask = trainable_mask(model.store, cfg.freeze_encoder);
    ForwardOptions opt = forward_options(cfg);

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::vector<ad::Mat<float>> grads;

    for (int epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
        Rng shuffle_rng = substream(cfg.seed, "ft.shuffle", static_cast<uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.uniform_int(0, i));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        Rng drop_rng = substream(cfg.seed, "ft.dropout", static_cast<uint64_t>(epoch));

        double loss_sum = 0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int b = std::min(cfg.batch_size, n - start);
            std::vector<const PathTokens*> batch;
            ad::Mat<float> y(b, 1);
            for (int s = 0; s < b; ++s) {
                int di = order[static_cast<size_t>(start + s)];
                batch.push_back(&train.items[static_cast<size_t>(di)]);
                y(s, 0) = static_cast<float>((targets[static_cast<size_t>(di)] - mean) / stddev);
            }

            ad::Tape<float> tape;
            TapeParams<float> tp(tape, model.store);
            Dropout<float> drop{cfg.dropout, cfg.dropout > 0 ? &drop_rng : nullptr};
            auto bv = forward_batch(tape, tp, model.dims, model.vocab, opt, batch, {}, {}, drop);
            std::vector<ad::Var<float>> preds;
            for (auto& pv : bv.paths) preds.push_back(head_forward(tp, pv.x));
            auto diff = ad::sub(ad::concat_rows(preds), tape.leaf(std::move(y), false));
            auto loss = ad::affine(ad::sum_all(ad::mul(diff, diff)), 1.0f / static_cast<float>(b));
            double lv = loss.scalar();
            if (!std::isfinite(lv)) throw Error("non-finite loss component during training: finetune_mse");
            tape.backward(loss);
            tp.collect_grads(grads);
            if (cfg.optimizer == "adam") {
                adam.step(model.store, grads, mask);
            } else {
                sgd.step(model.store, grads, mask);
            }
            loss_sum += lv;
            ++batches;
        }
        result.loss_log.push_back({epoch, loss_sum / std::max(1, batches)});
    }
    return result;
}

std::vector<double> predict(Model& model, const Dataset& data, const HeadScaling& scaling) {
    if (!model.store.has("head.w1")) {
        throw ConfigError("model has no task head; run finetune first");
    }
    ForwardOptions opt = forward_options(model.cfg);
    std::vector<double> preds;
    const int bs = std::max(1, model.cfg.batch_size);
    const int n = static_cast<int>(data.items.size());
    for (int start = 0; start < n; start += bs) {
        int b = std::min(bs, n - start);
        std::vector<const PathTokens*> batch;
        for (int s = 0; s < b; ++s) batch.push_back(&data.items[static_cast<size_t>(start + s)]);
        ad::Tape<float> tape;
        TapeParams<float> tp(tape, model.store, false);
        auto bv = forward_batch(tape, tp, model.dims, model.vocab, opt, batch, {}, {});
        for (auto& pv : bv.paths) {
            double p = static_cast<double>(head_forward(tp, pv.x).scalar());
            preds.push_back(p * scaling.std + scaling.mean);
        }
    }
    return preds;
}

Metrics evaluate(Model& model, const Dataset& test, const LabelSet& labels, Task task,
                 const HeadScaling& scaling) {
    if (test.items.empty()) throw InputError("evaluate: empty test set");
    auto preds = predict(model, test, scaling);
    std::vector<double> truth;
    for (const auto& pt : test.items) {
        auto it = labels.find(pt.path_id);
        if (it == labels.end()) throw InputError("no label for path " + std::to_string(pt.path_id));
        truth.push_back(task == Task::TravelTime ? it->second.travel_time_s
                                                 : it->second.ranking_score);
    }
    Metrics m = compute_metrics(preds, truth);
    if (m.mape_excluded > 0) {
        std::cerr << "note: " << m.mape_excluded << " zero labels excluded from MAPE\n";
    }
    return m;
}

double masked_accuracy(Model& model, const Dataset& data, double ratio, uint64_t salt) {
    int correct = 0, total = 0;
    for (size_t di = 0; di < data.items.size(); ++di) {
        const PathTokens& pt = data.items[di];
        Rng rng = substream(model.cfg.seed, "mask_eval", (salt << 32) | static_cast<uint64_t>(di));
        MaskPlan plan = plan_mask(pt.road_seq, ratio, rng);
        if (plan.empty()) continue;

        ad::Tape<float> tape;
        TapeParams<float> tp(tape, model.store, false);
        auto ext_road = build_ext_road(tp);
        auto p0 = road_initial_embeddings(tp, model.dims, road_gather_ids(pt.road_seq, model.vocab, &plan),
                                          ext_road);
        std::vector<uint8_t> valid(static_cast<size_t>(pt.road_seq.length()), 1);
        auto p = encode(tp, "road_encoder", model.dims.encoder_config(0), p0, valid);
        auto rows = ad::gather_rows(p, plan.positions);
        auto logits = ad::add_rowvec(ad::matmul(rows, tp.use("mnm_head.weight")), tp.use("mnm_head.bias"));
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            Eigen::Index argmax = 0;
            logits.val().row(r).maxCoeff(&argmax);
            if (static_cast<int>(argmax) ==
                model.vocab.index_of(plan.originals[static_cast<size_t>(r)])) {
                ++correct;
            }
            ++total;
        }
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

AlignmentStats alignment_stats(Model& model, const Dataset& data, int random_pairs, uint64_t salt) {
    // Encoded embeddings per path, evaluation mode.
    std::vector<Eigen::MatrixXd> ps, hs;
    ForwardOptions opt = forward_options(model.cfg);
    for (const auto& pt : data.items) {
        ad::Tape<float> tape;
        TapeParams<float> tp(tape, model.store, false);
        auto bv = forward_batch(tape, tp, model.dims, model.vocab, opt, {&pt}, {}, {});
        ps.push_back(bv.paths[0].p.val().cast<double>());
        hs.push_back(bv.paths[0].h.val().cast<double>());
    }

    auto cosine = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
        return a.dot(b) / (a.norm() * b.norm() + kNormEps);
    };

    AlignmentStats stats;
    int matched = 0;
    for (size_t i = 0; i < data.items.size(); ++i) {
        for (const auto& [rp, ip] : data.items[i].corr.node_pairs) {
            stats.matched_mean_cos += cosine(ps[i].row(rp), hs[i].row(ip));
            ++matched;
        }
    }
    if (matched > 0) stats.matched_mean_cos /= matched;

    Rng rng = substream(model.cfg.seed, "align_stats", salt);
    int sampled = 0;
    while (sampled < random_pairs) {
        size_t pa = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(data.items.size()) - 1));
        size_t pb = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(data.items.size()) - 1));
        const auto& corr_a = data.items[pa].corr;
        if (corr_a.node_pairs.empty()) continue;
        size_t na = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corr_a.node_pairs.size()) - 1));
        int rp = corr_a.node_pairs[na].first;
        // random patch position in path pb
        std::vector<int> patch_positions;
        const auto& toks = data.items[pb].image_seq.tokens;
        for (int t = 0; t < static_cast<int>(toks.size()); ++t) {
            if (toks[static_cast<size_t>(t)].kind == ImageTok::Patch) patch_positions.push_back(t);
        }
        int ip = patch_positions[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(patch_positions.size()) - 1))];
        if (pa == pb && ip == corr_a.node_pairs[na].second) continue; // skip the true pair
        stats.random_mean_cos += cosine(ps[pa].row(rp), hs[pb].row(ip));
        ++sampled;
    }
    if (sampled > 0) stats.random_mean_cos /= sampled;
    return stats;
}

std::vector<AblationRow> ablate(const World& world, const LabelSet& labels,
                                const std::vector<std::string>& variants, const TrainConfig& cfg,
                                Task task) {
    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        check_variant(variant);
        TrainConfig vcfg = cfg;
        vcfg.ablation = variant;
        Model model = build_model(world, vcfg);
        auto [train_idx, test_idx] = split_paths(world, cfg.train_frac);
        Dataset train = prepare_dataset(world, model.dims, train_idx, cfg.workers);
        Dataset test = prepare_dataset(world, model.dims, test_idx, cfg.workers);
        pretrain(model, train);
        auto ft = finetune(model, train, labels, task);
        const Dataset& eval_set = test.items.empty() ? train : test;
        Metrics m = evaluate(model, eval_set, labels, task, {ft.label_mean, ft.label_std});
        rows.push_back({variant, task, m});
    }
    return rows;
}

void save_model(const Model& model, const std::filesystem::path& file, nlohmann::json extras,
                const std::string& rng_state) {
    CheckpointMeta meta;
    meta.config = model.cfg.to_json();
    extras["dims"] = {{"lattice", model.dims.lattice},
                      {"g", model.dims.g},
                      {"patch_dim", model.dims.patch_dim},
                      {"n1_max", model.dims.n1_max},
                      {"n2_max", model.dims.n2_max},
                      {"vocab_size", model.dims.vocab_size},
                      {"channels", model.dims.channels}};
    meta.extras = std::move(extras);
    meta.vocab = model.vocab.ids;
    meta.rng_state = rng_state;
    save_checkpoint(file, model.store, meta);
}

LoadedModel load_model(const std::filesystem::path& file) {
    CheckpointMeta meta = read_checkpoint_meta(file);
    LoadedModel lm;
    lm.model.cfg = TrainConfig::from_json(meta.config);
    const auto& dims = meta.extras.at("dims");
    lm.model.dims.d = lm.model.cfg.d;
    lm.model.dims.layers = lm.model.cfg.layers;
    lm.model.dims.heads = lm.model.cfg.heads;
    lm.model.dims.ffn = lm.model.cfg.ffn_mult * lm.model.cfg.d;
    lm.model.dims.patch_o = lm.model.cfg.patch_o;
    lm.model.dims.channels = dims.at("channels").get<int>();
    lm.model.dims.lattice = dims.at("lattice").get<int>();
    lm.model.dims.g = dims.at("g").get<int>();
    lm.model.dims.patch_dim = dims.at("patch_dim").get<int>();
    lm.model.dims.vocab_size = dims.at("vocab_size").get<int>();
    lm.model.dims.n1_max = dims.at("n1_max").get<int>();
    lm.model.dims.n2_max = dims.at("n2_max").get<int>();
    lm.model.vocab = Vocab::from_ids(meta.vocab);

    // Values come from the payload; initializer specs only apply to fresh
    // builds.
    register_model_params(lm.model.store, lm.model.dims, lm.model.cfg.seed, "random", "random",
                          lm.model.cfg.sigma_init, lm.model.cfg.ablation);
    if (meta.extras.contains("head_d_in")) {
        register_head_params(lm.model.store, meta.extras.at("head_d_in").get<int>(),
                             lm.model.cfg.seed);
    }
    lm.meta = load_checkpoint(file, lm.model.store);
    return lm;
}

std::string format_num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_loss_log(const std::filesystem::path& file, const std::vector<EpochLoss>& log) {
    std::ofstream f(file);
    if (!f) throw InputError("cannot write " + file.string());
    f << "epoch,l_mask,l_fine,l_medium,l_coarse,l_fuse,total\n";
    for (const auto& row : log) {
        f << row.epoch << "," << format_num(row.l_mask) << "," << format_num(row.l_fine) << ","
          << format_num(row.l_medium) << "," << format_num(row.l_coarse) << ","
          << format_num(row.l_fuse) << "," << format_num(row.total) << "\n";
    }
}

void append_metrics_row(const std::filesystem::path& file, const std::string& variant, Task task,
                        const Metrics& m) {
    bool fresh = !std::filesystem::exists(file);
    std::ofstream f(file, std::ios::app);
    if (!f) throw InputError("cannot write " + file.string());
    if (fresh) f << "variant,task,mae,mare,mape,tau,rho,n_test\n";
    f << variant << "," << task_name(task) << "," << format_num(m.mae) << "," << format_num(m.mare)
      << "," << format_num(m.mape) << "," << format_num(m.tau) << "," << format_num(m.rho) << ","
      << m.n << "\n";
}

} // namespace mmpath
