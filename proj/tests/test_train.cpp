#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmpath/metrics.hpp"
#include "mmpath/train.hpp"

using namespace mmpath;

namespace {

WorldConfig micro_world_cfg() {
    WorldConfig cfg;
    cfg.cols = 3;
    cfg.rows = 3;
    cfg.r = 16;
    cfg.meters_per_pixel = 62.5;
    cfg.channels = 3;
    cfg.node_count = 14;
    cfg.target_edge_len = 400;
    cfg.path_count = 8;
    cfg.path_min_nodes = 3;
    cfg.path_max_nodes = 6;
    return cfg;
}

TrainConfig micro_train_cfg() {
    TrainConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.dropout = 0.0;
    cfg.patch_o = 8;
    cfg.epochs = 3;
    cfg.finetune_epochs = 5;
    cfg.batch_size = 4;
    cfg.max_path_nodes = 16;
    cfg.seed = 99;
    cfg.train_frac = 0.75;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("total loss weighting") {
    ad::Tape<double> t;
    auto mk = [&](double v) { return t.scalar_leaf(v); };

    CHECK(total_loss(mk(3.0), mk(5.0), mk(7.0), 0, 0, 0).scalar() == 0.0);
    CHECK(total_loss(mk(3.0), mk(5.0), mk(7.0), 1, 1, 1).scalar() == doctest::Approx(15.0));

    Rng rng(1);
    for (int i = 0; i < 25; ++i) {
        double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
        double la = rng.uniform(0, 3), lb = rng.uniform(0, 3), lc = rng.uniform(0, 3);
        CHECK(total_loss(mk(a), mk(b), mk(c), la, lb, lc).scalar() ==
              doctest::Approx(la * a + lb * b + lc * c).epsilon(1e-12));
    }

    // linear in each lambda: three-point collinearity
    auto at = [&](double lm) { return total_loss(mk(2.0), mk(3.0), mk(4.0), lm, 1.0, 1.0).scalar(); };
    double f0 = at(0.0), f1 = at(1.0), f2 = at(2.0);
    CHECK(f2 - f1 == doctest::Approx(f1 - f0).epsilon(1e-12));
}

TEST_CASE("per-path encodings and losses ignore batch composition") {
    World w = generate_synthetic_world(7, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    Model model = build_model(w, cfg);
    Dataset ds = prepare_dataset(w, model.dims, {0, 1, 2}, 1);

    auto plan_for = [&](int di) {
        Rng rng = substream(cfg.seed, "test.mask", static_cast<uint64_t>(di));
        return plan_mask(ds.items[static_cast<size_t>(di)].road_seq, 0.25, rng);
    };
    std::vector<MaskPlan> plans = {plan_for(0), plan_for(1), plan_for(2)};

    ForwardOptions opt;
    // alone
    ad::Tape<float> t1;
    TapeParams<float> tp1(t1, model.store, false);
    auto alone = forward_batch(t1, tp1, model.dims, model.vocab, opt,
                               {&ds.items[0]}, {plans[0]}, {-1});
    // inside a batch of three with longer padding
    ad::Tape<float> t3;
    TapeParams<float> tp3(t3, model.store, false);
    auto batch = forward_batch(t3, tp3, model.dims, model.vocab, opt,
                               {&ds.items[0], &ds.items[1], &ds.items[2]},
                               plans, {1, 0, 0});

    CHECK(alone.paths[0].p.val() == batch.paths[0].p.val());
    CHECK(alone.paths[0].h.val() == batch.paths[0].h.val());

    // identical encodings give identical per-path mask/fine/medium losses
    ad::Tape<float> ta;
    TapeParams<float> tpa(ta, model.store, false);
    auto pa = ta.leaf(alone.paths[0].p.val(), false);
    auto ha = ta.leaf(alone.paths[0].h.val(), false);
    auto pb = ta.leaf(batch.paths[0].p.val(), false);
    auto hb = ta.leaf(batch.paths[0].h.val(), false);
    const PathTokens& pt = ds.items[0];
    CHECK(mnm_loss_path(tpa, pa, plans[0], model.vocab).scalar() ==
          mnm_loss_path(tpa, pb, plans[0], model.vocab).scalar());
    CHECK(fine_loss_path(pa, ha, pt.corr).scalar() == fine_loss_path(pb, hb, pt.corr).scalar());
    CHECK(medium_loss_path(pa, ha, pt.sep_road, pt.sep_image).scalar() ==
          medium_loss_path(pb, hb, pt.sep_road, pt.sep_image).scalar());
}

TEST_CASE("metrics: exact cases and oracles") {
    std::vector<double> truth = {1, 2, 3, 4, 5};

    SUBCASE("perfect predictions") {
        Metrics m = compute_metrics(truth, truth);
        CHECK(m.mae == 0.0);
        CHECK(m.mare == 0.0);
        CHECK(m.mape == 0.0);
        CHECK(m.tau == 1.0);
        CHECK(m.rho == 1.0);
    }

    SUBCASE("exactly reversed ranking") {
        std::vector<double> rev = {5, 4, 3, 2, 1};
        Metrics m = compute_metrics(rev, truth);
        CHECK(m.tau == -1.0);
        CHECK(m.rho == doctest::Approx(-1.0));
    }

    SUBCASE("pair-count oracle on the documented triple") {
        CHECK(kendall_tau({1, 2, 3}, {3, 1, 2}) == doctest::Approx(-1.0 / 3.0));
    }

    SUBCASE("zero labels excluded from mape with a count") {
        Metrics m = compute_metrics({1.0, 2.0, 4.0}, {0.0, 2.0, 4.0});
        CHECK(m.mape_excluded == 1);
        CHECK(m.mape == 0.0);
        CHECK(m.mae == doctest::Approx(1.0 / 3.0));
        CHECK(m.mare == doctest::Approx(1.0 / 6.0));
    }

    SUBCASE("ties get average ranks") {
        auto r = average_ranks({10, 20, 20, 30});
        CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    }
}

TEST_CASE("pretraining is deterministic and its losses fall") {
    World w = generate_synthetic_world(8, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    cfg.epochs = 6;

    Model m1 = build_model(w, cfg);
    Dataset ds1 = prepare_dataset(w, m1.dims, {0, 1, 2, 3, 4, 5}, 1);
    auto r1 = pretrain(m1, ds1);

    Model m2 = build_model(w, cfg);
    Dataset ds2 = prepare_dataset(w, m2.dims, {0, 1, 2, 3, 4, 5}, 3);
    auto r2 = pretrain(m2, ds2);

    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].total == r2.log[i].total);
        CHECK(r1.log[i].l_mask == r2.log[i].l_mask);
        CHECK(r1.log[i].l_coarse == r2.log[i].l_coarse);
    }
    CHECK(r1.log.back().total < r1.log.front().total);

    // loss log files byte-identical
    auto f1 = std::filesystem::temp_directory_path() / "mmpath_log1.csv";
    auto f2 = std::filesystem::temp_directory_path() / "mmpath_log2.csv";
    write_loss_log(f1, r1.log);
    write_loss_log(f2, r2.log);
    CHECK(slurp(f1) == slurp(f2));
    std::filesystem::remove(f1);
    std::filesystem::remove(f2);
}

TEST_CASE("dropout draws are deterministic for a fixed seed") {
    World w = generate_synthetic_world(8, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    cfg.dropout = 0.1;
    cfg.epochs = 2;
    Model m1 = build_model(w, cfg);
    Dataset ds = prepare_dataset(w, m1.dims, {0, 1, 2, 3}, 1);
    auto r1 = pretrain(m1, ds);
    Model m2 = build_model(w, cfg);
    auto r2 = pretrain(m2, ds);
    for (size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].total == r2.log[i].total);
}

TEST_CASE("checkpoint save/load restores evaluation bit-exactly") {
    World w = generate_synthetic_world(9, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    Model model = build_model(w, cfg);
    Dataset ds = prepare_dataset(w, model.dims, {0, 1, 2, 3}, 1);
    pretrain(model, ds);

    auto eval_total = [&](Model& m) {
        ad::Tape<float> tape;
        TapeParams<float> tp(tape, m.store, false);
        ForwardOptions opt;
        auto bv = forward_batch(tape, tp, m.dims, m.vocab, opt,
                                {&ds.items[0], &ds.items[1]}, {}, {1, 0});
        return bv.total.scalar();
    };
    float before = eval_total(model);

    auto file = std::filesystem::temp_directory_path() / "mmpath_ckpt.mmp";
    save_model(model, file, nlohmann::json::object(), "rngstate");
    auto lm = load_model(file);

    REQUIRE(lm.model.store.count() == model.store.count());
    for (int i = 0; i < model.store.count(); ++i) {
        CHECK(lm.model.store.name(i) == model.store.name(i));
        CHECK(lm.model.store.value(i) == model.store.value(i));
    }
    CHECK(lm.meta.rng_state == "rngstate");
    CHECK(eval_total(lm.model) == before);
    std::filesystem::remove(file);
}

TEST_CASE("finetune trains a scalar head; freeze_encoder touches only the head") {
    World w = generate_synthetic_world(10, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    cfg.freeze_encoder = true;
    Model model = build_model(w, cfg);
    Dataset ds = prepare_dataset(w, model.dims, {0, 1, 2, 3, 4, 5}, 1);
    pretrain(model, ds);

    std::vector<ad::Mat<float>> snapshot;
    for (int i = 0; i < model.store.count(); ++i) snapshot.push_back(model.store.value(i));
    int base_count = model.store.count();

    LabelSet labels = synth_labels(w, Task::TravelTime, 10, 0.0);
    auto ft = finetune(model, ds, labels, Task::TravelTime);
    CHECK(ft.label_std > 0);

    // parameter-delta oracle: everything but head.* is bitwise unchanged
    for (int i = 0; i < base_count; ++i) {
        CAPTURE(model.store.name(i));
        CHECK(model.store.value(i) == snapshot[static_cast<size_t>(i)]);
    }
    CHECK(model.store.has("head.w1"));
    CHECK(model.store.value("head.w2").cols() == 1);

    // head output is one scalar per path
    auto preds = predict(model, ds, {ft.label_mean, ft.label_std});
    CHECK(preds.size() == ds.items.size());
    for (double p : preds) CHECK(std::isfinite(p));

    Metrics m = evaluate(model, ds, labels, Task::TravelTime, {ft.label_mean, ft.label_std});
    CHECK(m.n == static_cast<int>(ds.items.size()));
    CHECK(std::isfinite(m.mae));
}

TEST_CASE("unknown task and variant names are rejected") {
    CHECK_THROWS_AS(parse_task("speed"), ConfigError);
    TrainConfig cfg = micro_train_cfg();
    cfg.ablation = "no_everything";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("ablation variants run and the full variant reproduces the pipeline") {
    World w = generate_synthetic_world(11, micro_world_cfg());
    TrainConfig cfg = micro_train_cfg();
    cfg.epochs = 2;
    cfg.finetune_epochs = 3;
    LabelSet labels = synth_labels(w, Task::TravelTime, 11, 0.0);

    auto rows = ablate(w, labels, {"full", "no_gcn", "z_only"}, cfg, Task::TravelTime);
    REQUIRE(rows.size() == 3);
    for (const auto& row : rows) {
        CAPTURE(row.variant);
        CHECK(std::isfinite(row.metrics.mae));
        CHECK(std::isfinite(row.metrics.tau));
    }

    // direct pipeline with the same seed must match the "full" row exactly
    Model model = build_model(w, cfg);
    auto [train_idx, test_idx] = split_paths(w, cfg.train_frac);
    Dataset train = prepare_dataset(w, model.dims, train_idx, 1);
    Dataset test = prepare_dataset(w, model.dims, test_idx, 1);
    pretrain(model, train);
    auto ft = finetune(model, train, labels, Task::TravelTime);
    Metrics direct = evaluate(model, test, labels, Task::TravelTime, {ft.label_mean, ft.label_std});
    CHECK(rows[0].metrics.mae == direct.mae);
    CHECK(rows[0].metrics.tau == direct.tau);
    CHECK(rows[0].metrics.rho == direct.rho);
}

TEST_CASE("config json round trip keeps every field") {
    TrainConfig cfg = micro_train_cfg();
    cfg.ablation = "no_coarse";
    cfg.optimizer = "sgd";
    cfg.node_init = "random";
    auto j = cfg.to_json();
    TrainConfig back = TrainConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(TrainConfig().effective().lambda_multi == 1.0);
    TrainConfig na = cfg;
    na.ablation = "no_alignment";
    CHECK(na.effective().lambda_multi == 0.0);
}
