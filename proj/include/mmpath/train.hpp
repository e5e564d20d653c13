#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpath/checkpoint.hpp"
#include "mmpath/metrics.hpp"
#include "mmpath/model.hpp"

namespace mmpath {

struct TrainConfig {
    int d = 64;
    int layers = 5;
    int heads = 4;
    int ffn_mult = 4;
    double dropout = 0.1;
    double mask_ratio = 0.15;
    double lambda_mask = 1.0;
    double lambda_multi = 1.0;
    double lambda_fuse = 1.0;
    double beta = 1.0;
    double sigma_init = 0.1;
    double lr = 0.02;
    int epochs = 60;
    int batch_size = 8;
    uint64_t seed = 42;
    std::string ablation = "full";
    std::string optimizer = "adam";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int patch_o = 125;
    int max_path_nodes = 64;
    std::string node_init = "random";
    std::string patch_init = "random";
    int finetune_epochs = 200;
    double finetune_lr = 0.02;
    bool freeze_encoder = false;
    double train_frac = 0.5;
    int workers = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);

    // Ablation folded into the weights (no_alignment zeroes lambda_multi).
    TrainConfig effective() const;
};

struct EpochLoss {
    int epoch = 0;
    double l_mask = 0, l_fine = 0, l_medium = 0, l_coarse = 0, l_fuse = 0, total = 0;
};

struct Model {
    TrainConfig cfg;
    ModelDims dims;
    Vocab vocab;
    ParamStore<float> store;
};

struct Dataset {
    std::vector<PathTokens> items;
};

Model build_model(const World& world, const TrainConfig& cfg);

Dataset prepare_dataset(const World& world, const ModelDims& dims,
                        const std::vector<int>& path_indexes, int workers);

// First round(frac * n) paths train, the rest test.
std::pair<std::vector<int>, std::vector<int>> split_paths(const World& world, double frac);

struct PretrainResult {
    std::vector<EpochLoss> log;
    std::string rng_state;
};

PretrainResult pretrain(Model& model, const Dataset& train);

struct FinetuneResult {
    std::vector<std::pair<int, double>> loss_log; // (epoch, squared-error loss)
    double label_mean = 0;
    double label_std = 1;
    Task task = Task::TravelTime;
};

FinetuneResult finetune(Model& model, const Dataset& train, const LabelSet& labels, Task task);

// Head scaling captured at fine-tuning time, needed to undo target
// standardization at prediction time.
struct HeadScaling {
    double mean = 0;
    double std = 1;
};

std::vector<double> predict(Model& model, const Dataset& data, const HeadScaling& scaling);

Metrics evaluate(Model& model, const Dataset& test, const LabelSet& labels, Task task,
                 const HeadScaling& scaling);

// Fraction of masked positions whose argmax prediction recovers the true
// node, with fresh masks drawn from an evaluation substream.
double masked_accuracy(Model& model, const Dataset& data, double ratio, uint64_t salt);

struct AlignmentStats {
    double matched_mean_cos = 0;
    double random_mean_cos = 0;
};

AlignmentStats alignment_stats(Model& model, const Dataset& data, int random_pairs, uint64_t salt);

struct AblationRow {
    std::string variant;
    Task task = Task::TravelTime;
    Metrics metrics;
};

std::vector<AblationRow> ablate(const World& world, const LabelSet& labels,
                                const std::vector<std::string>& variants, const TrainConfig& cfg,
                                Task task);

// ---- persistence ------------------------------------------------------------

void save_model(const Model& model, const std::filesystem::path& file, nlohmann::json extras,
                const std::string& rng_state);

struct LoadedModel {
    Model model;
    CheckpointMeta meta;
};

LoadedModel load_model(const std::filesystem::path& file);

void write_loss_log(const std::filesystem::path& file, const std::vector<EpochLoss>& log);
void append_metrics_row(const std::filesystem::path& file, const std::string& variant,
                        Task task, const Metrics& m);

// Deterministic shortest-form float formatting shared by all CSV output.
std::string format_num(double v);

} // namespace mmpath
