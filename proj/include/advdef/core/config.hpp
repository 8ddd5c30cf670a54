#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/baselines/baseline_spec.hpp"
#include "advdef/defense/schedule.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace advdef {

struct ClassifierHyper {
    int epochs = 12;
    int batch_size = 64;
    double learning_rate = 2e-3;
    double weight_decay = 0.0;
    std::vector<int> channels = {16, 32, 64, 64};
    int train_per_class = 500;  // classifier training pool per class
};

struct DefenseHyper {
    int batch_size = 16;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int generator_filters = 16;
    int discriminator_filters = 32;
    double dropout = 0.5;
    bool inference_dropout = false;
    bool input_skip = true;
    int checkpoint_every = 10;
    int validation_per_class = 6;
    std::vector<std::string> perceptual_layers = {"block1", "block2", "block3", "block4"};
};

struct EvaluationSettings {
    int test_per_class = 50;    // matrix cells
    int sweep_per_class = 20;   // robustness sweep subset
    std::vector<int> sweep_iterations = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::vector<double> sweep_epsilons = {2.0 / 255.0, 5.0 / 255.0, 10.0 / 255.0};
    double sweep_step = 0.01;
    std::vector<attacks::AttackMethod> sweep_families = {attacks::AttackMethod::Pgd,
                                                         attacks::AttackMethod::MiFgsm};
    bool attack_specific = true;  // train one model per training attack
    bool fixed_weight_baseline = true;
    int triptych_columns = 6;
};

struct ExperimentConfig {
    std::string dataset = "synthetic-shapes";
    int image_size = 32;
    int image_channels = 3;
    int num_classes = 10;
    int clean_per_class = 48;  // clean images per class in the paired set
    int per_attack = 8;        // clean images per class given to each attack
    std::vector<attacks::AttackSpec> attacks;      // training attacks
    std::vector<attacks::AttackSpec> held_out;     // evaluation-only attacks (DeepFool)
    uint64_t seed = 0;
    int epochs = 100;
    int batch_size = 16;
    defense::TrainingSchedule schedule = defense::TrainingSchedule::multi_step();
    defense::LossWeights fixed_weights{100.0, 1.0};
    std::filesystem::path output_dir = "runs";
    std::filesystem::path data_dir = "data";
    ClassifierHyper classifier;
    DefenseHyper defense;
    std::vector<baselines::BaselineSpec> baselines;
    EvaluationSettings evaluation;

    // Checks every cross-field invariant; throws ConfigError naming the field.
    void validate() const;

    // All attacks in evaluation order: training attacks then held-out ones.
    std::vector<attacks::AttackSpec> evaluation_attacks() const;

    // Expected image count for a split: classes x per-class count.
    int64_t expected_count(bool train) const;

    // FNV-1a over the canonical JSON dump, hex encoded.
    std::string hash() const;
};

// Desk-scale defaults: 10 classes at 32x32, the six training attacks at
// eps = 8/255 (40 iterations, step 0.01), DeepFool held out.
ExperimentConfig desk_config();

// Parses a JSON config. A missing "seed" or a broken invariant throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

// Dataset cache root: $ADVDEF_DATA_DIR when set, otherwise config.data_dir.
std::filesystem::path resolve_data_dir(const ExperimentConfig& config);

}  // namespace advdef
