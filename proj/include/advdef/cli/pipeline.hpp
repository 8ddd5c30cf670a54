#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/classifier/classifier.hpp"
#include "advdef/cli/manifest.hpp"
#include "advdef/core/config.hpp"
#include "advdef/core/dataset.hpp"
#include "advdef/core/paired_set.hpp"
#include "advdef/defense/trainer.hpp"
#include "advdef/eval/evaluation.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace advdef::cli {

struct RunOptions {
    std::filesystem::path out_root;  // empty: config.output_dir
    bool force = false;              // rerun phases that already completed
    bool verbose = true;
};

// One defense model to train.
struct DefenseJob {
    std::string label;  // versatile, versatile_fixed_weights, M_PGD, ...
    std::vector<attacks::AttackSpec> attacks;
    int per_attack = 0;
    defense::TrainingSchedule schedule;

    std::string phase() const { return "defense:" + label; }
};

// Evaluation modes of `advdef evaluate`.
enum class EvalMode { Matrix, Compare, Sweep, All };
EvalMode parse_eval_mode(const std::string& name);
std::string eval_mode_name(EvalMode mode);

// Runs the phases of one experiment inside <out>/<config hash>/, recording
// each in the run manifest. Phases that already completed are skipped unless
// RunOptions::force is set.
class Pipeline {
public:
    Pipeline(ExperimentConfig config, RunOptions options);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& run_dir() const { return run_dir_; }
    RunManifest& manifest() { return manifest_; }

    DefenseJob versatile_job() const;
    DefenseJob fixed_weight_job() const;
    DefenseJob specific_job(attacks::AttackMethod method) const;
    // One attack gives its specific model, the configured set the versatile
    // model, anything else a named mixture.
    DefenseJob job_for(const std::vector<attacks::AttackMethod>& methods) const;
    // Specific models (when enabled), versatile, then fixed-weight (when enabled).
    std::vector<DefenseJob> defense_jobs(bool with_specific) const;

    // Phase names in execution order.
    std::vector<std::string> plan(bool with_specific) const;

    void run_classifier();
    // Builds the versatile paired training set.
    void run_attacks();
    // Attacks the test set with `methods` and writes attacks/no_defense.csv.
    void attack_report(const std::vector<attacks::AttackSpec>& specs);
    void run_defense(const DefenseJob& job);
    eval::Matrix run_baseline(const baselines::BaselineSpec& spec, const std::vector<attacks::AttackSpec>& specs);
    eval::EvaluationReport run_evaluation(EvalMode mode);
    eval::EvaluationReport reproduce(bool with_specific);

    const classifier::ClassifierModel& classifier();
    const data::LabeledImageSet& test_set();
    bool has_defense(const std::string& label) const;
    // Throws MissingDependencyError naming the defense phase when absent.
    defense::DefenseCheckpoint load_defense(const std::string& label) const;
    std::filesystem::path report_path() const;

private:
    struct TrainSplit {
        data::LabeledImageSet pool;
        std::vector<int64_t> clean_index;
    };

    template <class Body>
    void run_phase(const std::string& phase, Body body);
    bool skip(const std::string& phase) const;
    void log(const std::string& message) const;
    TrainSplit train_split() const;
    data::PairedImageSet validation_pairs(const DefenseJob& job, const TrainSplit& split);
    std::vector<eval::AttackedSet> attacked_test_sets(const std::vector<attacks::AttackSpec>& specs);
    void write_plots(const eval::EvaluationReport& report, const std::vector<eval::AttackedSet>& attacked,
                     const defense::DefenseCheckpoint* versatile);

    ExperimentConfig config_;
    RunOptions options_;
    std::filesystem::path run_dir_;
    RunManifest manifest_;
    std::unique_ptr<classifier::ClassifierModel> classifier_;
    std::optional<data::LabeledImageSet> test_;
};

}  // namespace advdef::cli
