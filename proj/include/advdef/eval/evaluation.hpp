#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/baselines/baseline_spec.hpp"
#include "advdef/classifier/classifier.hpp"
#include "advdef/core/dataset.hpp"
#include "advdef/core/image_tensor.hpp"
#include "advdef/defense/trainer.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace advdef::eval {

using classifier::DifferentiableClassifier;

// Fraction of argmax-correct predictions. Throws ContractError on an empty set.
double accuracy(const DifferentiableClassifier& model, const ImageTensor& images, const torch::Tensor& labels);

// Mean |a - b| over all elements, accumulated in double.
double mae(const ImageTensor& a, const ImageTensor& b);

// PSNR in dB; identical inputs give the "inf" sentinel instead of a number.
struct Psnr {
    double db = 0.0;
    bool infinite = false;

    std::string str() const;
    // Display value with the sentinel capped at `cap` dB.
    double capped(double cap = 60.0) const { return infinite ? cap : std::min(db, cap); }
    bool operator==(const Psnr&) const = default;
};
Psnr psnr(const ImageTensor& a, const ImageTensor& b, double max_value = 1.0);

// Something that maps (attacked) images to images the classifier then sees.
struct NamedDefense {
    std::string name;
    std::function<ImageTensor(const ImageTensor&, uint64_t cell_seed)> apply;
};
NamedDefense identity_defense(std::string name = "identity");
NamedDefense checkpoint_defense(std::string name, const defense::DefenseCheckpoint& checkpoint);
NamedDefense baseline_defense(std::string name, const baselines::BaselineSpec& spec);

// One attack applied to the whole test set, kept in memory.
struct AttackedSet {
    attacks::AttackSpec spec;
    std::string name;  // method name
    ImageTensor adversarial;
    double seconds = 0.0;
};
std::vector<AttackedSet> generate_attacked_sets(const std::vector<attacks::AttackSpec>& specs,
                                                const data::LabeledImageSet& test,
                                                const DifferentiableClassifier& model, uint64_t seed);

struct Cell {
    std::optional<double> accuracy;  // empty when skipped
    std::string reason;              // why it was skipped

    bool operator==(const Cell&) const = default;
};

// rows: "clean" then one per attack; columns: defenses. The "Average" row is
// the mean of every non-skipped row of a column, clean included.
struct Matrix {
    std::string title;
    std::vector<std::string> rows;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> cells;  // [row][column]
    std::vector<std::string> held_out;     // rows never seen in training

    const Cell& at(const std::string& row, const std::string& column) const;
    std::optional<double> column_average(const std::string& column) const;
    // Mean over the named rows of a column; empty when any is skipped.
    std::optional<double> column_mean(const std::string& column, const std::vector<std::string>& rows) const;
    std::string to_csv() const;

    bool operator==(const Matrix&) const = default;
};

struct FidelityRow {
    std::string attack;  // "clean" or a method name
    double mae_attacked = 0.0;
    double mae_restored = 0.0;
    Psnr psnr_attacked;
    Psnr psnr_restored;

    bool operator==(const FidelityRow&) const = default;
};

struct SweepCurve {
    std::string family;
    double epsilon = 0.0;
    std::vector<int> iterations;       // strictly increasing
    std::vector<double> accuracy;      // recovered accuracy per iteration count
    std::vector<double> no_defense;    // accuracy of the attacked inputs

    double spread() const;  // max - min of `accuracy`
    bool operator==(const SweepCurve&) const = default;
};

struct EvaluationReport {
    std::string config_hash;
    uint64_t seed = 0;
    int64_t test_images = 0;
    double clean_accuracy = 0.0;
    std::map<std::string, double> no_defense;  // per attack
    Matrix recovery;                           // one column per attack-specific model
    Matrix comparison;                         // versatile vs specific vs baselines
    std::vector<FidelityRow> fidelity;         // versatile model
    std::vector<SweepCurve> sweeps;
    std::map<std::string, double> phase_seconds;

    bool operator==(const EvaluationReport&) const = default;
};

void to_json(nlohmann::json& j, const Psnr& p);
void from_json(const nlohmann::json& j, Psnr& p);
void to_json(nlohmann::json& j, const Cell& c);
void from_json(const nlohmann::json& j, Cell& c);
void to_json(nlohmann::json& j, const Matrix& m);
void from_json(const nlohmann::json& j, Matrix& m);
void to_json(nlohmann::json& j, const FidelityRow& r);
void from_json(const nlohmann::json& j, FidelityRow& r);
void to_json(nlohmann::json& j, const SweepCurve& c);
void from_json(const nlohmann::json& j, SweepCurve& c);
void to_json(nlohmann::json& j, const EvaluationReport& r);
void from_json(const nlohmann::json& j, EvaluationReport& r);

// rows = clean + attacks, columns = "no_defense" + defenses. Cells that throw
// are marked skipped and the run continues.
Matrix recovery_matrix(const std::vector<NamedDefense>& defenses, const std::vector<AttackedSet>& attacked,
                       const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                       const std::vector<std::string>& held_out = {});
Matrix recovery_matrix(const std::vector<NamedDefense>& defenses, const std::vector<attacks::AttackSpec>& specs,
                       const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                       const std::vector<std::string>& held_out = {});

struct Comparison {
    const defense::DefenseCheckpoint* versatile = nullptr;
    // Training attack -> its attack-specific model; may be empty.
    std::vector<std::pair<attacks::AttackMethod, const defense::DefenseCheckpoint*>> specific;
    const defense::DefenseCheckpoint* fixed_weight = nullptr;  // optional
    std::vector<baselines::BaselineSpec> baselines;
};

inline const std::string kNoDefense = "no_defense";
inline const std::string kVersatile = "versatile";
inline const std::string kSpecific = "attack_specific";
inline const std::string kFixedWeight = "versatile_fixed_weights";

// The attack-specific column uses the matching model on rows
// of its training attack and the mean over all specific models on the other
// rows (clean, held-out attacks). Absent columns are omitted.
Matrix compare_defenses(const Comparison& defenses, const std::vector<AttackedSet>& attacked,
                        const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                        const std::vector<std::string>& held_out = {});

// MAE / PSNR of attacked and reconstructed images against the clean ones.
std::vector<FidelityRow> fidelity(const NamedDefense& defense, const std::vector<AttackedSet>& attacked,
                                  const data::LabeledImageSet& test, uint64_t seed);

// One curve per epsilon. The attack runs once per epsilon for
// max(iterations) steps and is sampled after each listed step count, which
// equals a fresh run of that length because iterates never look ahead.
std::vector<SweepCurve> robustness_sweep(const NamedDefense& defense, attacks::AttackMethod family,
                                         const std::vector<int>& iterations, const std::vector<double>& epsilons,
                                         double step, const data::LabeledImageSet& test,
                                         const DifferentiableClassifier& model, uint64_t seed);

// Writes report.json plus one CSV per matrix and sweeps.csv into `dir`,
// with file names prefixed by the config hash. Returns the written paths.
std::vector<std::filesystem::path> export_report(const EvaluationReport& report, const std::filesystem::path& dir);
EvaluationReport import_report(const std::filesystem::path& report_json);

}  // namespace advdef::eval
