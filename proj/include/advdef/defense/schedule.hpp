#pragma once

#include <nlohmann/json.hpp>

#include <vector>

namespace advdef::defense {

// Weights of the pixel (L1) and perceptual terms relative to the adversarial term.
struct LossWeights {
    double lambda1 = 100.0;
    double lambda2 = 100.0;

    bool operator==(const LossWeights&) const = default;
};

// Weights applied for epochs in [epoch_begin, epoch_end).
struct SchedulePhase {
    int epoch_begin = 0;
    int epoch_end = 0;
    LossWeights weights;

    bool operator==(const SchedulePhase&) const = default;
};

class TrainingSchedule {
public:
    TrainingSchedule() = default;
    explicit TrainingSchedule(std::vector<SchedulePhase> phases);

    // 100 epochs: [0,40) 100/100, [40,70) 100/50, [70,100) 100/1.
    static TrainingSchedule multi_step();
    // The same three phases with boundaries at 40% and 70% of `total_epochs`.
    static TrainingSchedule multi_step(int total_epochs);
    static TrainingSchedule fixed(LossWeights weights, int total_epochs);

    const std::vector<SchedulePhase>& phases() const { return phases_; }
    int total_epochs() const;

    // Contiguous, non-overlapping, starts at 0 and ends at total_epochs;
    // throws ConfigError otherwise.
    void validate() const;
    void validate_covers(int epochs) const;

    bool operator==(const TrainingSchedule&) const = default;

private:
    std::vector<SchedulePhase> phases_;
};

// Weights of the phase containing `epoch`; ContractError when out of range.
LossWeights loss_weight_schedule(const TrainingSchedule& schedule, int epoch);

void to_json(nlohmann::json& j, const TrainingSchedule& s);
void from_json(const nlohmann::json& j, TrainingSchedule& s);

}  // namespace advdef::defense
