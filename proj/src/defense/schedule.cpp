#include "advdef/defense/schedule.hpp"

#include "advdef/core/errors.hpp"

#include <cmath>
#include <string>

namespace advdef::defense {

TrainingSchedule::TrainingSchedule(std::vector<SchedulePhase> phases) : phases_(std::move(phases)) {
    validate();
}

TrainingSchedule TrainingSchedule::multi_step() {
    return TrainingSchedule({
        {0, 40, {100.0, 100.0}},
        {40, 70, {100.0, 50.0}},
        {70, 100, {100.0, 1.0}},
    });
}

TrainingSchedule TrainingSchedule::multi_step(int total_epochs) {
    if (total_epochs < 3) {
        throw ConfigError("multi-step schedule needs at least 3 epochs");
    }
    const int first = static_cast<int>(std::lround(0.4 * total_epochs));
    const int second = static_cast<int>(std::lround(0.7 * total_epochs));
    return TrainingSchedule({
        {0, first, {100.0, 100.0}},
        {first, second, {100.0, 50.0}},
        {second, total_epochs, {100.0, 1.0}},
    });
}

TrainingSchedule TrainingSchedule::fixed(LossWeights weights, int total_epochs) {
    return TrainingSchedule({{0, total_epochs, weights}});
}

int TrainingSchedule::total_epochs() const {
    return phases_.empty() ? 0 : phases_.back().epoch_end;
}

void TrainingSchedule::validate() const {
    if (phases_.empty()) {
        throw ConfigError("schedule: no phases");
    }
    int expected_begin = 0;
    for (const auto& p : phases_) {
        if (p.epoch_begin != expected_begin) {
            throw ConfigError("schedule: phase starting at epoch " + std::to_string(p.epoch_begin) +
                              " is not contiguous (expected " + std::to_string(expected_begin) + ")");
        }
        if (p.epoch_end <= p.epoch_begin) {
            throw ConfigError("schedule: empty phase at epoch " + std::to_string(p.epoch_begin));
        }
        if (!(p.weights.lambda1 >= 0.0) || !(p.weights.lambda2 >= 0.0)) {
            throw ConfigError("schedule: negative loss weight");
        }
        expected_begin = p.epoch_end;
    }
}

void TrainingSchedule::validate_covers(int epochs) const {
    validate();
    if (total_epochs() != epochs) {
        throw ConfigError("schedule covers " + std::to_string(total_epochs()) + " epochs, training runs " +
                          std::to_string(epochs));
    }
}

LossWeights loss_weight_schedule(const TrainingSchedule& schedule, int epoch) {
    for (const auto& p : schedule.phases()) {
        if (epoch >= p.epoch_begin && epoch < p.epoch_end) {
            return p.weights;
        }
    }
    throw ContractError("epoch " + std::to_string(epoch) + " outside schedule [0, " +
                        std::to_string(schedule.total_epochs()) + ")");
}

void to_json(nlohmann::json& j, const TrainingSchedule& s) {
    j = nlohmann::json::array();
    for (const auto& p : s.phases()) {
        j.push_back({{"begin", p.epoch_begin},
                     {"end", p.epoch_end},
                     {"lambda1", p.weights.lambda1},
                     {"lambda2", p.weights.lambda2}});
    }
}

void from_json(const nlohmann::json& j, TrainingSchedule& s) {
    std::vector<SchedulePhase> phases;
    for (const auto& p : j) {
        phases.push_back({p.at("begin").get<int>(),
                          p.at("end").get<int>(),
                          {p.at("lambda1").get<double>(), p.at("lambda2").get<double>()}});
    }
    s = TrainingSchedule(std::move(phases));
}

}  // namespace advdef::defense
