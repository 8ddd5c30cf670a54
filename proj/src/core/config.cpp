#include "advdef/core/config.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace advdef {

using attacks::AttackMethod;
using attacks::AttackSpec;
using nlohmann::json;

namespace {

constexpr double kDeskEpsilon = 8.0 / 255.0;

template <typename T>
void read_opt(const json& section, const char* key, T& out, const std::string& path) {
    if (!section.contains(key)) {
        return;
    }
    try {
        out = section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

double read_fraction(const json& v, const std::string& path) {
    try {
        return v.is_string() ? attacks::parse_fraction(v.get<std::string>()) : v.get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::vector<AttackSpec> read_attacks(const json& list, const std::string& path) {
    if (!list.is_array()) {
        throw ConfigError(path + ": expected a list of attacks");
    }
    std::vector<AttackSpec> out;
    for (size_t i = 0; i < list.size(); ++i) {
        try {
            out.push_back(list[i].get<AttackSpec>());
        } catch (const json::exception& e) {
            throw ConfigError(path + "[" + std::to_string(i) + "]: " + e.what());
        }
    }
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.empty()) {
        throw ConfigError("dataset.name: must not be empty");
    }
    if (image_size < 8) {
        throw ConfigError("dataset.image_size: must be >= 8");
    }
    if (image_channels != 1 && image_channels != 3) {
        throw ConfigError("dataset.channels: must be 1 or 3");
    }
    if (num_classes < 2) {
        throw ConfigError("dataset.num_classes: must be >= 2");
    }
    if (attacks.empty()) {
        throw ConfigError("pairs.attacks: at least one training attack required");
    }
    if (per_attack < 1) {
        throw ConfigError("pairs.per_attack: must be >= 1");
    }
    if (clean_per_class != per_attack * static_cast<int>(attacks.size())) {
        throw ConfigError("pairs.clean_per_class: must equal per_attack x number of attacks (" +
                          std::to_string(per_attack) + " x " + std::to_string(attacks.size()) + ")");
    }
    std::set<AttackMethod> seen;
    for (const auto& a : attacks) {
        a.validate();
        if (!seen.insert(a.method).second) {
            throw ConfigError("pairs.attacks: duplicate attack " + std::string(attacks::method_name(a.method)));
        }
    }
    for (const auto& a : held_out) {
        a.validate();
        if (seen.count(a.method) != 0) {
            throw ConfigError("pairs.held_out: " + std::string(attacks::method_name(a.method)) +
                              " is also a training attack");
        }
    }
    if (epochs < 1) {
        throw ConfigError("defense.epochs: must be >= 1");
    }
    if (batch_size < 1) {
        throw ConfigError("defense.batch_size: must be >= 1");
    }
    try {
        schedule.validate_covers(epochs);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("defense.schedule: ") + e.what());
    }
    if (classifier.epochs < 1 || classifier.batch_size < 1 || !(classifier.learning_rate > 0.0)) {
        throw ConfigError("classifier: epochs, batch_size and learning_rate must be positive");
    }
    if (classifier.channels.size() != 4) {
        throw ConfigError("classifier.channels: expected 4 conv block widths");
    }
    if (classifier.train_per_class < clean_per_class) {
        throw ConfigError("classifier.train_per_class: must be >= pairs.clean_per_class");
    }
    if (defense.perceptual_layers.empty()) {
        throw ConfigError("defense.perceptual_layers: must name at least one layer");
    }
    for (const auto& b : baselines) {
        b.validate(image_size);
    }
    if (evaluation.test_per_class < 1 || evaluation.sweep_per_class < 1 ||
        evaluation.sweep_per_class > evaluation.test_per_class) {
        throw ConfigError("evaluation: need 1 <= sweep_per_class <= test_per_class");
    }
    for (size_t i = 1; i < evaluation.sweep_iterations.size(); ++i) {
        if (evaluation.sweep_iterations[i] <= evaluation.sweep_iterations[i - 1]) {
            throw ConfigError("evaluation.sweep_iterations: must be strictly increasing");
        }
    }
    if (!evaluation.sweep_iterations.empty() && evaluation.sweep_iterations.front() < 1) {
        throw ConfigError("evaluation.sweep_iterations: must be >= 1");
    }
    for (auto fam : evaluation.sweep_families) {
        if (fam != AttackMethod::Pgd && fam != AttackMethod::MiFgsm && fam != AttackMethod::Bim) {
            throw ConfigError("evaluation.sweep_families: only pgd, bim and mifgsm sweep over iterations");
        }
    }
}

std::vector<AttackSpec> ExperimentConfig::evaluation_attacks() const {
    auto all = attacks;
    all.insert(all.end(), held_out.begin(), held_out.end());
    return all;
}

int64_t ExperimentConfig::expected_count(bool train) const {
    return static_cast<int64_t>(num_classes) * (train ? clean_per_class : evaluation.test_per_class);
}

std::string ExperimentConfig::hash() const {
    auto j = config_to_json(*this);
    // Where results go does not change what they are.
    j.erase("output_dir");
    j["dataset"].erase("data_dir");
    return hex64(fnv1a64(j.dump()));
}

ExperimentConfig desk_config() {
    ExperimentConfig c;
    for (auto m : {AttackMethod::Fgsm, AttackMethod::Bim, AttackMethod::Pgd, AttackMethod::MiFgsm,
                   AttackMethod::CwL2, AttackMethod::AutoAttack}) {
        c.attacks.push_back(AttackSpec::defaults(m, kDeskEpsilon));
    }
    c.held_out.push_back(AttackSpec::defaults(AttackMethod::DeepFool, kDeskEpsilon));
    c.per_attack = 8;
    c.clean_per_class = 48;
    c.seed = 0;
    c.baselines = {baselines::BaselineSpec::defaults(baselines::BaselineMethod::RandomResize, c.image_size),
                   baselines::BaselineSpec::defaults(baselines::BaselineMethod::WdPd, c.image_size)};
    return c;
}

ExperimentConfig parse_config(const json& j) {
    if (!j.is_object()) {
        throw ConfigError("config: expected a JSON object");
    }
    ExperimentConfig c = desk_config();
    if (!j.contains("seed") || j.at("seed").is_null()) {
        throw ConfigError("seed: required field missing (runs are never unseeded)");
    }
    try {
        c.seed = j.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("seed: ") + e.what());
    }

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        read_opt(d, "name", c.dataset, "dataset");
        read_opt(d, "image_size", c.image_size, "dataset");
        read_opt(d, "channels", c.image_channels, "dataset");
        read_opt(d, "num_classes", c.num_classes, "dataset");
        std::string data_dir = c.data_dir.string();
        read_opt(d, "data_dir", data_dir, "dataset");
        c.data_dir = data_dir;
    }
    std::string out_dir = c.output_dir.string();
    read_opt(j, "output_dir", out_dir, "config");
    c.output_dir = out_dir;

    if (j.contains("pairs")) {
        const auto& p = j.at("pairs");
        read_opt(p, "clean_per_class", c.clean_per_class, "pairs");
        read_opt(p, "per_attack", c.per_attack, "pairs");
        if (p.contains("attacks")) {
            c.attacks = read_attacks(p.at("attacks"), "pairs.attacks");
        }
        if (p.contains("held_out")) {
            c.held_out = read_attacks(p.at("held_out"), "pairs.held_out");
        }
        if (p.contains("epsilon")) {
            const double eps = read_fraction(p.at("epsilon"), "pairs.epsilon");
            for (auto& a : c.attacks) {
                if (a.norm == attacks::Norm::Linf) {
                    a.epsilon = eps;
                    if (a.method == AttackMethod::Fgsm) {
                        a.eps_iter = eps;
                    }
                }
            }
        }
    }

    if (j.contains("classifier")) {
        const auto& k = j.at("classifier");
        read_opt(k, "epochs", c.classifier.epochs, "classifier");
        read_opt(k, "batch_size", c.classifier.batch_size, "classifier");
        read_opt(k, "learning_rate", c.classifier.learning_rate, "classifier");
        read_opt(k, "weight_decay", c.classifier.weight_decay, "classifier");
        read_opt(k, "channels", c.classifier.channels, "classifier");
        read_opt(k, "train_per_class", c.classifier.train_per_class, "classifier");
    }

    if (j.contains("defense")) {
        const auto& d = j.at("defense");
        read_opt(d, "epochs", c.epochs, "defense");
        read_opt(d, "batch_size", c.batch_size, "defense");
        read_opt(d, "learning_rate", c.defense.learning_rate, "defense");
        read_opt(d, "beta1", c.defense.beta1, "defense");
        read_opt(d, "beta2", c.defense.beta2, "defense");
        read_opt(d, "generator_filters", c.defense.generator_filters, "defense");
        read_opt(d, "discriminator_filters", c.defense.discriminator_filters, "defense");
        read_opt(d, "dropout", c.defense.dropout, "defense");
        read_opt(d, "inference_dropout", c.defense.inference_dropout, "defense");
        read_opt(d, "input_skip", c.defense.input_skip, "defense");
        read_opt(d, "checkpoint_every", c.defense.checkpoint_every, "defense");
        read_opt(d, "validation_per_class", c.defense.validation_per_class, "defense");
        read_opt(d, "perceptual_layers", c.defense.perceptual_layers, "defense");
        if (d.contains("schedule")) {
            const auto& s = d.at("schedule");
            try {
                if (s.is_string() && s.get<std::string>() == "multi_step") {
                    c.schedule = c.epochs == 100 ? defense::TrainingSchedule::multi_step()
                                                 : defense::TrainingSchedule::multi_step(c.epochs);
                } else {
                    c.schedule = s.get<defense::TrainingSchedule>();
                }
            } catch (const json::exception& e) {
                throw ConfigError(std::string("defense.schedule: ") + e.what());
            }
        } else if (c.epochs != 100) {
            c.schedule = defense::TrainingSchedule::multi_step(c.epochs);
        }
        if (d.contains("fixed_weights")) {
            read_opt(d.at("fixed_weights"), "lambda1", c.fixed_weights.lambda1, "defense.fixed_weights");
            read_opt(d.at("fixed_weights"), "lambda2", c.fixed_weights.lambda2, "defense.fixed_weights");
        }
    }

    if (j.contains("baselines")) {
        c.baselines.clear();
        for (const auto& b : j.at("baselines")) {
            try {
                auto spec = baselines::BaselineSpec::defaults(
                    baselines::parse_baseline(b.at("method").get<std::string>()), c.image_size);
                from_json(b, spec);
                c.baselines.push_back(spec);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("baselines: ") + e.what());
            }
        }
    } else {
        for (auto& b : c.baselines) {
            b = baselines::BaselineSpec::defaults(b.method, c.image_size);
        }
    }

    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        auto& ev = c.evaluation;
        read_opt(e, "test_per_class", ev.test_per_class, "evaluation");
        read_opt(e, "sweep_per_class", ev.sweep_per_class, "evaluation");
        read_opt(e, "sweep_iterations", ev.sweep_iterations, "evaluation");
        if (e.contains("sweep_epsilons")) {
            ev.sweep_epsilons.clear();
            for (const auto& v : e.at("sweep_epsilons")) {
                ev.sweep_epsilons.push_back(read_fraction(v, "evaluation.sweep_epsilons"));
            }
        }
        read_opt(e, "sweep_step", ev.sweep_step, "evaluation");
        if (e.contains("sweep_families")) {
            ev.sweep_families.clear();
            for (const auto& v : e.at("sweep_families")) {
                ev.sweep_families.push_back(attacks::parse_method(v.get<std::string>()));
            }
        }
        read_opt(e, "attack_specific", ev.attack_specific, "evaluation");
        read_opt(e, "fixed_weight_baseline", ev.fixed_weight_baseline, "evaluation");
        read_opt(e, "triptych_columns", ev.triptych_columns, "evaluation");
    }

    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json config_to_json(const ExperimentConfig& c) {
    json baselines = json::array();
    for (const auto& b : c.baselines) {
        baselines.push_back(b);
    }
    json families = json::array();
    for (auto f : c.evaluation.sweep_families) {
        families.push_back(attacks::method_name(f));
    }
    return json{
        {"seed", c.seed},
        {"output_dir", c.output_dir.string()},
        {"dataset",
         {{"name", c.dataset},
          {"image_size", c.image_size},
          {"channels", c.image_channels},
          {"num_classes", c.num_classes},
          {"data_dir", c.data_dir.string()}}},
        {"pairs",
         {{"clean_per_class", c.clean_per_class},
          {"per_attack", c.per_attack},
          {"attacks", c.attacks},
          {"held_out", c.held_out}}},
        {"classifier",
         {{"epochs", c.classifier.epochs},
          {"batch_size", c.classifier.batch_size},
          {"learning_rate", c.classifier.learning_rate},
          {"weight_decay", c.classifier.weight_decay},
          {"channels", c.classifier.channels},
          {"train_per_class", c.classifier.train_per_class}}},
        {"defense",
         {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.defense.learning_rate},
          {"beta1", c.defense.beta1},
          {"beta2", c.defense.beta2},
          {"generator_filters", c.defense.generator_filters},
          {"discriminator_filters", c.defense.discriminator_filters},
          {"dropout", c.defense.dropout},
          {"input_skip", c.defense.input_skip},
          {"inference_dropout", c.defense.inference_dropout},
          {"checkpoint_every", c.defense.checkpoint_every},
          {"validation_per_class", c.defense.validation_per_class},
          {"perceptual_layers", c.defense.perceptual_layers},
          {"schedule", c.schedule},
          {"fixed_weights", {{"lambda1", c.fixed_weights.lambda1}, {"lambda2", c.fixed_weights.lambda2}}}}},
        {"baselines", baselines},
        {"evaluation",
         {{"test_per_class", c.evaluation.test_per_class},
          {"sweep_per_class", c.evaluation.sweep_per_class},
          {"sweep_iterations", c.evaluation.sweep_iterations},
          {"sweep_epsilons", c.evaluation.sweep_epsilons},
          {"sweep_step", c.evaluation.sweep_step},
          {"sweep_families", families},
          {"attack_specific", c.evaluation.attack_specific},
          {"fixed_weight_baseline", c.evaluation.fixed_weight_baseline},
          {"triptych_columns", c.evaluation.triptych_columns}}},
    };
}

std::filesystem::path resolve_data_dir(const ExperimentConfig& config) {
    if (const char* env = std::getenv("ADVDEF_DATA_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return config.data_dir;
}

}  // namespace advdef
