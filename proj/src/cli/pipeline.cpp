#include "advdef/cli/pipeline.hpp"

#include "advdef/attacks/attacks.hpp"
#include "advdef/baselines/baselines.hpp"
#include "advdef/cli/plots.hpp"
#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <chrono>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <set>

namespace advdef::cli {

namespace fs = std::filesystem;
using attacks::AttackMethod;
using nlohmann::json;

EvalMode parse_eval_mode(const std::string& name) {
    if (name == "matrix") return EvalMode::Matrix;
    if (name == "compare") return EvalMode::Compare;
    if (name == "sweep") return EvalMode::Sweep;
    if (name == "all") return EvalMode::All;
    throw ConfigError("--mode: unknown mode '" + name + "' (known: matrix, compare, sweep, all)");
}

std::string eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::Matrix: return "matrix";
        case EvalMode::Compare: return "compare";
        case EvalMode::Sweep: return "sweep";
        case EvalMode::All: return "all";
    }
    return "all";
}

namespace {

std::string evaluation_phase(EvalMode mode) {
    return mode == EvalMode::All ? "evaluation" : "evaluation:" + eval_mode_name(mode);
}

std::string specific_label(AttackMethod m) { return "M_" + std::string(attacks::method_tag(m)); }

void write_text(const fs::path& file, const std::string& text) {
    fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + file.string());
    }
    out << text;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// First `per_class` images of every class of a class-grouped set.
data::LabeledImageSet head_per_class(const data::LabeledImageSet& set, int per_class) {
    std::vector<int64_t> idx;
    std::vector<int> seen(static_cast<size_t>(set.num_classes), 0);
    const auto* l = set.labels.data_ptr<int64_t>();
    for (int64_t i = 0; i < set.size(); ++i) {
        if (seen[static_cast<size_t>(l[i])]++ < per_class) {
            idx.push_back(i);
        }
    }
    return set.select(torch::tensor(idx, torch::kLong));
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
    config_.validate();
    const auto root = options_.out_root.empty() ? config_.output_dir : options_.out_root;
    run_dir_ = root / config_.hash();
    manifest_ = RunManifest::open(run_dir_, config_.hash());
    seed_all(config_.seed);
}

void Pipeline::log(const std::string& message) const {
    if (options_.verbose) {
        std::cerr << "[advdef] " << message << '\n';
    }
}

bool Pipeline::skip(const std::string& phase) const { return manifest_.complete(phase) && !options_.force; }

template <class Body>
void Pipeline::run_phase(const std::string& phase, Body body) {
    if (skip(phase)) {
        log(phase + ": already complete, skipping");
        return;
    }
    log(phase + ": start");
    const auto t0 = std::chrono::steady_clock::now();
    manifest_.begin(phase);
    try {
        auto [artifacts, info] = body();
        info["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        manifest_.finish(phase, std::move(artifacts), std::move(info));
    } catch (const std::exception& e) {
        manifest_.fail(phase, e.what());
        throw;
    }
    log(phase + ": done");
}

DefenseJob Pipeline::versatile_job() const {
    return {eval::kVersatile, config_.attacks, config_.per_attack, config_.schedule};
}

DefenseJob Pipeline::fixed_weight_job() const {
    return {eval::kFixedWeight, config_.attacks, config_.per_attack,
            defense::TrainingSchedule::fixed(config_.fixed_weights, config_.epochs)};
}

DefenseJob Pipeline::specific_job(AttackMethod method) const {
    for (const auto& spec : config_.evaluation_attacks()) {
        if (spec.method == method) {
            return {specific_label(method), {spec}, config_.clean_per_class, config_.schedule};
        }
    }
    throw ConfigError("attack " + std::string(attacks::method_name(method)) + " is not configured");
}

DefenseJob Pipeline::job_for(const std::vector<AttackMethod>& methods) const {
    if (methods.empty()) {
        return versatile_job();
    }
    std::set<AttackMethod> unique(methods.begin(), methods.end());
    if (unique.size() != methods.size()) {
        throw ConfigError("--attacks: duplicate attack");
    }
    if (methods.size() == 1) {
        return specific_job(methods.front());
    }
    std::set<AttackMethod> configured;
    for (const auto& s : config_.attacks) {
        configured.insert(s.method);
    }
    if (unique == configured) {
        return versatile_job();
    }
    DefenseJob job;
    job.label = "mix";
    for (auto m : methods) {
        job.attacks.push_back(specific_job(m).attacks.front());
        job.label += "_" + std::string(attacks::method_tag(m));
    }
    job.per_attack = config_.clean_per_class / static_cast<int>(methods.size());
    job.schedule = config_.schedule;
    return job;
}

std::vector<DefenseJob> Pipeline::defense_jobs(bool with_specific) const {
    std::vector<DefenseJob> jobs;
    if (with_specific && config_.evaluation.attack_specific) {
        for (const auto& spec : config_.attacks) {
            jobs.push_back(specific_job(spec.method));
        }
    }
    jobs.push_back(versatile_job());
    if (config_.evaluation.fixed_weight_baseline) {
        jobs.push_back(fixed_weight_job());
    }
    return jobs;
}

std::vector<std::string> Pipeline::plan(bool with_specific) const {
    std::vector<std::string> phases = {"classifier", "attacks"};
    for (const auto& job : defense_jobs(with_specific)) {
        phases.push_back(job.phase());
    }
    phases.push_back(evaluation_phase(EvalMode::All));
    return phases;
}

const classifier::ClassifierModel& Pipeline::classifier() {
    if (!classifier_) {
        manifest_.require("classifier");
        classifier_ = std::make_unique<classifier::ClassifierModel>(
            classifier::ClassifierModel::load(run_dir_ / "classifier"));
    }
    return *classifier_;
}

const data::LabeledImageSet& Pipeline::test_set() {
    if (!test_) {
        test_ = data::load_dataset(config_, data::Split::Test);
    }
    return *test_;
}

Pipeline::TrainSplit Pipeline::train_split() const {
    TrainSplit s;
    s.pool = data::load_pool(config_, data::Split::Train, data::train_pool_per_class(config_));
    s.clean_index = data::select_per_class(s.pool, config_.clean_per_class,
                                           derive_seed(config_.seed, data::split_name(data::Split::Train)));
    return s;
}

void Pipeline::run_classifier() {
    run_phase("classifier", [&] {
        const auto split = train_split();
        classifier::TrainingHyper hyper;
        hyper.epochs = config_.classifier.epochs;
        hyper.batch_size = config_.classifier.batch_size;
        hyper.learning_rate = config_.classifier.learning_rate;
        hyper.weight_decay = config_.classifier.weight_decay;
        hyper.channels = config_.classifier.channels;
        hyper.seed = derive_seed(config_.seed, "classifier");
        auto model = classifier::train_classifier(split.pool, hyper);
        const auto& test = test_set();
        const double acc = eval::accuracy(model, test.images, test.labels);
        model.set_clean_accuracy(acc);
        model.save(run_dir_ / "classifier");
        classifier_ = std::make_unique<classifier::ClassifierModel>(std::move(model));
        log("classifier: clean test accuracy " + fixed(acc));
        return std::pair{std::vector<std::string>{"classifier/classifier.pt", "classifier/metadata.json"},
                         json{{"clean_accuracy", acc}, {"train_images", split.pool.size()},
                              {"parameter_hash", hex64(classifier_->parameter_hash())}}};
    });
}

void Pipeline::run_attacks() {
    manifest_.require("classifier");
    run_phase("attacks", [&] {
        const auto split = train_split();
        const auto clean = split.pool.select(torch::tensor(split.clean_index, torch::kLong));
        const auto job = versatile_job();
        auto pairs = data::build_paired_training_set(clean, job.attacks, classifier(), job.per_attack,
                                                     derive_seed(config_.seed, "pairs:" + job.label));
        pairs.save(run_dir_ / "attacks" / "pairs.pt");
        json counts = json::object();
        for (const auto& spec : job.attacks) {
            counts[std::string(attacks::method_name(spec.method))] = pairs.count(spec.method);
        }
        return std::pair{std::vector<std::string>{"attacks/pairs.pt"},
                         json{{"pairs", pairs.size()}, {"skipped", pairs.skipped}, {"per_attack", counts}}};
    });
}

std::vector<eval::AttackedSet> Pipeline::attacked_test_sets(const std::vector<attacks::AttackSpec>& specs) {
    return eval::generate_attacked_sets(specs, test_set(), classifier(), derive_seed(config_.seed, "evaluation"));
}

void Pipeline::attack_report(const std::vector<attacks::AttackSpec>& specs) {
    manifest_.require("classifier");
    const auto& test = test_set();
    const auto attacked = attacked_test_sets(specs);
    std::string csv = "attack,accuracy,mean_linf,mean_l2\n";
    for (const auto& a : attacked) {
        const auto delta = (a.adversarial.tensor() - test.images.tensor()).flatten(1).to(torch::kDouble);
        csv += a.name + "," + fixed(eval::accuracy(classifier(), a.adversarial, test.labels)) + "," +
               fixed(delta.abs().amax(1).mean().item<double>()) + "," +
               fixed(delta.pow(2).sum(1).sqrt().mean().item<double>()) + "\n";
    }
    write_text(run_dir_ / "attacks" / "no_defense.csv", csv);
    std::cout << csv;
}

data::PairedImageSet Pipeline::validation_pairs(const DefenseJob& job, const TrainSplit& split) {
    const int k = static_cast<int>(job.attacks.size());
    const int per_attack = std::max(1, config_.defense.validation_per_class / k);
    const auto idx = data::select_per_class(split.pool, per_attack * k, derive_seed(config_.seed, "validation"),
                                            split.clean_index);
    const auto clean = split.pool.select(torch::tensor(idx, torch::kLong));
    return data::build_paired_training_set(clean, job.attacks, classifier(), per_attack,
                                           derive_seed(config_.seed, "validation:" + job.label));
}

void Pipeline::run_defense(const DefenseJob& job) {
    manifest_.require("classifier");
    if (job.per_attack < 1) {
        throw ConfigError(job.label + ": fewer clean images per class than attacks");
    }
    const bool shared_pairs = job.label == eval::kVersatile || job.label == eval::kFixedWeight;
    if (shared_pairs && !manifest_.complete("attacks")) {
        run_attacks();
    }
    run_phase(job.phase(), [&] {
        const auto dir = run_dir_ / "defense" / job.label;
        const auto split = train_split();
        data::PairedImageSet pairs;
        std::vector<std::string> artifacts;
        if (shared_pairs) {
            pairs = data::PairedImageSet::load(run_dir_ / "attacks" / "pairs.pt");
        } else {
            const auto clean = split.pool.select(torch::tensor(split.clean_index, torch::kLong));
            pairs = data::build_paired_training_set(clean, job.attacks, classifier(), job.per_attack,
                                                    derive_seed(config_.seed, "pairs:" + job.label));
            pairs.save(dir / "pairs.pt");
            artifacts.push_back("defense/" + job.label + "/pairs.pt");
        }
        const auto validation = validation_pairs(job, split);

        defense::DefenseTrainOptions opts;
        opts.hyper = config_.defense;
        opts.hyper.batch_size = config_.batch_size;
        opts.channels = config_.image_channels;
        opts.image_size = config_.image_size;
        opts.seed = derive_seed(config_.seed, "defense:" + job.label);
        opts.config_hash = config_.hash();
        opts.label = job.label;
        opts.output_dir = dir;
        opts.validation = &validation;
        opts.verbose = options_.verbose;
        const auto ck = defense::train_defense(pairs, job.schedule, config_.epochs, classifier(), opts);
        for (const char* f : {"checkpoint/generator.pt", "checkpoint/discriminator.pt", "checkpoint/checkpoint.json",
                              "best/generator.pt", "losses.csv"}) {
            artifacts.push_back("defense/" + job.label + "/" + f);
        }
        const auto& last = ck.losses.back();
        return std::pair{artifacts, json{{"pairs", pairs.size()},
                                         {"skipped", pairs.skipped},
                                         {"epochs", ck.epoch},
                                         {"final_l1", last.l1},
                                         {"final_perc", last.perc},
                                         {"validation_l1_first", ck.validation_l1.front()},
                                         {"validation_l1_last", ck.validation_l1.back()},
                                         {"best_epoch", ck.best_epoch},
                                         {"generator_hash", hex64(ck.generator_hash())}}};
    });
}

bool Pipeline::has_defense(const std::string& label) const { return manifest_.complete("defense:" + label); }

defense::DefenseCheckpoint Pipeline::load_defense(const std::string& label) const {
    manifest_.require("defense:" + label);
    return defense::DefenseCheckpoint::load(run_dir_ / "defense" / label / "checkpoint");
}

fs::path Pipeline::report_path() const { return run_dir_ / "evaluation" / (config_.hash() + "-report.json"); }

eval::Matrix Pipeline::run_baseline(const baselines::BaselineSpec& spec,
                                    const std::vector<attacks::AttackSpec>& specs) {
    manifest_.require("classifier");
    spec.validate(config_.image_size);
    const std::string name(baselines::baseline_name(spec.method));
    eval::Matrix m;
    run_phase("baseline:" + name, [&] {
        const auto attacked = attacked_test_sets(specs);
        m = eval::recovery_matrix({eval::baseline_defense(name, spec)}, attacked, test_set(), classifier(),
                                  derive_seed(config_.seed, "baseline"));
        m.title = "baseline " + name;
        const auto file = "baselines/" + name + ".csv";
        write_text(run_dir_ / file, m.to_csv());
        return std::pair{std::vector<std::string>{file}, json{{"average", m.column_average(name).value_or(-1.0)}}};
    });
    return m;
}

eval::EvaluationReport Pipeline::run_evaluation(EvalMode mode) {
    manifest_.require("classifier");
    const bool want_matrix = mode == EvalMode::Matrix || mode == EvalMode::All;
    const bool want_compare = mode == EvalMode::Compare || mode == EvalMode::All;
    const bool want_sweep = mode == EvalMode::Sweep || mode == EvalMode::All;

    // Dependencies first, so a missing checkpoint fails before any work.
    std::vector<std::string> specific_labels;
    for (const auto& spec : config_.attacks) {
        if (has_defense(specific_label(spec.method))) {
            specific_labels.push_back(specific_label(spec.method));
        }
    }
    if ((want_compare || want_sweep) && !has_defense(eval::kVersatile)) {
        manifest_.require("defense:versatile");
    }
    if (want_matrix && specific_labels.empty() && !has_defense(eval::kVersatile)) {
        throw MissingDependencyError("defense:versatile", "matrix mode needs at least one trained defense model");
    }

    eval::EvaluationReport report;
    const auto phase = evaluation_phase(mode);
    if (skip(phase) && fs::exists(report_path())) {
        log(phase + ": already complete, skipping");
        return eval::import_report(report_path());
    }
    run_phase(phase, [&] {
        if (fs::exists(report_path())) {
            report = eval::import_report(report_path());
        }
        const auto& test = test_set();
        const auto& model = classifier();
        report.config_hash = config_.hash();
        report.seed = config_.seed;
        report.test_images = test.size();
        report.clean_accuracy = eval::accuracy(model, test.images, test.labels);

        std::deque<defense::DefenseCheckpoint> loaded;
        const defense::DefenseCheckpoint* versatile = nullptr;
        if (has_defense(eval::kVersatile)) {
            versatile = &loaded.emplace_back(load_defense(eval::kVersatile));
        }
        std::vector<std::string> held_out;
        for (const auto& s : config_.held_out) {
            held_out.emplace_back(attacks::method_name(s.method));
        }

        std::vector<eval::AttackedSet> attacked;
        if (want_matrix || want_compare) {
            attacked = attacked_test_sets(config_.evaluation_attacks());
            report.no_defense.clear();
            for (const auto& a : attacked) {
                report.no_defense[a.name] = eval::accuracy(model, a.adversarial, test.labels);
                report.phase_seconds["attack:" + a.name] = a.seconds;
            }
        }
        if (want_matrix) {
            std::vector<eval::NamedDefense> defenses;
            for (const auto& label : specific_labels) {
                defenses.push_back(eval::checkpoint_defense(label, loaded.emplace_back(load_defense(label))));
            }
            if (versatile != nullptr) {
                defenses.push_back(eval::checkpoint_defense(eval::kVersatile, *versatile));
            }
            report.recovery = eval::recovery_matrix(defenses, attacked, test, model,
                                                    derive_seed(config_.seed, "matrix"), held_out);
            report.recovery.title = "recovery";
        }
        if (want_compare) {
            eval::Comparison cmp;
            cmp.versatile = versatile;
            for (const auto& spec : config_.attacks) {
                const auto label = specific_label(spec.method);
                if (has_defense(label)) {
                    cmp.specific.emplace_back(spec.method, &loaded.emplace_back(load_defense(label)));
                }
            }
            if (has_defense(eval::kFixedWeight)) {
                cmp.fixed_weight = &loaded.emplace_back(load_defense(eval::kFixedWeight));
            }
            cmp.baselines = config_.baselines;
            report.comparison = eval::compare_defenses(cmp, attacked, test, model,
                                                       derive_seed(config_.seed, "compare"), held_out);
            report.fidelity = eval::fidelity(eval::checkpoint_defense(eval::kVersatile, *versatile), attacked, test,
                                             derive_seed(config_.seed, "fidelity"));
        }
        if (want_sweep) {
            const auto subset = head_per_class(test, config_.evaluation.sweep_per_class);
            report.sweeps.clear();
            for (auto family : config_.evaluation.sweep_families) {
                auto curves = eval::robustness_sweep(eval::checkpoint_defense(eval::kVersatile, *versatile), family,
                                                     config_.evaluation.sweep_iterations,
                                                     config_.evaluation.sweep_epsilons, config_.evaluation.sweep_step,
                                                     subset, model, derive_seed(config_.seed, "sweep"));
                report.sweeps.insert(report.sweeps.end(), curves.begin(), curves.end());
            }
        }
        for (const auto& r : manifest_.phases()) {
            if (r.complete) {
                report.phase_seconds[r.name] = r.seconds;
            }
        }
        const auto files = eval::export_report(report, run_dir_ / "evaluation");
        write_plots(report, attacked, versatile);
        std::vector<std::string> artifacts;
        for (const auto& f : files) {
            artifacts.push_back(fs::relative(f, run_dir_).string());
        }
        return std::pair{artifacts, json{{"mode", eval_mode_name(mode)}}};
    });
    return report;
}

void Pipeline::write_plots(const eval::EvaluationReport& report, const std::vector<eval::AttackedSet>& attacked,
                           const defense::DefenseCheckpoint* versatile) {
    const auto dir = run_dir_ / "evaluation" / "plots";
    std::set<std::string> families;
    for (const auto& c : report.sweeps) {
        families.insert(c.family);
    }
    for (const auto& f : families) {
        std::vector<eval::SweepCurve> curves;
        for (const auto& c : report.sweeps) {
            if (c.family == f) {
                curves.push_back(c);
            }
        }
        write_sweep_svg(dir / ("sweep_" + f + ".svg"), curves, f);
    }
    if (!report.fidelity.empty()) {
        write_fidelity_svg(dir / "fidelity.svg", report.fidelity);
    }
    if (versatile != nullptr && !attacked.empty()) {
        // one image per class: clean row, then attacked and restored rows per attack
        const auto& test = test_set();
        std::vector<int64_t> idx;
        std::vector<int> seen(static_cast<size_t>(test.num_classes), 0);
        const auto columns = static_cast<size_t>(config_.evaluation.triptych_columns);
        for (int64_t i = 0; i < test.size() && idx.size() < columns; ++i) {
            if (seen[static_cast<size_t>(test.labels[i].item<int64_t>())]++ == 0) {
                idx.push_back(i);
            }
        }
        const auto sel = torch::tensor(idx, torch::kLong);
        std::vector<ImageTensor> rows{test.images.select(sel)};
        for (const auto& a : attacked) {
            const auto adv = a.adversarial.select(sel);
            rows.push_back(adv);
            rows.push_back(defense::reconstruct(*versatile, adv));
        }
        write_image_grid_png(dir / "restored.png", rows);
    }
}

eval::EvaluationReport Pipeline::reproduce(bool with_specific) {
    run_classifier();
    run_attacks();
    for (const auto& job : defense_jobs(with_specific)) {
        run_defense(job);
    }
    return run_evaluation(EvalMode::All);
}

}  // namespace advdef::cli
