#include "advdef/cli/commands.hpp"

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/cli/pipeline.hpp"
#include "advdef/core/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace advdef::cli {

namespace {

struct GlobalFlags {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
    bool force = false;
    bool dry_run = false;
    bool quiet = false;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<attacks::AttackMethod> parse_methods(const std::string& text) {
    std::vector<attacks::AttackMethod> out;
    for (const auto& name : split_list(text)) {
        out.push_back(attacks::parse_method(name));
    }
    return out;
}

// Configured specs for the named methods, in the given order.
std::vector<attacks::AttackSpec> configured_specs(const ExperimentConfig& config,
                                                  const std::vector<attacks::AttackMethod>& methods) {
    std::vector<attacks::AttackSpec> out;
    for (auto m : methods) {
        bool found = false;
        for (const auto& spec : config.evaluation_attacks()) {
            if (spec.method == m) {
                out.push_back(spec);
                found = true;
            }
        }
        if (!found) {
            throw ConfigError("attack " + std::string(attacks::method_name(m)) + " is not in the config");
        }
    }
    return out;
}

Pipeline make_pipeline(const GlobalFlags& flags) {
    if (flags.config.empty()) {
        throw ConfigError("--config: a config file is required");
    }
    auto config = load_config(flags.config);
    if (flags.seed) {
        config.seed = *flags.seed;
    }
    RunOptions opts;
    opts.out_root = flags.out;
    opts.force = flags.force;
    opts.verbose = !flags.quiet;
    return Pipeline(std::move(config), opts);
}

void print_plan(Pipeline& p, const std::vector<std::string>& phases) {
    std::cout << "run directory: " << p.run_dir().string() << '\n';
    for (const auto& phase : phases) {
        std::cout << "  " << (p.manifest().complete(phase) ? "[done] " : "[todo] ") << phase << '\n';
    }
}

void print_summary(const eval::EvaluationReport& r) {
    std::cout << "clean accuracy " << r.clean_accuracy << " on " << r.test_images << " test images\n";
    for (const auto* m : {&r.recovery, &r.comparison}) {
        if (!m->columns.empty()) {
            std::cout << "\n" << m->title << "\n" << m->to_csv();
        }
    }
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"advdef: adversarial attacks and a versatile reconstruction defense"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalFlags flags;
    app.add_option("--config", flags.config, "experiment config (JSON)");
    app.add_option("--seed", flags.seed, "override the config seed");
    app.add_option("--out", flags.out, "output root (default: the config's output_dir)");
    app.add_flag("--force", flags.force, "rerun phases that already completed");
    app.add_flag("--dry-run", flags.dry_run, "print the phase plan and touch nothing");
    app.add_flag("--quiet", flags.quiet, "no progress logging");

    auto* train_clf = app.add_subcommand("train-classifier", "train the target classifier");

    auto* attack = app.add_subcommand("attack", "build the paired training set, or attack the test set");
    std::string attack_methods;
    attack->add_option("--method", attack_methods, "comma-separated attacks to run on the test set");

    auto* train_def = app.add_subcommand("train-defense", "train the versatile or an attack-specific defense");
    std::string def_attacks;
    std::string def_single;
    bool def_fixed = false;
    train_def->add_option("--attacks", def_attacks, "comma-separated training attacks (default: the config's six)");
    train_def->add_option("--single", def_single, "train the attack-specific model M_<attack>");
    train_def->add_flag("--fixed-weights", def_fixed, "versatile mixture with the fixed loss weights");
    train_def->get_option("--single")->excludes("--attacks");
    train_def->get_option("--fixed-weights")->excludes("--attacks")->excludes("--single");

    auto* baseline = app.add_subcommand("baseline", "evaluate an input-transformation baseline");
    std::string baseline_method = "wd_pd";
    std::string baseline_attacks;
    baseline->add_option("--method", baseline_method, "random_resize or wd_pd");
    baseline->add_option("--attack", baseline_attacks, "comma-separated attacks (default: all configured)");

    auto* evaluate = app.add_subcommand("evaluate", "recovery matrix, defense comparison and robustness sweep");
    std::string mode = "all";
    evaluate->add_option("--mode", mode, "matrix, compare, sweep or all");

    auto* reproduce = app.add_subcommand("reproduce", "run every phase end to end, resuming completed ones");
    bool skip_specific = false;
    reproduce->add_flag("--skip-specific", skip_specific, "skip the attack-specific models");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        auto pipeline = make_pipeline(flags);
        if (train_clf->parsed()) {
            if (flags.dry_run) {
                print_plan(pipeline, {"classifier"});
                return kExitOk;
            }
            pipeline.run_classifier();
        } else if (attack->parsed()) {
            if (attack_methods.empty()) {
                if (flags.dry_run) {
                    print_plan(pipeline, {"classifier", "attacks"});
                    return kExitOk;
                }
                pipeline.run_attacks();
            } else {
                const auto specs = configured_specs(pipeline.config(), parse_methods(attack_methods));
                if (flags.dry_run) {
                    print_plan(pipeline, {"classifier"});
                    return kExitOk;
                }
                pipeline.attack_report(specs);
            }
        } else if (train_def->parsed()) {
            DefenseJob job;
            if (def_fixed) {
                job = pipeline.fixed_weight_job();
            } else if (!def_single.empty()) {
                job = pipeline.specific_job(attacks::parse_method(def_single));
            } else {
                job = pipeline.job_for(parse_methods(def_attacks));
            }
            if (flags.dry_run) {
                print_plan(pipeline, {"classifier", "attacks", job.phase()});
                return kExitOk;
            }
            pipeline.run_defense(job);
            std::cout << "checkpoint " << (pipeline.run_dir() / "defense" / job.label / "checkpoint").string() << '\n';
        } else if (baseline->parsed()) {
            const auto method = baselines::parse_baseline(baseline_method);
            auto spec = baselines::BaselineSpec::defaults(method, pipeline.config().image_size);
            for (const auto& b : pipeline.config().baselines) {
                if (b.method == method) {
                    spec = b;
                }
            }
            auto specs = baseline_attacks.empty()
                             ? pipeline.config().evaluation_attacks()
                             : configured_specs(pipeline.config(), parse_methods(baseline_attacks));
            if (flags.dry_run) {
                print_plan(pipeline, {"classifier", "baseline:" + std::string(baselines::baseline_name(method))});
                return kExitOk;
            }
            std::cout << pipeline.run_baseline(spec, specs).to_csv();
        } else if (evaluate->parsed()) {
            const auto m = parse_eval_mode(mode);
            if (flags.dry_run) {
                print_plan(pipeline, {m == EvalMode::All ? "evaluation" : "evaluation:" + mode});
                return kExitOk;
            }
            print_summary(pipeline.run_evaluation(m));
        } else if (reproduce->parsed()) {
            if (flags.dry_run) {
                print_plan(pipeline, pipeline.plan(!skip_specific));
                return kExitOk;
            }
            print_summary(pipeline.reproduce(!skip_specific));
            std::cout << "\nreport " << pipeline.report_path().string() << '\n';
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const MissingDependencyError& e) {
        std::cerr << "missing phase '" << e.phase() << "': " << e.what() << '\n';
        return kExitMissingPhase;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace advdef::cli
