#include "helpers.hpp"

#include "advdef/cli/commands.hpp"
#include "advdef/cli/pipeline.hpp"
#include "advdef/core/config.hpp"
#include "advdef/core/errors.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

using namespace advdef;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "advdef");
    std::vector<char*> argv;
    for (auto& a : args) {
        argv.push_back(a.data());
    }
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliResult r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

nlohmann::json tiny_config(const fs::path& root) {
    auto j = nlohmann::json::parse(R"({
      "seed": 11,
      "dataset": {"image_size": 16, "num_classes": 10},
      "classifier": {"epochs": 2, "batch_size": 32, "train_per_class": 24, "channels": [4, 6, 8, 8]},
      "pairs": {
        "per_attack": 1, "clean_per_class": 6,
        "attacks": [
          {"method": "fgsm", "epsilon": "8/255"},
          {"method": "bim", "epsilon": "8/255", "nb_iter": 3, "eps_iter": 0.01},
          {"method": "pgd", "epsilon": "8/255", "nb_iter": 3, "eps_iter": 0.01},
          {"method": "mifgsm", "epsilon": "8/255", "nb_iter": 3, "eps_iter": 0.01},
          {"method": "cw_l2", "cw": {"binary_search_steps": 1, "max_iterations": 5}},
          {"method": "autoattack", "epsilon": "8/255", "nb_iter": 3}
        ],
        "held_out": [{"method": "deepfool", "nb_iter": 5}]
      },
      "defense": {"epochs": 3, "batch_size": 8, "learning_rate": 0.001,
                  "generator_filters": 4, "discriminator_filters": 4,
                  "perceptual_layers": ["block1"], "validation_per_class": 2},
      "evaluation": {"test_per_class": 2, "sweep_per_class": 1, "attack_specific": false,
                     "fixed_weight_baseline": false, "triptych_columns": 2}
    })");
    j["output_dir"] = (root / "runs").string();
    j["dataset"]["data_dir"] = (root / "data").string();
    return j;
}

// A scratch directory with the tiny config written to config.json.
struct Workspace {
    fs::path root;
    fs::path config;

    explicit Workspace(const std::string& name) {
        root = fs::temp_directory_path() / ("advdef_cli_" + name + "_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        config = root / "config.json";
        std::ofstream(config) << tiny_config(root).dump(2);
    }
    ~Workspace() { fs::remove_all(root); }

    ExperimentConfig parsed() const { return load_config(config); }
    fs::path run_dir() const { return root / "runs" / parsed().hash(); }
    nlohmann::json manifest() const {
        std::ifstream in(run_dir() / "manifest.json");
        return nlohmann::json::parse(in);
    }
    std::string started(const std::string& phase) const {
        const auto m = manifest();
        for (const auto& p : m.at("phases")) {
            if (p.at("name").get<std::string>() == phase) {
                return p.at("started").get<std::string>() + "|" + p.at("finished").get<std::string>();
            }
        }
        return "";
    }
    std::vector<std::string> args(std::initializer_list<std::string> rest) const {
        std::vector<std::string> a = {"--config", config.string(), "--quiet"};
        a.insert(a.end(), rest.begin(), rest.end());
        return a;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("missing seed is a config error naming the field") {
    Workspace ws("noseed");
    auto cfg = tiny_config(ws.root);
    cfg.erase("seed");
    std::ofstream(ws.config) << cfg.dump();
    auto r = run(ws.args({"train-classifier"}));
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("seed") != std::string::npos);
    CHECK_FALSE(fs::exists(ws.root / "runs"));
}

TEST_CASE("bad arguments exit with the config code") {
    Workspace ws("badargs");
    CHECK(run(ws.args({"no-such-command"})).code == cli::kExitConfig);
    CHECK(run(ws.args({"train-defense", "--single", "pgd", "--attacks", "fgsm"})).code == cli::kExitConfig);
    CHECK(run(ws.args({"evaluate", "--mode", "everything"})).code == cli::kExitConfig);
    CHECK(run({"train-classifier"}).code == cli::kExitConfig);
}

TEST_CASE("dry run prints the plan and touches nothing") {
    Workspace ws("dry");
    auto r = run(ws.args({"--dry-run", "reproduce"}));
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("[todo] classifier") != std::string::npos);
    CHECK(r.out.find("[todo] defense:versatile") != std::string::npos);
    CHECK_FALSE(fs::exists(ws.root / "runs"));
    CHECK_FALSE(fs::exists(ws.root / "data"));
}

TEST_CASE("evaluate without its dependencies exits with the missing-phase code") {
    Workspace ws("missing");
    auto r = run(ws.args({"evaluate", "--mode", "matrix"}));
    CHECK(r.code == cli::kExitMissingPhase);
    CHECK(r.err.find("classifier") != std::string::npos);

    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    r = run(ws.args({"evaluate", "--mode", "matrix"}));
    CHECK(r.code == cli::kExitMissingPhase);
    CHECK(r.err.find("defense:versatile") != std::string::npos);
}

TEST_CASE("train-defense needs the classifier and rejects unknown attacks") {
    Workspace ws("needs");
    auto r = run(ws.args({"train-defense", "--single", "pgd"}));
    CHECK(r.code == cli::kExitMissingPhase);
    CHECK(r.err.find("classifier") != std::string::npos);
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    r = run(ws.args({"train-defense", "--single", "nope"}));
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("nope") != std::string::npos);
    CHECK(run(ws.args({"train-defense", "--attacks", "pgd,nope"})).code == cli::kExitConfig);
}

TEST_CASE("completed phases are not rerun") {
    Workspace ws("idem");
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    const auto first = ws.started("classifier");
    const auto weights = slurp(ws.run_dir() / "classifier" / "classifier.pt");
    REQUIRE_FALSE(first.empty());
    CHECK(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    CHECK(ws.started("classifier") == first);
    CHECK(slurp(ws.run_dir() / "classifier" / "classifier.pt") == weights);
    // --force reruns it and, being seeded, reproduces the same weights
    CHECK(run(ws.args({"--force", "train-classifier"})).code == cli::kExitOk);
    CHECK(slurp(ws.run_dir() / "classifier" / "classifier.pt") == weights);
}

TEST_CASE("defense job naming") {
    Workspace ws("jobs");
    cli::RunOptions opts;
    opts.verbose = false;
    cli::Pipeline p(ws.parsed(), opts);
    using attacks::AttackMethod;

    const auto v = p.versatile_job();
    CHECK(v.label == "versatile");
    std::vector<AttackMethod> tags;
    for (const auto& s : v.attacks) {
        tags.push_back(s.method);
    }
    CHECK((tags == std::vector<AttackMethod>{AttackMethod::Fgsm, AttackMethod::Bim, AttackMethod::Pgd,
                                            AttackMethod::MiFgsm, AttackMethod::CwL2, AttackMethod::AutoAttack}));
    CHECK(v.per_attack == 1);

    const auto single = p.specific_job(AttackMethod::Pgd);
    CHECK(single.label == "M_PGD");
    CHECK(single.attacks.size() == 1);
    CHECK(single.per_attack == p.config().clean_per_class);

    const auto via_list = p.job_for({AttackMethod::Fgsm});
    const auto via_single = p.specific_job(AttackMethod::Fgsm);
    CHECK(via_list.label == via_single.label);
    CHECK(via_list.per_attack == via_single.per_attack);
    CHECK((via_list.attacks == via_single.attacks));

    CHECK(p.job_for(tags).label == "versatile");
    const auto mix = p.job_for({AttackMethod::Pgd, AttackMethod::CwL2});
    CHECK(mix.label == "mix_PGD_CW");
    CHECK(mix.per_attack == 3);

    const auto fixed = p.fixed_weight_job();
    CHECK(fixed.label == "versatile_fixed_weights");
    CHECK(defense::loss_weight_schedule(fixed.schedule, 0) == defense::LossWeights{100, 1});
    CHECK(defense::loss_weight_schedule(fixed.schedule, p.config().epochs - 1) == defense::LossWeights{100, 1});
}

TEST_CASE("attack-specific training through the cli") {
    Workspace ws("single");
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    REQUIRE(run(ws.args({"attack"})).code == cli::kExitOk);
    auto r = run(ws.args({"train-defense", "--single", "pgd"}));
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("M_PGD") != std::string::npos);
    CHECK(fs::exists(ws.run_dir() / "defense" / "M_PGD" / "checkpoint" / "generator.pt"));
    CHECK(ws.manifest().dump().find("defense:M_PGD") != std::string::npos);

    r = run(ws.args({"attack", "--method", "fgsm,deepfool"}));
    REQUIRE(r.code == cli::kExitOk);
    const auto csv = slurp(ws.run_dir() / "attacks" / "no_defense.csv");
    CHECK(csv.find("fgsm") != std::string::npos);
    CHECK(csv.find("deepfool") != std::string::npos);
    CHECK(run(ws.args({"attack", "--method", "nope"})).code == cli::kExitConfig);
}

TEST_CASE("default defense covers the six attacks; sweep gives one curve per epsilon") {
    Workspace ws("sweep");
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    // the default model builds the shared pairs itself
    REQUIRE(run(ws.args({"train-defense"})).code == cli::kExitOk);
    const auto pairs = data::PairedImageSet::load(ws.run_dir() / "attacks" / "pairs.pt");
    using attacks::AttackMethod;
    const std::set<AttackMethod> tags(pairs.tags.begin(), pairs.tags.end());
    CHECK((tags == std::set<AttackMethod>{AttackMethod::Fgsm, AttackMethod::Bim, AttackMethod::Pgd,
                                         AttackMethod::MiFgsm, AttackMethod::CwL2, AttackMethod::AutoAttack}));
    CHECK(fs::exists(ws.run_dir() / "defense" / "versatile" / "checkpoint" / "generator.pt"));
    REQUIRE(run(ws.args({"evaluate", "--mode", "sweep"})).code == cli::kExitOk);
    const auto report = eval::import_report(ws.run_dir() / "evaluation" / (ws.parsed().hash() + "-report.json"));
    std::map<std::string, int> per_family;
    for (const auto& c : report.sweeps) {
        per_family[c.family]++;
        CHECK(c.iterations.size() == 10);
        CHECK(c.accuracy.size() == 10);
        CHECK(c.iterations.front() == 10);
        CHECK(c.iterations.back() == 100);
    }
    CHECK(per_family.size() == 2);
    CHECK(per_family["pgd"] == 3);
    CHECK(per_family["mifgsm"] == 3);
    CHECK(fs::exists(ws.run_dir() / "evaluation" / "plots" / "sweep_pgd.svg"));
}

TEST_CASE("interrupted run resumes after the last completed phase") {
    Workspace ws("resume");
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    REQUIRE(run(ws.args({"attack"})).code == cli::kExitOk);
    const auto clf = ws.started("classifier");
    const auto att = ws.started("attacks");
    const auto pairs = slurp(ws.run_dir() / "attacks" / "pairs.pt");

    auto r = run(ws.args({"reproduce"}));
    REQUIRE(r.code == cli::kExitOk);
    CHECK(ws.started("classifier") == clf);
    CHECK(ws.started("attacks") == att);
    CHECK(slurp(ws.run_dir() / "attacks" / "pairs.pt") == pairs);
    CHECK(ws.manifest().dump().find("\"evaluation\"") != std::string::npos);

    // a second reproduce is a no-op
    const auto eval_stamp = ws.started("evaluation");
    REQUIRE(run(ws.args({"reproduce"})).code == cli::kExitOk);
    CHECK(ws.started("evaluation") == eval_stamp);
}

TEST_CASE("manifest written for another config is rejected") {
    Workspace ws("hash");
    REQUIRE(run(ws.args({"train-classifier"})).code == cli::kExitOk);
    auto m = ws.manifest();
    m["config_hash"] = "0000000000000000";
    std::ofstream(ws.run_dir() / "manifest.json") << m.dump();
    CHECK(run(ws.args({"train-classifier"})).code == cli::kExitConfig);
}

TEST_CASE("two fresh runs write identical csv reports") {
    Workspace a("det_a");
    Workspace b("det_b");
    REQUIRE(run(a.args({"reproduce"})).code == cli::kExitOk);
    REQUIRE(run(b.args({"reproduce"})).code == cli::kExitOk);
    const auto hash = a.parsed().hash();
    REQUIRE(b.parsed().hash() == hash);
    for (const auto* suffix : {"-recovery.csv", "-comparison.csv", "-sweeps.csv"}) {
        const auto fa = slurp(a.run_dir() / "evaluation" / (hash + suffix));
        const auto fb = slurp(b.run_dir() / "evaluation" / (hash + suffix));
        CHECK_FALSE(fa.empty());
        CHECK(fa == fb);
    }
    CHECK(slurp(a.run_dir() / "attacks" / "pairs.pt") == slurp(b.run_dir() / "attacks" / "pairs.pt"));
}
