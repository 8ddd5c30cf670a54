#include "doctest.h"
#include "helpers.hpp"

#include "advdef/attacks/attacks.hpp"
#include "advdef/core/errors.hpp"
#include "advdef/eval/evaluation.hpp"

#include <cmath>
#include <filesystem>

using namespace advdef;
using namespace advdef::eval;

namespace {

// Balanced 10-class set: 3 images per class on 8x8, labelled by a linear model.
struct LinearWorld {
    ImageTensor pool = test_util::random_images(3000, 3, 8, 8, 32);
    classifier::LinearClassifier model = test_util::balanced_linear(10, pool, 31);
    data::LabeledImageSet test;

    LinearWorld() {
        data::LabeledImageSet labelled(pool, classifier::predict_labels(model, pool), 10);
        test = labelled.select(torch::tensor(data::select_per_class(labelled, 3, 1)));
    }
};

}  // namespace

TEST_CASE("accuracy with stub models") {
    auto images = test_util::random_images(20, 3, 4, 4, 1);
    auto labels = torch::arange(20, torch::kLong).remainder(10);
    auto encoded = test_util::encode_labels(images, labels, 10);
    CHECK(accuracy(test_util::PixelOracleModel(10), encoded, labels) == 1.0);
    CHECK(accuracy(test_util::ConstantModel(10, 4), encoded, labels) == doctest::Approx(0.1));
    CHECK(accuracy(test_util::PixelOracleModel(10), encoded.at(3), labels.slice(0, 3, 4)) == 1.0);
    CHECK_THROWS_AS(accuracy(test_util::ConstantModel(10, 0), encoded.slice(0, 0), labels.slice(0, 0, 0)),
                    ContractError);
}

TEST_CASE("mae and psnr closed forms") {
    auto a = ImageTensor(test_util::random_images(2, 3, 8, 8, 2).tensor() * 0.8);
    auto b = ImageTensor(a.tensor() + 0.1f);
    auto c = ImageTensor(a.tensor() + 0.05f);
    CHECK(mae(a, a) == 0.0);
    CHECK(mae(a, b) == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(mae(a, b) == mae(b, a));
    CHECK(psnr(a, a).infinite);
    CHECK(psnr(a, a).str() == "inf");
    CHECK(psnr(a, b).db == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(psnr(a, c).db > psnr(a, b).db);
    CHECK_THROWS_AS(mae(a, a.at(0)), ContractError);
    CHECK_THROWS_AS(psnr(a, a.at(0)), ContractError);
}

TEST_CASE("identity defense column equals the no-defense column") {
    LinearWorld w;
    std::vector<attacks::AttackSpec> specs = {attacks::AttackSpec::defaults(attacks::AttackMethod::Fgsm, 4.0 / 255),
                                              attacks::AttackSpec::defaults(attacks::AttackMethod::Pgd, 4.0 / 255)};
    specs[1].nb_iter = 5;
    auto m = recovery_matrix({identity_defense("identity")}, specs, w.test, w.model, 3);
    REQUIRE(m.columns.size() == 2);
    CHECK(m.columns[0] == kNoDefense);
    CHECK(m.rows.front() == "clean");
    for (const auto& row : m.rows) {
        CHECK(m.at(row, "identity") == m.at(row, kNoDefense));
    }
    CHECK(m.at("clean", kNoDefense).accuracy.value() == 1.0);
    // averages include the clean row
    double sum = 0;
    for (const auto& row : m.rows) {
        sum += *m.at(row, kNoDefense).accuracy;
    }
    CHECK(*m.column_average(kNoDefense) == doctest::Approx(sum / static_cast<double>(m.rows.size())));
}

TEST_CASE("failing cells are skipped with a reason and the run continues") {
    LinearWorld w;
    NamedDefense broken{"broken", [](const ImageTensor&, uint64_t) -> ImageTensor {
                            throw std::runtime_error("no weights");
                        }};
    auto specs = std::vector<attacks::AttackSpec>{attacks::AttackSpec::defaults(attacks::AttackMethod::Fgsm)};
    auto m = recovery_matrix({broken, identity_defense()}, specs, w.test, w.model, 0);
    CHECK(!m.at("fgsm", "broken").accuracy.has_value());
    CHECK(m.at("fgsm", "broken").reason.find("no weights") != std::string::npos);
    CHECK(m.at("fgsm", "identity").accuracy.has_value());
    CHECK(!m.column_average("broken").has_value());
    CHECK(m.to_csv().find("skipped") != std::string::npos);
}

TEST_CASE("fidelity on identity: attacked and restored agree") {
    LinearWorld w;
    auto attacked = generate_attacked_sets({attacks::AttackSpec::defaults(attacks::AttackMethod::Fgsm, 8.0 / 255)},
                                           w.test, w.model, 4);
    auto rows = fidelity(identity_defense(), attacked, w.test, 4);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].attack == "clean");
    CHECK(rows[0].psnr_attacked.infinite);
    CHECK(rows[1].mae_attacked == rows[1].mae_restored);
    CHECK(rows[1].mae_attacked > 0.0);
    CHECK(rows[1].mae_attacked <= 8.0 / 255 + 1e-6);
}

TEST_CASE("sweep snapshots equal fresh runs of each length") {
    LinearWorld w;
    const std::vector<int> iters = {1, 3, 6};
    const double eps = 4.0 / 255, step = 0.004;
    const uint64_t seed = 12;
    for (auto family : {attacks::AttackMethod::Pgd, attacks::AttackMethod::MiFgsm}) {
        auto curves = robustness_sweep(identity_defense(), family, iters, {eps}, step, w.test, w.model, seed);
        REQUIRE(curves.size() == 1);
        CHECK(curves[0].iterations == iters);
        CHECK(curves[0].accuracy == curves[0].no_defense);
        const std::string name(attacks::method_name(family));
        for (size_t k = 0; k < iters.size(); ++k) {
            auto spec = attacks::AttackSpec::defaults(family, eps);
            spec.eps_iter = step;
            spec.nb_iter = iters[k];
            attacks::AttackContext ctx;
            ctx.seed = derive_seed(derive_seed(seed, "sweep:" + name, 0), name);
            auto r = family == attacks::AttackMethod::Pgd
                         ? attacks::pgd(w.model, w.test.images, w.test.labels, spec, true, ctx)
                         : attacks::mifgsm(w.model, w.test.images, w.test.labels, spec, ctx);
            CHECK(curves[0].no_defense[k] == accuracy(w.model, r.adversarial, w.test.labels));
        }
    }
}

TEST_CASE("degenerate sweeps") {
    LinearWorld w;
    auto one = robustness_sweep(identity_defense(), attacks::AttackMethod::Pgd, {5}, {0.0}, 0.01, w.test, w.model, 0);
    REQUIRE(one.size() == 1);
    CHECK(one[0].accuracy.size() == 1);
    CHECK(one[0].spread() == 0.0);
    CHECK(one[0].accuracy[0] == 1.0);  // eps = 0 leaves the inputs alone
    CHECK_THROWS_AS(robustness_sweep(identity_defense(), attacks::AttackMethod::Pgd, {5, 5}, {0.01}, 0.01, w.test,
                                     w.model, 0),
                    ConfigError);
    CHECK_THROWS_AS(robustness_sweep(identity_defense(), attacks::AttackMethod::CwL2, {5}, {0.01}, 0.01, w.test,
                                     w.model, 0),
                    ConfigError);
}

TEST_CASE("report export/import round trip") {
    EvaluationReport r;
    r.config_hash = "deadbeef";
    r.seed = 42;
    r.test_images = 30;
    r.clean_accuracy = 0.9;
    r.no_defense = {{"pgd", 0.01}, {"fgsm", 0.2}};
    r.recovery.title = "recovery";
    r.recovery.rows = {"clean", "pgd"};
    r.recovery.columns = {kNoDefense, "M_PGD"};
    r.recovery.cells = {{Cell{0.9, ""}, Cell{0.85, ""}}, {Cell{0.01, ""}, Cell{std::nullopt, "diverged"}}};
    r.recovery.held_out = {};
    r.comparison = r.recovery;
    r.comparison.title = "comparison";
    r.comparison.held_out = {"pgd"};
    r.fidelity = {FidelityRow{"clean", 0.0, 0.02, Psnr{0, true}, Psnr{31.5, false}}};
    r.sweeps = {SweepCurve{"pgd", 2.0 / 255, {10, 20}, {0.8, 0.7}, {0.1, 0.0}}};
    r.phase_seconds = {{"evaluate", 1.5}};
    auto dir = std::filesystem::temp_directory_path() / "advdef-unit-report";
    std::filesystem::remove_all(dir);
    auto files = export_report(r, dir);
    CHECK(files.size() == 4);
    auto back = import_report(dir / "deadbeef-report.json");
    CHECK(back == r);
    auto csv = r.comparison.to_csv();
    CHECK(csv.rfind("attack,no_defense,M_PGD", 0) == 0);
    CHECK(csv.find("pgd*") != std::string::npos);
    CHECK(csv.find("average") != std::string::npos);
}
