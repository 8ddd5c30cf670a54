#include "doctest.h"
#include "helpers.hpp"

#include "advdef/attacks/attacks.hpp"
#include "advdef/core/config.hpp"
#include "advdef/core/dataset.hpp"
#include "advdef/core/errors.hpp"
#include "advdef/core/paired_set.hpp"
#include "advdef/core/seeding.hpp"

#include <filesystem>
#include <set>

using namespace advdef;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("advdef-unit-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("image tensor rejects out of range and wrong rank") {
    CHECK_THROWS_AS(ImageTensor(torch::full({1, 1, 2, 2}, 1.5f)), ContractError);
    CHECK_THROWS_AS(ImageTensor(torch::full({1, 1, 2, 2}, -0.01f)), ContractError);
    CHECK_THROWS_AS(ImageTensor(torch::zeros({3, 4, 4})), ContractError);
    CHECK_THROWS_AS(ImageTensor(torch::zeros({1, 1, 2, 2}, torch::kFloat64)), ContractError);
    CHECK_NOTHROW(ImageTensor(torch::ones({1, 1, 2, 2})));
    auto c = ImageTensor::clamped(torch::full({1, 1, 2, 2}, 2.0f));
    CHECK(c.tensor().max().item<float>() == 1.0f);
}

TEST_CASE("image tensor slicing and concat") {
    auto x = test_util::random_images(5, 3, 4, 4, 1);
    auto parts = ImageTensor::concat({x.slice(0, 2), x.slice(2, 5)});
    CHECK(torch::equal(parts.tensor(), x.tensor()));
    CHECK(x.at(3).batch() == 1);
    CHECK(x.image_shape() == std::vector<int64_t>{3, 4, 4});
    CHECK_THROWS_AS(require_same_shape(x, x.slice(0, 1), "test"), ContractError);
}

TEST_CASE("same seed gives same permutation, different seeds differ") {
    auto a = seeded_permutation(100, derive_seed(0, "shuffle"));
    auto b = seeded_permutation(100, derive_seed(0, "shuffle"));
    auto c = seeded_permutation(100, derive_seed(1, "shuffle"));
    CHECK(a == b);
    CHECK(a != c);
    std::set<int64_t> seen(a.begin(), a.end());
    CHECK(seen.size() == 100);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 99);
}

TEST_CASE("derive_seed separates streams and indices") {
    CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
    CHECK(derive_seed(0, "a", 1) != derive_seed(0, "a", 2));
    CHECK(derive_seed(7, "a", 3) == derive_seed(7, "a", 3));
    CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("seed_all makes torch draws repeatable") {
    seed_all(0);
    auto a = torch::rand({8});
    seed_all(0);
    auto b = torch::rand({8});
    CHECK(torch::equal(a, b));
}

TEST_CASE("config without seed is rejected") {
    CHECK_THROWS_AS(parse_config(nlohmann::json::object()), ConfigError);
    CHECK_THROWS_AS(parse_config(nlohmann::json{{"seed", nullptr}}), ConfigError);
    CHECK_NOTHROW(parse_config(nlohmann::json{{"seed", 3}}));
}

TEST_CASE("config enforces clean count = per_attack x attacks") {
    nlohmann::json j = {{"seed", 0}, {"pairs", {{"clean_per_class", 17}, {"per_attack", 3}}}};
    try {
        parse_config(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("clean_per_class") != std::string::npos);
    }
    j["pairs"]["clean_per_class"] = 18;
    auto c = parse_config(j);
    CHECK(c.attacks.size() == 6);
    CHECK(c.clean_per_class == 18);
}

TEST_CASE("config rejects duplicate training attacks") {
    nlohmann::json j = {{"seed", 0},
                        {"pairs", {{"clean_per_class", 6}, {"per_attack", 3},
                                   {"attacks", {{{"method", "pgd"}}, {{"method", "pgd"}}}}}}};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("config json round trip keeps the hash") {
    auto c = desk_config();
    c.seed = 42;
    auto back = parse_config(config_to_json(c));
    CHECK(back.hash() == c.hash());
    c.seed = 43;
    CHECK(back.hash() != c.hash());
}

TEST_CASE("desk dataset: 10 classes x 18 train images") {
    auto c = desk_config();
    c.per_attack = 3;
    c.clean_per_class = 18;
    c.data_dir = scratch_dir("data18");
    c.classifier.train_per_class = 40;
    c.validate();
    auto train = data::load_dataset(c, data::Split::Train);
    CHECK(train.size() == 180);
    for (auto n : train.class_counts()) {
        CHECK(n == 18);
    }
    auto again = data::load_dataset(c, data::Split::Train);
    CHECK(torch::equal(train.images.tensor(), again.images.tensor()));
}

TEST_CASE("class with too few images names the class") {
    auto set = data::generate_synthetic_shapes(16, 3, 4, data::Split::Train);
    // drop all but two images of class 7
    std::vector<int64_t> keep;
    int kept7 = 0;
    auto labels = set.labels.accessor<int64_t, 1>();
    for (int64_t i = 0; i < set.size(); ++i) {
        if (labels[i] != 7 || kept7++ < 2) {
            keep.push_back(i);
        }
    }
    auto short_set = set.select(torch::tensor(keep));
    try {
        data::select_per_class(short_set, 3, 0);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("class 7") != std::string::npos);
    }
}

TEST_CASE("synthetic pools share their prefix") {
    auto small = data::generate_synthetic_shapes(16, 3, 3, data::Split::Test);
    auto big = data::generate_synthetic_shapes(16, 3, 5, data::Split::Test);
    for (int c = 0; c < 10; ++c) {
        auto a = small.select(torch::nonzero(small.labels == c).flatten());
        auto b = big.select(torch::nonzero(big.labels == c).flatten()).slice(0, 3);
        CHECK(torch::equal(a.images.tensor(), b.images.tensor()));
    }
}

namespace {

// Random 8x8 images labelled by a random linear model's own predictions, so
// every attack starts from a correct prediction and flips it easily.
struct PairFixture {
    ImageTensor pool = test_util::random_images(4000, 3, 8, 8, 22);
    classifier::LinearClassifier model = test_util::balanced_linear(10, pool, 21);
    data::LabeledImageSet clean;

    explicit PairFixture(int per_class) {
        auto pred = classifier::predict_labels(model, pool);
        data::LabeledImageSet labelled(pool, pred, 10);
        auto idx = data::select_per_class(labelled, per_class, 5);
        clean = labelled.select(torch::tensor(idx));
    }
};

std::vector<attacks::AttackSpec> six_attacks() {
    std::vector<attacks::AttackSpec> out;
    for (auto m : {attacks::AttackMethod::Fgsm, attacks::AttackMethod::Bim, attacks::AttackMethod::Pgd,
                   attacks::AttackMethod::MiFgsm, attacks::AttackMethod::CwL2, attacks::AttackMethod::AutoAttack}) {
        auto spec = attacks::AttackSpec::defaults(m, 16.0 / 255.0);
        spec.nb_iter = 10;
        spec.cw.max_iterations = 20;
        spec.cw.binary_search_steps = 3;
        spec.cw.initial_const = 1.0;
        out.push_back(spec);
    }
    return out;
}

}  // namespace

TEST_CASE("paired set: 6 attacks x 3 per attack -> 18 pairs per class") {
    PairFixture f(18);
    auto pairs = data::build_paired_training_set(f.clean, six_attacks(), f.model, 3, 11);
    CHECK(pairs.size() + pairs.skipped == 180);
    CHECK(pairs.skipped == 0);
    auto counts = torch::bincount(pairs.labels, {}, 10);
    for (int c = 0; c < 10; ++c) {
        CHECK(counts[c].item<int64_t>() == 18);
    }
    // partition: tags cover every pair once, no clean image duplicated
    int64_t total = 0;
    for (auto m : attacks::kAllMethods) {
        total += pairs.count(m);
    }
    CHECK(total == pairs.size());
    auto flat = pairs.clean.tensor().flatten(1);
    auto uniq = std::get<0>(torch::unique_dim(flat, 0));
    CHECK(uniq.size(0) == pairs.size());
    for (const auto& spec : six_attacks()) {
        CHECK(pairs.count(spec.method) == 30);
    }
}

TEST_CASE("paired set: single attack tags every pair") {
    PairFixture f(6);
    auto pairs = data::build_paired_training_set(
        f.clean, {attacks::AttackSpec::defaults(attacks::AttackMethod::Fgsm, 16.0 / 255.0)}, f.model, 6, 2);
    CHECK(pairs.size() + pairs.skipped == 60);
    CHECK(pairs.count(attacks::AttackMethod::Fgsm) == pairs.size());
    auto fgsm = pairs.with_tag(attacks::AttackMethod::Fgsm);
    auto dev = (fgsm.perturbed.tensor() - fgsm.clean.tensor()).abs().max().item<double>();
    CHECK(dev <= 16.0 / 255.0 + 1e-6);
    CHECK_THROWS_AS(pairs.with_tag(attacks::AttackMethod::Pgd), ContractError);
}

TEST_CASE("paired set: failed attacks are skipped and counted") {
    PairFixture f(4);
    // eps = 0 can never change a prediction
    auto spec = attacks::AttackSpec::defaults(attacks::AttackMethod::Fgsm, 0.0);
    CHECK_THROWS_AS(data::build_paired_training_set(f.clean, {spec}, f.model, 4, 0), ContractError);
    // mixing in a working attack keeps its pairs and counts the failures
    auto pgd = attacks::AttackSpec::defaults(attacks::AttackMethod::Pgd, 16.0 / 255.0);
    auto pairs = data::build_paired_training_set(f.clean, {spec, pgd}, f.model, 2, 0);
    CHECK(pairs.skipped == 20);
    CHECK(pairs.size() == 20);
    CHECK(pairs.count(attacks::AttackMethod::Pgd) == 20);
}

TEST_CASE("paired set save/load is exact") {
    PairFixture f(2);
    auto pairs = data::build_paired_training_set(
        f.clean, {attacks::AttackSpec::defaults(attacks::AttackMethod::Pgd, 16.0 / 255.0)}, f.model, 2, 9);
    auto file = scratch_dir("pairs") / "pairs.pt";
    pairs.save(file);
    auto back = data::PairedImageSet::load(file);
    CHECK(torch::equal(back.perturbed.tensor(), pairs.perturbed.tensor()));
    CHECK(torch::equal(back.clean.tensor(), pairs.clean.tensor()));
    CHECK(torch::equal(back.labels, pairs.labels));
    CHECK((back.tags == pairs.tags));
    CHECK(back.skipped == pairs.skipped);
}
