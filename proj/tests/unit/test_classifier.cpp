#include "doctest.h"
#include "helpers.hpp"

#include "advdef/classifier/classifier.hpp"
#include "advdef/core/dataset.hpp"
#include "advdef/core/errors.hpp"

#include <cmath>

using namespace advdef;
using namespace advdef::classifier;

TEST_CASE("uniform logits give confidence 1/K") {
    LinearClassifier model(torch::zeros({10, 12}), torch::zeros({10}));
    auto preds = predict(model, test_util::random_images(3, 3, 2, 2, 0));
    for (const auto& p : preds) {
        CHECK(p.confidence == doctest::Approx(0.1).epsilon(1e-9));
        CHECK(p.label == 0);  // lowest-index tie-break
    }
}

TEST_CASE("softmax of any input sums to one and matches the label") {
    auto model = test_util::random_linear(7, 48, 3, 2.0);
    auto x = test_util::random_images(20, 3, 4, 4, 4);
    auto preds = predict(model, x);
    auto logits = model.logits(x.tensor());
    for (size_t i = 0; i < preds.size(); ++i) {
        auto z = torch::tensor(preds[i].logits).to(torch::kDouble);
        auto p = torch::softmax(z, 0);
        CHECK(p.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(preds[i].label == logits[static_cast<int64_t>(i)].argmax().item<int64_t>());
        CHECK(preds[i].confidence == doctest::Approx(p[preds[i].label].item<double>()).epsilon(1e-6));
    }
}

TEST_CASE("hand-built 2-class linear model") {
    // logits = (x0 - x1, x1 - x0 + 0.1) on a 1x1x2 image
    auto w = torch::tensor({{1.0f, -1.0f}, {-1.0f, 1.0f}});
    auto b = torch::tensor({0.0f, 0.1f});
    LinearClassifier model(w, b);
    auto x = ImageTensor(torch::tensor({0.8f, 0.2f}).view({1, 1, 1, 2}));
    CHECK(predict(model, x)[0].label == 0);  // 0.6 vs -0.5
    auto x2 = ImageTensor(torch::tensor({0.5f, 0.5f}).view({1, 1, 1, 2}));
    CHECK(predict(model, x2)[0].label == 1);  // 0 vs 0.1
}

TEST_CASE("ties break to the lowest index") {
    LinearClassifier model(torch::zeros({4, 3}), torch::tensor({0.0f, 2.0f, 2.0f, 1.0f}));
    auto x = ImageTensor(torch::zeros({2, 3, 1, 1}));
    CHECK(predict_labels(model, x).eq(1).all().item<bool>());
    CHECK(predict(model, x)[1].label == 1);
}

TEST_CASE("linear softmax gradient matches closed form") {
    auto model = test_util::random_linear(5, 27, 8);
    auto x = test_util::random_images(4, 3, 3, 3, 9);
    auto y = test_util::random_labels(4, 5, 10);
    auto g = loss_gradient(model, x, y);
    auto flat = x.tensor().flatten(1).to(torch::kDouble);
    auto w = model.weight().to(torch::kDouble);
    auto p = torch::softmax(flat.matmul(w.t()) + model.bias().to(torch::kDouble), 1);
    auto expected = (p - torch::one_hot(y, 5).to(torch::kDouble)).matmul(w).view_as(g);
    CHECK(torch::allclose(g.to(torch::kDouble), expected, 1e-4, 1e-5));
}

TEST_CASE("zero weights give zero gradient") {
    LinearClassifier model(torch::zeros({3, 12}), torch::tensor({1.0f, 0.0f, -1.0f}));
    auto g = loss_gradient(model, test_util::random_images(2, 3, 2, 2, 1), torch::tensor({0L, 2L}));
    CHECK(g.abs().max().item<float>() == 0.0f);
}

TEST_CASE("conv classifier gradient vs central finite differences") {
    auto model = test_util::tiny_classifier(3);
    // interior pixels only, so +-h stays inside [0,1]
    auto x = ImageTensor(torch::rand({2, 3, 16, 16}, make_generator(5)) * 0.8 + 0.1);
    auto y = torch::tensor({1L, 4L});
    auto g = loss_gradient(model, x, y);
    auto loss_at = [&](const torch::Tensor& t) {
        torch::NoGradGuard ng;
        return torch::nn::functional::cross_entropy(
                   model.logits(t.to(torch::kFloat32)).to(torch::kDouble), y,
                   torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum))
            .item<double>();
    };
    auto gen = make_generator(6);
    auto picks = torch::randint(2 * 3 * 16 * 16, {8}, gen, torch::kLong);
    const double h = 1e-3;
    int good = 0;
    for (int k = 0; k < 8; ++k) {
        const int64_t idx = picks[k].item<int64_t>();
        auto plus = x.tensor().clone();
        auto minus = x.tensor().clone();
        plus.view(-1)[idx] += h;
        minus.view(-1)[idx] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2 * h);
        const double an = g.view(-1)[idx].item<double>();
        const double rel = std::abs(fd - an) / std::max(std::abs(fd), 1e-3);
        if (rel <= 1e-2 || std::abs(fd - an) < 1e-5) {
            ++good;
        }
    }
    CHECK(good == 8);
}

TEST_CASE("feature layers are unique, ordered, and validated") {
    auto model = test_util::tiny_classifier(1);
    auto names = model.feature_layers();
    REQUIRE(names.size() >= 4);
    CHECK(names[0] == "block1");
    CHECK(names[3] == "block4");
    auto x = test_util::random_images(2, 3, 16, 16, 2);
    CHECK(feature_activations(model, x, {}).empty());
    auto a = feature_activations(model, x, {"block3", "block1"});
    REQUIRE(a.size() == 2);
    CHECK(a[1].size(1) == 4);  // block1 width of the tiny net
    auto b = feature_activations(model, x, {"block3", "block1"});
    CHECK(torch::equal(a[0], b[0]));
    try {
        feature_activations(model, x, {"block9"});
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("block1") != std::string::npos);
    }
    auto nudged = ImageTensor::clamped(x.tensor() + 0.05);
    auto c = feature_activations(model, nudged, {"block1"});
    CHECK((c[0] - a[1]).abs().max().item<float>() > 0.0f);
}

TEST_CASE("inference is pure and shape checked") {
    auto model = test_util::tiny_classifier(4);
    const auto h = model.parameter_hash();
    auto x = test_util::random_images(3, 3, 16, 16, 3);
    auto l1 = model.logits(x.tensor());
    loss_gradient(model, x, torch::tensor({0L, 1L, 2L}));
    auto l2 = model.logits(x.tensor());
    CHECK(torch::equal(l1, l2));
    CHECK(model.parameter_hash() == h);
    CHECK_THROWS_AS(predict(model, test_util::random_images(1, 1, 16, 16, 0)), ContractError);
    CHECK_THROWS_AS(predict(model, test_util::random_images(1, 3, 8, 8, 0)), ContractError);
}

TEST_CASE("one epoch on ten images beats chance; same seed same parameters") {
    auto set = data::generate_synthetic_shapes(16, 3, 1, data::Split::Train);
    TrainingHyper hyper;
    hyper.epochs = 1;
    hyper.batch_size = 5;
    hyper.seed = 17;
    hyper.channels = {4, 6, 8, 8};
    auto a = train_classifier(set, hyper);
    auto b = train_classifier(set, hyper);
    CHECK(a.parameter_hash() == b.parameter_hash());
    auto acc = predict_labels(a, set.images).eq(set.labels).to(torch::kDouble).mean().item<double>();
    CHECK(acc >= 0.10);
    hyper.seed = 18;
    CHECK(train_classifier(set, hyper).parameter_hash() != a.parameter_hash());
}

TEST_CASE("classifier save/load keeps parameters") {
    auto model = test_util::tiny_classifier(9);
    auto dir = std::filesystem::temp_directory_path() / "advdef-unit-clf";
    std::filesystem::remove_all(dir);
    model.save(dir);
    auto back = ClassifierModel::load(dir);
    CHECK(back.parameter_hash() == model.parameter_hash());
    CHECK(back.architecture() == model.architecture());
}
