#pragma once

#include "advdef/classifier/classifier.hpp"
#include "advdef/core/image_tensor.hpp"
#include "advdef/core/seeding.hpp"

#include <torch/torch.h>

namespace test_util {

using advdef::ImageTensor;

inline ImageTensor random_images(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
    auto gen = advdef::make_generator(seed);
    return ImageTensor(torch::rand({n, c, h, w}, gen, torch::kFloat32));
}

inline torch::Tensor random_labels(int64_t n, int64_t classes, uint64_t seed) {
    auto gen = advdef::make_generator(seed);
    return torch::randint(classes, {n}, gen, torch::kLong);
}

inline advdef::classifier::LinearClassifier random_linear(int64_t classes, int64_t dim, uint64_t seed,
                                                          double scale = 1.0) {
    auto gen = advdef::make_generator(seed);
    return {torch::randn({classes, dim}, gen, torch::kFloat32) * scale,
            torch::randn({classes}, gen, torch::kFloat32) * scale};
}

// Random linear model whose bias is shifted so every class wins on a similar
// share of `pool`.
inline advdef::classifier::LinearClassifier balanced_linear(int64_t classes, const ImageTensor& pool,
                                                            uint64_t seed) {
    auto raw = random_linear(classes, pool.tensor()[0].numel(), seed);
    auto mean = raw.logits(pool.tensor()).mean(0);
    return {raw.weight(), raw.bias() - mean};
}

// Always predicts `label`, whatever the input.
class ConstantModel : public advdef::classifier::DifferentiableClassifier {
public:
    ConstantModel(int classes, int64_t label) : classes_(classes), label_(label) {}
    torch::Tensor logits(const torch::Tensor& images) const override {
        auto z = torch::zeros({images.size(0), classes_}, images.options());
        z.select(1, label_).fill_(1.0);
        return z + 0.0 * images.flatten(1).sum(1, true);
    }
    int num_classes() const override { return classes_; }

private:
    int classes_;
    int64_t label_;
};

// Reads the label from the first pixel: label = round(x[0,0,0] * (classes - 1)).
class PixelOracleModel : public advdef::classifier::DifferentiableClassifier {
public:
    explicit PixelOracleModel(int classes) : classes_(classes) {}
    torch::Tensor logits(const torch::Tensor& images) const override {
        const auto code = torch::round(images.select(1, 0).select(1, 0).select(1, 0) * (classes_ - 1)).to(torch::kLong);
        return torch::one_hot(code, classes_).to(images.dtype()) * 5.0;
    }
    int num_classes() const override { return classes_; }

private:
    int classes_;
};

// Images whose first pixel encodes `labels` for PixelOracleModel.
inline ImageTensor encode_labels(const ImageTensor& images, const torch::Tensor& labels, int classes) {
    auto t = images.tensor().clone();
    t.select(1, 0).select(1, 0).select(1, 0).copy_(labels.to(torch::kFloat32) / static_cast<float>(classes - 1));
    return ImageTensor(t);
}

// Small randomly initialised conv classifier on 16x16 images.
inline advdef::classifier::ClassifierModel tiny_classifier(uint64_t seed, int channels = 3, int size = 16) {
    torch::manual_seed(seed);
    advdef::classifier::Architecture arch;
    arch.in_channels = channels;
    arch.image_size = size;
    arch.num_classes = 10;
    arch.channels = {4, 6, 8, 8};
    return {arch, advdef::classifier::ClassifierNet(arch), seed};
}

}  // namespace test_util
