#pragma once

#include "advdef/core/dataset.hpp"
#include "advdef/core/image_tensor.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace advdef::classifier {

// Anything attacks can differentiate through: images -> logits.
class DifferentiableClassifier {
public:
    virtual ~DifferentiableClassifier() = default;
    // (N,C,H,W) in [0,1] -> (N, num_classes). Differentiable w.r.t. the input;
    // never records gradients for the model's own parameters.
    virtual torch::Tensor logits(const torch::Tensor& images) const = 0;
    virtual int num_classes() const = 0;
};

// A fixed feature extractor V for the perceptual loss.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    // Registered layer names, shallow to deep.
    virtual std::vector<std::string> feature_layers() const = 0;
    // Differentiable activations for each requested layer, in request order.
    // Throws ContractError listing valid names on an unknown layer.
    virtual std::vector<torch::Tensor> features(const torch::Tensor& images,
                                                const std::vector<std::string>& layers) const = 0;
};

struct Prediction {
    int64_t label = 0;
    double confidence = 0.0;
    std::vector<float> logits;
};

struct Architecture {
    int in_channels = 3;
    int image_size = 32;
    int num_classes = 10;
    std::vector<int> channels = {16, 32, 64, 64};

    bool operator==(const Architecture&) const = default;
};

struct TrainingHyper {
    int epochs = 12;
    int batch_size = 64;
    double learning_rate = 2e-3;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    std::vector<int> channels = {16, 32, 64, 64};
};

// Four conv blocks (3x3 conv, ReLU, 2x2 max-pool) and a linear head over a
// 2x2 adaptive average pool. Per-channel standardisation lives in buffers so
// callers always pass raw [0,1] pixels.
class ClassifierNetImpl : public torch::nn::Module {
public:
    explicit ClassifierNetImpl(const Architecture& arch);

    torch::Tensor forward(const torch::Tensor& x);
    // Outputs of blocks 1..`depth` (after pooling), then the logits if
    // `with_head` and depth == 4.
    std::vector<torch::Tensor> forward_blocks(const torch::Tensor& x, int depth, bool with_head);

    void set_normalisation(const torch::Tensor& mean, const torch::Tensor& stddev);

private:
    torch::nn::ModuleList blocks_;
    torch::nn::AdaptiveAvgPool2d pool_{nullptr};
    torch::nn::Linear head_{nullptr};
    torch::Tensor mean_;
    torch::Tensor std_;
};
TORCH_MODULE(ClassifierNet);

// The trained target classifier. Immutable after training: parameters are
// frozen and the network stays in eval mode, so it can be shared read-only.
class ClassifierModel : public DifferentiableClassifier, public FeatureExtractor {
public:
    ClassifierModel(Architecture arch, ClassifierNet net, uint64_t seed);

    torch::Tensor logits(const torch::Tensor& images) const override;
    int num_classes() const override { return arch_.num_classes; }
    std::vector<std::string> feature_layers() const override;
    std::vector<torch::Tensor> features(const torch::Tensor& images,
                                        const std::vector<std::string>& layers) const override;

    const Architecture& architecture() const { return arch_; }
    uint64_t seed() const { return seed_; }
    double clean_accuracy() const { return clean_accuracy_; }
    void set_clean_accuracy(double acc) { clean_accuracy_ = acc; }

    // FNV-1a over every parameter and buffer.
    uint64_t parameter_hash() const;

    // Writes classifier.pt plus a versioned metadata.json sidecar.
    void save(const std::filesystem::path& dir) const;
    static ClassifierModel load(const std::filesystem::path& dir);

private:
    Architecture arch_;
    ClassifierNet net_;
    uint64_t seed_ = 0;
    double clean_accuracy_ = -1.0;
};

// Affine classifier logits = flatten(x) W^T + b; the analytic oracle model.
class LinearClassifier : public DifferentiableClassifier {
public:
    // weight: (num_classes, C*H*W), bias: (num_classes).
    LinearClassifier(torch::Tensor weight, torch::Tensor bias);

    torch::Tensor logits(const torch::Tensor& images) const override;
    int num_classes() const override { return static_cast<int>(weight_.size(0)); }
    const torch::Tensor& weight() const { return weight_; }
    const torch::Tensor& bias() const { return bias_; }

private:
    torch::Tensor weight_;
    torch::Tensor bias_;
};

// Adam on cross-entropy with a seeded shuffle per epoch. Throws
// DivergenceError if the loss turns NaN.
ClassifierModel train_classifier(const data::LabeledImageSet& train, const TrainingHyper& hyper);

std::vector<Prediction> predict(const DifferentiableClassifier& model, const ImageTensor& x);

// argmax with lowest-index tie-break, computed in chunks without gradients.
torch::Tensor predict_labels(const DifferentiableClassifier& model, const ImageTensor& x,
                             int64_t chunk = 256);

// d CrossEntropy(model(x), y) / dx, summed over the batch (so each image gets
// its own gradient). Same shape as x.
torch::Tensor loss_gradient(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y);

std::vector<torch::Tensor> feature_activations(const FeatureExtractor& model, const ImageTensor& x,
                                               const std::vector<std::string>& layers);

// Throws ContractError when x does not match the architecture's input shape.
void check_input(const Architecture& arch, const ImageTensor& x);

}  // namespace advdef::classifier
