#pragma once

#include <torch/torch.h>

namespace advdef::defense {

struct GeneratorOptions {
    int channels = 3;
    int image_size = 32;
    int filters = 16;      // ngf
    double dropout = 0.5;  // the noise z
    // Mirror the input level too: the last decoder block stays at full
    // resolution features, is joined with x and mapped to the output by a 3x3 conv.
    bool input_skip = true;
};

// Encoder-decoder with mirrored skip connections. Depth is log2(image_size),
// so a 32x32 input gets 5 down and 5 up blocks down to a 1x1 bottleneck.
// Inputs and outputs are [0,1] images; internally the net works in [-1,1].
class UNetGeneratorImpl : public torch::nn::Module {
public:
    explicit UNetGeneratorImpl(const GeneratorOptions& opts);

    torch::Tensor forward(const torch::Tensor& x);
    // Dropout on (noisy) or off regardless of train/eval mode.
    void set_dropout_active(bool active);

    const GeneratorOptions& options() const { return opts_; }

private:
    GeneratorOptions opts_;
    torch::nn::ModuleList down_;
    torch::nn::ModuleList up_;
    std::vector<torch::nn::Dropout> dropouts_;
    torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(UNetGenerator);

struct DiscriminatorOptions {
    int channels = 3;
    int filters = 32;  // ndf
};

// PatchGAN over the (condition, candidate) channel concatenation. Returns a
// grid of logits, one per 8x8 receptive field at stride 2.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(const DiscriminatorOptions& opts);

    torch::Tensor forward(const torch::Tensor& condition, const torch::Tensor& candidate);
    // sigmoid(forward): patch probabilities in (0,1).
    torch::Tensor probabilities(const torch::Tensor& condition, const torch::Tensor& candidate);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// N(0, 0.02) conv weights, N(1, 0.02) batch-norm scales, zero biases.
void init_weights(torch::nn::Module& module);

}  // namespace advdef::defense
