#include "advdef/defense/networks.hpp"

#include "advdef/core/errors.hpp"

#include <cmath>

namespace advdef::defense {

namespace nn = torch::nn;

namespace {

int depth_for(int image_size) {
    int depth = 0;
    while ((1 << depth) < image_size) {
        ++depth;
    }
    if ((1 << depth) != image_size || depth < 2) {
        throw ContractError("generator: image_size must be a power of two >= 4, got " + std::to_string(image_size));
    }
    return depth;
}

int width(int filters, int level) { return filters * (1 << std::min(level, 3)); }

}  // namespace

UNetGeneratorImpl::UNetGeneratorImpl(const GeneratorOptions& opts) : opts_(opts) {
    const int depth = depth_for(opts.image_size);
    down_ = register_module("down", nn::ModuleList());
    up_ = register_module("up", nn::ModuleList());

    // down[i]: width(i-1) -> width(i), halving the side
    for (int i = 0; i < depth; ++i) {
        const int in = i == 0 ? opts.channels : width(opts.filters, i - 1);
        const int out = width(opts.filters, i);
        nn::Sequential block;
        if (i > 0) {
            block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
        }
        block->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(false)));
        if (i > 0 && i < depth - 1) {
            block->push_back(nn::BatchNorm2d(out));
        }
        down_->push_back(block);
    }
    // up[j] mirrors down[depth-1-j]; inputs after the bottleneck carry skips
    for (int j = 0; j < depth; ++j) {
        const int level = depth - 1 - j;
        const int in = j == 0 ? width(opts.filters, level) : 2 * width(opts.filters, level);
        const bool last = level == 0 && !opts.input_skip;
        const int out = level == 0 ? (opts.input_skip ? opts.filters : opts.channels) : width(opts.filters, level - 1);
        nn::Sequential block;
        block->push_back(nn::ReLU());
        block->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(last)));
        if (!last) {
            block->push_back(nn::BatchNorm2d(out));
        }
        up_->push_back(block);
        // pix2pix puts dropout on the three innermost decoder blocks
        if (j >= 1 && j <= 3 && level > 0) {
            dropouts_.push_back(register_module("dropout" + std::to_string(j), nn::Dropout(opts.dropout)));
        }
    }
    if (opts.input_skip) {
        out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(opts.filters + opts.channels, opts.channels, 3).padding(1)));
    }
}

torch::Tensor UNetGeneratorImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != opts_.channels || x.size(2) != opts_.image_size ||
        x.size(3) != opts_.image_size) {
        throw ContractError("generator: expected (N," + std::to_string(opts_.channels) + "," +
                            std::to_string(opts_.image_size) + "," + std::to_string(opts_.image_size) + ") input");
    }
    std::vector<torch::Tensor> skips;
    const auto x0 = x * 2.0 - 1.0;
    auto h = x0;
    for (size_t i = 0; i < down_->size(); ++i) {
        h = down_[i]->as<nn::Sequential>()->forward(h);
        skips.push_back(h);
    }
    const size_t depth = up_->size();
    for (size_t j = 0; j < depth; ++j) {
        if (j > 0) {
            h = torch::cat({h, skips[depth - 1 - j]}, 1);
        }
        h = up_[j]->as<nn::Sequential>()->forward(h);
        if (j >= 1 && j - 1 < dropouts_.size()) {
            h = dropouts_[j - 1]->forward(h);
        }
    }
    if (out_) {
        h = out_->forward(torch::cat({torch::relu(h), x0}, 1));
    }
    return (torch::tanh(h) + 1.0) * 0.5;
}

void UNetGeneratorImpl::set_dropout_active(bool active) {
    for (auto& d : dropouts_) {
        d->train(active);
    }
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorOptions& opts) {
    const int in = 2 * opts.channels;
    body_ = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, opts.filters, 4).stride(2).padding(1)),
                               nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                               nn::Conv2d(nn::Conv2dOptions(opts.filters, 2 * opts.filters, 3).padding(1).bias(false)),
                               nn::BatchNorm2d(2 * opts.filters),
                               nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                               nn::Conv2d(nn::Conv2dOptions(2 * opts.filters, 1, 1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& condition, const torch::Tensor& candidate) {
    if (condition.sizes() != candidate.sizes()) {
        throw ContractError("discriminator: condition and candidate shapes differ");
    }
    return body_->forward(torch::cat({condition * 2.0 - 1.0, candidate * 2.0 - 1.0}, 1));
}

torch::Tensor PatchDiscriminatorImpl::probabilities(const torch::Tensor& condition, const torch::Tensor& candidate) {
    return torch::sigmoid(forward(condition, candidate));
}

void init_weights(nn::Module& module) {
    torch::NoGradGuard guard;
    for (auto& m : module.modules(/*include_self=*/false)) {
        if (auto* conv = m->as<nn::Conv2d>()) {
            conv->weight.normal_(0.0, 0.02);
            if (conv->bias.defined()) {
                conv->bias.zero_();
            }
        } else if (auto* convt = m->as<nn::ConvTranspose2d>()) {
            convt->weight.normal_(0.0, 0.02);
            if (convt->bias.defined()) {
                convt->bias.zero_();
            }
        } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
            bn->weight.normal_(1.0, 0.02);
            bn->bias.zero_();
        }
    }
}

}  // namespace advdef::defense
