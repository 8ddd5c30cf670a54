#include "advdef/defense/losses.hpp"

#include "advdef/core/errors.hpp"

namespace advdef::defense {

namespace F = torch::nn::functional;

namespace {

void check_finite(const torch::Tensor& t, const char* what) {
    if (torch::isnan(t).any().item<bool>()) {
        throw DivergenceError(std::string(what) + ": NaN in discriminator output");
    }
}

}  // namespace

CganLosses cgan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
    check_finite(d_real, "cgan_losses");
    check_finite(d_fake, "cgan_losses");
    // keep log() finite at the ends of (0,1)
    constexpr double kTiny = 1e-12;
    const auto real = d_real.clamp(kTiny, 1.0 - kTiny);
    const auto fake = d_fake.clamp(kTiny, 1.0 - kTiny);
    return {-torch::log(fake).mean(), -torch::log(real).mean() - torch::log1p(-fake).mean()};
}

CganLosses cgan_losses_from_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
    check_finite(real_logits, "cgan_losses");
    check_finite(fake_logits, "cgan_losses");
    // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    const auto gen = F::softplus(-fake_logits).mean();
    const auto disc = F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
    return {gen, disc};
}

torch::Tensor l1_loss(const torch::Tensor& generated, const torch::Tensor& target) {
    if (generated.sizes() != target.sizes()) {
        throw ContractError("l1_loss: shapes differ");
    }
    return (generated - target).abs().mean();
}

double l1_loss(const ImageTensor& generated, const ImageTensor& target) {
    require_same_shape(generated, target, "l1_loss");
    return defense::l1_loss(generated.tensor().to(torch::kDouble), target.tensor().to(torch::kDouble)).item<double>();
}

torch::Tensor perceptual_loss(const classifier::FeatureExtractor& extractor, const std::vector<std::string>& layers,
                              const torch::Tensor& generated, const torch::Tensor& target) {
    if (generated.sizes() != target.sizes()) {
        throw ContractError("perceptual_loss: shapes differ");
    }
    if (layers.empty()) {
        return torch::zeros({}, generated.options());
    }
    const auto fg = extractor.features(generated, layers);
    std::vector<torch::Tensor> ft;
    {
        torch::NoGradGuard guard;
        ft = extractor.features(target, layers);
    }
    auto total = torch::zeros({}, generated.options());
    for (size_t k = 0; k < layers.size(); ++k) {
        total = total + (ft[k] - fg[k]).abs().mean();
    }
    return total / static_cast<double>(layers.size());
}

torch::Tensor combined_generator_objective(const torch::Tensor& adv_term, const torch::Tensor& l1_term,
                                           const torch::Tensor& perc_term, const LossWeights& weights) {
    return adv_term + weights.lambda1 * l1_term + weights.lambda2 * perc_term;
}

}  // namespace advdef::defense
