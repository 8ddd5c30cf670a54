#pragma once

#include "advdef/classifier/classifier.hpp"
#include "advdef/core/image_tensor.hpp"
#include "advdef/defense/schedule.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace advdef::defense {

struct CganLosses {
    torch::Tensor generator;      // -mean log D(x, G(x))
    torch::Tensor discriminator;  // -mean log D(x, y) - mean log(1 - D(x, G(x)))
};

// Patch grids of probabilities in (0,1). NaN input throws DivergenceError.
CganLosses cgan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake);
// Same losses from raw logits, computed stably.
CganLosses cgan_losses_from_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

// Mean absolute difference. Throws ContractError on a shape mismatch.
torch::Tensor l1_loss(const torch::Tensor& generated, const torch::Tensor& target);
double l1_loss(const ImageTensor& generated, const ImageTensor& target);

// Per-layer mean |V_k(target) - V_k(generated)|, averaged over the layers.
torch::Tensor perceptual_loss(const classifier::FeatureExtractor& extractor, const std::vector<std::string>& layers,
                              const torch::Tensor& generated, const torch::Tensor& target);

// adv + lambda1 * l1 + lambda2 * perc
torch::Tensor combined_generator_objective(const torch::Tensor& adv_term, const torch::Tensor& l1_term,
                                           const torch::Tensor& perc_term, const LossWeights& weights);

}  // namespace advdef::defense
