#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/classifier/classifier.hpp"
#include "advdef/core/image_tensor.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>

namespace advdef::attacks {

using classifier::DifferentiableClassifier;

struct AttackResult {
    ImageTensor adversarial;
    torch::Tensor success_mask;        // bool (N): prediction no longer the reference label
    torch::Tensor perturbation_norm;   // float (N), in the attack's norm
};

// Called with (iteration, iterate) after every update; iteration 0 is the start point.
using IterateObserver = std::function<void(int, const torch::Tensor&)>;

// Randomness and instrumentation for one attack call. Image i of the batch
// draws its random start from derive_seed(seed, method, first_index + i), so
// results do not depend on how a set is split into batches.
struct AttackContext {
    uint64_t seed = 0;
    int64_t first_index = 0;
    IterateObserver observer;
};

torch::Tensor project_linf(const torch::Tensor& candidate, const torch::Tensor& anchor, double epsilon);
ImageTensor project_linf(const ImageTensor& candidate, const ImageTensor& anchor, double epsilon);

AttackResult fgsm(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                  double epsilon);

// Iterated sign-gradient ascent with projection onto the eps-ball; BIM when
// random_init is false.
AttackResult pgd(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                 const AttackSpec& spec, bool random_init, const AttackContext& ctx = {});

AttackResult mifgsm(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                    const AttackSpec& spec, const AttackContext& ctx = {});

// Untargeted Carlini-Wagner L2 with tanh box reparametrisation and a binary
// search over the trade-off constant. Failures return x with success=false.
AttackResult cw_l2(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                   const AttackSpec& spec, const AttackContext& ctx = {});

// Label-free: success means the prediction moved away from model(x)'s label.
AttackResult deepfool(const DifferentiableClassifier& model, const ImageTensor& x, int max_iter, double overshoot,
                      int candidates = 10, const AttackContext& ctx = {});

// APGD with cross-entropy: momentum, step halving at stagnation checkpoints,
// and the highest-loss iterate returned.
AttackResult autoattack_standin(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                                const AttackSpec& spec, const AttackContext& ctx = {});

using AttackFn = std::function<AttackResult(const DifferentiableClassifier&, const ImageTensor&, const torch::Tensor&,
                                            const AttackContext&)>;

// Closure over `spec` dispatching to the matching operation ("bim" runs pgd
// without random init). Throws ConfigError for an invalid spec.
AttackFn make_attack(const AttackSpec& spec);

// Applies `spec` in chunks of `batch_size` images with index-stable seeding.
AttackResult run_attack(const AttackSpec& spec, const DifferentiableClassifier& model, const ImageTensor& x,
                        const torch::Tensor& y, uint64_t seed, int64_t batch_size = 250);

}  // namespace advdef::attacks
