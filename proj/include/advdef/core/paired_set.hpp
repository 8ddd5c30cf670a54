#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/classifier/classifier.hpp"
#include "advdef/core/dataset.hpp"
#include "advdef/core/image_tensor.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace advdef::data {

// (perturbed x, clean y) training pairs for the reconstruction defense.
struct PairedImageSet {
    ImageTensor perturbed;
    ImageTensor clean;
    torch::Tensor labels;                        // class of the clean image
    std::vector<attacks::AttackMethod> tags;     // attack that produced each pair
    int64_t skipped = 0;                         // attack failures left out

    PairedImageSet() = default;
    PairedImageSet(ImageTensor perturbed, ImageTensor clean, torch::Tensor labels,
                   std::vector<attacks::AttackMethod> tags);

    int64_t size() const { return perturbed.defined() ? perturbed.batch() : 0; }
    PairedImageSet select(const torch::Tensor& indices) const;
    // Pairs whose tag is `method`.
    PairedImageSet with_tag(attacks::AttackMethod method) const;
    int64_t count(attacks::AttackMethod method) const;

    // Exact float tensors, no image-file round trip.
    void save(const std::filesystem::path& file) const;
    static PairedImageSet load(const std::filesystem::path& file);
};

// Within each class, image j goes to attack j mod |attacks| for the first
// per_attack * |attacks| images. Pairs whose attack fails to change the
// prediction are skipped and counted in `skipped`.
PairedImageSet build_paired_training_set(const LabeledImageSet& clean, const std::vector<attacks::AttackSpec>& attacks,
                                         const classifier::DifferentiableClassifier& model, int per_attack,
                                         uint64_t seed);

}  // namespace advdef::data
