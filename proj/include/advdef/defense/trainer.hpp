#pragma once

#include "advdef/attacks/attack_spec.hpp"
#include "advdef/classifier/classifier.hpp"
#include "advdef/core/config.hpp"
#include "advdef/core/image_tensor.hpp"
#include "advdef/core/paired_set.hpp"
#include "advdef/defense/networks.hpp"
#include "advdef/defense/schedule.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace advdef::defense {

struct LossRecord {
    int epoch = 0;
    int64_t step = 0;
    double adv = 0, l1 = 0, perc = 0, disc = 0;
    LossWeights weights;
};

struct DefenseCheckpoint {
    GeneratorOptions generator_options;
    DiscriminatorOptions discriminator_options;
    UNetGenerator generator{nullptr};
    PatchDiscriminator discriminator{nullptr};
    std::shared_ptr<torch::optim::Adam> generator_optimizer;
    std::shared_ptr<torch::optim::Adam> discriminator_optimizer;
    int epoch = 0;  // completed epochs
    TrainingSchedule schedule;
    std::string config_hash;
    std::string label;  // "M_PGD", "versatile", ...
    std::vector<attacks::AttackMethod> attacks;
    bool inference_dropout = false;
    uint64_t seed = 0;
    double best_validation_l1 = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    // Not persisted: what happened during training.
    std::vector<LossRecord> losses;
    std::vector<double> validation_l1;  // per epoch; empty without validation pairs

    uint64_t generator_hash() const;

    // generator.pt, discriminator.pt, optimizer states and checkpoint.json.
    void save(const std::filesystem::path& dir) const;
    static DefenseCheckpoint load(const std::filesystem::path& dir);
};

struct DefenseTrainOptions {
    DefenseHyper hyper;
    int channels = 3;
    int image_size = 32;
    uint64_t seed = 0;
    std::string config_hash;
    std::string label = "versatile";
    // Checkpoints and losses.csv go here; empty writes nothing.
    std::filesystem::path output_dir;
    // Held-out pairs for the per-epoch validation L1 and the best checkpoint.
    const data::PairedImageSet* validation = nullptr;
    bool verbose = true;
};

// Alternating discriminator / generator Adam updates per batch; the generator
// minimises adv + lambda1*L1 + lambda2*perceptual with weights from
// `schedule` at each epoch. Perceptual features come from `extractor`.
// Throws DivergenceError on a NaN loss; checkpoints already written remain.
DefenseCheckpoint train_defense(const data::PairedImageSet& pairs, const TrainingSchedule& schedule, int epochs,
                                const classifier::FeatureExtractor& extractor, const DefenseTrainOptions& options);

// G(x) in [0,1], computed in chunks directly on tensors. Dropout follows the
// checkpoint's inference_dropout flag; when on, the noise is seeded from the
// checkpoint seed so repeated calls agree.
ImageTensor reconstruct(const DefenseCheckpoint& checkpoint, const ImageTensor& x, int64_t chunk = 256);

void write_loss_csv(const std::filesystem::path& file, const std::vector<LossRecord>& losses);

}  // namespace advdef::defense
