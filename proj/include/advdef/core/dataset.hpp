#pragma once

#include "advdef/core/config.hpp"
#include "advdef/core/image_tensor.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace advdef::data {

enum class Split { Train, Test };

std::string_view split_name(Split split);

// Images plus int64 labels in [0, num_classes).
struct LabeledImageSet {
    ImageTensor images;
    torch::Tensor labels;
    int num_classes = 0;

    LabeledImageSet() = default;
    LabeledImageSet(ImageTensor images, torch::Tensor labels, int num_classes);

    int64_t size() const { return images.defined() ? images.batch() : 0; }
    LabeledImageSet select(const torch::Tensor& indices) const;
    LabeledImageSet slice(int64_t begin, int64_t end) const;
    std::vector<int64_t> class_counts() const;
};

// Class names of the procedural desk dataset, index-aligned with labels.
const std::vector<std::string>& synthetic_class_names();

// Renders `per_class` images of every class of the procedural shapes set.
// Image i of class c depends only on (split, c, i) and the dataset seed, so
// pools of different sizes share their common prefix.
LabeledImageSet generate_synthetic_shapes(int image_size, int channels, int per_class, Split split);

// Reads CIFAR-10 binary batches (data_batch_1..5.bin / test_batch.bin) from `dir`.
// Throws IoError when the files are absent.
LabeledImageSet read_cifar10(const std::filesystem::path& dir, Split split, int image_size);

// Resizes (bilinear, antialiased when shrinking) to `image_size` and clamps to [0,1].
ImageTensor resize_images(const ImageTensor& images, int image_size);

// Full on-disk pool for a split, cached under the data directory with a
// checksum manifest. `pool_per_class` bounds the synthetic generator.
LabeledImageSet load_pool(const ExperimentConfig& config, Split split, int pool_per_class);

// `per_class` images of every class drawn without replacement under `seed`,
// returned grouped by class in ascending label order. Throws ConfigError
// naming the first class with too few images. Indices in `exclude` are never drawn.
std::vector<int64_t> select_per_class(const LabeledImageSet& pool, int per_class, uint64_t seed,
                                      const std::vector<int64_t>& exclude = {});

// The split as the experiment uses it: clean_per_class images per class for
// Train, evaluation.test_per_class for Test.
LabeledImageSet load_dataset(const ExperimentConfig& config, Split split);

// Pool sizes the experiment draws from.
int train_pool_per_class(const ExperimentConfig& config);
int test_pool_per_class(const ExperimentConfig& config);

}  // namespace advdef::data
