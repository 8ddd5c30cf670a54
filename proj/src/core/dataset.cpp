#include "advdef/core/dataset.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>

namespace advdef::data {

namespace fs = std::filesystem;

std::string_view split_name(Split split) { return split == Split::Train ? "train" : "test"; }

LabeledImageSet::LabeledImageSet(ImageTensor images_in, torch::Tensor labels_in, int classes)
    : images(std::move(images_in)), labels(labels_in.to(torch::kLong).contiguous()), num_classes(classes) {
    if (labels.dim() != 1 || labels.size(0) != images.batch()) {
        throw ContractError("LabeledImageSet: label count does not match batch size");
    }
    if (labels.numel() > 0) {
        const auto lo = labels.min().item<int64_t>();
        const auto hi = labels.max().item<int64_t>();
        if (lo < 0 || hi >= num_classes) {
            throw ContractError("LabeledImageSet: label outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

LabeledImageSet LabeledImageSet::select(const torch::Tensor& indices) const {
    const auto idx = indices.to(torch::kLong);
    return LabeledImageSet(images.select(idx), labels.index_select(0, idx), num_classes);
}

LabeledImageSet LabeledImageSet::slice(int64_t begin, int64_t end) const {
    return LabeledImageSet(images.slice(begin, end), labels.slice(0, begin, end), num_classes);
}

std::vector<int64_t> LabeledImageSet::class_counts() const {
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    const auto* l = labels.data_ptr<int64_t>();
    for (int64_t i = 0; i < labels.numel(); ++i) {
        ++counts[static_cast<size_t>(l[i])];
    }
    return counts;
}

ImageTensor resize_images(const ImageTensor& images, int image_size) {
    if (images.height() == image_size && images.width() == image_size) {
        return images;
    }
    namespace F = torch::nn::functional;
    const bool shrinking = images.height() > image_size;
    auto out = F::interpolate(images.tensor(), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{image_size, image_size})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false)
                                                   .antialias(shrinking));
    return ImageTensor::clamped(out);
}

LabeledImageSet read_cifar10(const fs::path& dir, Split split, int image_size) {
    std::vector<fs::path> files;
    if (split == Split::Train) {
        for (int i = 1; i <= 5; ++i) {
            files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        }
    } else {
        files.push_back(dir / "test_batch.bin");
    }
    constexpr int64_t kRecord = 1 + 3 * 32 * 32;
    std::vector<uint8_t> bytes;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) {
            throw IoError("missing dataset file " + f.string() +
                          " (place the CIFAR-10 binary batches there or set ADVDEF_DATA_DIR)");
        }
        bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    if (bytes.empty() || static_cast<int64_t>(bytes.size()) % kRecord != 0) {
        throw IoError("corrupt CIFAR-10 batch in " + dir.string());
    }
    const int64_t n = static_cast<int64_t>(bytes.size()) / kRecord;
    auto raw = torch::from_blob(bytes.data(), {n, kRecord}, torch::kUInt8).clone();
    auto labels = raw.select(1, 0).to(torch::kLong);
    auto images = raw.slice(1, 1).reshape({n, 3, 32, 32}).to(torch::kFloat32).div_(255.0f);
    return LabeledImageSet(resize_images(ImageTensor(images), image_size), labels, 10);
}

namespace {

nlohmann::json read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        return nlohmann::json::object();
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
        return nlohmann::json::object();
    }
}

void write_manifest(const fs::path& path, const nlohmann::json& manifest) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write dataset manifest " + path.string());
    }
    out << manifest.dump(2) << '\n';
}

uint64_t set_checksum(const LabeledImageSet& set) {
    return fnv1a64(set.labels, fnv1a64(set.images.tensor()));
}

LabeledImageSet load_synthetic_cached(const ExperimentConfig& config, Split split, int per_class) {
    const fs::path root = resolve_data_dir(config) / "synthetic-shapes";
    const std::string name = std::string(split_name(split)) + "-s" + std::to_string(config.image_size) + "-c" +
                             std::to_string(config.image_channels) + "-n" + std::to_string(per_class) + ".pt";
    const fs::path file = root / name;
    const fs::path manifest_path = root / "manifest.json";

    std::error_code ec;
    fs::create_directories(root, ec);
    auto manifest = read_manifest(manifest_path);
    if (fs::exists(file) && manifest.contains(name)) {
        try {
            std::vector<torch::Tensor> tensors;
            torch::load(tensors, file.string());
            if (tensors.size() == 2) {
                LabeledImageSet set(ImageTensor(tensors[0]), tensors[1], 10);
                if (hex64(set_checksum(set)) == manifest[name].value("checksum", "")) {
                    return set;
                }
            }
        } catch (const std::exception&) {
            // fall through and regenerate
        }
        std::cerr << "[data] cache entry " << name << " failed its checksum; regenerating\n";
    }
    auto set = generate_synthetic_shapes(config.image_size, config.image_channels, per_class, split);
    if (!ec) {
        try {
            std::vector<torch::Tensor> tensors = {set.images.tensor(), set.labels};
            torch::save(tensors, file.string());
            manifest[name] = {{"source", "procedural synthetic-shapes generator"},
                              {"checksum", hex64(set_checksum(set))},
                              {"images", set.size()}};
            write_manifest(manifest_path, manifest);
        } catch (const std::exception& e) {
            std::cerr << "[data] could not cache " << name << ": " << e.what() << '\n';
        }
    }
    return set;
}

LabeledImageSet load_cifar_cached(const ExperimentConfig& config, Split split) {
    const fs::path root = resolve_data_dir(config) / "cifar10";
    auto set = read_cifar10(root, split, config.image_size);
    const fs::path manifest_path = root / "manifest.json";
    auto manifest = read_manifest(manifest_path);
    const std::string key(split_name(split));
    const auto checksum = hex64(set_checksum(set));
    if (manifest.contains(key) && manifest[key].value("checksum", "") != checksum) {
        std::cerr << "[data] warning: cifar10 " << key << " checksum differs from manifest\n";
    }
    manifest[key] = {{"source", "CIFAR-10 binary batches"}, {"checksum", checksum}, {"images", set.size()}};
    try {
        write_manifest(manifest_path, manifest);
    } catch (const IoError&) {
        // read-only dataset directories are fine
    }
    return set;
}

}  // namespace

LabeledImageSet load_pool(const ExperimentConfig& config, Split split, int pool_per_class) {
    if (config.dataset == "synthetic-shapes") {
        if (config.num_classes != 10) {
            throw ConfigError("dataset.num_classes: synthetic-shapes has 10 classes");
        }
        return load_synthetic_cached(config, split, pool_per_class);
    }
    if (config.dataset == "cifar10") {
        if (config.image_channels != 3 || config.num_classes != 10) {
            throw ConfigError("dataset: cifar10 is 10-class RGB");
        }
        return load_cifar_cached(config, split);
    }
    throw ConfigError("dataset.name: unknown dataset '" + config.dataset + "' (known: synthetic-shapes, cifar10)");
}

std::vector<int64_t> select_per_class(const LabeledImageSet& pool, int per_class, uint64_t seed,
                                      const std::vector<int64_t>& exclude) {
    const std::set<int64_t> excluded(exclude.begin(), exclude.end());
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(pool.num_classes));
    const auto* l = pool.labels.data_ptr<int64_t>();
    for (int64_t i = 0; i < pool.size(); ++i) {
        if (excluded.count(i) == 0) {
            by_class[static_cast<size_t>(l[i])].push_back(i);
        }
    }
    std::vector<int64_t> picked;
    picked.reserve(static_cast<size_t>(per_class) * by_class.size());
    for (size_t c = 0; c < by_class.size(); ++c) {
        const auto& members = by_class[c];
        if (static_cast<int>(members.size()) < per_class) {
            throw ConfigError("class " + std::to_string(c) + " has only " + std::to_string(members.size()) +
                              " images, " + std::to_string(per_class) + " requested");
        }
        const auto perm = seeded_permutation(static_cast<int64_t>(members.size()), derive_seed(seed, "select", c));
        std::vector<int64_t> chosen;
        for (int k = 0; k < per_class; ++k) {
            chosen.push_back(members[static_cast<size_t>(perm[static_cast<size_t>(k)])]);
        }
        std::sort(chosen.begin(), chosen.end());
        picked.insert(picked.end(), chosen.begin(), chosen.end());
    }
    return picked;
}

int train_pool_per_class(const ExperimentConfig& config) { return config.classifier.train_per_class; }

int test_pool_per_class(const ExperimentConfig& config) { return config.evaluation.test_per_class + 50; }

LabeledImageSet load_dataset(const ExperimentConfig& config, Split split) {
    const bool train = split == Split::Train;
    const auto pool = load_pool(config, split, train ? train_pool_per_class(config) : test_pool_per_class(config));
    const int per_class = train ? config.clean_per_class : config.evaluation.test_per_class;
    const auto idx = select_per_class(pool, per_class, derive_seed(config.seed, split_name(split)));
    return pool.select(torch::tensor(idx, torch::kLong));
}

}  // namespace advdef::data
