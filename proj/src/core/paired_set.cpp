#include "advdef/core/paired_set.hpp"

#include "advdef/attacks/attacks.hpp"
#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <iostream>

namespace advdef::data {

namespace fs = std::filesystem;

PairedImageSet::PairedImageSet(ImageTensor perturbed_in, ImageTensor clean_in, torch::Tensor labels_in,
                               std::vector<attacks::AttackMethod> tags_in)
    : perturbed(std::move(perturbed_in)),
      clean(std::move(clean_in)),
      labels(labels_in.to(torch::kLong).contiguous()),
      tags(std::move(tags_in)) {
    require_same_shape(perturbed, clean, "PairedImageSet");
    if (labels.dim() != 1 || labels.size(0) != perturbed.batch() ||
        static_cast<int64_t>(tags.size()) != perturbed.batch()) {
        throw ContractError("PairedImageSet: labels and tags must have one entry per pair");
    }
}

PairedImageSet PairedImageSet::select(const torch::Tensor& indices) const {
    const auto idx = indices.to(torch::kLong).contiguous();
    std::vector<attacks::AttackMethod> picked;
    const auto* p = idx.data_ptr<int64_t>();
    for (int64_t i = 0; i < idx.numel(); ++i) {
        picked.push_back(tags.at(static_cast<size_t>(p[i])));
    }
    return PairedImageSet(perturbed.select(idx), clean.select(idx), labels.index_select(0, idx), std::move(picked));
}

PairedImageSet PairedImageSet::with_tag(attacks::AttackMethod method) const {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] == method) {
            idx.push_back(static_cast<int64_t>(i));
        }
    }
    if (idx.empty()) {
        throw ContractError("PairedImageSet: no pairs tagged " + std::string(attacks::method_name(method)));
    }
    return select(torch::tensor(idx, torch::kLong));
}

int64_t PairedImageSet::count(attacks::AttackMethod method) const {
    return std::count(tags.begin(), tags.end(), method);
}

void PairedImageSet::save(const fs::path& file) const {
    std::vector<int64_t> t;
    for (auto m : tags) {
        t.push_back(static_cast<int64_t>(m));
    }
    std::vector<torch::Tensor> tensors = {perturbed.tensor(), clean.tensor(), labels, torch::tensor(t, torch::kLong),
                                          torch::tensor({skipped}, torch::kLong)};
    if (file.has_parent_path()) {
        fs::create_directories(file.parent_path());
    }
    torch::save(tensors, file.string());
}

PairedImageSet PairedImageSet::load(const fs::path& file) {
    if (!fs::exists(file)) {
        throw IoError("missing paired set " + file.string());
    }
    std::vector<torch::Tensor> tensors;
    torch::load(tensors, file.string());
    if (tensors.size() != 5) {
        throw IoError("corrupt paired set " + file.string());
    }
    std::vector<attacks::AttackMethod> tags;
    const auto t = tensors[3].contiguous();
    for (int64_t i = 0; i < t.numel(); ++i) {
        tags.push_back(static_cast<attacks::AttackMethod>(t.data_ptr<int64_t>()[i]));
    }
    PairedImageSet set{ImageTensor(tensors[0]), ImageTensor(tensors[1]), tensors[2], std::move(tags)};
    set.skipped = tensors[4].item<int64_t>();
    return set;
}

PairedImageSet build_paired_training_set(const LabeledImageSet& clean, const std::vector<attacks::AttackSpec>& specs,
                                         const classifier::DifferentiableClassifier& model, int per_attack,
                                         uint64_t seed) {
    if (specs.empty() || per_attack < 1) {
        throw ConfigError("pairs: need at least one attack and per_attack >= 1");
    }
    const int64_t n_attacks = static_cast<int64_t>(specs.size());
    const int64_t used = per_attack * n_attacks;
    const auto counts = clean.class_counts();
    for (size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] < used) {
            throw ConfigError("pairs: class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                              " clean images, per_attack x attacks = " + std::to_string(used));
        }
    }
    // Round-robin assignment within each class, in dataset order.
    std::vector<std::vector<int64_t>> assigned(static_cast<size_t>(n_attacks));
    std::vector<int64_t> seen(counts.size(), 0);
    const auto* l = clean.labels.data_ptr<int64_t>();
    for (int64_t i = 0; i < clean.size(); ++i) {
        auto& k = seen[static_cast<size_t>(l[i])];
        if (k < used) {
            assigned[static_cast<size_t>(k % n_attacks)].push_back(i);
        }
        ++k;
    }

    std::vector<ImageTensor> perturbed, targets;
    std::vector<torch::Tensor> labels;
    std::vector<attacks::AttackMethod> tags;
    int64_t skipped = 0;
    for (int64_t a = 0; a < n_attacks; ++a) {
        const auto& spec = specs[static_cast<size_t>(a)];
        const auto subset = clean.select(torch::tensor(assigned[static_cast<size_t>(a)], torch::kLong));
        const auto result =
            attacks::run_attack(spec, model, subset.images, subset.labels, derive_seed(seed, "pairs", a));
        const auto ok = result.success_mask.nonzero().flatten();
        skipped += subset.size() - ok.numel();
        if (ok.numel() == 0) {
            continue;
        }
        perturbed.push_back(result.adversarial.select(ok));
        targets.push_back(subset.images.select(ok));
        labels.push_back(subset.labels.index_select(0, ok));
        tags.insert(tags.end(), static_cast<size_t>(ok.numel()), spec.method);
    }
    if (skipped > 0) {
        std::cerr << "[pairs] warning: " << skipped << " attack failures skipped\n";
    }
    if (tags.empty()) {
        throw ContractError("pairs: every attack failed; no training pairs");
    }
    PairedImageSet set(ImageTensor::concat(perturbed), ImageTensor::concat(targets), torch::cat(labels),
                       std::move(tags));
    set.skipped = skipped;
    return set;
}

}  // namespace advdef::data
