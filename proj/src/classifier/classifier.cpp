#include "advdef/classifier/classifier.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace advdef::classifier {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;
constexpr int kBlocks = 4;

std::string layer_name(int block) { return "block" + std::to_string(block + 1); }

}  // namespace

ClassifierNetImpl::ClassifierNetImpl(const Architecture& arch) {
    if (arch.channels.size() != kBlocks) {
        throw ContractError("classifier: expected 4 block widths");
    }
    blocks_ = register_module("blocks", nn::ModuleList());
    int in = arch.in_channels;
    for (int b = 0; b < kBlocks; ++b) {
        const int out = arch.channels[static_cast<size_t>(b)];
        blocks_->push_back(nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                                          nn::ReLU(),
                                          nn::MaxPool2d(nn::MaxPool2dOptions(2))));
        in = out;
    }
    pool_ = register_module("pool", nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions({2, 2})));
    head_ = register_module("head", nn::Linear(in * 4, arch.num_classes));
    mean_ = register_buffer("mean", torch::full({1, arch.in_channels, 1, 1}, 0.5f));
    std_ = register_buffer("std", torch::full({1, arch.in_channels, 1, 1}, 0.25f));
}

std::vector<torch::Tensor> ClassifierNetImpl::forward_blocks(const torch::Tensor& x, int depth, bool with_head) {
    std::vector<torch::Tensor> outs;
    auto h = (x - mean_) / std_;
    for (int b = 0; b < depth; ++b) {
        h = blocks_[static_cast<size_t>(b)]->as<nn::Sequential>()->forward(h);
        outs.push_back(h);
    }
    if (with_head && depth == kBlocks) {
        outs.push_back(head_->forward(pool_->forward(h).flatten(1)));
    }
    return outs;
}

torch::Tensor ClassifierNetImpl::forward(const torch::Tensor& x) { return forward_blocks(x, kBlocks, true).back(); }

void ClassifierNetImpl::set_normalisation(const torch::Tensor& mean, const torch::Tensor& stddev) {
    torch::NoGradGuard guard;
    mean_.copy_(mean.reshape_as(mean_));
    std_.copy_(stddev.reshape_as(std_).clamp_min(1e-3));
}

ClassifierModel::ClassifierModel(Architecture arch, ClassifierNet net, uint64_t seed)
    : arch_(std::move(arch)), net_(std::move(net)), seed_(seed) {
    net_->eval();
    for (auto& p : net_->parameters()) {
        p.set_requires_grad(false);
    }
}

torch::Tensor ClassifierModel::logits(const torch::Tensor& images) const { return net_.ptr()->forward(images); }

std::vector<std::string> ClassifierModel::feature_layers() const {
    std::vector<std::string> names;
    for (int b = 0; b < kBlocks; ++b) {
        names.push_back(layer_name(b));
    }
    return names;
}

std::vector<torch::Tensor> ClassifierModel::features(const torch::Tensor& images,
                                                     const std::vector<std::string>& layers) const {
    if (layers.empty()) {
        return {};
    }
    const auto valid = feature_layers();
    std::vector<int> wanted;
    int depth = 0;
    for (const auto& name : layers) {
        const auto it = std::find(valid.begin(), valid.end(), name);
        if (it == valid.end()) {
            std::string list;
            for (const auto& v : valid) {
                list += (list.empty() ? "" : ", ") + v;
            }
            throw ContractError("unknown feature layer '" + name + "'; valid layers: " + list);
        }
        const int idx = static_cast<int>(it - valid.begin());
        wanted.push_back(idx);
        depth = std::max(depth, idx + 1);
    }
    // Stop at the deepest requested block; the head is never needed here.
    const auto outs = net_.ptr()->forward_blocks(images, depth, /*with_head=*/false);
    std::vector<torch::Tensor> result;
    result.reserve(wanted.size());
    for (int idx : wanted) {
        result.push_back(outs[static_cast<size_t>(idx)]);
    }
    return result;
}

uint64_t ClassifierModel::parameter_hash() const {
    uint64_t h = fnv1a64(std::string_view("classifier"));
    for (const auto& p : net_->parameters()) {
        h = fnv1a64(p, h);
    }
    for (const auto& b : net_->buffers()) {
        h = fnv1a64(b, h);
    }
    return h;
}

void ClassifierModel::save(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    torch::save(net_, (dir / "classifier.pt").string());
    nlohmann::json meta = {
        {"format_version", kFormatVersion},
        {"architecture",
         {{"kind", "conv4-relu-maxpool"},
          {"in_channels", arch_.in_channels},
          {"image_size", arch_.image_size},
          {"num_classes", arch_.num_classes},
          {"channels", arch_.channels}}},
        {"seed", seed_},
        {"clean_accuracy", clean_accuracy_},
        {"feature_layers", feature_layers()},
        {"parameter_hash", hex64(parameter_hash())},
    };
    std::ofstream out(dir / "metadata.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "metadata.json").string());
    }
    out << meta.dump(2) << '\n';
}

ClassifierModel ClassifierModel::load(const fs::path& dir) {
    std::ifstream in(dir / "metadata.json");
    if (!in) {
        throw IoError("missing classifier metadata in " + dir.string());
    }
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("format_version", 0) != kFormatVersion) {
        throw IoError("unsupported classifier checkpoint version in " + dir.string());
    }
    Architecture arch;
    const auto& a = meta.at("architecture");
    arch.in_channels = a.at("in_channels").get<int>();
    arch.image_size = a.at("image_size").get<int>();
    arch.num_classes = a.at("num_classes").get<int>();
    arch.channels = a.at("channels").get<std::vector<int>>();
    ClassifierNet net(arch);
    torch::load(net, (dir / "classifier.pt").string());
    ClassifierModel model(arch, net, meta.at("seed").get<uint64_t>());
    model.set_clean_accuracy(meta.value("clean_accuracy", -1.0));
    return model;
}

LinearClassifier::LinearClassifier(torch::Tensor weight, torch::Tensor bias)
    : weight_(weight.detach().to(torch::kFloat32)), bias_(bias.detach().to(torch::kFloat32)) {
    if (weight_.dim() != 2 || bias_.dim() != 1 || bias_.size(0) != weight_.size(0)) {
        throw ContractError("LinearClassifier: weight must be (K, D) and bias (K)");
    }
}

torch::Tensor LinearClassifier::logits(const torch::Tensor& images) const {
    const auto flat = images.flatten(1);
    if (flat.size(1) != weight_.size(1)) {
        throw ContractError("LinearClassifier: input has " + std::to_string(flat.size(1)) + " features, expected " +
                            std::to_string(weight_.size(1)));
    }
    return torch::addmm(bias_, flat, weight_.t());
}

void check_input(const Architecture& arch, const ImageTensor& x) {
    const auto max_side = static_cast<int64_t>(std::floor(1.25 * arch.image_size));
    if (x.channels() != arch.in_channels || x.height() < arch.image_size || x.width() < arch.image_size ||
        x.height() > max_side || x.width() > max_side) {
        std::ostringstream os;
        os << "classifier input shape " << x.tensor().sizes() << " does not match (N, " << arch.in_channels << ", "
           << arch.image_size << ", " << arch.image_size << ")";
        throw ContractError(os.str());
    }
}

namespace {

void check_model_input(const DifferentiableClassifier& model, const ImageTensor& x) {
    if (const auto* m = dynamic_cast<const ClassifierModel*>(&model)) {
        check_input(m->architecture(), x);
    }
}

double accuracy_of(const ClassifierModel& model, const data::LabeledImageSet& set) {
    const auto pred = predict_labels(model, set.images);
    return pred.eq(set.labels).to(torch::kDouble).mean().item<double>();
}

}  // namespace

ClassifierModel train_classifier(const data::LabeledImageSet& train, const TrainingHyper& hyper) {
    if (train.size() == 0) {
        throw ContractError("train_classifier: empty training set");
    }
    torch::manual_seed(hyper.seed);
    Architecture arch;
    arch.in_channels = static_cast<int>(train.images.channels());
    arch.image_size = static_cast<int>(train.images.height());
    arch.num_classes = train.num_classes;
    arch.channels = hyper.channels;
    ClassifierNet net(arch);
    {
        const auto& t = train.images.tensor();
        net->set_normalisation(t.mean({0, 2, 3}), t.std(std::vector<int64_t>{0, 2, 3}));
    }
    net->train();
    torch::optim::Adam opt(net->parameters(),
                           torch::optim::AdamOptions(hyper.learning_rate).weight_decay(hyper.weight_decay));
    const int64_t n = train.size();
    const int64_t steps_per_epoch = (n + hyper.batch_size - 1) / hyper.batch_size;
    const int64_t total_steps = steps_per_epoch * hyper.epochs;
    int64_t step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto perm = seeded_permutation(n, derive_seed(hyper.seed, "classifier-shuffle", epoch));
        const auto order = torch::tensor(perm, torch::kLong);
        double loss_sum = 0.0;
        int64_t correct = 0;
        for (int64_t begin = 0; begin < n; begin += hyper.batch_size, ++step) {
            // Cosine decay of the learning rate.
            const double lr = hyper.learning_rate * 0.5 *
                              (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
            for (auto& group : opt.param_groups()) {
                static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
            }
            const auto idx = order.slice(0, begin, std::min(n, begin + hyper.batch_size));
            const auto x = train.images.tensor().index_select(0, idx);
            const auto y = train.labels.index_select(0, idx);
            opt.zero_grad();
            const auto logits = net->forward(x);
            const auto loss = F::cross_entropy(logits, y);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                throw DivergenceError("classifier training diverged at epoch " + std::to_string(epoch) +
                                      " (loss " + std::to_string(value) + ")");
            }
            loss.backward();
            opt.step();
            loss_sum += value * static_cast<double>(idx.size(0));
            correct += logits.argmax(1).eq(y).sum().item<int64_t>();
        }
        std::cerr << "[classifier] epoch " << epoch + 1 << "/" << hyper.epochs << " loss "
                  << loss_sum / static_cast<double>(n) << " train-acc "
                  << static_cast<double>(correct) / static_cast<double>(n) << '\n';
    }
    ClassifierModel model(arch, net, hyper.seed);
    model.set_clean_accuracy(accuracy_of(model, train));
    return model;
}

std::vector<Prediction> predict(const DifferentiableClassifier& model, const ImageTensor& x) {
    check_model_input(model, x);
    torch::NoGradGuard guard;
    const auto logits = model.logits(x.tensor()).to(torch::kFloat32).contiguous();
    const auto probs = torch::softmax(logits.to(torch::kDouble), 1);
    const auto labels = logits.argmax(1);
    std::vector<Prediction> out;
    out.reserve(static_cast<size_t>(x.batch()));
    for (int64_t i = 0; i < x.batch(); ++i) {
        Prediction p;
        p.label = labels[i].item<int64_t>();
        p.confidence = probs[i][p.label].item<double>();
        const auto row = logits[i];
        p.logits.assign(row.data_ptr<float>(), row.data_ptr<float>() + row.numel());
        out.push_back(std::move(p));
    }
    return out;
}

torch::Tensor predict_labels(const DifferentiableClassifier& model, const ImageTensor& x, int64_t chunk) {
    check_model_input(model, x);
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    for (int64_t begin = 0; begin < x.batch(); begin += chunk) {
        const auto batch = x.tensor().slice(0, begin, std::min(x.batch(), begin + chunk));
        // torch::argmax returns the first maximal index.
        parts.push_back(model.logits(batch).argmax(1));
    }
    if (parts.empty()) {
        return torch::empty({0}, torch::kLong);
    }
    return torch::cat(parts);
}

torch::Tensor loss_gradient(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y) {
    check_model_input(model, x);
    if (y.dim() != 1 || y.size(0) != x.batch()) {
        throw ContractError("loss_gradient: need one label per image");
    }
    torch::AutoGradMode enable(true);
    auto input = x.tensor().clone().requires_grad_(true);
    const auto loss =
        F::cross_entropy(model.logits(input), y.to(torch::kLong), F::CrossEntropyFuncOptions().reduction(torch::kSum));
    if (!loss.requires_grad()) {
        return torch::zeros_like(x.tensor());
    }
    auto grad = torch::autograd::grad({loss}, {input}, {}, false, false, /*allow_unused=*/true)[0];
    return grad.defined() ? grad : torch::zeros_like(x.tensor());
}

std::vector<torch::Tensor> feature_activations(const FeatureExtractor& model, const ImageTensor& x,
                                               const std::vector<std::string>& layers) {
    torch::NoGradGuard guard;
    return model.features(x.tensor(), layers);
}

}  // namespace advdef::classifier
