#include "advdef/defense/trainer.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"
#include "advdef/defense/losses.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace advdef::defense {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

torch::optim::AdamOptions adam_options(const DefenseHyper& h) {
    return torch::optim::AdamOptions(h.learning_rate).betas({h.beta1, h.beta2});
}

void build_models(DefenseCheckpoint& ck, const DefenseHyper& hyper) {
    ck.generator = UNetGenerator(ck.generator_options);
    ck.discriminator = PatchDiscriminator(ck.discriminator_options);
    init_weights(*ck.generator);
    init_weights(*ck.discriminator);
    ck.generator_optimizer = std::make_shared<torch::optim::Adam>(ck.generator->parameters(), adam_options(hyper));
    ck.discriminator_optimizer =
        std::make_shared<torch::optim::Adam>(ck.discriminator->parameters(), adam_options(hyper));
}

double validation_loss(DefenseCheckpoint& ck, const data::PairedImageSet& val) {
    ck.generator->eval();
    ck.generator->set_dropout_active(false);
    torch::NoGradGuard guard;
    double total = 0.0;
    const int64_t chunk = 256;
    for (int64_t b = 0; b < val.size(); b += chunk) {
        const int64_t e = std::min(val.size(), b + chunk);
        const auto out = ck.generator->forward(val.perturbed.slice(b, e).tensor());
        total += (out - val.clean.slice(b, e).tensor()).abs().to(torch::kDouble).sum().item<double>();
    }
    return total / static_cast<double>(val.clean.tensor().numel());
}

}  // namespace

uint64_t DefenseCheckpoint::generator_hash() const {
    uint64_t h = fnv1a64(std::string_view("generator"));
    for (const auto& p : generator->parameters()) {
        h = fnv1a64(p.detach(), h);
    }
    for (const auto& b : generator->buffers()) {
        h = fnv1a64(b.detach(), h);
    }
    return h;
}

void DefenseCheckpoint::save(const fs::path& dir) const {
    fs::create_directories(dir);
    torch::save(generator, (dir / "generator.pt").string());
    torch::save(discriminator, (dir / "discriminator.pt").string());
    if (generator_optimizer) {
        torch::save(*generator_optimizer, (dir / "generator_optim.pt").string());
    }
    if (discriminator_optimizer) {
        torch::save(*discriminator_optimizer, (dir / "discriminator_optim.pt").string());
    }
    nlohmann::json tags = nlohmann::json::array();
    for (auto m : attacks) {
        tags.push_back(std::string(attacks::method_name(m)));
    }
    nlohmann::json meta = {
        {"format_version", kFormatVersion},
        {"label", label},
        {"epoch", epoch},
        {"schedule", schedule},
        {"config_hash", config_hash},
        {"attacks", tags},
        {"inference_dropout", inference_dropout},
        {"seed", seed},
        {"best_epoch", best_epoch},
        {"best_validation_l1", std::isfinite(best_validation_l1) ? nlohmann::json(best_validation_l1) : nlohmann::json(nullptr)},
        {"generator", {{"channels", generator_options.channels},
                       {"image_size", generator_options.image_size},
                       {"filters", generator_options.filters},
                       {"dropout", generator_options.dropout},
                       {"input_skip", generator_options.input_skip}}},
        {"discriminator", {{"channels", discriminator_options.channels},
                           {"filters", discriminator_options.filters}}},
        {"generator_hash", hex64(generator_hash())},
    };
    std::ofstream out(dir / "checkpoint.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "checkpoint.json").string());
    }
    out << meta.dump(2) << '\n';
}

DefenseCheckpoint DefenseCheckpoint::load(const fs::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) {
        throw IoError("missing defense checkpoint in " + dir.string());
    }
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt checkpoint.json in " + dir.string() + ": " + e.what());
    }
    if (meta.value("format_version", 0) != kFormatVersion) {
        throw IoError("unsupported defense checkpoint version in " + dir.string());
    }
    DefenseCheckpoint ck;
    const auto& g = meta.at("generator");
    ck.generator_options = {g.at("channels").get<int>(), g.at("image_size").get<int>(), g.at("filters").get<int>(),
                            g.at("dropout").get<double>(), g.value("input_skip", false)};
    const auto& d = meta.at("discriminator");
    ck.discriminator_options = {d.at("channels").get<int>(), d.at("filters").get<int>()};
    ck.generator = UNetGenerator(ck.generator_options);
    ck.discriminator = PatchDiscriminator(ck.discriminator_options);
    torch::load(ck.generator, (dir / "generator.pt").string());
    torch::load(ck.discriminator, (dir / "discriminator.pt").string());
    DefenseHyper hyper;
    ck.generator_optimizer = std::make_shared<torch::optim::Adam>(ck.generator->parameters(), adam_options(hyper));
    ck.discriminator_optimizer =
        std::make_shared<torch::optim::Adam>(ck.discriminator->parameters(), adam_options(hyper));
    if (fs::exists(dir / "generator_optim.pt")) {
        torch::load(*ck.generator_optimizer, (dir / "generator_optim.pt").string());
    }
    if (fs::exists(dir / "discriminator_optim.pt")) {
        torch::load(*ck.discriminator_optimizer, (dir / "discriminator_optim.pt").string());
    }
    ck.label = meta.value("label", "");
    ck.epoch = meta.at("epoch").get<int>();
    ck.schedule = meta.at("schedule").get<TrainingSchedule>();
    ck.config_hash = meta.value("config_hash", "");
    for (const auto& t : meta.at("attacks")) {
        ck.attacks.push_back(attacks::parse_method(t.get<std::string>()));
    }
    ck.inference_dropout = meta.value("inference_dropout", false);
    ck.seed = meta.value("seed", uint64_t{0});
    ck.best_epoch = meta.value("best_epoch", -1);
    if (meta.contains("best_validation_l1") && meta["best_validation_l1"].is_number()) {
        ck.best_validation_l1 = meta["best_validation_l1"].get<double>();
    }
    if (ck.epoch < 0 || ck.epoch > ck.schedule.total_epochs()) {
        throw IoError("defense checkpoint epoch counter outside its schedule");
    }
    ck.generator->eval();
    ck.discriminator->eval();
    return ck;
}

void write_loss_csv(const fs::path& file, const std::vector<LossRecord>& losses) {
    std::ofstream out(file);
    if (!out) {
        throw IoError("cannot write " + file.string());
    }
    out << "epoch,step,adv,l1,perc,lambda1,lambda2\n" << std::setprecision(9);
    for (const auto& r : losses) {
        out << r.epoch << ',' << r.step << ',' << r.adv << ',' << r.l1 << ',' << r.perc << ',' << r.weights.lambda1
            << ',' << r.weights.lambda2 << '\n';
    }
}

DefenseCheckpoint train_defense(const data::PairedImageSet& pairs, const TrainingSchedule& schedule, int epochs,
                                const classifier::FeatureExtractor& extractor, const DefenseTrainOptions& options) {
    if (pairs.size() == 0) {
        throw ContractError("train_defense: no training pairs");
    }
    if (epochs < 1) {
        throw ConfigError("train_defense: epochs must be >= 1");
    }
    schedule.validate_covers(epochs);
    const auto& hyper = options.hyper;
    if (hyper.batch_size < 1) {
        throw ConfigError("defense.batch_size must be >= 1");
    }
    if (pairs.perturbed.channels() != options.channels || pairs.perturbed.height() != options.image_size) {
        throw ContractError("train_defense: pairs do not match the configured image shape");
    }

    torch::manual_seed(derive_seed(options.seed, "defense-init"));
    DefenseCheckpoint ck;
    ck.generator_options = {options.channels, options.image_size, hyper.generator_filters, hyper.dropout,
                            hyper.input_skip};
    ck.discriminator_options = {options.channels, hyper.discriminator_filters};
    build_models(ck, hyper);
    ck.schedule = schedule;
    ck.config_hash = options.config_hash;
    ck.label = options.label;
    ck.inference_dropout = hyper.inference_dropout;
    ck.seed = options.seed;
    for (auto m : pairs.tags) {
        if (std::find(ck.attacks.begin(), ck.attacks.end(), m) == ck.attacks.end()) {
            ck.attacks.push_back(m);
        }
    }

    const bool write = !options.output_dir.empty();
    if (write) {
        fs::create_directories(options.output_dir);
    }
    const int64_t n = pairs.size();
    const int64_t batch = hyper.batch_size;
    int64_t step = 0;
    auto& G = ck.generator;
    auto& D = ck.discriminator;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto weights = loss_weight_schedule(schedule, epoch);
        const auto perm = torch::tensor(seeded_permutation(n, derive_seed(options.seed, "defense-shuffle", epoch)),
                                        torch::kLong);
        G->train();
        D->train();
        double sum_l1 = 0.0, sum_adv = 0.0, sum_perc = 0.0, sum_disc = 0.0;
        int batches = 0;
        for (int64_t b = 0; b < n; b += batch) {
            const auto idx = perm.slice(0, b, std::min(n, b + batch));
            const auto x = pairs.perturbed.tensor().index_select(0, idx);
            const auto y = pairs.clean.tensor().index_select(0, idx);

            const auto fake = G->forward(x);

            ck.discriminator_optimizer->zero_grad();
            const auto real_logits = D->forward(x, y);
            const auto fake_logits = D->forward(x, fake.detach());
            const auto d_loss = cgan_losses_from_logits(real_logits, fake_logits).discriminator;
            d_loss.backward();
            ck.discriminator_optimizer->step();

            ck.generator_optimizer->zero_grad();
            const auto adv = cgan_losses_from_logits(real_logits.detach(), D->forward(x, fake)).generator;
            const auto l1 = defense::l1_loss(fake, y);
            const auto perc = perceptual_loss(extractor, hyper.perceptual_layers, fake, y);
            const auto total = combined_generator_objective(adv, l1, perc, weights);
            if (!std::isfinite(total.item<double>()) || !std::isfinite(d_loss.item<double>())) {
                throw DivergenceError("train_defense: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                      std::to_string(step) + (write ? "; last checkpoint kept" : ""));
            }
            total.backward();
            ck.generator_optimizer->step();

            LossRecord r{epoch, step, adv.item<double>(), l1.item<double>(), perc.item<double>(),
                         d_loss.item<double>(), weights};
            sum_adv += r.adv;
            sum_l1 += r.l1;
            sum_perc += r.perc;
            sum_disc += r.disc;
            ++batches;
            ck.losses.push_back(r);
            ++step;
        }
        ck.epoch = epoch + 1;

        if (options.validation != nullptr && options.validation->size() > 0) {
            const double v = validation_loss(ck, *options.validation);
            ck.validation_l1.push_back(v);
            if (v < ck.best_validation_l1) {
                ck.best_validation_l1 = v;
                ck.best_epoch = epoch;
                if (write) {
                    ck.save(options.output_dir / "best");
                }
            }
        }
        if (options.verbose) {
            std::cerr << "[defense " << options.label << "] epoch " << epoch + 1 << "/" << epochs << " adv "
                      << sum_adv / batches << " l1 " << sum_l1 / batches << " perc " << sum_perc / batches << " d "
                      << sum_disc / batches;
            if (!ck.validation_l1.empty()) {
                std::cerr << " val-l1 " << ck.validation_l1.back();
            }
            std::cerr << '\n';
        }
        if (write && (ck.epoch % std::max(1, hyper.checkpoint_every) == 0 || ck.epoch == epochs)) {
            ck.save(options.output_dir / "checkpoint");
            write_loss_csv(options.output_dir / "losses.csv", ck.losses);
        }
    }
    G->eval();
    D->eval();
    G->set_dropout_active(false);
    return ck;
}

ImageTensor reconstruct(const DefenseCheckpoint& checkpoint, const ImageTensor& x, int64_t chunk) {
    const auto& opts = checkpoint.generator_options;
    if (x.channels() != opts.channels || x.height() != opts.image_size || x.width() != opts.image_size) {
        throw ContractError("reconstruct: input is " + std::to_string(x.channels()) + "x" +
                            std::to_string(x.height()) + "x" + std::to_string(x.width()) + ", generator expects " +
                            std::to_string(opts.channels) + "x" + std::to_string(opts.image_size) + "x" +
                            std::to_string(opts.image_size));
    }
    auto G = checkpoint.generator;
    G->eval();
    G->set_dropout_active(checkpoint.inference_dropout);
    if (checkpoint.inference_dropout) {
        torch::manual_seed(derive_seed(checkpoint.seed, "reconstruct"));
    }
    torch::NoGradGuard guard;
    std::vector<ImageTensor> parts;
    for (int64_t b = 0; b < x.batch(); b += chunk) {
        parts.push_back(ImageTensor::clamped(G->forward(x.slice(b, std::min(x.batch(), b + chunk)).tensor())));
    }
    G->set_dropout_active(false);
    if (parts.empty()) {
        return x;
    }
    return ImageTensor::concat(parts);
}

}  // namespace advdef::defense
