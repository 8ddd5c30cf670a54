#include "advdef/attacks/attacks.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace advdef::attacks {

namespace F = torch::nn::functional;

namespace {

struct LossGrad {
    torch::Tensor loss;    // (N) per-image cross-entropy
    torch::Tensor grad;    // d loss_i / d x_i
    torch::Tensor logits;  // detached
};

LossGrad ce_loss_grad(const DifferentiableClassifier& model, const torch::Tensor& x, const torch::Tensor& y) {
    torch::AutoGradMode enable(true);
    auto input = x.detach().clone().requires_grad_(true);
    auto logits = model.logits(input);
    auto loss = F::cross_entropy(logits, y, F::CrossEntropyFuncOptions().reduction(torch::kNone));
    torch::Tensor grad;
    if (loss.requires_grad()) {
        grad = torch::autograd::grad({loss.sum()}, {input}, {}, false, false, /*allow_unused=*/true)[0];
    }
    if (!grad.defined()) {
        grad = torch::zeros_like(input);
    }
    return {loss.detach(), grad.detach(), logits.detach()};
}

torch::Tensor predicted(const DifferentiableClassifier& model, const torch::Tensor& x) {
    torch::NoGradGuard guard;
    return model.logits(x).argmax(1);
}

torch::Tensor per_image_norm(const torch::Tensor& delta, Norm norm) {
    const auto flat = delta.flatten(1);
    return norm == Norm::Linf ? flat.abs().amax(1) : flat.pow(2).sum(1).sqrt();
}

AttackResult finish(const DifferentiableClassifier& model, const torch::Tensor& x, const torch::Tensor& adv,
                    const torch::Tensor& reference_labels, Norm norm) {
    auto adversarial = ImageTensor::clamped(adv);
    const auto success = predicted(model, adversarial.tensor()).ne(reference_labels);
    return {adversarial, success, per_image_norm(adversarial.tensor() - x, norm).to(torch::kFloat32)};
}

void check_labels(const ImageTensor& x, const torch::Tensor& y, const DifferentiableClassifier& model) {
    if (y.dim() != 1 || y.size(0) != x.batch()) {
        throw ContractError("attack: need one label per image");
    }
    if (y.numel() > 0 && (y.min().item<int64_t>() < 0 || y.max().item<int64_t>() >= model.num_classes())) {
        throw ContractError("attack: label outside the model's classes");
    }
}

// Uniform noise in [-eps, eps], one independent stream per image.
torch::Tensor uniform_ball(const torch::Tensor& like, double eps, uint64_t seed, std::string_view stream,
                           int64_t first_index) {
    std::vector<torch::Tensor> rows;
    rows.reserve(static_cast<size_t>(like.size(0)));
    auto shape = like.sizes().vec();
    shape[0] = 1;
    for (int64_t i = 0; i < like.size(0); ++i) {
        auto gen = make_generator(derive_seed(seed, stream, static_cast<uint64_t>(first_index + i)));
        rows.push_back(torch::rand(shape, gen, torch::kFloat32));
    }
    return (torch::cat(rows, 0) * 2.0 - 1.0) * eps;
}

void notify(const AttackContext& ctx, int iteration, const torch::Tensor& iterate) {
    if (ctx.observer) {
        ctx.observer(iteration, iterate);
    }
}

torch::Tensor expand_like(const torch::Tensor& per_image, const torch::Tensor& like) {
    std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
    shape[0] = per_image.size(0);
    return per_image.reshape(shape);
}

}  // namespace

torch::Tensor project_linf(const torch::Tensor& candidate, const torch::Tensor& anchor, double epsilon) {
    if (candidate.sizes() != anchor.sizes()) {
        throw ContractError("project_linf: candidate and anchor shapes differ");
    }
    const auto e = static_cast<float>(epsilon);
    return torch::clamp(torch::clamp(candidate, anchor - e, anchor + e), 0.0, 1.0);
}

ImageTensor project_linf(const ImageTensor& candidate, const ImageTensor& anchor, double epsilon) {
    return ImageTensor(project_linf(candidate.tensor(), anchor.tensor(), epsilon));
}

AttackResult fgsm(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                  double epsilon) {
    check_labels(x, y, model);
    const auto& x0 = x.tensor();
    const auto g = ce_loss_grad(model, x0, y).grad;
    const auto adv = torch::clamp(x0 + static_cast<float>(epsilon) * g.sign(), 0.0, 1.0);
    return finish(model, x0, adv, y, Norm::Linf);
}

AttackResult pgd(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                 const AttackSpec& spec, bool random_init, const AttackContext& ctx) {
    check_labels(x, y, model);
    if (spec.norm != Norm::Linf) {
        throw ContractError("pgd: only the L-inf norm is supported");
    }
    const auto& x0 = x.tensor();
    const auto step = static_cast<float>(spec.eps_iter);
    auto xa = x0.clone();
    if (random_init && spec.epsilon > 0.0) {
        xa = project_linf(x0 + uniform_ball(x0, spec.epsilon, ctx.seed, "pgd-init", ctx.first_index), x0,
                          spec.epsilon);
    }
    notify(ctx, 0, xa);
    for (int k = 1; k <= spec.nb_iter; ++k) {
        const auto g = ce_loss_grad(model, xa, y).grad;
        xa = project_linf(xa + step * g.sign(), x0, spec.epsilon);
        notify(ctx, k, xa);
    }
    return finish(model, x0, xa, y, Norm::Linf);
}

AttackResult mifgsm(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                    const AttackSpec& spec, const AttackContext& ctx) {
    check_labels(x, y, model);
    if (!(spec.decay >= 0.0)) {
        throw ContractError("mifgsm: decay must be >= 0");
    }
    const auto& x0 = x.tensor();
    const auto step = static_cast<float>(spec.eps_iter);
    const auto decay = static_cast<float>(spec.decay);
    auto xa = x0.clone();
    auto momentum = torch::zeros_like(x0);
    notify(ctx, 0, xa);
    for (int k = 1; k <= spec.nb_iter; ++k) {
        const auto g = ce_loss_grad(model, xa, y).grad;
        const auto l1 = expand_like(g.flatten(1).abs().sum(1), g);
        // A zero gradient contributes nothing (0/0 := 0).
        const auto normalised = torch::where(l1 > 0, g / l1.clamp_min(std::numeric_limits<float>::min()),
                                             torch::zeros_like(g));
        momentum = decay * momentum + normalised;
        xa = project_linf(xa + step * momentum.sign(), x0, spec.epsilon);
        notify(ctx, k, xa);
    }
    return finish(model, x0, xa, y, Norm::Linf);
}

AttackResult cw_l2(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                   const AttackSpec& spec, const AttackContext& ctx) {
    check_labels(x, y, model);
    const auto& cw = spec.cw;
    const auto& x0 = x.tensor();
    const int64_t n = x0.size(0);
    const auto kappa = static_cast<float>(cw.confidence);
    const auto onehot = F::one_hot(y, model.num_classes()).to(torch::kFloat32);

    auto lower = torch::zeros({n}, torch::kDouble);
    auto upper = torch::full({n}, 1e10, torch::kDouble);
    auto scale = torch::full({n}, cw.initial_const, torch::kDouble);
    auto best_l2 = torch::full({n}, std::numeric_limits<float>::infinity(), torch::kFloat32);
    auto best_adv = x0.clone();

    const auto w0 = torch::atanh((x0 * 2.0 - 1.0) * 0.999999);
    int global_iter = 0;
    for (int bs = 0; bs < cw.binary_search_steps; ++bs) {
        auto w = w0.clone().requires_grad_(true);
        torch::optim::Adam opt({w}, torch::optim::AdamOptions(cw.learning_rate));
        auto step_success = torch::zeros({n}, torch::kBool);
        const auto c = scale.to(torch::kFloat32);
        double previous = std::numeric_limits<double>::infinity();
        const int check_every = std::max(1, cw.max_iterations / 10);
        for (int it = 0; it < cw.max_iterations; ++it) {
            torch::AutoGradMode enable(true);
            const auto xadv = (torch::tanh(w) + 1.0) * 0.5;
            const auto z = model.logits(xadv);
            const auto real = (z * onehot).sum(1);
            const auto other = (z - onehot * 1e4).amax(1);
            const auto margin = torch::clamp_min(real - other + kappa, 0.0);
            const auto l2 = (xadv - x0).pow(2).flatten(1).sum(1);
            const auto loss = (l2 + c * margin).sum();
            {
                torch::NoGradGuard guard;
                const auto succeeded = (other - real).ge(kappa) & z.argmax(1).ne(y);
                const auto improved = succeeded & l2.lt(best_l2);
                best_l2 = torch::where(improved, l2, best_l2);
                best_adv = torch::where(expand_like(improved, x0), xadv, best_adv);
                step_success = step_success | succeeded;
                notify(ctx, global_iter++, xadv);
            }
            // Abort the inner loop once the objective stops decreasing.
            if (it % check_every == 0) {
                const double value = loss.item<double>();
                if (value > previous * 0.9999) {
                    break;
                }
                previous = value;
            }
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
        const auto ok = step_success.to(torch::kDouble);
        upper = torch::where(step_success, torch::minimum(upper, scale), upper);
        lower = torch::where(step_success, lower, torch::maximum(lower, scale));
        const auto bounded = upper.lt(1e9);
        scale = torch::where(bounded, (lower + upper) / 2.0, scale * (1.0 - ok) * 10.0 + scale * ok);
    }
    auto result = finish(model, x0, best_adv, y, Norm::L2);
    // Report failures as the unmodified input.
    const auto found = best_l2.isfinite();
    auto adv = torch::where(expand_like(found, x0), result.adversarial.tensor(), x0);
    return finish(model, x0, adv, y, Norm::L2);
}

AttackResult deepfool(const DifferentiableClassifier& model, const ImageTensor& x, int max_iter, double overshoot,
                      int candidates, const AttackContext& ctx) {
    const auto& x0 = x.tensor();
    const int64_t n = x0.size(0);
    const int k = std::min<int>(candidates, model.num_classes());
    if (k < 2) {
        throw ContractError("deepfool: need at least two candidate classes");
    }
    torch::Tensor original_logits;
    {
        torch::NoGradGuard guard;
        original_logits = model.logits(x0);
    }
    const auto original = original_logits.argmax(1);
    // Candidate classes: top-k of the clean logits, original prediction first.
    auto order = std::get<1>(original_logits.topk(k, 1, /*largest=*/true, /*sorted=*/true));
    order.select(1, 0).copy_(original);
    const auto scale = static_cast<float>(1.0 + overshoot);

    auto r_total = torch::zeros_like(x0);
    auto xi = x0.clone();
    notify(ctx, 0, xi);
    for (int it = 0; it < max_iter; ++it) {
        torch::AutoGradMode enable(true);
        auto input = xi.detach().clone().requires_grad_(true);
        const auto z = model.logits(input);
        const auto active = z.detach().argmax(1).eq(original);
        if (!active.any().item<bool>()) {
            break;
        }
        const auto chosen = z.gather(1, order);  // (N, k)
        std::vector<torch::Tensor> grads;
        grads.reserve(static_cast<size_t>(k));
        for (int j = 0; j < k; ++j) {
            auto g = torch::autograd::grad({chosen.select(1, j).sum()}, {input}, {}, /*retain_graph=*/true, false,
                                           /*allow_unused=*/true)[0];
            grads.push_back(g.defined() ? g.detach() : torch::zeros_like(x0));
        }
        const auto zc = chosen.detach();
        auto best_pert = torch::full({n}, std::numeric_limits<float>::infinity(), torch::kFloat32);
        auto best_w = torch::zeros_like(x0);
        for (int j = 1; j < k; ++j) {
            const auto w = grads[static_cast<size_t>(j)] - grads[0];
            const auto f = (zc.select(1, j) - zc.select(1, 0)).abs();
            const auto wnorm = w.flatten(1).norm(2, 1);
            const auto pert = f / (wnorm + 1e-8f);
            const auto better = pert.lt(best_pert);
            best_pert = torch::where(better, pert, best_pert);
            best_w = torch::where(expand_like(better, x0), w, best_w);
        }
        const auto wnorm = expand_like(best_w.flatten(1).norm(2, 1), x0);
        const auto r = expand_like(best_pert + 1e-4f, x0) * best_w / (wnorm + 1e-8f);
        r_total = r_total + torch::where(expand_like(active, x0), r, torch::zeros_like(r));
        xi = torch::clamp(x0 + scale * r_total, 0.0, 1.0);
        notify(ctx, it + 1, xi);
    }
    return finish(model, x0, xi, original, Norm::L2);
}

AttackResult autoattack_standin(const DifferentiableClassifier& model, const ImageTensor& x, const torch::Tensor& y,
                                const AttackSpec& spec, const AttackContext& ctx) {
    check_labels(x, y, model);
    if (spec.norm != Norm::Linf) {
        throw ContractError("autoattack_standin: only the L-inf norm is supported");
    }
    const auto& x0 = x.tensor();
    const int64_t n = x0.size(0);
    const double eps = spec.epsilon;
    const int n_iter = spec.nb_iter;
    const int first_check = std::max(static_cast<int>(0.22 * n_iter), 1);
    const int min_check = std::max(static_cast<int>(0.06 * n_iter), 1);
    const int check_decrement = std::max(static_cast<int>(0.03 * n_iter), 1);
    constexpr double kOscillationRatio = 0.75;
    constexpr float kMomentum = 0.75f;

    auto x_adv = x0.clone();
    if (spec.random_init && eps > 0.0) {
        x_adv = project_linf(x0 + uniform_ball(x0, eps, ctx.seed, "apgd-init", ctx.first_index), x0, eps);
    }
    notify(ctx, 0, x_adv);
    auto lg = ce_loss_grad(model, x_adv, y);
    auto grad = lg.grad;
    auto x_best = x_adv.clone();
    auto grad_best = grad.clone();
    auto loss_best = lg.loss.clone();
    // loss_history[0] is the start point, [i + 1] the i-th iterate.
    std::vector<torch::Tensor> loss_history{lg.loss};
    auto step = torch::full({n}, 2.0f * static_cast<float>(eps), torch::kFloat32);
    auto x_old = x_adv.clone();

    int checkpoint = first_check;
    int since_check = 0;
    auto loss_best_last_check = loss_best.clone();
    auto reduced_last_check = torch::ones({n}, torch::kBool);

    for (int i = 0; i < n_iter; ++i) {
        const auto diff = x_adv - x_old;
        x_old = x_adv;
        const float a = i > 0 ? kMomentum : 1.0f;
        auto z = project_linf(x_adv + expand_like(step, x0) * grad.sign(), x0, eps);
        x_adv = project_linf(x_adv + (z - x_adv) * a + diff * (1.0f - a), x0, eps);
        notify(ctx, i + 1, x_adv);

        lg = ce_loss_grad(model, x_adv, y);
        grad = lg.grad;
        loss_history.push_back(lg.loss);
        const auto improved = lg.loss.gt(loss_best);
        x_best = torch::where(expand_like(improved, x0), x_adv, x_best);
        grad_best = torch::where(expand_like(improved, x0), grad, grad_best);
        loss_best = torch::where(improved, lg.loss, loss_best);

        if (++since_check == checkpoint) {
            // Condition 1: too few of the last `checkpoint` steps increased the loss.
            auto increases = torch::zeros({n}, torch::kFloat32);
            const size_t last = loss_history.size() - 1;
            for (int c = 0; c < checkpoint; ++c) {
                const size_t j = last - static_cast<size_t>(c);
                increases += loss_history[j].gt(loss_history[j - 1]).to(torch::kFloat32);
            }
            auto oscillating = increases.le(static_cast<float>(checkpoint * kOscillationRatio));
            // Condition 2: step not reduced last time and the best loss did not improve.
            const auto stalled = reduced_last_check.logical_not() & loss_best_last_check.ge(loss_best);
            oscillating = oscillating | stalled;
            reduced_last_check = oscillating.clone();
            loss_best_last_check = loss_best.clone();
            if (oscillating.any().item<bool>()) {
                step = torch::where(oscillating, step / 2.0f, step);
                x_adv = torch::where(expand_like(oscillating, x0), x_best, x_adv);
                grad = torch::where(expand_like(oscillating, x0), grad_best, grad);
            }
            checkpoint = std::max(checkpoint - check_decrement, min_check);
            since_check = 0;
        }
    }
    return finish(model, x0, x_best, y, Norm::Linf);
}

AttackFn make_attack(const AttackSpec& spec) {
    spec.validate();
    switch (spec.method) {
        case AttackMethod::Fgsm:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext&) { return fgsm(m, x, y, spec.epsilon); };
        case AttackMethod::Bim:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext& ctx) { return pgd(m, x, y, spec, /*random_init=*/false, ctx); };
        case AttackMethod::Pgd:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext& ctx) { return pgd(m, x, y, spec, spec.random_init, ctx); };
        case AttackMethod::MiFgsm:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext& ctx) { return mifgsm(m, x, y, spec, ctx); };
        case AttackMethod::CwL2:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext& ctx) { return cw_l2(m, x, y, spec, ctx); };
        case AttackMethod::DeepFool:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor&,
                          const AttackContext& ctx) {
                return deepfool(m, x, spec.nb_iter, spec.overshoot, spec.candidates, ctx);
            };
        case AttackMethod::AutoAttack:
            return [spec](const DifferentiableClassifier& m, const ImageTensor& x, const torch::Tensor& y,
                          const AttackContext& ctx) { return autoattack_standin(m, x, y, spec, ctx); };
    }
    throw ConfigError("unknown attack; registered: " + registered_names());
}

AttackResult run_attack(const AttackSpec& spec, const DifferentiableClassifier& model, const ImageTensor& x,
                        const torch::Tensor& y, uint64_t seed, int64_t batch_size) {
    const auto attack = make_attack(spec);
    std::vector<ImageTensor> adv;
    std::vector<torch::Tensor> success;
    std::vector<torch::Tensor> norms;
    for (int64_t begin = 0; begin < x.batch(); begin += batch_size) {
        const int64_t end = std::min(x.batch(), begin + batch_size);
        AttackContext ctx;
        ctx.seed = derive_seed(seed, method_name(spec.method));
        ctx.first_index = begin;
        auto r = attack(model, x.slice(begin, end), y.slice(0, begin, end), ctx);
        adv.push_back(r.adversarial);
        success.push_back(r.success_mask);
        norms.push_back(r.perturbation_norm);
    }
    if (adv.empty()) {
        return {x, torch::zeros({0}, torch::kBool), torch::zeros({0}, torch::kFloat32)};
    }
    return {ImageTensor::concat(adv), torch::cat(success), torch::cat(norms)};
}

}  // namespace advdef::attacks
