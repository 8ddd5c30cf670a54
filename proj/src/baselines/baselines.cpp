#include "advdef/baselines/baselines.hpp"

#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <random>

namespace advdef::baselines {

namespace F = torch::nn::functional;

ImageTensor random_resize_pad(const ImageTensor& x, uint64_t seed, const BaselineSpec& spec, int64_t first_index) {
    if (spec.resize_min < 1 || spec.resize_max < spec.resize_min) {
        throw ConfigError("baselines.resize: need 1 <= resize_min <= resize_max");
    }
    const int canvas = spec.resize_max;
    auto out = torch::zeros({x.batch(), x.channels(), canvas, canvas}, torch::kFloat32);
    for (int64_t i = 0; i < x.batch(); ++i) {
        std::mt19937_64 rng(derive_seed(seed, "random-resize", static_cast<uint64_t>(first_index + i)));
        const int side = std::uniform_int_distribution<int>(spec.resize_min, spec.resize_max)(rng);
        const int top = std::uniform_int_distribution<int>(0, canvas - side)(rng);
        const int left = std::uniform_int_distribution<int>(0, canvas - side)(rng);
        auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{side, side});
        if (spec.interpolation == Interpolation::Nearest) {
            opts.mode(torch::kNearest);
        } else {
            opts.mode(torch::kBilinear).align_corners(false);
        }
        const auto resized = F::interpolate(x.at(i).tensor(), opts);
        out[i].slice(1, top, top + side).slice(2, left, left + side).copy_(resized[0]);
    }
    return ImageTensor::clamped(out);
}

ImageTensor pixel_deflection(const ImageTensor& x, uint64_t seed, int count, int window, int64_t first_index) {
    if (count < 0 || window < 0) {
        throw ConfigError("baselines.deflections and baselines.window must be >= 0");
    }
    auto out = x.tensor().clone().contiguous();
    const auto src = x.tensor().contiguous();
    const int64_t h = x.height(), w = x.width();
    for (int64_t i = 0; i < x.batch(); ++i) {
        std::mt19937_64 rng(derive_seed(seed, "pixel-deflection", static_cast<uint64_t>(first_index + i)));
        std::uniform_int_distribution<int64_t> row(0, h - 1), col(0, w - 1);
        std::uniform_int_distribution<int64_t> shift(-window, window);
        for (int k = 0; k < count; ++k) {
            const int64_t r = row(rng), c = col(rng);
            const int64_t rr = std::clamp<int64_t>(r + shift(rng), 0, h - 1);
            const int64_t cc = std::clamp<int64_t>(c + shift(rng), 0, w - 1);
            // read from the original so deflections do not chain
            out[i].select(1, r).select(1, c).copy_(src[i].select(1, rr).select(1, cc));
        }
    }
    return ImageTensor(out);
}

namespace {

struct Haar {
    torch::Tensor ll, lh, hl, hh;
};

Haar haar_forward(const torch::Tensor& x) {
    const auto a = x.slice(2, 0, x.size(2), 2).slice(3, 0, x.size(3), 2);
    const auto b = x.slice(2, 0, x.size(2), 2).slice(3, 1, x.size(3), 2);
    const auto c = x.slice(2, 1, x.size(2), 2).slice(3, 0, x.size(3), 2);
    const auto d = x.slice(2, 1, x.size(2), 2).slice(3, 1, x.size(3), 2);
    return {(a + b + c + d) / 2.0, (a - b + c - d) / 2.0, (a + b - c - d) / 2.0, (a - b - c + d) / 2.0};
}

torch::Tensor haar_inverse(const Haar& s) {
    const auto a = (s.ll + s.lh + s.hl + s.hh) / 2.0;
    const auto b = (s.ll - s.lh + s.hl - s.hh) / 2.0;
    const auto c = (s.ll + s.lh - s.hl - s.hh) / 2.0;
    const auto d = (s.ll - s.lh - s.hl + s.hh) / 2.0;
    // interleave rows then columns
    const auto top = torch::stack({a, b}, -1).flatten(-2);     // even rows
    const auto bottom = torch::stack({c, d}, -1).flatten(-2);  // odd rows
    return torch::stack({top, bottom}, -2).flatten(-3, -2);
}

// Per (image, channel) statistics over the spatial dims, shaped to broadcast.
torch::Tensor spatial_mean(const torch::Tensor& t) { return t.mean({2, 3}, /*keepdim=*/true); }

torch::Tensor shrink(const torch::Tensor& band, const torch::Tensor& sigma, ThresholdMode mode) {
    const auto noise_var = sigma.pow(2);
    const auto signal_sd = torch::sqrt(torch::clamp_min(spatial_mean(band.pow(2)) - noise_var, 0.0));
    const auto band_max = band.abs().amax({2, 3}, true);
    // all-noise subbands are zeroed entirely
    const auto threshold = torch::where(signal_sd > 0, noise_var / signal_sd.clamp_min(1e-30), band_max);
    if (mode == ThresholdMode::BayesShrinkHard) {
        return torch::where(band.abs() > threshold, band, torch::zeros_like(band));
    }
    return band.sign() * torch::clamp_min(band.abs() - threshold, 0.0);
}

}  // namespace

ImageTensor wavelet_denoise(const ImageTensor& x, ThresholdMode mode, int levels) {
    if (levels < 1) {
        throw ConfigError("baselines.wavelet_levels must be >= 1");
    }
    const int64_t h = x.height(), w = x.width();
    const int64_t block = int64_t{1} << levels;
    const int64_t ph = (block - h % block) % block, pw = (block - w % block) % block;
    auto t = x.tensor().to(torch::kDouble);
    if (ph > 0 || pw > 0) {
        t = F::pad(t, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
    }
    std::vector<Haar> bands;
    auto ll = t;
    for (int l = 0; l < levels; ++l) {
        bands.push_back(haar_forward(ll));
        ll = bands.back().ll;
    }
    // noise level from the finest diagonal band: median(|HH1|) / 0.6745
    const auto hh1 = bands.front().hh.flatten(2).abs();
    const auto sigma = std::get<0>(hh1.median(2)).unsqueeze(-1).unsqueeze(-1) / 0.6745;
    for (int l = levels - 1; l >= 0; --l) {
        auto& s = bands[static_cast<size_t>(l)];
        s.ll = ll;
        s.lh = shrink(s.lh, sigma, mode);
        s.hl = shrink(s.hl, sigma, mode);
        s.hh = shrink(s.hh, sigma, mode);
        ll = haar_inverse(s);
    }
    return ImageTensor::clamped(ll.slice(2, 0, h).slice(3, 0, w).to(torch::kFloat32));
}

ImageTensor wd_pd(const ImageTensor& x, uint64_t seed, const BaselineSpec& spec, int64_t first_index) {
    return wavelet_denoise(pixel_deflection(x, seed, spec.deflections, spec.window, first_index), spec.threshold,
                           spec.wavelet_levels);
}

ImageTensor apply_baseline(const BaselineSpec& spec, const ImageTensor& x, uint64_t seed, int64_t first_index) {
    switch (spec.method) {
        case BaselineMethod::RandomResize:
            return random_resize_pad(x, seed, spec, first_index);
        case BaselineMethod::WdPd:
            return wd_pd(x, seed, spec, first_index);
    }
    throw ConfigError("unknown baseline method");
}

}  // namespace advdef::baselines
