#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace advdef::baselines {

enum class BaselineMethod { RandomResize, WdPd };
enum class ThresholdMode { BayesShrinkSoft, BayesShrinkHard };
enum class Interpolation { Nearest, Bilinear };

struct BaselineSpec {
    BaselineMethod method = BaselineMethod::WdPd;
    // Random resizing: side drawn uniformly from [resize_min, resize_max],
    // then padded to a resize_max x resize_max canvas.
    int resize_min = 32;
    int resize_max = 35;
    Interpolation interpolation = Interpolation::Nearest;
    // Pixel deflection.
    int deflections = 4;
    int window = 10;
    // Wavelet denoising.
    ThresholdMode threshold = ThresholdMode::BayesShrinkSoft;
    int wavelet_levels = 2;

    // Defaults for `image_size`: resize range 1.0-1.1x, 200 deflections per 224x224 pixels.
    static BaselineSpec defaults(BaselineMethod method, int image_size);

    void validate(int image_size) const;

    bool operator==(const BaselineSpec&) const = default;
};

std::string_view baseline_name(BaselineMethod method);
BaselineMethod parse_baseline(std::string_view name);

void to_json(nlohmann::json& j, const BaselineSpec& s);
void from_json(const nlohmann::json& j, BaselineSpec& s);

}  // namespace advdef::baselines
