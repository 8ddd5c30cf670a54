#include "advdef/baselines/baseline_spec.hpp"

#include "advdef/core/errors.hpp"

#include <algorithm>
#include <cmath>

namespace advdef::baselines {

BaselineSpec BaselineSpec::defaults(BaselineMethod method, int image_size) {
    BaselineSpec s;
    s.method = method;
    s.resize_min = image_size;
    s.resize_max = static_cast<int>(std::floor(1.1 * image_size));
    const double pixels = static_cast<double>(image_size) * image_size;
    s.deflections = std::max(1, static_cast<int>(std::lround(200.0 * pixels / (224.0 * 224.0))));
    s.window = 10;
    s.threshold = ThresholdMode::BayesShrinkSoft;
    s.wavelet_levels = image_size >= 64 ? 3 : 2;
    return s;
}

void BaselineSpec::validate(int image_size) const {
    if (resize_min < image_size || resize_max < resize_min ||
        resize_max > static_cast<int>(std::floor(1.25 * image_size))) {
        throw ConfigError("baseline: resize range must lie within [image size, 1.25 x image size]");
    }
    if (deflections < 0) {
        throw ConfigError("baseline: deflection count must be >= 0");
    }
    if (window < 1) {
        throw ConfigError("baseline: deflection window must be >= 1");
    }
    if (wavelet_levels < 1) {
        throw ConfigError("baseline: wavelet levels must be >= 1");
    }
}

std::string_view baseline_name(BaselineMethod method) {
    return method == BaselineMethod::RandomResize ? "random_resize" : "wd_pd";
}

BaselineMethod parse_baseline(std::string_view name) {
    if (name == "random_resize" || name == "random") {
        return BaselineMethod::RandomResize;
    }
    if (name == "wd_pd") {
        return BaselineMethod::WdPd;
    }
    throw ConfigError("unknown baseline '" + std::string(name) + "'; registered: random_resize, wd_pd");
}

void to_json(nlohmann::json& j, const BaselineSpec& s) {
    j = nlohmann::json{
        {"method", baseline_name(s.method)},
        {"resize_min", s.resize_min},
        {"resize_max", s.resize_max},
        {"interpolation", s.interpolation == Interpolation::Nearest ? "nearest" : "bilinear"},
        {"deflections", s.deflections},
        {"window", s.window},
        {"threshold", s.threshold == ThresholdMode::BayesShrinkSoft ? "bayes_soft" : "bayes_hard"},
        {"wavelet_levels", s.wavelet_levels},
    };
}

void from_json(const nlohmann::json& j, BaselineSpec& s) {
    const auto method = parse_baseline(j.at("method").get<std::string>());
    s.method = method;
    if (j.contains("resize_min")) s.resize_min = j.at("resize_min").get<int>();
    if (j.contains("resize_max")) s.resize_max = j.at("resize_max").get<int>();
    if (j.contains("interpolation")) {
        const auto v = j.at("interpolation").get<std::string>();
        if (v == "nearest") {
            s.interpolation = Interpolation::Nearest;
        } else if (v == "bilinear") {
            s.interpolation = Interpolation::Bilinear;
        } else {
            throw ConfigError("baseline: unknown interpolation '" + v + "'");
        }
    }
    if (j.contains("deflections")) s.deflections = j.at("deflections").get<int>();
    if (j.contains("window")) s.window = j.at("window").get<int>();
    if (j.contains("threshold")) {
        const auto v = j.at("threshold").get<std::string>();
        if (v == "bayes_soft") {
            s.threshold = ThresholdMode::BayesShrinkSoft;
        } else if (v == "bayes_hard") {
            s.threshold = ThresholdMode::BayesShrinkHard;
        } else {
            throw ConfigError("baseline: unknown threshold mode '" + v + "'");
        }
    }
    if (j.contains("wavelet_levels")) s.wavelet_levels = j.at("wavelet_levels").get<int>();
}

}  // namespace advdef::baselines
