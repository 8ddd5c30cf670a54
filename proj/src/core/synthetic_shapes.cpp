// Procedural 10-class natural-image stand-in: one object or textured patch
// per image over a colour-gradient background with clutter and sensor noise.

#include "advdef/core/dataset.hpp"
#include "advdef/core/seeding.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace advdef::data {

namespace {

constexpr uint64_t kDatasetSeed = 0x5eed5a11d5ULL;
constexpr float kPi = std::numbers::pi_v<float>;

// Portable uniform/normal draws; std distributions differ between standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    float uniform() { return static_cast<float>((engine_() >> 11) * 0x1.0p-53); }
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    float normal() {
        const float u1 = std::max(uniform(), 1e-12f);
        const float u2 = uniform();
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(2.0f * kPi * u2);
    }

private:
    std::mt19937_64 engine_;
};

struct Rgb {
    float r = 0, g = 0, b = 0;
};

float luminance(const Rgb& c) { return 0.299f * c.r + 0.587f * c.g + 0.114f * c.b; }

Rgb mix(const Rgb& a, const Rgb& b, float t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb random_colour(Rng& rng) { return {rng.uniform(0.05f, 0.95f), rng.uniform(0.05f, 0.95f), rng.uniform(0.05f, 0.95f)}; }

Rgb contrasting_colour(Rng& rng, float reference_lum, float min_contrast) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        const Rgb c = random_colour(rng);
        if (std::abs(luminance(c) - reference_lum) >= min_contrast) {
            return c;
        }
    }
    const float v = reference_lum > 0.5f ? 0.1f : 0.9f;
    return {v, v, v};
}

struct Vec2 {
    float x = 0, y = 0;
};

Vec2 rotate(Vec2 p, float angle) {
    const float c = std::cos(angle), s = std::sin(angle);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

float box_sdf(Vec2 q, float hx, float hy) { return std::max(std::abs(q.x) - hx, std::abs(q.y) - hy); }

float smooth_coverage(float sdf, float pixel) { return std::clamp(0.5f - sdf / pixel, 0.0f, 1.0f); }

// Everything random about one image, drawn up front.
struct Scene {
    int label = 0;
    Rgb bg_a, bg_b, fg, fg2;
    float bg_angle = 0;
    Vec2 centre;
    float size = 0;
    float angle = 0;
    float period = 0;
    std::array<float, 8> clutter{};
    float noise = 0.01f;
};

Scene draw_scene(int label, Rng& rng) {
    Scene s;
    s.label = label;
    s.bg_a = random_colour(rng);
    s.bg_b = random_colour(rng);
    s.bg_angle = rng.uniform(0.0f, 2.0f * kPi);
    const float bg_lum = 0.5f * (luminance(s.bg_a) + luminance(s.bg_b));
    s.fg = contrasting_colour(rng, bg_lum, 0.25f);
    s.fg2 = contrasting_colour(rng, luminance(s.fg), 0.3f);
    s.centre = {rng.uniform(-0.2f, 0.2f), rng.uniform(-0.2f, 0.2f)};
    s.size = rng.uniform(0.35f, 0.55f);
    s.angle = rng.uniform(0.0f, 2.0f * kPi);
    s.period = rng.uniform(0.22f, 0.32f);
    for (auto& c : s.clutter) {
        c = rng.uniform(0.0f, 1.0f);
    }
    return s;
}

// Foreground colour and coverage of the object at point p (normalised [-1,1] coords).
std::pair<Rgb, float> shade_object(const Scene& s, Vec2 p, float pixel) {
    const Vec2 d{p.x - s.centre.x, p.y - s.centre.y};
    const Vec2 q = rotate(d, -s.angle);
    const float r = s.size;
    switch (s.label) {
        case 0: {  // disk
            return {s.fg, smooth_coverage(std::hypot(d.x, d.y) - r * 0.8f, pixel)};
        }
        case 1: {  // square
            return {s.fg, smooth_coverage(box_sdf(q, r * 0.7f, r * 0.7f), pixel)};
        }
        case 2: {  // triangle
            float sdf = -1e9f;
            for (int k = 0; k < 3; ++k) {
                const float a = 2.0f * kPi * static_cast<float>(k) / 3.0f;
                sdf = std::max(sdf, std::cos(a) * q.x + std::sin(a) * q.y - r * 0.5f);
            }
            return {s.fg, smooth_coverage(sdf, pixel)};
        }
        case 3: {  // ring
            const float sdf = std::abs(std::hypot(d.x, d.y) - r * 0.75f) - r * 0.18f;
            return {s.fg, smooth_coverage(sdf, pixel)};
        }
        case 4: {  // plus-shaped cross
            const float sdf = std::min(box_sdf(q, r, r * 0.25f), box_sdf(q, r * 0.25f, r));
            return {s.fg, smooth_coverage(sdf, pixel)};
        }
        case 5:    // horizontal stripes patch
        case 6: {  // vertical stripes patch
            const Vec2 t = rotate(d, -(s.angle - kPi) * 0.08f);
            const float coord = s.label == 5 ? t.y : t.x;
            const float wave = std::sin(2.0f * kPi * coord / s.period);
            // soft, partial-contrast grating
            const float mix_t = 0.5f + 0.3f * wave;
            return {mix(s.fg2, s.fg, mix_t), smooth_coverage(box_sdf(t, r * 0.8f, r * 0.8f), pixel)};
        }
        case 7: {  // checkerboard patch
            const float cell = s.period * 0.6f;
            const float wave = std::sin(kPi * q.x / cell) * std::sin(kPi * q.y / cell);
            const float mix_t = std::clamp(0.5f + wave * 2.0f, 0.0f, 1.0f);
            return {mix(s.fg2, s.fg, mix_t), smooth_coverage(box_sdf(q, r * 0.85f, r * 0.85f), pixel)};
        }
        case 8: {  // two disks
            const Vec2 off = rotate({r * 0.55f, 0.0f}, s.angle);
            const float d1 = std::hypot(d.x - off.x, d.y - off.y);
            const float d2 = std::hypot(d.x + off.x, d.y + off.y);
            return {s.fg, smooth_coverage(std::min(d1, d2) - r * 0.38f, pixel)};
        }
        default: {  // 9: polka-dot patch
            const float g = s.period * 0.9f;
            const float fx = q.x / g - std::round(q.x / g);
            const float fy = q.y / g - std::round(q.y / g);
            const float dot = std::hypot(fx, fy) * g - g * 0.3f;
            const float mix_t = smooth_coverage(dot, pixel);
            return {mix(s.fg2, s.fg, mix_t), smooth_coverage(box_sdf(q, r * 0.85f, r * 0.85f), pixel)};
        }
    }
}

void render(const Scene& s, int n, int channels, Rng& rng, float* out) {
    const float pixel = 2.0f / static_cast<float>(n);
    const Vec2 grad_dir{std::cos(s.bg_angle), std::sin(s.bg_angle)};
    const size_t plane = static_cast<size_t>(n) * n;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const Vec2 p{-1.0f + pixel * (static_cast<float>(x) + 0.5f), -1.0f + pixel * (static_cast<float>(y) + 0.5f)};
            const float g = std::clamp(0.5f + 0.5f * (p.x * grad_dir.x + p.y * grad_dir.y), 0.0f, 1.0f);
            Rgb c = mix(s.bg_a, s.bg_b, g);
            // Low-frequency clutter.
            const float blot = 0.07f * std::sin(3.0f * p.x * (1.0f + s.clutter[0] * 2.0f) + 6.0f * s.clutter[1]) *
                               std::sin(3.0f * p.y * (1.0f + s.clutter[2] * 2.0f) + 6.0f * s.clutter[3]);
            c = {c.r + blot * (s.clutter[4] - 0.5f) * 2.0f, c.g + blot * (s.clutter[5] - 0.5f) * 2.0f,
                 c.b + blot * (s.clutter[6] - 0.5f) * 2.0f};
            const auto [fg, cover] = shade_object(s, p, pixel);
            c = mix(c, fg, cover);
            const size_t idx = static_cast<size_t>(y) * n + x;
            if (channels == 1) {
                out[idx] = std::clamp(luminance(c) + s.noise * rng.normal(), 0.0f, 1.0f);
            } else {
                out[idx] = std::clamp(c.r + s.noise * rng.normal(), 0.0f, 1.0f);
                out[plane + idx] = std::clamp(c.g + s.noise * rng.normal(), 0.0f, 1.0f);
                out[2 * plane + idx] = std::clamp(c.b + s.noise * rng.normal(), 0.0f, 1.0f);
            }
        }
    }
}

}  // namespace

const std::vector<std::string>& synthetic_class_names() {
    static const std::vector<std::string> names = {"disk",    "square",          "triangle",      "ring",
                                                   "cross",   "horizontal_stripes", "vertical_stripes", "checkerboard",
                                                   "two_disks", "polka_dots"};
    return names;
}

LabeledImageSet generate_synthetic_shapes(int image_size, int channels, int per_class, Split split) {
    constexpr int kClasses = 10;
    const int64_t total = static_cast<int64_t>(kClasses) * per_class;
    auto images = torch::empty({total, channels, image_size, image_size}, torch::kFloat32);
    auto labels = torch::empty({total}, torch::kLong);
    float* base = images.data_ptr<float>();
    auto* lab = labels.data_ptr<int64_t>();
    const size_t stride = static_cast<size_t>(channels) * image_size * image_size;
    int64_t row = 0;
    for (int c = 0; c < kClasses; ++c) {
        for (int i = 0; i < per_class; ++i, ++row) {
            Rng rng(derive_seed(kDatasetSeed, split_name(split), static_cast<uint64_t>(c) * 1000003ULL + i));
            const Scene scene = draw_scene(c, rng);
            render(scene, image_size, channels, rng, base + row * stride);
            lab[row] = c;
        }
    }
    return LabeledImageSet(ImageTensor(images), labels, kClasses);
}

}  // namespace advdef::data
