#pragma once

#include "advdef/baselines/baseline_spec.hpp"
#include "advdef/core/image_tensor.hpp"

#include <cstdint>

namespace advdef::baselines {

// None of these look at a classifier. Image i draws its randomness from
// derive_seed(seed, <op>, first_index + i).

// Resize each image to a random side in [resize_min, resize_max] and
// zero-pad at a random offset onto a resize_max canvas.
ImageTensor random_resize_pad(const ImageTensor& x, uint64_t seed, const BaselineSpec& spec,
                              int64_t first_index = 0);

// `count` random pixel positions per image take the value of a random pixel
// within `window` of them (all channels together).
ImageTensor pixel_deflection(const ImageTensor& x, uint64_t seed, int count, int window, int64_t first_index = 0);

// Per-channel multilevel Haar transform, BayesShrink threshold on every detail
// subband, inverse transform, clip. Sides are edge-padded to a multiple of
// 2^levels and cropped back.
ImageTensor wavelet_denoise(const ImageTensor& x, ThresholdMode mode, int levels = 2);

// Deflect, then denoise.
ImageTensor wd_pd(const ImageTensor& x, uint64_t seed, const BaselineSpec& spec, int64_t first_index = 0);

ImageTensor apply_baseline(const BaselineSpec& spec, const ImageTensor& x, uint64_t seed, int64_t first_index = 0);

}  // namespace advdef::baselines
