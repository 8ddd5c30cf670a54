#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string_view>
#include <vector>

namespace advdef {

// Seeds the global torch RNG (model init, dropout) and pins CPU execution to a
// single deterministic thread. Every other stream is derived from the same
// master seed with derive_seed().
void seed_all(uint64_t seed);

// SplitMix64 finaliser.
uint64_t mix64(uint64_t x);

// Stable per-stream seed: (master, stream name, index) -> 64-bit seed.
uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index = 0);

// A fresh CPU generator seeded from `seed`; independent of the global stream.
at::Generator make_generator(uint64_t seed);

// Uniform random permutation of [0, n) drawn from `seed`.
std::vector<int64_t> seeded_permutation(int64_t n, uint64_t seed);

// FNV-1a 64-bit over raw bytes; used for config hashes and dataset checksums.
uint64_t fnv1a64(std::string_view bytes, uint64_t state = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(const torch::Tensor& t, uint64_t state = 0xcbf29ce484222325ULL);

std::string hex64(uint64_t value);

}  // namespace advdef
