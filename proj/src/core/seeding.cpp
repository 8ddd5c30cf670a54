#include "advdef/core/seeding.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstdio>
#include <numeric>
#include <random>

namespace advdef {

void seed_all(uint64_t seed) {
    torch::manual_seed(seed);
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
}

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index) {
    return mix64(mix64(master ^ fnv1a64(stream)) + index);
}

at::Generator make_generator(uint64_t seed) {
    return at::detail::createCPUGenerator(seed);
}

std::vector<int64_t> seeded_permutation(int64_t n, uint64_t seed) {
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), int64_t{0});
    // Fisher-Yates with an explicit engine; std::shuffle's algorithm is
    // implementation-defined, this one is portable.
    std::mt19937_64 rng(seed);
    for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    return perm;
}

uint64_t fnv1a64(std::string_view bytes, uint64_t state) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

uint64_t fnv1a64(const torch::Tensor& t, uint64_t state) {
    auto c = t.detach().contiguous().cpu();
    return fnv1a64(std::string_view(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size()),
                   state);
}

std::string hex64(uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace advdef
