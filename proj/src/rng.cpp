#include "dynmix/rng.hpp"

#include <cmath>

#include "dynmix/common.hpp"

namespace dynmix::rng {

namespace {

// FNV-1a over the purpose string, then splitmix64 finalization mixed with
// the base seed. Stable by construction.
uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97f4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t base, std::string_view purpose) {
    return splitmix64(base ^ fnv1a(purpose));
}

uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index) {
    return splitmix64(derive_seed(base, purpose) + 0x632BE59BD9B4E019ULL * (index + 1));
}

size_t Engine::uniform_int(size_t n) {
    require(n > 0, "uniform_int: n must be positive");
    // Rejection sampling for an unbiased draw.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<size_t>(x % n);
}

double Engine::normal() {
    double u1 = uniform_open01();
    double u2 = uniform_open01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

double Engine::gumbel() {
    double u = uniform_open01();
    return -std::log(-std::log(u));
}

int Engine::categorical(const std::vector<double>& probs) {
    double u = uniform01();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace dynmix::rng
