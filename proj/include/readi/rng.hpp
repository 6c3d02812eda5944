#pragma once

#include <cstdint>

namespace readi {

// xoshiro256++ seeded through splitmix64. Distributions are implemented by
// hand so that streams are bit-identical across platforms and library
// versions; std::<distribution> makes no such guarantee.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // [0, 1), 53-bit resolution
    double uniform();
    float uniform_f(float lo, float hi);
    // [0, n)
    int uniform_int(int n);
    // standard normal, Box-Muller with cached spare
    double normal();
    float normal_f(float mean, float stddev);
    // Knuth product method; fine for the small means used here
    int poisson(double mean);

    // derive an independent stream id from two values
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace readi
