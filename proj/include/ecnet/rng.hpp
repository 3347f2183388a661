#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "ecnet/serialize.hpp"

namespace ecnet {

// Deterministic random source. Uniform/normal/integer draws are hand-rolled on
// top of mt19937_64 output so that streams are byte-identical across standard
// library implementations (std::normal_distribution is not portable).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Independent named substream of a root seed, e.g. Rng::stream(seed, "mask").
    static Rng stream(std::uint64_t seed, std::string_view name) {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the name
        for (char ch : name) {
            h ^= static_cast<std::uint8_t>(ch);
            h *= 1099511628211ull;
        }
        return Rng(mix(seed ^ mix(h)));
    }

    std::uint64_t raw() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased draw from [0, n).
    std::uint64_t integer(std::uint64_t n) {
        const std::uint64_t reject_below = (0 - n) % n;  // 2^64 mod n
        std::uint64_t x;
        do {
            x = gen_();
        } while (x < reject_below);
        return x % n;
    }

    // Full stream state, including the Box-Muller spare, for checkpoints.
    void save_state(std::ostream& os) const {
        os << gen_ << '\n';
        write_f64(os, spare_);
        write_u64(os, has_spare_ ? 1 : 0);
    }

    void load_state(std::istream& is) {
        if (!(is >> gen_)) throw CheckpointError("checkpoint: bad rng state");
        spare_ = read_f64(is);
        has_spare_ = read_u64(is) != 0;
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ecnet
