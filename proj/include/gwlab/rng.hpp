#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace gwlab {

// Counter-based generator: stream (seed, key) yields the same draws regardless of call order elsewhere.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t key) : state_(mix(seed ^ mix(key + 0x9e3779b97f4a7c15ULL))) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }
    // Uniform on (0,1).
    double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }
    std::vector<double> dirichlet_ones(std::size_t k) {
        std::vector<double> v(k);
        double s = 0.0;
        for (auto& e : v) {
            e = -std::log(uniform());
            s += e;
        }
        for (auto& e : v) e /= s;
        return v;
    }
    // Index drawn from an unnormalized weight vector.
    std::size_t categorical(const double* w, std::size_t k, double total) {
        double u = uniform() * total;
        for (std::size_t i = 0; i + 1 < k; ++i) {
            if (u < w[i]) return i;
            u -= w[i];
        }
        return k - 1;
    }

  private:
    std::uint64_t state_;
};

}  // namespace gwlab
