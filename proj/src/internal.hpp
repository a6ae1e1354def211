#pragma once

#include <cstddef>
#include <cstdint>

namespace gwlab::detail {

// log2 sum_k 2^{a[k]+b[k]}, with -inf entries skipped.
double log2_sum_exp2(const double* a, const double* b, std::size_t n);
double log2_sum_exp2(const double* a, std::size_t n);

}  // namespace gwlab::detail

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace gwlab::detail {

// Runs body(i) for i in [0, count) on up to `threads` workers; results must be written by index.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body body) {
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) body(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace gwlab::detail
