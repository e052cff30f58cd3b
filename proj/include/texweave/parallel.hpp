#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace texweave {

/// Number of workers to use when the caller passes 0.
inline unsigned default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks write to
/// disjoint memory, so results never depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (workers == 0) workers = default_workers();
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
}

/// Sum of f(i) over [0, n) with a reduction tree that depends only on n:
/// fixed-size blocks are summed independently, then combined in block order.
template <typename Fn>
double deterministic_sum(std::size_t n, unsigned workers, Fn&& f) {
    constexpr std::size_t kBlock = 4096;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(blocks, 0.0);
    parallel_for(blocks, workers, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            double s = 0.0;
            const std::size_t end = std::min(n, (b + 1) * kBlock);
            for (std::size_t i = b * kBlock; i < end; ++i) s += f(i);
            partial[b] = s;
        }
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace texweave
