#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace atvd {

// Deterministic data-parallel helper. The iteration space is split into
// contiguous chunks, one per worker; every index is processed by exactly one
// worker and writes only its own outputs, so results are byte-identical for
// any worker count.
inline void parallel_for(int64_t begin, int64_t end, int workers,
                         const std::function<void(int64_t)>& fn) {
    int64_t n = end - begin;
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    int w = static_cast<int>(std::min<int64_t>(workers, n));
    std::vector<std::thread> threads;
    threads.reserve(w);
    int64_t chunk = (n + w - 1) / w;
    for (int t = 0; t < w; ++t) {
        int64_t lo = begin + t * chunk;
        int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : threads) th.join();
}

} // namespace atvd
