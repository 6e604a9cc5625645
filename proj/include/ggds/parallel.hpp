#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace ggds {

inline int resolve_threads(int requested) {
    if (requested > 0)
        return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers pulling indices from a shared counter.
/// Work items must write disjoint outputs; ordering of side effects is unspecified.
template <typename Fn> void parallel_for(int n, int threads, Fn &&fn) {
    threads = std::min(resolve_threads(threads), n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++)
            fn(i);
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads - 1);
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
}

} // namespace ggds
