#pragma once

// Deterministic parallel map-reduce over Monte Carlo paths. Work is split
// into fixed blocks; any thread may compute any block, but block partials are
// stored by index and reduced pairwise in a fixed order afterwards, so the
// result is bit-identical for every thread count.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace dyadic::par {

inline int worker_count(int override_count = 0) {
    if (override_count > 0) return override_count;
    if (const char* env = std::getenv("DYADIC_LAB_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline constexpr std::size_t kBlockSize = 256;

// make() -> Partial; fill(Partial&, first, last) accumulates items [first,last).
template <class Partial, class Make, class Fill>
std::vector<Partial> run_blocks(std::size_t n_items, Make make, Fill fill, int n_threads = 0) {
    const std::size_t n_blocks = (n_items + kBlockSize - 1) / kBlockSize;
    std::vector<Partial> partials;
    partials.reserve(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) partials.push_back(make());

    const int threads = std::min<int>(worker_count(n_threads), static_cast<int>(n_blocks ? n_blocks : 1));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_blocks) return;
            const std::size_t first = b * kBlockSize;
            const std::size_t last = std::min(first + kBlockSize, n_items);
            fill(partials[b], first, last);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return partials;
}

// Pairwise fold in index order: combine(a, b) merges b into a.
template <class Partial, class Combine>
Partial reduce_pairwise(std::vector<Partial> parts, Combine combine) {
    if (parts.empty()) return Partial{};
    std::size_t n = parts.size();
    while (n > 1) {
        std::size_t out = 0;
        for (std::size_t i = 0; i + 1 < n; i += 2) {
            combine(parts[i], parts[i + 1]);
            if (out != i) parts[out] = std::move(parts[i]);
            ++out;
        }
        if (n % 2 == 1) {
            if (out != n - 1) parts[out] = std::move(parts[n - 1]);
            ++out;
        }
        n = out;
    }
    return std::move(parts[0]);
}

}  // namespace dyadic::par
