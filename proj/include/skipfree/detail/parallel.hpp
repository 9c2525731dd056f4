#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace skipfree::detail {

// Process-wide cap on implicit parallelism (0 = hardware default). Worker
// count never changes results, only resource use, so a global cap is safe.
inline std::atomic<unsigned>& worker_cap() {
    static std::atomic<unsigned> cap{0};
    return cap;
}

inline unsigned resolve_workers(unsigned requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    unsigned base = hw == 0 ? 1 : std::min(hw, 8u);
    unsigned cap = worker_cap().load();
    return cap > 0 ? std::min(base, cap) : base;
}

inline void set_worker_cap(unsigned cap) { worker_cap().store(cap); }

// Runs fn(index) for index in [0, n). Indices are dealt to workers in a
// fixed stride pattern, so the work split (and anything written per index)
// does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([w, workers, n, &fn] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Parallel max-reduction of fn(index) over [0, n); max is order independent.
template <class Fn>
double parallel_max(std::size_t n, unsigned workers, Fn&& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || n <= 1) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m = std::max(m, fn(i));
        return m;
    }
    std::vector<double> partial(workers, 0.0);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([w, workers, n, &fn, &partial] {
            double m = 0.0;
            for (std::size_t i = w; i < n; i += workers) m = std::max(m, fn(i));
            partial[w] = m;
        });
    }
    for (auto& t : pool) t.join();
    double m = 0.0;
    for (double p : partial) m = std::max(m, p);
    return m;
}

}  // namespace skipfree::detail
