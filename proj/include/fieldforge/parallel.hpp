#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fieldforge {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
    static std::atomic<std::size_t> n{0};  // 0: not yet initialised
    return n;
}
}  // namespace detail

/// Thread count used by element loops. Defaults to FIELDFORGE_THREADS, else 1.
inline std::size_t assembly_threads() {
    auto& n = detail::thread_setting();
    if (n.load() == 0) {
        std::size_t v = 1;
        if (const char* env = std::getenv("FIELDFORGE_THREADS")) {
            try {
                const long parsed = std::stol(env);
                if (parsed > 0) v = static_cast<std::size_t>(parsed);
            } catch (...) {
            }
        }
        n.store(v);
    }
    return n.load();
}

inline void set_assembly_threads(std::size_t n) { detail::thread_setting().store(std::max<std::size_t>(n, 1)); }

/// Calls f(i) for i in [0, n) over contiguous chunks. f must write only to
/// slots owned by i, so the merged result does not depend on the thread count.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    const std::size_t threads = std::min(assembly_threads(), std::max<std::size_t>(n / 64, 1));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) f(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fieldforge
