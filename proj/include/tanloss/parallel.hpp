#ifndef TANLOSS_PARALLEL_HPP
#define TANLOSS_PARALLEL_HPP

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace tanloss {

/// Worker count from TANLOSS_THREADS (default 1). Results are bit-reproducible
/// for a fixed worker count.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("TANLOSS_THREADS")) {
        try {
            const long n = std::stol(env);
            if (n >= 1) return static_cast<std::size_t>(n);
        } catch (...) {
        }
    }
    return 1;
}

/**
 * Splits [0, n) into at most `workers` contiguous blocks and runs
 * fn(block, begin, end) for each. Block boundaries depend only on (n, workers).
 * Returns the number of blocks used.
 */
template <class Fn>
std::size_t parallel_blocks(std::size_t n, std::size_t workers, Fn&& fn) {
    const std::size_t blocks = std::max<std::size_t>(1, std::min(workers, n));
    auto bounds = [&](std::size_t b) { return std::pair{n * b / blocks, n * (b + 1) / blocks}; };
    if (blocks == 1) {
        fn(std::size_t{0}, std::size_t{0}, n);
        return 1;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(blocks);
    threads.reserve(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        threads.emplace_back([&, b] {
            try {
                auto [lo, hi] = bounds(b);
                fn(b, lo, hi);
            } catch (...) {
                errors[b] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return blocks;
}

} // namespace tanloss

#endif
