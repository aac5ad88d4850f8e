#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace gst {

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Static contiguous partition of [0, n) into at most `threads` chunks.
// Chunk boundaries depend only on (n, threads), so reductions merged in
// chunk order are bit-reproducible for a fixed thread count.
template <typename Fn>
void parallel_chunks(size_t n, int threads, Fn&& fn) {
    if (threads < 1) threads = 1;
    const size_t nthreads = std::min<size_t>(static_cast<size_t>(threads), n == 0 ? 1 : n);
    if (nthreads <= 1 || n == 0) {
        fn(size_t{0}, size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const size_t base = n / nthreads;
    const size_t rem = n % nthreads;
    size_t begin = 0;
    for (size_t t = 0; t < nthreads; ++t) {
        const size_t len = base + (t < rem ? 1 : 0);
        const size_t end = begin + len;
        pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
        begin = end;
    }
    for (auto& th : pool) th.join();
}

} // namespace gst
