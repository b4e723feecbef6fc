#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace hicodit {

// Thread count from an explicit value, else HCDT_THREADS, else 1.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("HCDT_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return 1;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries depend
// only on n and the thread count; callers keep per-item work independent so the
// result does not depend on either.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t b = n * c / chunks, e = n * (c + 1) / chunks;
        pool.emplace_back([&, b, e, c] {
            try {
                fn(b, e);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

}  // namespace hicodit
