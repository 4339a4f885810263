#include "petrel/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace petrel::par {

namespace {
int g_threads = 1;
thread_local bool t_inside = false;
} // namespace

void set_threads(int n) { g_threads = std::max(1, n); }

int threads() { return g_threads; }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn) {
    const std::size_t n = end > begin ? end - begin : 0;
    if (n == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(g_threads), n);
    if (workers <= 1 || t_inside) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{begin};
    auto body = [&] {
        t_inside = true;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= end) break;
            fn(i);
        }
        t_inside = false;
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

} // namespace petrel::par
