#pragma once

// Fixed-partition thread pool. Every index of a parallel_for range is handled
// by exactly one worker, so results never depend on the worker count as long
// as callers keep per-index reductions inside the callback.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace attendseg {

class ThreadPool {
public:
    explicit ThreadPool(std::size_t workers) {
        for (std::size_t i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
        }
        wake_.notify_all();
        for (auto& t : threads_) t.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    std::size_t size() const noexcept { return threads_.size(); }

    /// Runs fn(part) for part in [0, parts) and blocks until all finish.
    /// Part 0 runs on the calling thread.
    void run(std::size_t parts, const std::function<void(std::size_t)>& fn) {
        if (parts == 0) return;
        std::lock_guard serial(run_mutex_);
        {
            std::lock_guard lock(mutex_);
            job_ = &fn;
            next_ = 1;
            parts_ = parts;
            pending_ = parts - 1;
            ++generation_;
        }
        wake_.notify_all();
        in_worker() = true;
        fn(0);
        in_worker() = false;
        std::unique_lock lock(mutex_);
        done_.wait(lock, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

    static bool& in_worker() {
        thread_local bool flag = false;
        return flag;
    }

private:
    void loop() {
        std::size_t seen = 0;
        for (;;) {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stop_ || (generation_ != seen && next_ < parts_); });
            if (stop_) return;
            seen = generation_;
            while (next_ < parts_) {
                const std::size_t part = next_++;
                const auto* job = job_;
                lock.unlock();
                in_worker() = true;
                (*job)(part);
                in_worker() = false;
                lock.lock();
                if (--pending_ == 0) done_.notify_one();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex run_mutex_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::size_t next_ = 0;
    std::size_t parts_ = 0;
    std::size_t pending_ = 0;
    std::size_t generation_ = 0;
    bool stop_ = false;
};

namespace detail {

inline std::size_t default_threads() {
    if (const char* env = std::getenv("ATTENDSEG_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct PoolState {
    std::mutex mutex;
    std::size_t threads = default_threads();
    std::unique_ptr<ThreadPool> pool;
};

inline PoolState& pool_state() {
    static PoolState state;
    return state;
}

}  // namespace detail

/// Caps internal parallelism. 0 restores the default (ATTENDSEG_THREADS or
/// the hardware concurrency).
inline void set_num_threads(std::size_t n) {
    auto& s = detail::pool_state();
    std::lock_guard lock(s.mutex);
    s.threads = n == 0 ? detail::default_threads() : n;
    s.pool.reset();
}

inline std::size_t num_threads() {
    auto& s = detail::pool_state();
    std::lock_guard lock(s.mutex);
    return s.threads;
}

/// Calls fn(begin, end) over contiguous chunks of [0, n). `work_per_item` is a
/// rough cost estimate used to skip threading for small loops.
inline void parallel_for(std::size_t n, std::size_t work_per_item,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
    constexpr std::size_t kMinWork = 1u << 15;
    auto& s = detail::pool_state();
    std::size_t threads;
    {
        std::lock_guard lock(s.mutex);
        threads = s.threads;
    }
    const std::size_t useful = work_per_item == 0 ? 1 : std::max<std::size_t>(1, n * work_per_item / kMinWork);
    const std::size_t parts = std::min({threads, n, useful});
    if (parts <= 1 || ThreadPool::in_worker()) {
        if (n > 0) fn(0, n);
        return;
    }
    ThreadPool* pool;
    {
        std::lock_guard lock(s.mutex);
        if (!s.pool || s.pool->size() != threads - 1) s.pool = std::make_unique<ThreadPool>(threads - 1);
        pool = s.pool.get();
    }
    pool->run(parts, [&](std::size_t part) {
        const std::size_t begin = n * part / parts;
        const std::size_t end = n * (part + 1) / parts;
        if (begin < end) fn(begin, end);
    });
}

}  // namespace attendseg
