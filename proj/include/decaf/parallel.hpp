/*
 * Copyright 2026 The decaf authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License"). You may not use this file except in compliance
 * with the License. A copy of the License is located at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * or in the "license" file accompanying this file. This file is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES
 * OR CONDITIONS OF ANY KIND, either express or implied. See the License for the specific language governing permissions
 * and limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace decaf {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static range split: worker t gets one contiguous [begin, end) chunk.
/// fn(thread_index, begin, end). With num_threads == 1 the call is inline,
/// which is what the bit-reproducibility mode relies on. Workers must only
/// write to disjoint state (per-thread buffers merged by the caller in
/// thread-index order).
template <typename Fn>
void parallel_for(std::size_t n, int num_threads, Fn&& fn) {
    num_threads = resolve_threads(num_threads);
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(num_threads), n == 0 ? 1 : n);
    if (t <= 1) {
        fn(0, std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + t - 1) / t;
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(t);
    workers.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t begin = std::min(n, i * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        workers.emplace_back([&, i, begin, end]() {
            try {
                fn(i, begin, end);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace decaf
