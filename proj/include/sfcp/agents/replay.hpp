#pragma once

#include <algorithm>
#include <unordered_set>
#include <vector>

#include "sfcp/common.hpp"
#include "sfcp/random.hpp"

namespace sfcp {

/// Fixed-capacity FIFO ring with uniform sampling without replacement.
template <typename T>
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw UsageError("replay capacity must be positive");
    }

    void push(T item) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
        } else {
            items_[head_] = std::move(item);
            head_ = (head_ + 1) % capacity_;
        }
        ++pushed_;
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t pushed() const { return pushed_; }
    bool empty() const { return items_.empty(); }

    /// Oldest first.
    const T& at(std::size_t i) const { return items_.at((head_ + i) % items_.size()); }

    /// k distinct indices (Floyd's algorithm), returned in draw order.
    std::vector<std::size_t> sample_indices(std::size_t k, Rng& rng) const {
        const std::size_t n = items_.size();
        if (k > n) throw UsageError("sample larger than replay fill");
        std::vector<std::size_t> out;
        out.reserve(k);
        std::unordered_set<std::size_t> seen;
        for (std::size_t j = n - k; j < n; ++j) {
            std::uniform_int_distribution<std::size_t> u(0, j);
            std::size_t t = u(rng);
            if (seen.contains(t)) t = j;
            seen.insert(t);
            out.push_back(t);
        }
        return out;
    }

    std::vector<const T*> sample(std::size_t k, Rng& rng) const {
        std::vector<const T*> out;
        for (std::size_t i : sample_indices(k, rng)) out.push_back(&at(i));
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::size_t pushed_ = 0;
    std::vector<T> items_;
};

}  // namespace sfcp
