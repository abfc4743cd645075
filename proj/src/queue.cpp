#include "flags/queue.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flags/error.hpp"

namespace flags {

std::string_view branch_name(Branch b) { return b == Branch::global ? "global" : "local"; }

KeyQueue::KeyQueue(std::size_t capacity, std::size_t embed_dim, Branch branch)
    : capacity_(capacity), embed_dim_(embed_dim), branch_(branch), storage_(capacity * embed_dim) {
    if (capacity == 0) {
        throw ConfigError("KeyQueue: capacity must be positive");
    }
    if (embed_dim == 0) {
        throw ConfigError("KeyQueue: embed_dim must be positive");
    }
}

void KeyQueue::enqueue_batch(const Tensor& keys) {
    if (keys.empty()) {
        return;
    }
    if (keys.cols() != embed_dim_) {
        throw DimensionError("KeyQueue::enqueue_batch: key width " + std::to_string(keys.cols()) +
                             " does not match embed_dim " + std::to_string(embed_dim_));
    }
    const std::size_t n = keys.rows();
    for (std::size_t r = 0; r < n; ++r) {
        const double nrm = norm(keys.row(r));
        if (!(std::abs(nrm - 1.0) <= kUnitTolerance)) {
            throw ContractError("KeyQueue::enqueue_batch: key " + std::to_string(r) +
                                " has norm " + std::to_string(nrm) + ", expected unit norm");
        }
    }
    // Only the last `capacity` keys of an oversized batch can survive.
    const std::size_t first = n > capacity_ ? n - capacity_ : 0;
    for (std::size_t r = first; r < n; ++r) {
        const std::size_t slot = (head_ + size_) % capacity_;
        std::copy_n(keys.row(r).begin(), embed_dim_, storage_.begin() + slot * embed_dim_);
        if (size_ < capacity_) {
            ++size_;
        } else {
            head_ = (head_ + 1) % capacity_;
        }
    }
}

std::span<const double> KeyQueue::entry(std::size_t i) const {
    const std::size_t slot = (head_ + i) % capacity_;
    return std::span<const double>(storage_).subspan(slot * embed_dim_, embed_dim_);
}

Tensor KeyQueue::negatives_matrix() const {
    Tensor out({size_, embed_dim_});
    for (std::size_t i = 0; i < size_; ++i) {
        std::copy_n(entry(i).begin(), embed_dim_, out.row(i).begin());
    }
    return out;
}

bool KeyQueue::operator==(const KeyQueue& other) const {
    return capacity_ == other.capacity_ && embed_dim_ == other.embed_dim_ &&
           branch_ == other.branch_ && negatives_matrix() == other.negatives_matrix();
}

}  // namespace flags
