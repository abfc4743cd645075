#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "flags/tensor.hpp"

namespace flags {

enum class Branch { global, local };

std::string_view branch_name(Branch b);

// Fixed-capacity FIFO of unit-norm key embeddings, used as the negative set
// of one branch. Backed by a ring buffer of capacity x embed_dim doubles.
class KeyQueue {
public:
    static constexpr double kUnitTolerance = 1e-6;

    KeyQueue(std::size_t capacity, std::size_t embed_dim, Branch branch);

    // Appends keys in order, evicting the oldest entries beyond capacity.
    // `keys` is [n x embed_dim] (or [embed_dim] for one key). The batch is
    // validated before anything is written: DimensionError on a width
    // mismatch, ContractError when a key's norm is off 1 by more than 1e-6.
    void enqueue_batch(const Tensor& keys);

    // Entries oldest first, as an owned [size x embed_dim] matrix.
    Tensor negatives_matrix() const;

    std::span<const double> entry(std::size_t i) const;  // i-th oldest

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t embed_dim() const { return embed_dim_; }
    Branch branch() const { return branch_; }
    bool empty() const { return size_ == 0; }

    bool operator==(const KeyQueue& other) const;

private:
    std::size_t capacity_;
    std::size_t embed_dim_;
    Branch branch_;
    std::vector<double> storage_;
    std::size_t head_ = 0;  // slot of the oldest entry
    std::size_t size_ = 0;
};

}  // namespace flags
