#pragma once

#include <optional>
#include <span>
#include <vector>

#include "flags/graph.hpp"
#include "flags/tensor.hpp"

namespace flags {

// One branch (global or local) of one query, as plain values.
struct BranchInputs {
    Tensor z_query;               // [embed_dim], unit norm
    std::vector<Tensor> positives;  // each [embed_dim], unit norm; non-empty
    Tensor negatives;             // [K x embed_dim], K may be 0
    double tau = 0.2;
};

// Throws ContractError on empty positives, tau <= 0, or a vector whose norm is
// off 1 by more than 1e-6; DimensionError on width mismatches.
void validate(const BranchInputs& inputs);

// The same branch over a batch, in a graph. z_query and every positives[j]
// are [batch x embed_dim]; row i of positives[j] is the j-th positive of
// query i. negatives is [K x embed_dim] and shared by the batch.
struct BranchVars {
    Var z_query;
    std::vector<Var> positives;
    Var negatives;
    double tau = 0.2;
};

enum class Reduction { sum, mean };

struct LossOptions {
    // Multiplies the local branch. Plain addition (1.0) is the default.
    double local_weight = 1.0;
    Reduction reduction = Reduction::sum;
};

// Per query i with positives P and queue Q:
//   -(1/|P|) sum_p log( e^{z.p/t} / (sum_{a in Q} e^{z.a/t} + e^{z.p/t}) )
// Each positive's denominator holds the queue plus only that positive.
// Returns the sum over the batch as a [1] node. Throws OverflowError when any
// |logit| exceeds kExpLimit; evaluation itself is max-shifted.
Var branch_loss(Graph& g, const BranchVars& branch, Reduction reduction = Reduction::sum);

// Global plus (weighted) local branch. Pass std::nullopt to disable the local
// branch entirely.
Var combined_loss(Graph& g, const BranchVars& global, const std::optional<BranchVars>& local,
                  const LossOptions& options = {});

// Value-level wrappers for a single query.
double branch_loss(const BranchInputs& inputs);
double combined_loss(const BranchInputs& global, const std::optional<BranchInputs>& local,
                     const LossOptions& options = {});

}  // namespace flags
