#include "flags/loss.hpp"

#include <cmath>
#include <string>

#include "flags/error.hpp"

namespace flags {

namespace {

void require_unit(std::span<const double> v, const char* what) {
    const double n = norm(v);
    if (!(std::abs(n - 1.0) <= 1e-6)) {
        throw ContractError(std::string("branch inputs: ") + what + " has norm " +
                            std::to_string(n) + ", expected unit norm");
    }
}

void check_logits(const Tensor& logits) {
    for (double v : logits.values()) {
        if (!(std::abs(v) <= kExpLimit)) {
            throw OverflowError("contrastive loss: logit " + std::to_string(v) +
                                " exceeds the exp overflow guard; temperature too small");
        }
    }
}

Tensor as_row(const Tensor& v) { return Tensor::matrix(1, v.size(), v.data()); }

}  // namespace

void validate(const BranchInputs& in) {
    if (in.positives.empty()) {
        throw ContractError("branch inputs: positives must be non-empty");
    }
    if (!(in.tau > 0.0)) {
        throw ContractError("branch inputs: temperature must be positive");
    }
    const std::size_t d = in.z_query.size();
    require_unit(in.z_query.values(), "query embedding");
    for (const Tensor& p : in.positives) {
        if (p.size() != d) {
            throw DimensionError("branch inputs: positive of width " + std::to_string(p.size()) +
                                 ", query width " + std::to_string(d));
        }
        require_unit(p.values(), "positive");
    }
    if (in.negatives.size() > 0) {
        if (in.negatives.rank() != 2 || in.negatives.cols() != d) {
            throw DimensionError("branch inputs: negatives shape " +
                                 shape_string(in.negatives.shape()) + " incompatible with width " +
                                 std::to_string(d));
        }
        for (std::size_t r = 0; r < in.negatives.rows(); ++r) {
            require_unit(in.negatives.row(r), "negative");
        }
    }
}

Var branch_loss(Graph& g, const BranchVars& b, Reduction reduction) {
    if (b.positives.empty()) {
        throw ContractError("branch_loss: positives must be non-empty");
    }
    if (!(b.tau > 0.0)) {
        throw ContractError("branch_loss: temperature must be positive");
    }
    if (b.z_query.graph() != &g || b.negatives.graph() != &g) {
        throw ContractError("branch_loss: inputs were recorded on a different graph");
    }
    const Shape qs = b.z_query.shape();
    if (qs.size() != 2) {
        throw DimensionError("branch_loss: query block must be [batch x embed], got " +
                             shape_string(qs));
    }
    for (Var p : b.positives) {
        if (p.shape() != qs) {
            throw DimensionError("branch_loss: positive block " + shape_string(p.shape()) +
                                 " vs query block " + shape_string(qs));
        }
    }
    const double inv_tau = 1.0 / b.tau;
    Var neg_logits = scale(matmul_nt(b.z_query, b.negatives), inv_tau);  // [B x K]
    check_logits(neg_logits.value());

    Var total;
    for (Var p : b.positives) {
        Var pos_logit = scale(row_dot(b.z_query, p), inv_tau);  // [B x 1]
        check_logits(pos_logit.value());
        // -log(e^l / (S + e^l)) = logsumexp([l, negatives]) - l
        const Var cols[] = {pos_logit, neg_logits};
        Var term = sub(logsumexp_rows(concat(cols, 1)), pos_logit);
        total = total.graph() == nullptr ? term : add(total, term);
    }
    double factor = 1.0 / static_cast<double>(b.positives.size());
    if (reduction == Reduction::mean) {
        factor /= static_cast<double>(qs[0]);
    }
    return scale(sum(total), factor);
}

Var combined_loss(Graph& g, const BranchVars& global, const std::optional<BranchVars>& local,
                  const LossOptions& options) {
    Var total = branch_loss(g, global, options.reduction);
    if (local) {
        Var l = branch_loss(g, *local, options.reduction);
        total = add(total, options.local_weight == 1.0 ? l : scale(l, options.local_weight));
    }
    return total;
}

namespace {

BranchVars to_vars(Graph& g, const BranchInputs& in) {
    validate(in);
    BranchVars v;
    v.z_query = g.constant(as_row(in.z_query));
    for (const Tensor& p : in.positives) {
        v.positives.push_back(g.constant(as_row(p)));
    }
    v.negatives = g.constant(in.negatives.size() == 0 ? Tensor({0, in.z_query.size()})
                                                      : in.negatives);
    v.tau = in.tau;
    return v;
}

}  // namespace

double branch_loss(const BranchInputs& inputs) {
    Graph g;
    return branch_loss(g, to_vars(g, inputs)).value().item();
}

double combined_loss(const BranchInputs& global, const std::optional<BranchInputs>& local,
                     const LossOptions& options) {
    Graph g;
    std::optional<BranchVars> lv;
    if (local) {
        lv = to_vars(g, *local);
    }
    return combined_loss(g, to_vars(g, global), lv, options).value().item();
}

}  // namespace flags
