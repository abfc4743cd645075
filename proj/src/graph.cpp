#include "flags/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flags/error.hpp"

namespace flags {

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::check(Var v) const {
    if (v.graph_ != this || v.id_ >= nodes_.size()) {
        throw ContractError("Graph: variable does not belong to this graph");
    }
    return v;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) {
        needs = needs || nodes_[check(p).id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs ? std::move(backward) : nullptr, needs});
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var output) {
    check(output);
    const Tensor& out = nodes_[output.id_].value;
    if (out.size() != 1) {
        throw ContractError("backward: output must be a scalar, got shape " +
                            shape_string(out.shape()));
    }
    for (Node& n : nodes_) {
        n.grad = Tensor(n.value.shape());
    }
    nodes_[output.id_].grad[0] = 1.0;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward) {
            // Closures only write to parents (lower ids), never to n itself.
            n.backward(*this, n.grad);
        }
    }
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = nodes_[check(v).id_];
    if (n.grad.shape() != n.value.shape()) {
        throw ContractError("Graph::grad: backward() has not been run");
    }
    return n.grad;
}

void Graph::add_grad(Var target, const Tensor& g) {
    std::span<double> buf = grad_buffer(target);
    if (buf.empty()) {
        return;
    }
    if (buf.size() != g.size()) {
        throw DimensionError("add_grad: gradient shape " + shape_string(g.shape()) +
                             " does not match node shape " +
                             shape_string(nodes_[target.id_].value.shape()));
    }
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] += g[i];
    }
}

std::span<double> Graph::grad_buffer(Var target) {
    Node& n = nodes_[check(target).id_];
    if (!n.requires_grad) {
        return {};
    }
    return n.grad.values();
}

namespace {

Graph& same_graph(Var a, Var b) {
    if (a.graph() == nullptr || a.graph() != b.graph()) {
        throw ContractError("op: operands belong to different graphs");
    }
    return *a.graph();
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " +
                             shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
}

// out[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            out[i * n + j] += s;
        }
    }
}

// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            double* orow = out.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    const std::size_t m = av.shape()[0];
    const std::size_t k = av.shape()[1];
    const std::size_t n = bv.shape()[1];
    if (bv.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(av.shape()) +
                             " x " + shape_string(bv.shape()));
    }
    Tensor out({m, n});
    gemm_nn(av.values(), bv.values(), out.values(), m, k, n);
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b, m, k, n](Graph& gr, const Tensor& go) {
        // dA = dOut * B^T, dB = A^T * dOut
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            gemm_nt(go.values(), b.value().values(), da, m, n, k);
        }
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            gemm_tn(a.value().values(), go.values(), db, m, k, n);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "matmul_nt");
    require_rank2(bv, "matmul_nt");
    const std::size_t m = av.shape()[0];
    const std::size_t k = av.shape()[1];
    const std::size_t n = bv.shape()[0];
    if (bv.shape()[1] != k) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_string(av.shape()) +
                             " x " + shape_string(bv.shape()) + "^T");
    }
    Tensor out({m, n});
    gemm_nt(av.values(), bv.values(), out.values(), m, k, n);
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b, m, k, n](Graph& gr, const Tensor& go) {
        // dA = dOut * B, dB = dOut^T * A
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            gemm_nn(go.values(), b.value().values(), da, m, n, k);
        }
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            gemm_tn(go.values(), a.value().values(), db, m, n, k);
        }
    });
}

Var add(Var a, Var b) {
    Graph& g = same_graph(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b.value()[i];
    }
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b](Graph& gr, const Tensor& go) {
        gr.add_grad(a, go);
        gr.add_grad(b, go);
    });
}

Var sub(Var a, Var b) {
    Graph& g = same_graph(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= b.value()[i];
    }
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b](Graph& gr, const Tensor& go) {
        gr.add_grad(a, go);
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] -= go[i];
            }
        }
    });
}

Var mul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += go[i] * b.value()[i];
            }
        }
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] += go[i] * a.value()[i];
            }
        }
    });
}

Var scale(Var a, double factor) {
    Graph& g = *a.graph();
    Tensor out = a.value();
    for (double& v : out.values()) {
        v *= factor;
    }
    const Var parents[] = {a};
    return g.record(std::move(out), parents, [a, factor](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += factor * go[i];
            }
        }
    });
}

Var add_bias(Var a, Var bias) {
    Graph& g = same_graph(a, bias);
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    if (bv.rank() != 1 || av.cols() != bv.size()) {
        throw DimensionError("add_bias: cannot broadcast " + shape_string(bv.shape()) +
                             " over rows of " + shape_string(av.shape()));
    }
    const std::size_t rows = av.rows();
    const std::size_t cols = av.cols();
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] += bv[c];
        }
    }
    const Var parents[] = {a, bias};
    return g.record(std::move(out), parents, [a, bias, rows, cols](Graph& gr, const Tensor& go) {
        gr.add_grad(a, go);
        if (auto db = gr.grad_buffer(bias); !db.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    db[c] += go[r * cols + c];
                }
            }
        }
    });
}

Var relu(Var a) {
    Graph& g = *a.graph();
    Tensor out = a.value();
    for (double& v : out.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    const Var parents[] = {a};
    return g.record(std::move(out), parents, [a](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            const Tensor& x = a.value();
            for (std::size_t i = 0; i < da.size(); ++i) {
                if (x[i] > 0.0) {
                    da[i] += go[i];
                }
            }
        }
    });
}

Var exp(Var a) {
    Graph& g = *a.graph();
    Tensor out = a.value();
    for (double& v : out.values()) {
        if (v > kExpLimit) {
            throw OverflowError("exp: argument " + std::to_string(v) + " exceeds overflow guard " +
                                std::to_string(kExpLimit));
        }
        v = std::exp(v);
    }
    const Var parents[] = {a};
    return g.record(std::move(out), parents, [a](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            const Tensor& x = a.value();
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += go[i] * std::exp(x[i]);
            }
        }
    });
}

Var log(Var a) {
    Graph& g = *a.graph();
    Tensor out = a.value();
    for (double& v : out.values()) {
        if (!(v > 0.0)) {
            throw NumericError("log: non-positive argument " + std::to_string(v));
        }
        v = std::log(v);
    }
    const Var parents[] = {a};
    return g.record(std::move(out), parents, [a](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            const Tensor& x = a.value();
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += go[i] / x[i];
            }
        }
    });
}

Var dot(Var a, Var b) {
    Graph& g = same_graph(a, b);
    if (a.value().rank() != 1 || b.value().rank() != 1) {
        throw DimensionError("dot: expected vectors, got " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    require_same_shape(a.value(), b.value(), "dot");
    Tensor out = Tensor::scalar(flags::dot(a.value().values(), b.value().values()));
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b](Graph& gr, const Tensor& go) {
        const double s = go[0];
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += s * b.value()[i];
            }
        }
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] += s * a.value()[i];
            }
        }
    });
}

Var row_dot(Var a, Var b) {
    Graph& g = same_graph(a, b);
    require_rank2(a.value(), "row_dot");
    require_same_shape(a.value(), b.value(), "row_dot");
    const std::size_t rows = a.value().rows();
    const std::size_t cols = a.value().cols();
    Tensor out({rows, 1});
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = flags::dot(a.value().row(r), b.value().row(r));
    }
    const Var parents[] = {a, b};
    return g.record(std::move(out), parents, [a, b, rows, cols](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    da[r * cols + c] += go[r] * b.value()[r * cols + c];
                }
            }
        }
        if (auto db = gr.grad_buffer(b); !db.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    db[r * cols + c] += go[r] * a.value()[r * cols + c];
                }
            }
        }
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ContractError("concat: no inputs");
    }
    Graph& g = *parts.front().graph();
    for (Var p : parts) {
        same_graph(parts.front(), p);
    }
    const std::size_t rank = parts.front().value().rank();
    for (Var p : parts) {
        if (p.value().rank() != rank) {
            throw DimensionError("concat: mixed ranks");
        }
    }
    if (rank == 1 || (rank == 2 && axis == 0)) {
        // Contiguous blocks: rank 1 or row stacking.
        std::size_t cols = rank == 2 ? parts.front().value().cols() : 0;
        std::size_t rows = 0;
        std::vector<double> values;
        for (Var p : parts) {
            if (rank == 2 && p.value().cols() != cols) {
                throw DimensionError("concat: column count mismatch " +
                                     shape_string(parts.front().shape()) + " vs " +
                                     shape_string(p.shape()));
            }
            rows += rank == 2 ? p.value().rows() : p.value().size();
            values.insert(values.end(), p.value().data().begin(), p.value().data().end());
        }
        Shape shape = rank == 1 ? Shape{rows} : Shape{rows, cols};
        std::vector<Var> saved(parts.begin(), parts.end());
        return g.record(Tensor(std::move(shape), std::move(values)), parts,
                        [saved](Graph& gr, const Tensor& go) {
                            std::size_t offset = 0;
                            for (Var p : saved) {
                                const std::size_t n = p.value().size();
                                if (auto dp = gr.grad_buffer(p); !dp.empty()) {
                                    for (std::size_t i = 0; i < n; ++i) {
                                        dp[i] += go[offset + i];
                                    }
                                }
                                offset += n;
                            }
                        });
    }
    if (rank != 2 || axis != 1) {
        throw DimensionError("concat: unsupported axis " + std::to_string(axis) + " for rank " +
                             std::to_string(rank));
    }
    const std::size_t rows = parts.front().value().rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (p.value().rows() != rows) {
            throw DimensionError("concat: row count mismatch " +
                                 shape_string(parts.front().shape()) + " vs " +
                                 shape_string(p.shape()));
        }
        cols += p.value().cols();
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (Var p : parts) {
        const std::size_t pc = p.value().cols();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(p.value().row(r).begin(), pc, out.row(r).begin() + offset);
        }
        offset += pc;
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return g.record(std::move(out), parts, [saved, rows, cols](Graph& gr, const Tensor& go) {
        std::size_t offset = 0;
        for (Var p : saved) {
            const std::size_t pc = p.value().cols();
            if (auto dp = gr.grad_buffer(p); !dp.empty()) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < pc; ++c) {
                        dp[r * pc + c] += go[r * cols + offset + c];
                    }
                }
            }
            offset += pc;
        }
    });
}

Var sum(Var a) {
    Graph& g = *a.graph();
    double s = 0.0;
    for (double v : a.value().values()) {
        s += v;
    }
    const Var parents[] = {a};
    return g.record(Tensor::scalar(s), parents, [a](Graph& gr, const Tensor& go) {
        if (auto da = gr.grad_buffer(a); !da.empty()) {
            for (double& d : da) {
                d += go[0];
            }
        }
    });
}

Var logsumexp_rows(Var a) {
    Graph& g = *a.graph();
    const Tensor& x = a.value();
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    if (cols == 0) {
        throw DimensionError("logsumexp_rows: empty rows");
    }
    Tensor out = x.rank() == 1 ? Tensor({1}) : Tensor({rows, 1});
    // Softmax weights are kept for the backward pass.
    Tensor weights({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = x.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = std::exp(row[c] - mx);
            weights[r * cols + c] = e;
            s += e;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            weights[r * cols + c] /= s;
        }
        out[r] = mx + std::log(s);
    }
    const Var parents[] = {a};
    return g.record(std::move(out), parents,
                    [a, weights = std::move(weights), rows, cols](Graph& gr, const Tensor& go) {
                        if (auto da = gr.grad_buffer(a); !da.empty()) {
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < cols; ++c) {
                                    da[r * cols + c] += go[r] * weights[r * cols + c];
                                }
                            }
                        }
                    });
}

Var l2_normalize(Var a, double epsilon) {
    Graph& g = *a.graph();
    const Tensor& x = a.value();
    if (x.size() == 0) {
        throw DimensionError("l2_normalize: empty input");
    }
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Tensor out = x;
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double n = norm(x.row(r));
        if (!(n > epsilon)) {
            throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                        std::to_string(n) + " <= epsilon " +
                                        std::to_string(epsilon));
        }
        norms[r] = n;
        for (double& v : out.row(r)) {
            v /= n;
        }
    }
    Tensor saved_out = out;
    const Var parents[] = {a};
    return g.record(std::move(out), parents,
                    [a, y = std::move(saved_out), norms = std::move(norms), rows, cols](
                        Graph& gr, const Tensor& go) {
                        // d(x/|x|) = (I - y y^T) / |x|
                        if (auto da = gr.grad_buffer(a); !da.empty()) {
                            for (std::size_t r = 0; r < rows; ++r) {
                                const double* yr = y.values().data() + r * cols;
                                const double* gr_ = go.values().data() + r * cols;
                                double proj = 0.0;
                                for (std::size_t c = 0; c < cols; ++c) {
                                    proj += yr[c] * gr_[c];
                                }
                                for (std::size_t c = 0; c < cols; ++c) {
                                    da[r * cols + c] += (gr_[c] - proj * yr[c]) / norms[r];
                                }
                            }
                        }
                    });
}

}  // namespace flags
