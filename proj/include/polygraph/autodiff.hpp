#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polygraph/errors.hpp"
#include "polygraph/tensor.hpp"

namespace polygraph {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over a dynamically built graph.
//
// Every operation creates a node eagerly: the forward value is computed at
// construction and the node stores a closure that routes the output gradient
// to its inputs. backward() runs the closures in reverse topological order.
// Nodes are matrices (rank-2); scalars are 1x1. All arithmetic is double and
// strictly sequential, so identical inputs give bit-identical outputs.
// ---------------------------------------------------------------------------

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop;  // null for leaves/constants
    bool needs_grad = false;

    explicit Node(Tensor v) : value(std::move(v)) {}

    void ensure_grad() {
        if (grad.size() == 0) grad = Tensor(value.shape());
    }
};

/// Lightweight handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var constant(Tensor v) { return Var(std::make_shared<Node>(std::move(v))); }

    static Var leaf(Tensor v, bool requires_grad) {
        Var x(std::make_shared<Node>(std::move(v)));
        x.node_->needs_grad = requires_grad;
        return x;
    }

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool needs_grad() const { return node_->needs_grad; }
    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EMat> emap(const Tensor& t) {
    return Eigen::Map<const EMat>(t.data(), t.rows(), t.cols());
}

inline Eigen::Map<EMat> emap(Tensor& t) {
    return Eigen::Map<EMat>(t.data(), t.rows(), t.cols());
}

inline Var make_node(Tensor value, std::vector<NodePtr> inputs,
                     std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>(std::move(value));
    for (const auto& in : inputs) {
        if (in->needs_grad) {
            n->needs_grad = true;
            break;
        }
    }
    if (n->needs_grad) {
        n->inputs = std::move(inputs);
        n->backprop = std::move(backprop);
    }
    return Var(n);
}

inline void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": rank-2 tensor required, got " + t.shape_str());
}

}  // namespace detail

// --- elementwise and linear algebra ----------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    detail::check_rank2(a.value(), "matmul");
    detail::check_rank2(b.value(), "matmul");
    if (a.value().cols() != b.value().rows()) {
        throw ShapeError("matmul: inner dimensions differ: " + a.value().shape_str() +
                         " vs " + b.value().shape_str());
    }
    Tensor out({a.value().rows(), b.value().cols()});
    detail::emap(out).noalias() = detail::emap(a.value()) * detail::emap(b.value());
    auto an = a.node(), bn = b.node();
    return detail::make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            detail::emap(an->grad).noalias() +=
                detail::emap(n.grad) * detail::emap(bn->value).transpose();
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            detail::emap(bn->grad).noalias() +=
                detail::emap(an->value).transpose() * detail::emap(n.grad);
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError("add: shape mismatch " + a.value().shape_str() + " vs " +
                         b.value().shape_str());
    }
    Tensor out = a.value();
    const double* pb = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    auto an = a.node(), bn = b.node();
    return detail::make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        for (Node* in : {an.get(), bn.get()}) {
            if (!in->needs_grad) continue;
            in->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
        }
    });
}

/// MxN plus a 1xN row vector broadcast over the rows.
inline Var add_rowvec(const Var& a, const Var& b) {
    detail::check_rank2(a.value(), "add_rowvec");
    if (b.value().rows() != 1 || b.value().cols() != a.value().cols()) {
        throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(a.value().cols()) +
                         ", got " + b.value().shape_str());
    }
    Tensor out = a.value();
    const double* pb = b.value().data();
    int cols = out.cols();
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < cols; ++c) out.at(r, c) += pb[c];
    auto an = a.node(), bn = b.node();
    return detail::make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (int r = 0; r < n.grad.rows(); ++r)
                for (int c = 0; c < n.grad.cols(); ++c) bn->grad[c] += n.grad.at(r, c);
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError("sub: shape mismatch " + a.value().shape_str() + " vs " +
                         b.value().shape_str());
    }
    Tensor out = a.value();
    const double* pb = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
    auto an = a.node(), bn = b.node();
    return detail::make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
        }
    });
}

inline Var hadamard(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError("hadamard: shape mismatch " + a.value().shape_str() + " vs " +
                         b.value().shape_str());
    }
    Tensor out = a.value();
    const double* pb = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    auto an = a.node(), bn = b.node();
    return detail::make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                an->grad[i] += n.grad[i] * bn->value[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                bn->grad[i] += n.grad[i] * an->value[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an, c](Node& n) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) an->grad[i] += c * n.grad[i];
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double x = out[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an](Node& n) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) {
            double y = n.value[i];
            an->grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

inline Var tanh_op(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an](Node& n) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) {
            double y = n.value[i];
            an->grad[i] += n.grad[i] * (1.0 - y * y);
        }
    });
}

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an](Node& n) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += n.grad[i];
    });
}

inline Var transpose(const Var& a) {
    detail::check_rank2(a.value(), "transpose");
    Tensor out({a.value().cols(), a.value().rows()});
    detail::emap(out) = detail::emap(a.value()).transpose();
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an](Node& n) {
        an->ensure_grad();
        detail::emap(an->grad) += detail::emap(n.grad).transpose();
    });
}

// --- slicing / assembly -----------------------------------------------------

inline Var slice_rows(const Var& a, int from, int count) {
    detail::check_rank2(a.value(), "slice_rows");
    const Tensor& v = a.value();
    if (from < 0 || count <= 0 || from + count > v.rows()) {
        throw ShapeError("slice_rows: range out of bounds");
    }
    int c = v.cols();
    Tensor out({count, c});
    std::copy(v.data() + static_cast<std::int64_t>(from) * c,
              v.data() + static_cast<std::int64_t>(from + count) * c, out.data());
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an, from, c](Node& n) {
        an->ensure_grad();
        double* dst = an->grad.data() + static_cast<std::int64_t>(from) * c;
        for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    });
}

inline Var slice_cols(const Var& a, int from, int count) {
    detail::check_rank2(a.value(), "slice_cols");
    const Tensor& v = a.value();
    if (from < 0 || count <= 0 || from + count > v.cols()) {
        throw ShapeError("slice_cols: range out of bounds");
    }
    Tensor out({v.rows(), count});
    for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = v.at(r, from + c);
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an, from](Node& n) {
        an->ensure_grad();
        for (int r = 0; r < n.grad.rows(); ++r)
            for (int c = 0; c < n.grad.cols(); ++c)
                an->grad.at(r, from + c) += n.grad.at(r, c);
    });
}

/// Stack k row vectors (1xD each) into a kxD matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty input");
    int d = rows[0].value().cols();
    Tensor out({static_cast<int>(rows.size()), d});
    std::vector<NodePtr> ins;
    ins.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        const Tensor& r = rows[i].value();
        if (r.rows() != 1 || r.cols() != d) {
            throw ShapeError("stack_rows: all inputs must be 1x" + std::to_string(d));
        }
        std::copy(r.data(), r.data() + d, out.data() + static_cast<std::int64_t>(i) * d);
        ins.push_back(rows[i].node());
    }
    return detail::make_node(std::move(out), std::move(ins), [d](Node& n) {
        for (size_t i = 0; i < n.inputs.size(); ++i) {
            Node* in = n.inputs[i].get();
            if (!in->needs_grad) continue;
            in->ensure_grad();
            const double* src = n.grad.data() + static_cast<std::int64_t>(i) * d;
            for (int c = 0; c < d; ++c) in->grad[c] += src[c];
        }
    });
}

/// Concatenate matrices with equal row counts along the column axis.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    int r = parts[0].value().rows();
    int total = 0;
    std::vector<NodePtr> ins;
    std::vector<int> offsets;
    for (const Var& p : parts) {
        detail::check_rank2(p.value(), "concat_cols");
        if (p.value().rows() != r) throw ShapeError("concat_cols: row count mismatch");
        offsets.push_back(total);
        total += p.value().cols();
        ins.push_back(p.node());
    }
    Tensor out({r, total});
    for (size_t i = 0; i < parts.size(); ++i) {
        const Tensor& v = parts[i].value();
        for (int rr = 0; rr < r; ++rr)
            for (int cc = 0; cc < v.cols(); ++cc) out.at(rr, offsets[i] + cc) = v.at(rr, cc);
    }
    return detail::make_node(std::move(out), std::move(ins), [offsets](Node& n) {
        for (size_t i = 0; i < n.inputs.size(); ++i) {
            Node* in = n.inputs[i].get();
            if (!in->needs_grad) continue;
            in->ensure_grad();
            for (int rr = 0; rr < in->grad.rows(); ++rr)
                for (int cc = 0; cc < in->grad.cols(); ++cc)
                    in->grad.at(rr, cc) += n.grad.at(rr, offsets[i] + cc);
        }
    });
}

// --- reductions -------------------------------------------------------------

/// Column-wise maximum of an NxD matrix -> 1xD. Ties resolve to the first
/// (lowest-index) row, which also receives the whole gradient.
inline Var col_max(const Var& a) {
    detail::check_rank2(a.value(), "col_max");
    const Tensor& v = a.value();
    Tensor out({1, v.cols()});
    std::vector<int> argmax(static_cast<size_t>(v.cols()), 0);
    for (int c = 0; c < v.cols(); ++c) {
        double best = v.at(0, c);
        int bi = 0;
        for (int r = 1; r < v.rows(); ++r) {
            if (v.at(r, c) > best) {
                best = v.at(r, c);
                bi = r;
            }
        }
        out.at(0, c) = best;
        argmax[static_cast<size_t>(c)] = bi;
    }
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an, argmax](Node& n) {
        an->ensure_grad();
        for (int c = 0; c < n.grad.cols(); ++c)
            an->grad.at(argmax[static_cast<size_t>(c)], c) += n.grad.at(0, c);
    });
}

inline Var sum_all(const Var& a) {
    const Tensor& v = a.value();
    double s = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) s += v[i];
    auto an = a.node();
    return detail::make_node(Tensor::scalar(s), {an}, [an](Node& n) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0];
    });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

// --- softmax and losses -----------------------------------------------------

namespace detail {

/// Row-wise softmax with max subtraction. When `valid` is non-null, entries
/// whose flag is zero get probability exactly 0 and the rest renormalize.
inline Tensor softmax_rows_value(const Tensor& x, const std::vector<std::uint8_t>* valid) {
    check_rank2(x, "softmax");
    if (valid && static_cast<int>(valid->size()) != x.cols()) {
        throw ShapeError("softmax mask length does not match column count");
    }
    Tensor out(x.shape());
    for (int r = 0; r < x.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < x.cols(); ++c) {
            if (valid && !(*valid)[static_cast<size_t>(c)]) continue;
            m = std::max(m, x.at(r, c));
        }
        if (!std::isfinite(m)) throw ShapeError("softmax: no valid entries in row");
        double denom = 0.0;
        for (int c = 0; c < x.cols(); ++c) {
            if (valid && !(*valid)[static_cast<size_t>(c)]) {
                out.at(r, c) = 0.0;
                continue;
            }
            double e = std::exp(x.at(r, c) - m);
            out.at(r, c) = e;
            denom += e;
        }
        for (int c = 0; c < x.cols(); ++c) out.at(r, c) /= denom;
    }
    return out;
}

}  // namespace detail

inline Var softmax_rows(const Var& a, const std::vector<std::uint8_t>* valid = nullptr) {
    Tensor out = detail::softmax_rows_value(a.value(), valid);
    auto an = a.node();
    return detail::make_node(std::move(out), {an}, [an](Node& n) {
        // dx = (dy - sum(dy * y)) * y, row-wise; masked entries have y == 0.
        an->ensure_grad();
        for (int r = 0; r < n.grad.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < n.grad.cols(); ++c) dot += n.grad.at(r, c) * n.value.at(r, c);
            for (int c = 0; c < n.grad.cols(); ++c)
                an->grad.at(r, c) += (n.grad.at(r, c) - dot) * n.value.at(r, c);
        }
    });
}

constexpr double kProbFloor = 1e-12;

/// Mean negative log-probability of the true class. `probs` is Bx2 with rows
/// summing to 1; probabilities are clamped to [1e-12, 1] before the log.
inline Var cross_entropy_probs(const Var& probs, const std::vector<int>& labels) {
    const Tensor& p = probs.value();
    detail::check_rank2(p, "cross_entropy");
    if (p.cols() != 2) throw ShapeError("cross_entropy: expected Bx2 probabilities");
    if (static_cast<int>(labels.size()) != p.rows()) {
        throw ShapeError("cross_entropy: label count does not match batch size");
    }
    for (int label : labels) {
        if (label != 0 && label != 1) {
            throw DataError("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
        }
    }
    double loss = 0.0;
    for (int r = 0; r < p.rows(); ++r) {
        loss -= std::log(std::max(p.at(r, labels[static_cast<size_t>(r)]), kProbFloor));
    }
    loss /= p.rows();
    auto pn = probs.node();
    return detail::make_node(Tensor::scalar(loss), {pn}, [pn, labels](Node& n) {
        pn->ensure_grad();
        double inv_b = 1.0 / static_cast<double>(labels.size());
        for (int r = 0; r < pn->value.rows(); ++r) {
            double v = pn->value.at(r, labels[static_cast<size_t>(r)]);
            if (v > kProbFloor) {
                pn->grad.at(r, labels[static_cast<size_t>(r)]) -= n.grad[0] * inv_b / v;
            }
        }
    });
}

// --- backward ---------------------------------------------------------------

/// Seeds d(loss)/d(loss) = 1 and runs every reachable closure in reverse
/// topological order. The loss must be a 1x1 scalar.
inline void backward(const Var& loss) {
    if (loss.value().size() != 1) {
        throw NumericError("backward: loss must be scalar, got " + loss.value().shape_str());
    }
    // Iterative post-order DFS; recursion would overflow on long LSTM chains.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    Node* root = loss.node().get();
    if (!root->needs_grad) {
        root->ensure_grad();
        root->grad[0] = 1.0;
        return;
    }
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        Node* node = stack.back().first;
        size_t next = stack.back().second;
        if (next < node->inputs.size()) {
            stack.back().second = next + 1;
            Node* child = node->inputs[next].get();
            if (child->needs_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

// --- tensor-level surface ---------------------------------------------------

/// Softmax along the last axis of a rank-1 or rank-2 tensor.
inline Tensor softmax(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("softmax: empty tensor");
    if (x.rank() == 1) {
        Tensor as_row({1, x.dim(0)}, std::vector<double>(x.data(), x.data() + x.size()));
        Tensor r = detail::softmax_rows_value(as_row, nullptr);
        return Tensor({x.dim(0)}, std::vector<double>(r.data(), r.data() + r.size()));
    }
    return detail::softmax_rows_value(x, nullptr);
}

/// Mean negative log-probability of the true class, probabilities clamped to
/// [1e-12, 1] before the log. Rows of `probs` must sum to 1 within 1e-6.
inline double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    detail::check_rank2(probs, "cross_entropy");
    for (int r = 0; r < probs.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < probs.cols(); ++c) s += probs.at(r, c);
        if (std::abs(s - 1.0) > 1e-6) {
            throw NumericError("cross_entropy: row " + std::to_string(r) +
                               " does not sum to 1 (got " + std::to_string(s) + ")");
        }
    }
    Var p = Var::constant(probs);
    return cross_entropy_probs(p, labels).value()[0];
}

}  // namespace polygraph
