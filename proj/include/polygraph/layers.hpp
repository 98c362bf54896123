#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "polygraph/autodiff.hpp"
#include "polygraph/params.hpp"
#include "polygraph/rng.hpp"

namespace polygraph {

// ---------------------------------------------------------------------------
// Differentiable building blocks. Each layer exists twice: a graph-level
// builder (Var -> Var, used by models and training) and a plain tensor-level
// function with the same numerics for direct use and testing. The tensor
// surface simply runs the graph builder on constant leaves.
// ---------------------------------------------------------------------------

/// Per-frame attention weights of one clip. `scores` is a 1xN vector for
/// simple attention and an NqxNk row-stochastic matrix for dot-product.
struct AttentionTrace {
    enum class Kind { simple, dot_product };
    Kind kind = Kind::simple;
    Tensor scores;
    std::string clip_id;
};

// --- initialization ---------------------------------------------------------

inline Tensor glorot_uniform(int rows, int cols, SplitMix64& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    Tensor t({rows, cols});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-limit, limit);
    return t;
}

// --- LSTM / BiLSTM ----------------------------------------------------------

/// Gate-stacked weights for one direction; column blocks are
/// [input, forget, candidate, output], each `hidden` wide.
struct LstmDirParams {
    Tensor w;  // D x 4h
    Tensor u;  // h x 4h
    Tensor b;  // 1 x 4h
};

struct BiLstmParams {
    LstmDirParams fwd, bwd;
    int input_dim = 0;
    int hidden = 0;
};

/// Glorot weights, zero biases, forget-gate bias +1.
inline BiLstmParams make_bilstm_params(int input_dim, int hidden, SplitMix64& rng) {
    if (input_dim < 1 || hidden < 1) throw ConfigError("bilstm: widths must be positive");
    BiLstmParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    for (LstmDirParams* dir : {&p.fwd, &p.bwd}) {
        dir->w = glorot_uniform(input_dim, 4 * hidden, rng);
        dir->u = glorot_uniform(hidden, 4 * hidden, rng);
        dir->b = Tensor({1, 4 * hidden});
        for (int i = hidden; i < 2 * hidden; ++i) dir->b[i] = 1.0;
    }
    return p;
}

struct LstmDirRefs {
    Var w, u, b;
};

struct BiLstmRefs {
    LstmDirRefs fwd, bwd;
    int hidden = 0;
};

/// One LSTM direction over a TxD sequence; returns TxH hidden states aligned
/// to the original time order. `reverse` consumes the reversed sequence.
inline Var lstm_direction(const Var& x, const LstmDirRefs& p, int hidden, bool reverse) {
    int t_len = x.value().rows();
    Var pre = matmul(x, p.w);  // T x 4h, the input contribution of every step
    Var h = Var::constant(Tensor({1, hidden}));
    Var c = Var::constant(Tensor({1, hidden}));
    std::vector<Var> out(static_cast<size_t>(t_len));
    for (int step = 0; step < t_len; ++step) {
        int t = reverse ? t_len - 1 - step : step;
        Var gates = add(slice_rows(pre, t, 1), matmul(h, p.u));
        gates = add(gates, p.b);
        Var i = sigmoid(slice_cols(gates, 0, hidden));
        Var f = sigmoid(slice_cols(gates, hidden, hidden));
        Var g = tanh_op(slice_cols(gates, 2 * hidden, hidden));
        Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
        c = add(hadamard(f, c), hadamard(i, g));
        h = hadamard(o, tanh_op(c));
        out[static_cast<size_t>(t)] = h;
    }
    return stack_rows(out);
}

/// Concatenated forward and backward hidden states, T x 2h.
inline Var bilstm(const Var& x, const BiLstmRefs& p) {
    return concat_cols({lstm_direction(x, p.fwd, p.hidden, false),
                        lstm_direction(x, p.bwd, p.hidden, true)});
}

inline BiLstmRefs constant_refs(const BiLstmParams& p) {
    return BiLstmRefs{{Var::constant(p.fwd.w), Var::constant(p.fwd.u), Var::constant(p.fwd.b)},
                      {Var::constant(p.bwd.w), Var::constant(p.bwd.u), Var::constant(p.bwd.b)},
                      p.hidden};
}

inline Tensor bilstm_forward(const Tensor& x, const BiLstmParams& p) {
    if (x.rank() != 2 || x.cols() != p.input_dim) {
        throw ShapeError("bilstm_forward: input width " +
                         std::to_string(x.rank() == 2 ? x.cols() : -1) +
                         " does not match parameter width " + std::to_string(p.input_dim));
    }
    return bilstm(Var::constant(x), constant_refs(p)).value();
}

/// Single direction, exposed for the reversal symmetry property.
inline Tensor lstm_forward_single(const Tensor& x, const LstmDirParams& p, int hidden,
                                  bool reverse = false) {
    return lstm_direction(Var::constant(x), {Var::constant(p.w), Var::constant(p.u), Var::constant(p.b)},
                          hidden, reverse)
        .value();
}

// --- simple attention (tanh projection + softmax + weighted sum) -------------

/// W projects each d_model-wide state to a scalar; b is a trainable
/// per-position bias over the padded length N.
struct SimpleAttentionParams {
    Tensor w;  // d_model x 1
    Tensor b;  // N x 1
};

inline SimpleAttentionParams make_simple_attention_params(int d_model, int n_positions,
                                                          SplitMix64& rng) {
    SimpleAttentionParams p;
    p.w = glorot_uniform(d_model, 1, rng);
    p.b = Tensor({n_positions, 1});
    return p;
}

/// Returns (context 1xd, alpha 1xN). `valid` optionally masks padded steps.
inline std::pair<Var, Var> simple_attention_graph(const Var& v, const Var& w, const Var& b,
                                                  const std::vector<std::uint8_t>* valid = nullptr) {
    if (v.value().rows() != b.value().rows()) {
        throw ShapeError("simple_attention: bias has " + std::to_string(b.value().rows()) +
                         " positions but input has " + std::to_string(v.value().rows()) + " steps");
    }
    Var scores = add(tanh_op(matmul(v, w)), b);       // N x 1
    Var alpha = softmax_rows(transpose(scores), valid);  // 1 x N
    Var context = matmul(alpha, v);                   // 1 x d
    return {context, alpha};
}

inline std::pair<Tensor, AttentionTrace> simple_attention(const Tensor& v,
                                                          const SimpleAttentionParams& p) {
    if (v.rank() != 2 || v.cols() != p.w.rows()) {
        throw ShapeError("simple_attention: input width does not match W");
    }
    auto [context, alpha] =
        simple_attention_graph(Var::constant(v), Var::constant(p.w), Var::constant(p.b));
    AttentionTrace trace;
    trace.kind = AttentionTrace::Kind::simple;
    trace.scores = alpha.value();
    return {context.value(), trace};
}

// --- scaled dot-product attention --------------------------------------------

/// Returns (output Nq x d, scores Nq x Nk). Scores are softmax(QK^T/sqrt(d)).
inline std::pair<Var, Var> sdp_attention_graph(const Var& q, const Var& k, const Var& v,
                                               const std::vector<std::uint8_t>* valid = nullptr) {
    if (q.value().cols() != k.value().cols()) {
        throw ShapeError("sdp_attention: query width " + std::to_string(q.value().cols()) +
                         " != key width " + std::to_string(k.value().cols()));
    }
    if (k.value().rows() != v.value().rows()) {
        throw ShapeError("sdp_attention: key and value row counts differ");
    }
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.value().cols()));
    Var scores = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk), valid);
    Var out = matmul(scores, v);
    return {out, scores};
}

inline std::pair<Tensor, AttentionTrace> scaled_dot_product_attention(const Tensor& q,
                                                                      const Tensor& k,
                                                                      const Tensor& v) {
    auto [out, scores] =
        sdp_attention_graph(Var::constant(q), Var::constant(k), Var::constant(v));
    AttentionTrace trace;
    trace.kind = AttentionTrace::Kind::dot_product;
    trace.scores = scores.value();
    return {out.value(), trace};
}

// --- pooling -----------------------------------------------------------------

inline Var global_max_pool_graph(const Var& x) { return col_max(x); }

/// Column-wise maximum over the time axis, N x d -> d.
inline Tensor global_max_pool(const Tensor& x) {
    Tensor out = col_max(Var::constant(x)).value();
    return Tensor({out.cols()}, std::vector<double>(out.data(), out.data() + out.size()));
}

// --- residual + layer norm -----------------------------------------------------

constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer norm of (x + sub): zero mean / unit variance over the
/// feature axis, then scale by gain and add shift. Fused backward, verified
/// against the finite-difference oracle.
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& shift,
                           double eps = kLayerNormEps) {
    detail::check_rank2(x.value(), "layer_norm");
    int d = x.value().cols();
    if (gain.value().size() != d || shift.value().size() != d) {
        throw ShapeError("layer_norm: gain/shift width must equal feature width");
    }
    const Tensor& xv = x.value();
    int rows = xv.rows();
    Tensor out({rows, d});
    Tensor normalized({rows, d});
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += xv.at(r, c);
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            double dv = xv.at(r, c) - mean;
            var += dv * dv;
        }
        var /= d;
        double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = istd;
        for (int c = 0; c < d; ++c) {
            double nrm = (xv.at(r, c) - mean) * istd;
            normalized.at(r, c) = nrm;
            out.at(r, c) = nrm * gain.value()[c] + shift.value()[c];
        }
    }
    auto xn = x.node(), gn = gain.node(), sn = shift.node();
    return detail::make_node(
        std::move(out), {xn, gn, sn}, [xn, gn, sn, normalized, inv_std, d](Node& n) {
            int rows = n.grad.rows();
            for (int r = 0; r < rows; ++r) {
                if (gn->needs_grad) {
                    gn->ensure_grad();
                    for (int c = 0; c < d; ++c)
                        gn->grad[c] += n.grad.at(r, c) * normalized.at(r, c);
                }
                if (sn->needs_grad) {
                    sn->ensure_grad();
                    for (int c = 0; c < d; ++c) sn->grad[c] += n.grad.at(r, c);
                }
                if (xn->needs_grad) {
                    xn->ensure_grad();
                    // dL/dx = istd/d * (d*g - sum(g) - nrm * sum(g*nrm)),
                    // where g = dL/dy * gain.
                    double sum_g = 0.0, sum_gn = 0.0;
                    for (int c = 0; c < d; ++c) {
                        double g = n.grad.at(r, c) * gn->value[c];
                        sum_g += g;
                        sum_gn += g * normalized.at(r, c);
                    }
                    double istd = inv_std[static_cast<size_t>(r)];
                    for (int c = 0; c < d; ++c) {
                        double g = n.grad.at(r, c) * gn->value[c];
                        xn->grad.at(r, c) +=
                            istd * (g - (sum_g + normalized.at(r, c) * sum_gn) / d);
                    }
                }
            }
        });
}

inline Var residual_layer_norm_graph(const Var& x, const Var& sub, const Var& gain,
                                     const Var& shift) {
    return layer_norm_rows(add(x, sub), gain, shift);
}

inline Tensor residual_layer_norm(const Tensor& x, const Tensor& sub, const Tensor& gain,
                                  const Tensor& shift) {
    if (!x.same_shape(sub)) {
        throw ShapeError("residual_layer_norm: x " + x.shape_str() + " vs sub " + sub.shape_str());
    }
    return residual_layer_norm_graph(Var::constant(x), Var::constant(sub), Var::constant(gain),
                                     Var::constant(shift))
        .value();
}

// --- dense stack ---------------------------------------------------------------

/// Chain of affine+ReLU layers with the listed widths; optionally a final
/// affine to 2 units followed by softmax.
struct DenseStackParams {
    std::vector<Tensor> weights;  // layer i: in_i x out_i
    std::vector<Tensor> biases;   // 1 x out_i
    bool final_softmax = true;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& w : weights) n += w.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }
};

inline DenseStackParams make_dense_stack_params(int input_dim, const std::vector<int>& widths,
                                                bool final_softmax, SplitMix64& rng) {
    if (widths.empty()) throw ConfigError("dense_stack: widths must be non-empty");
    for (int w : widths) {
        if (w <= 0) throw ConfigError("dense_stack: width must be positive");
    }
    DenseStackParams p;
    p.final_softmax = final_softmax;
    int in = input_dim;
    for (int w : widths) {
        p.weights.push_back(glorot_uniform(in, w, rng));
        p.biases.push_back(Tensor({1, w}));
        in = w;
    }
    if (final_softmax) {
        p.weights.push_back(glorot_uniform(in, 2, rng));
        p.biases.push_back(Tensor({1, 2}));
    }
    return p;
}

inline Var dense_stack_graph(Var x, const std::vector<Var>& weights, const std::vector<Var>& biases,
                             bool final_softmax) {
    size_t hidden_layers = weights.size() - (final_softmax ? 1 : 0);
    for (size_t i = 0; i < hidden_layers; ++i) {
        x = relu(add_rowvec(matmul(x, weights[i]), biases[i]));
    }
    if (final_softmax) {
        x = softmax_rows(add_rowvec(matmul(x, weights.back()), biases.back()));
    }
    return x;
}

inline Tensor dense_stack(const Tensor& x, const DenseStackParams& p) {
    std::vector<Var> w, b;
    for (const auto& t : p.weights) w.push_back(Var::constant(t));
    for (const auto& t : p.biases) b.push_back(Var::constant(t));
    Tensor in = x.rank() == 1
                    ? Tensor({1, x.dim(0)}, std::vector<double>(x.data(), x.data() + x.size()))
                    : x;
    return dense_stack_graph(Var::constant(in), w, b, p.final_softmax).value();
}

}  // namespace polygraph
