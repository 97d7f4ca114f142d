#pragma once

// Layer-level compositions over the tape primitives: affine layers,
// im2col convolutions, the LSTM cell, pre-LN causal attention blocks and
// the cross-entropy pieces the training loops consume.

#include <memory>

#include "gridhack/nn/tensor.hpp"

namespace gridhack::nn {

template <typename S>
Tensor<S> linear(Tensor<S> x, Tensor<S> w, Tensor<S> b) {
    return add_rowvec(matmul(x, w), b);
}

// ---- initialization ----

template <typename S>
void fill_uniform(Param<S>& p, double lo, double hi, Rng& rng) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value(i) = S(lo + (hi - lo) * rng.next_double());
    }
}

// Uniform fan-in scaling, the project-wide default for affine weights.
template <typename S>
void init_fan_in(Param<S>& p, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(p, -bound, bound, rng);
}

// ---- convolution via im2col ----

struct ConvDims {
    int channels = 1;
    int height = 1;   // 1 for conv1d
    int width = 1;    // length for conv1d
    int kernel_h = 1;
    int kernel_w = 1;
    int pad_h = 0;
    int pad_w = 0;

    int out_h() const { return height + 2 * pad_h - kernel_h + 1; }
    int out_w() const { return width + 2 * pad_w - kernel_w + 1; }
};

// Builds the gather map from [N, C*H*W] to [N*OH*OW, C*KH*KW]; -1 marks
// zero padding.
inline std::shared_ptr<std::vector<std::int64_t>> im2col_map(int batch, const ConvDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    auto map = std::make_shared<std::vector<std::int64_t>>();
    map->reserve(static_cast<std::size_t>(batch) * oh * ow * d.channels * d.kernel_h * d.kernel_w);
    for (int n = 0; n < batch; ++n) {
        const std::int64_t base = static_cast<std::int64_t>(n) * d.channels * d.height * d.width;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                for (int c = 0; c < d.channels; ++c) {
                    for (int ky = 0; ky < d.kernel_h; ++ky) {
                        for (int kx = 0; kx < d.kernel_w; ++kx) {
                            const int y = oy + ky - d.pad_h;
                            const int x = ox + kx - d.pad_w;
                            if (y < 0 || y >= d.height || x < 0 || x >= d.width) {
                                map->push_back(-1);
                            } else {
                                map->push_back(base +
                                               (static_cast<std::int64_t>(c) * d.height + y) *
                                                   d.width +
                                               x);
                            }
                        }
                    }
                }
            }
        }
    }
    return map;
}

// x: [N, C*H*W] (channel-major rows), kernel: [C*KH*KW, F], bias: [F].
// Returns [N, F*OH*OW].
template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> kernel, Tensor<S> bias, const ConvDims& d) {
    const int batch = x.rows();
    if (x.cols() != d.channels * d.height * d.width) {
        throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) +
                                    " does not match dims C*H*W = " +
                                    std::to_string(d.channels * d.height * d.width));
    }
    const int oh = d.out_h(), ow = d.out_w();
    const int patch = d.channels * d.kernel_h * d.kernel_w;
    auto map = im2col_map(batch, d);
    Tensor<S> cols = index_select_flat(x, map, Shape{batch * oh * ow, patch});
    Tensor<S> out = linear(cols, kernel, bias);  // [N*OH*OW, F]
    const int f = kernel.cols();
    // Permute [N*OH*OW, F] -> [N, F*OH*OW] so channels stay row-major.
    auto perm = std::make_shared<std::vector<std::int64_t>>();
    perm->reserve(static_cast<std::size_t>(batch) * f * oh * ow);
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < f; ++c) {
            for (int p = 0; p < oh * ow; ++p) {
                perm->push_back((static_cast<std::int64_t>(n) * oh * ow + p) * f + c);
            }
        }
    }
    return index_select_flat(out, perm, Shape{batch, f * oh * ow});
}

template <typename S>
Tensor<S> conv1d(Tensor<S> x, Tensor<S> kernel, Tensor<S> bias, int channels, int length,
                 int kernel_w, int pad) {
    ConvDims d;
    d.channels = channels;
    d.height = 1;
    d.width = length;
    d.kernel_h = 1;
    d.kernel_w = kernel_w;
    d.pad_w = pad;
    return conv2d(x, kernel, bias, d);
}

// ---- LSTM cell ----

template <typename S>
struct LstmWeights {
    Tensor<S> wx;  // [Din, 4H], gate order i, f, g, o
    Tensor<S> wh;  // [H, 4H]
    Tensor<S> b;   // [4H]
};

template <typename S>
struct LstmState {
    Tensor<S> h;
    Tensor<S> c;
};

template <typename S>
LstmState<S> lstm_cell(Tensor<S> x, LstmState<S> state, const LstmWeights<S>& w, int hidden) {
    Tensor<S> gates = add(matmul(x, w.wx), linear(state.h, w.wh, w.b));
    Tensor<S> i = sigmoid(slice_cols(gates, 0, hidden));
    Tensor<S> f = sigmoid(slice_cols(gates, hidden, 2 * hidden));
    Tensor<S> g = tanh_op(slice_cols(gates, 2 * hidden, 3 * hidden));
    Tensor<S> o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
    Tensor<S> c = add(mul(f, state.c), mul(i, g));
    Tensor<S> h = mul(o, tanh_op(c));
    return {h, c};
}

// ---- causal multi-head attention (pre-LN transformer block) ----

template <typename S>
struct AttentionWeights {
    Tensor<S> ln1_g, ln1_b;
    Tensor<S> wq, wk, wv, wo;  // [D, D]
    Tensor<S> bq, bk, bv, bo;  // [D]
    Tensor<S> ln2_g, ln2_b;
    Tensor<S> w_ff1, b_ff1;  // [D, FF], [FF]
    Tensor<S> w_ff2, b_ff2;  // [FF, D], [D]
};

// x holds B sequences of length T stacked row-wise: [B*T, D]. Causal
// masking hides positions j > i within each sequence.
template <typename S>
Tensor<S> transformer_block(Tensor<S> x, const AttentionWeights<S>& w, int batch, int seq,
                            int heads, double dropout_p, Rng& rng, bool training) {
    const int dim = x.cols();
    if (dim % heads != 0) throw std::invalid_argument("transformer_block: heads must divide dim");
    const int dh = dim / heads;
    Tape<S>* tape = x.tape;

    Tensor<S> xn = layer_norm(x, w.ln1_g, w.ln1_b);
    Tensor<S> q = linear(xn, w.wq, w.bq);
    Tensor<S> k = linear(xn, w.wk, w.bk);
    Tensor<S> v = linear(xn, w.wv, w.bv);

    // Additive causal mask, shared by every (batch, head) pair.
    ArrayX<S> mask_data(static_cast<std::int64_t>(seq) * seq);
    for (int i = 0; i < seq; ++i) {
        for (int j = 0; j < seq; ++j) {
            mask_data(static_cast<std::int64_t>(i) * seq + j) = j <= i ? S(0) : S(-1e9);
        }
    }
    Tensor<S> mask = tape->constant({seq, seq}, std::move(mask_data));

    std::vector<Tensor<S>> batch_rows;
    batch_rows.reserve(batch);
    const S inv_sqrt_dh = S(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int b = 0; b < batch; ++b) {
        Tensor<S> qb = slice_rows(q, b * seq, (b + 1) * seq);
        Tensor<S> kb = slice_rows(k, b * seq, (b + 1) * seq);
        Tensor<S> vb = slice_rows(v, b * seq, (b + 1) * seq);
        std::vector<Tensor<S>> head_ctx;
        head_ctx.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(qb, h * dh, (h + 1) * dh);
            Tensor<S> kh = slice_cols(kb, h * dh, (h + 1) * dh);
            Tensor<S> vh = slice_cols(vb, h * dh, (h + 1) * dh);
            Tensor<S> scores = add(scale(matmul_nt(qh, kh), inv_sqrt_dh), mask);
            Tensor<S> probs = softmax_rows(scores);
            probs = dropout(probs, dropout_p, rng, training);
            head_ctx.push_back(matmul(probs, vh));
        }
        batch_rows.push_back(concat_cols(head_ctx));
    }
    Tensor<S> ctx = batch_rows.size() == 1 ? batch_rows[0] : concat_rows(batch_rows);

    Tensor<S> attn_out = linear(ctx, w.wo, w.bo);
    attn_out = dropout(attn_out, dropout_p, rng, training);
    Tensor<S> h1 = add(x, attn_out);

    Tensor<S> hn = layer_norm(h1, w.ln2_g, w.ln2_b);
    Tensor<S> ff = linear(hn, w.w_ff1, w.b_ff1);
    ff = gelu(ff);
    ff = linear(ff, w.w_ff2, w.b_ff2);
    ff = dropout(ff, dropout_p, rng, training);
    return add(h1, ff);
}

// Sinusoidal positional encoding rows [seq, dim] as a tape constant.
template <typename S>
Tensor<S> positional_encoding(Tape<S>& tape, int seq, int dim) {
    ArrayX<S> pe(static_cast<std::int64_t>(seq) * dim);
    for (int p = 0; p < seq; ++p) {
        for (int i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(dim));
            const double angle = p * rate;
            pe(static_cast<std::int64_t>(p) * dim + i) =
                S(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return tape.constant({seq, dim}, std::move(pe));
}

// ---- loss pieces ----

// Sum over masked rows of -log softmax(logits)[row, label]; returns the
// scalar sum so callers can make sample-weighted virtual batches.
template <typename S>
Tensor<S> cross_entropy_sum(Tensor<S> logits, std::shared_ptr<const std::vector<int>> labels,
                            Tensor<S> mask_col) {
    Tensor<S> lsm = log_softmax_rows(logits);
    Tensor<S> picked = gather_cols(lsm, labels);
    Tensor<S> masked = mul(picked, mask_col);
    return neg(sum_all(masked));
}

// Mean entropy of softmax(logits) over masked rows (mask weights sum is
// passed by the caller).
template <typename S>
Tensor<S> entropy_sum(Tensor<S> logits, Tensor<S> mask_col) {
    Tensor<S> lsm = log_softmax_rows(logits);
    Tensor<S> p = softmax_rows(logits);
    Tensor<S> plogp = mul(p, lsm);
    // Row-wise sum: multiply by ones and reduce via matmul with a column
    // of ones would add nodes; sum over all after masking rows instead.
    Tensor<S> masked = mul_colvec(plogp, mask_col);
    return neg(sum_all(masked));
}

}  // namespace gridhack::nn
