#pragma once

// Model building blocks shared by the teacher and both students: parameter
// initialization, linear / embedding / LSTM / transformer layers, the
// supervised loss primitives, and padded-batch materialization.

#include <cmath>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/random.hpp"
#include "mtkd/tensor.hpp"
#include "mtkd/tokenize.hpp"

namespace mtkd {

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights, zeros for biases.
template <typename S>
Tensor<S> init_weight(Shape shape, size_t fan_in, Rng& rng, std::string name) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<S> d(numel(shape));
    for (auto& x : d) x = static_cast<S>(uniform_range(rng, -bound, bound));
    return Tensor<S>::param(std::move(shape), std::move(d), std::move(name));
}

template <typename S>
Tensor<S> init_zeros(Shape shape, std::string name) {
    return Tensor<S>::param(std::move(shape), std::vector<S>(numel(shape), S(0)),
                            std::move(name));
}

template <typename S>
Tensor<S> init_ones(Shape shape, std::string name) {
    return Tensor<S>::param(std::move(shape), std::vector<S>(numel(shape), S(1)),
                            std::move(name));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct Linear {
    Tensor<S> w; // (in, out)
    Tensor<S> b; // (out), absent when constructed without bias
    bool has_bias = true;

    Linear() = default;
    Linear(size_t in, size_t out, bool bias, Rng& rng, const std::string& name)
        : w(init_weight<S>({in, out}, in, rng, name + "/w")), has_bias(bias) {
        if (bias) b = init_zeros<S>({out}, name + "/b");
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> y = matmul(x, w);
        return has_bias ? add(y, b) : y;
    }

    void collect(std::vector<Tensor<S>>& out) const {
        out.push_back(w);
        if (has_bias) out.push_back(b);
    }
};

// Token + segment + position embedding sum; parameters live under "embed/"
// so count_parameters can exclude them.
template <typename S>
struct EmbeddingLayer {
    Tensor<S> tok, seg, pos;

    EmbeddingLayer() = default;
    EmbeddingLayer(size_t vocab, size_t dim, size_t max_seq_len, Rng& rng,
                   const std::string& name)
        : tok(init_weight<S>({vocab, dim}, dim, rng, name + "/embed/tok")),
          seg(init_weight<S>({2, dim}, dim, rng, name + "/embed/seg")),
          pos(init_weight<S>({max_seq_len, dim}, dim, rng, name + "/embed/pos")) {}

    Tensor<S> forward(const IntMat& tokens, const IntMat& segments) const {
        size_t T = tokens.cols;
        if (T > pos.shape()[0])
            fail("tensor", "sequence length " + std::to_string(T) +
                               " exceeds position table of " + std::to_string(pos.shape()[0]));
        Tensor<S> e = add(embed_lookup(tok, tokens), embed_lookup(seg, segments));
        return add(e, slice(pos, 0, 0, T)); // (T,d) broadcasts over the batch
    }

    void collect(std::vector<Tensor<S>>& out) const {
        out.push_back(tok);
        out.push_back(seg);
        out.push_back(pos);
    }
};

template <typename S>
struct LstmCell {
    Tensor<S> wx, wh, b_ih, b_hh; // (in,4H),(H,4H),(4H),(4H); gate order i,f,g,o
    size_t hidden = 0;

    LstmCell() = default;
    LstmCell(size_t in, size_t h, Rng& rng, const std::string& name)
        : wx(init_weight<S>({in, 4 * h}, in, rng, name + "/wx")),
          wh(init_weight<S>({h, 4 * h}, h, rng, name + "/wh")),
          b_ih(init_zeros<S>({4 * h}, name + "/b_ih")),
          b_hh(init_zeros<S>({4 * h}, name + "/b_hh")),
          hidden(h) {}

    // x (B,T,in) -> hidden states (B,T,H); runs through padded positions,
    // which downstream masking ignores.
    Tensor<S> forward(const Tensor<S>& x) const {
        size_t B = x.shape()[0], T = x.shape()[1], in = x.shape()[2];
        size_t H = hidden;
        Tensor<S> h = Tensor<S>::zeros({B, H});
        Tensor<S> c = Tensor<S>::zeros({B, H});
        std::vector<Tensor<S>> outs;
        outs.reserve(T);
        for (size_t t = 0; t < T; ++t) {
            Tensor<S> xt = reshape(slice(x, 1, t, 1), {B, in});
            Tensor<S> gates =
                add(add(add(matmul(xt, wx), matmul(h, wh)), b_ih), b_hh); // (B,4H)
            Tensor<S> ig = sigmoid(slice(gates, 1, 0, H));
            Tensor<S> fg = sigmoid(slice(gates, 1, H, H));
            Tensor<S> gg = tanh(slice(gates, 1, 2 * H, H));
            Tensor<S> og = sigmoid(slice(gates, 1, 3 * H, H));
            c = add(mul(fg, c), mul(ig, gg));
            h = mul(og, tanh(c));
            outs.push_back(reshape(h, {B, 1, H}));
        }
        return concat(outs, 1);
    }

    void collect(std::vector<Tensor<S>>& out) const {
        out.push_back(wx);
        out.push_back(wh);
        out.push_back(b_ih);
        out.push_back(b_hh);
    }
};

// idx[b][t] = len-1-t within the sequence's true length, identity on pads.
// Applying it before and after a forward LSTM yields the backward direction
// without letting padding feed into real positions.
inline IntMat reversal_index(const std::vector<int32_t>& lengths, size_t T) {
    IntMat idx(lengths.size(), T);
    for (size_t b = 0; b < lengths.size(); ++b) {
        int32_t len = lengths[b];
        for (size_t t = 0; t < T; ++t)
            idx.at(b, t) = t < static_cast<size_t>(len) ? len - 1 - static_cast<int32_t>(t)
                                                        : static_cast<int32_t>(t);
    }
    return idx;
}

template <typename S>
struct BiLstm {
    LstmCell<S> fwd, bwd;

    BiLstm() = default;
    BiLstm(size_t in, size_t h, Rng& rng, const std::string& name)
        : fwd(in, h, rng, name + "/fwd"), bwd(in, h, rng, name + "/bwd") {}

    Tensor<S> forward(const Tensor<S>& x, const std::vector<int32_t>& lengths) const {
        IntMat rev = reversal_index(lengths, x.shape()[1]);
        Tensor<S> yf = fwd.forward(x);
        Tensor<S> yb = reorder_time(bwd.forward(reorder_time(x, rev)), rev);
        return concat(std::vector<Tensor<S>>{yf, yb}, 2); // (B,T,2H)
    }

    void collect(std::vector<Tensor<S>>& out) const {
        fwd.collect(out);
        bwd.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Transformer encoder
// ---------------------------------------------------------------------------

// Additive key mask (B,T,T): 0 on real keys, -1e30 on padded keys.
template <typename S>
Tensor<S> attention_mask_tensor(const IntMat& mask) {
    size_t B = mask.rows, T = mask.cols;
    std::vector<S> m(B * T * T, S(0));
    for (size_t b = 0; b < B; ++b)
        for (size_t j = 0; j < T; ++j)
            if (mask.at(b, j) == 0)
                for (size_t i = 0; i < T; ++i) m[(b * T + i) * T + j] = S(-1e30);
    return Tensor<S>::from({B, T, T}, std::move(m));
}

template <typename S>
struct TransformerLayer {
    Linear<S> wq, wk, wv, wo;
    Linear<S> ff1, ff2;
    Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
    size_t heads = 1;

    TransformerLayer() = default;
    TransformerLayer(size_t width, size_t n_heads, size_t ffn_width, Rng& rng,
                     const std::string& name)
        : wq(width, width, true, rng, name + "/wq"),
          wk(width, width, true, rng, name + "/wk"),
          wv(width, width, true, rng, name + "/wv"),
          wo(width, width, true, rng, name + "/wo"),
          ff1(width, ffn_width, true, rng, name + "/ff1"),
          ff2(ffn_width, width, true, rng, name + "/ff2"),
          ln1_g(init_ones<S>({width}, name + "/ln1/g")),
          ln1_b(init_zeros<S>({width}, name + "/ln1/b")),
          ln2_g(init_ones<S>({width}, name + "/ln2/g")),
          ln2_b(init_zeros<S>({width}, name + "/ln2/b")),
          heads(n_heads) {
        if (width % n_heads != 0) fail("tensor", "transformer width not divisible by heads");
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& attn_mask) const {
        size_t width = x.shape()[2];
        size_t dk = width / heads;
        Tensor<S> q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
        std::vector<Tensor<S>> ctx;
        ctx.reserve(heads);
        S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
        for (size_t h = 0; h < heads; ++h) {
            Tensor<S> qh = slice(q, 2, h * dk, dk);
            Tensor<S> kh = slice(k, 2, h * dk, dk);
            Tensor<S> vh = slice(v, 2, h * dk, dk);
            Tensor<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
            Tensor<S> attn = softmax_axis(add(scores, attn_mask), 2);
            ctx.push_back(matmul(attn, vh));
        }
        Tensor<S> attn_out = wo.forward(concat(ctx, 2));
        Tensor<S> h1 = add(mul(layer_norm(add(x, attn_out)), ln1_g), ln1_b);
        Tensor<S> ffn = ff2.forward(relu(ff1.forward(h1)));
        return add(mul(layer_norm(add(h1, ffn)), ln2_g), ln2_b);
    }

    void collect(std::vector<Tensor<S>>& out) const {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
        ff1.collect(out);
        ff2.collect(out);
        out.push_back(ln1_g);
        out.push_back(ln1_b);
        out.push_back(ln2_g);
        out.push_back(ln2_b);
    }
};

struct TransformerConfig {
    size_t layers = 2;
    size_t width = 64;
    size_t heads = 4;
    size_t ffn_width = 128;
    size_t max_seq_len = 48;
};

template <typename S>
struct TransformerEncoder {
    TransformerConfig cfg;
    EmbeddingLayer<S> embed;
    Tensor<S> ln_emb_g, ln_emb_b;
    std::vector<TransformerLayer<S>> layers;

    TransformerEncoder() = default;
    TransformerEncoder(const TransformerConfig& c, size_t vocab, Rng& rng,
                       const std::string& name)
        : cfg(c),
          embed(vocab, c.width, c.max_seq_len, rng, name),
          ln_emb_g(init_ones<S>({c.width}, name + "/ln_emb/g")),
          ln_emb_b(init_zeros<S>({c.width}, name + "/ln_emb/b")) {
        for (size_t l = 0; l < c.layers; ++l)
            layers.emplace_back(c.width, c.heads, c.ffn_width, rng,
                                name + "/layer" + std::to_string(l));
    }

    // Per-layer outputs (B,T,width), index 0 = first transformer layer.
    std::vector<Tensor<S>> forward_layers(const IntMat& tokens, const IntMat& segments,
                                          const IntMat& mask) const {
        Tensor<S> x = add(mul(layer_norm(embed.forward(tokens, segments)), ln_emb_g), ln_emb_b);
        Tensor<S> attn_mask = attention_mask_tensor<S>(mask);
        std::vector<Tensor<S>> outs;
        outs.reserve(layers.size());
        for (const auto& layer : layers) {
            x = layer.forward(x, attn_mask);
            outs.push_back(x);
        }
        return outs;
    }

    // [CLS] contextual embedding of the last layer (B,width).
    Tensor<S> forward_cls(const IntMat& tokens, const IntMat& segments,
                          const IntMat& mask) const {
        Tensor<S> last = forward_layers(tokens, segments, mask).back();
        return reshape(slice(last, 1, 0, 1), {last.shape()[0], last.shape()[2]});
    }

    void collect(std::vector<Tensor<S>>& out) const {
        embed.collect(out);
        out.push_back(ln_emb_g);
        out.push_back(ln_emb_b);
        for (const auto& l : layers) l.collect(out);
    }
};

// Inverted dropout as a constant mask; a no-op in eval mode.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng, bool train) {
    if (!train || p <= 0) return x;
    S keep_scale = static_cast<S>(1.0 / (1.0 - p));
    std::vector<S> m(x.size());
    for (auto& v : m) v = uniform_unit(rng) < p ? S(0) : keep_scale;
    return mul(x, Tensor<S>::from(x.shape(), std::move(m)));
}

// ---------------------------------------------------------------------------
// Supervised loss primitives (stable log-sum-exp forward, exact backward).
// ---------------------------------------------------------------------------

// Mean cross-entropy of softmax(logits) against integer labels.
template <typename S>
Tensor<S> cross_entropy_mean(const Tensor<S>& logits, const std::vector<int32_t>& labels) {
    if (logits.rank() != 2) fail("tensor", "cross_entropy: logits must be (batch, classes)");
    size_t B = logits.shape()[0], C = logits.shape()[1];
    if (labels.size() != B) fail("tensor", "cross_entropy: labels length mismatch");
    for (int32_t l : labels)
        if (l < 0 || static_cast<size_t>(l) >= C) fail("tensor", "cross_entropy: label out of range");

    auto out = detail::make_node<S>(Shape{});
    const auto& z = logits.data();
    double total = 0;
    for (size_t b = 0; b < B; ++b) {
        const S* row = z.data() + b * C;
        double m = row[0];
        for (size_t j = 1; j < C; ++j) m = std::max<double>(m, row[j]);
        double sum = 0;
        for (size_t j = 0; j < C; ++j) sum += std::exp(double(row[j]) - m);
        total += m + std::log(sum) - double(row[labels[b]]);
    }
    out->data[0] = static_cast<S>(total / B);

    if (detail::record(*out, {logits.node_ptr()})) {
        auto lab = std::make_shared<std::vector<int32_t>>(labels);
        out->backward_fn = [lab, B, C](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            S g = o.grad[0] / static_cast<S>(B);
            for (size_t b = 0; b < B; ++b) {
                const S* row = p.data.data() + b * C;
                double m = row[0];
                for (size_t j = 1; j < C; ++j) m = std::max<double>(m, row[j]);
                double sum = 0;
                for (size_t j = 0; j < C; ++j) sum += std::exp(double(row[j]) - m);
                for (size_t j = 0; j < C; ++j) {
                    double soft = std::exp(double(row[j]) - m) / sum;
                    p.grad[b * C + j] +=
                        g * static_cast<S>(soft - (static_cast<size_t>((*lab)[b]) == j ? 1 : 0));
                }
            }
        };
    }
    return Tensor<S>(out);
}

// Mean over candidate groups of -log softmax(scores within group)[positive].
// groups hold batch positions; positives index into the batch as well.
template <typename S>
Tensor<S> group_nll(const Tensor<S>& scores, const std::vector<std::vector<int32_t>>& groups,
                    const std::vector<int32_t>& positives) {
    if (scores.size() != numel(scores.shape()) || scores.rank() > 2 ||
        (scores.rank() == 2 && scores.shape()[1] != 1))
        fail("tensor", "group_nll: scores must be (batch) or (batch,1)");
    if (groups.size() != positives.size() || groups.empty())
        fail("tensor", "group_nll: empty group list");
    size_t B = scores.shape()[0];
    for (size_t g = 0; g < groups.size(); ++g) {
        bool found = false;
        for (int32_t i : groups[g]) {
            if (i < 0 || static_cast<size_t>(i) >= B) fail("tensor", "group_nll: index out of range");
            if (i == positives[g]) found = true;
        }
        if (!found) fail("tensor", "group_nll: positive not inside its group");
    }

    auto out = detail::make_node<S>(Shape{});
    const auto& s = scores.data();
    double total = 0;
    for (size_t g = 0; g < groups.size(); ++g) {
        double m = -1e300;
        for (int32_t i : groups[g]) m = std::max<double>(m, s[i]);
        double sum = 0;
        for (int32_t i : groups[g]) sum += std::exp(double(s[i]) - m);
        total += m + std::log(sum) - double(s[positives[g]]);
    }
    out->data[0] = static_cast<S>(total / groups.size());

    if (detail::record(*out, {scores.node_ptr()})) {
        auto grp = std::make_shared<std::vector<std::vector<int32_t>>>(groups);
        auto pos = std::make_shared<std::vector<int32_t>>(positives);
        out->backward_fn = [grp, pos](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            S g = o.grad[0] / static_cast<S>(grp->size());
            for (size_t gi = 0; gi < grp->size(); ++gi) {
                double m = -1e300;
                for (int32_t i : (*grp)[gi]) m = std::max<double>(m, p.data[i]);
                double sum = 0;
                for (int32_t i : (*grp)[gi]) sum += std::exp(double(p.data[i]) - m);
                for (int32_t i : (*grp)[gi]) {
                    double soft = std::exp(double(p.data[i]) - m) / sum;
                    p.grad[i] += g * static_cast<S>(soft - (i == (*pos)[gi] ? 1 : 0));
                }
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Batch materialization
// ---------------------------------------------------------------------------

// Padded joint [CLS]...[SEP] sequences for transformer-style models.
struct JointBatch {
    IntMat tokens, segments, mask;
    std::vector<int32_t> lengths;
    size_t batch = 0, seq_len = 0;
};

inline JointBatch materialize_joint(const std::vector<const TokenizedExample*>& exs,
                                    size_t pad_to = 0) {
    if (exs.empty()) fail("data", "materialize_joint: empty batch");
    size_t T = pad_to;
    for (const auto* e : exs) T = std::max(T, e->length());
    JointBatch jb;
    jb.batch = exs.size();
    jb.seq_len = T;
    jb.tokens = IntMat(exs.size(), T, Vocabulary::pad_id);
    jb.segments = IntMat(exs.size(), T, 0);
    jb.mask = IntMat(exs.size(), T, 0);
    for (size_t b = 0; b < exs.size(); ++b) {
        const auto& e = *exs[b];
        jb.lengths.push_back(static_cast<int32_t>(e.length()));
        for (size_t t = 0; t < e.length(); ++t) {
            jb.tokens.at(b, t) = e.token_ids[t];
            jb.segments.at(b, t) = e.segment_ids[t];
            jb.mask.at(b, t) = 1;
        }
    }
    return jb;
}

// Separate x/y sequences for the bi-attentive student: x is the segment-0
// part, y is the segment-1 part, or x again for single-sentence tasks.
struct PairBatch {
    IntMat x_tokens, y_tokens;
    IntMat x_mask, y_mask;
    std::vector<int32_t> x_len, y_len;
    size_t batch = 0;
    bool single = false;
};

inline PairBatch materialize_pair(const std::vector<const TokenizedExample*>& exs,
                                  size_t pad_to = 0) {
    if (exs.empty()) fail("data", "materialize_pair: empty batch");
    size_t Tx = pad_to, Ty = pad_to;
    bool any_pair = false;
    std::vector<size_t> xl(exs.size()), yl(exs.size());
    for (size_t b = 0; b < exs.size(); ++b) {
        const auto& e = *exs[b];
        size_t nx = 0;
        while (nx < e.length() && e.segment_ids[nx] == 0) ++nx;
        xl[b] = nx;
        yl[b] = e.length() - nx;
        if (yl[b] > 0) any_pair = true;
        Tx = std::max(Tx, xl[b]);
        Ty = std::max(Ty, yl[b]);
    }
    PairBatch pb;
    pb.batch = exs.size();
    pb.single = !any_pair;
    if (pb.single) Ty = Tx;
    pb.x_tokens = IntMat(exs.size(), Tx, Vocabulary::pad_id);
    pb.x_mask = IntMat(exs.size(), Tx, 0);
    pb.y_tokens = IntMat(exs.size(), Ty, Vocabulary::pad_id);
    pb.y_mask = IntMat(exs.size(), Ty, 0);
    for (size_t b = 0; b < exs.size(); ++b) {
        const auto& e = *exs[b];
        for (size_t t = 0; t < xl[b]; ++t) {
            pb.x_tokens.at(b, t) = e.token_ids[t];
            pb.x_mask.at(b, t) = 1;
        }
        pb.x_len.push_back(static_cast<int32_t>(xl[b]));
        if (pb.single) {
            for (size_t t = 0; t < xl[b]; ++t) {
                pb.y_tokens.at(b, t) = e.token_ids[t];
                pb.y_mask.at(b, t) = 1;
            }
            pb.y_len.push_back(static_cast<int32_t>(xl[b]));
        } else {
            if (yl[b] == 0)
                fail("data", "materialize_pair: pair batch contains a single-sentence example");
            for (size_t t = 0; t < yl[b]; ++t) {
                pb.y_tokens.at(b, t) = e.token_ids[xl[b] + t];
                pb.y_mask.at(b, t) = 1;
            }
            pb.y_len.push_back(static_cast<int32_t>(yl[b]));
        }
    }
    return pb;
}

// Additive (B,T,d) mask for max pooling: 0 on real positions, -1e30 on pads.
template <typename S>
Tensor<S> pool_max_mask(const IntMat& mask, size_t d) {
    std::vector<S> m(mask.rows * mask.cols * d, S(0));
    for (size_t b = 0; b < mask.rows; ++b)
        for (size_t t = 0; t < mask.cols; ++t)
            if (mask.at(b, t) == 0)
                for (size_t j = 0; j < d; ++j) m[(b * mask.cols + t) * d + j] = S(-1e30);
    return Tensor<S>::from({mask.rows, mask.cols, d}, std::move(m));
}

// (B,1,T) weights with 1/len on real positions; matmul with (B,T,d) gives a
// masked mean over time.
template <typename S>
Tensor<S> pool_mean_weights(const IntMat& mask) {
    std::vector<S> w(mask.rows * mask.cols, S(0));
    for (size_t b = 0; b < mask.rows; ++b) {
        size_t len = 0;
        for (size_t t = 0; t < mask.cols; ++t) len += mask.at(b, t);
        if (len == 0) fail("tensor", "pooling over an all-pad sequence");
        for (size_t t = 0; t < mask.cols; ++t)
            if (mask.at(b, t)) w[b * mask.cols + t] = S(1) / S(len);
    }
    return Tensor<S>::from({mask.rows, 1, mask.cols}, std::move(w));
}

// Additive (B,T) mask for softmax over time.
template <typename S>
Tensor<S> additive_time_mask(const IntMat& mask) {
    std::vector<S> m(mask.rows * mask.cols, S(0));
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask.v[i] == 0) m[i] = S(-1e30);
    return Tensor<S>::from({mask.rows, mask.cols}, std::move(m));
}

// Additive (B,T,cols) mask hiding padded positions of the FIRST axis of an
// attention matrix: row i is -1e30 whenever position i is padding.
template <typename S>
Tensor<S> biatt_axis_mask(const IntMat& mask, size_t cols) {
    std::vector<S> m(mask.rows * mask.cols * cols, S(0));
    for (size_t b = 0; b < mask.rows; ++b)
        for (size_t i = 0; i < mask.cols; ++i)
            if (mask.at(b, i) == 0)
                for (size_t j = 0; j < cols; ++j) m[(b * mask.cols + i) * cols + j] = S(-1e30);
    return Tensor<S>::from({mask.rows, mask.cols, cols}, std::move(m));
}

} // namespace mtkd
