#pragma once

// The two student architectures: a bi-attentive BiLSTM and a small
// transformer whose per-layer [CLS] outputs are averaged. Task layers are a
// ReLU bottleneck followed by a linear map to logits z = Wh.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtkd/checkpoint.hpp"
#include "mtkd/data.hpp"
#include "mtkd/nn.hpp"

namespace mtkd {

// ---------------------------------------------------------------------------
// Bi-attentive LSTM student
// ---------------------------------------------------------------------------

struct BiattConfig {
    size_t embed_dim = 64;
    size_t lstm_hidden = 256;   // per direction
    size_t task_layer_dim = 512;
};

template <typename S>
struct BiattActivations {
    Tensor<S> X, Y;             // stacked BiLSTM states (B,Tx,2H), (B,Ty,2H)
    Tensor<S> A;                // attention contexts (B,Tx,Ty)
    Tensor<S> A_x;              // column-normalized over x (B,Tx,Ty)
    Tensor<S> A_y;              // column-normalized over y (B,Ty,Tx)
    Tensor<S> C_x;              // (B,Ty,2H)
    Tensor<S> C_y;              // (B,Tx,2H)
    Tensor<S> fused_x, fused_y; // [H ; H - C ; H * C] (B,T,6H)
    Tensor<S> X_y, Y_x;         // fused BiLSTM outputs (B,T,2H)
    Tensor<S> pooled_x, pooled_y; // max/mean/self-attentive concat (B,6H)
    Tensor<S> rep;              // (B,6H) single-sentence, (B,12H) pairs
};

template <typename S>
struct BiattStudent {
    BiattConfig cfg;
    Tensor<S> tok_emb;     // (vocab, embed_dim)
    Linear<S> ff;          // embed_dim -> embed_dim, ReLU in the pipeline
    BiLstm<S> enc;         // embed_dim -> 2H
    BiLstm<S> fuse;        // 6H -> 2H
    Linear<S> pool_score;  // 2H -> 1, bias-free self-attentive pooling vector

    BiattStudent() = default;
    BiattStudent(const BiattConfig& c, size_t vocab_size, Rng& rng)
        : cfg(c),
          tok_emb(init_weight<S>({vocab_size, c.embed_dim}, c.embed_dim, rng,
                                 "student/embed/tok")),
          ff(c.embed_dim, c.embed_dim, true, rng, "student/ff"),
          enc(c.embed_dim, c.lstm_hidden, rng, "student/enc"),
          fuse(6 * c.lstm_hidden, c.lstm_hidden, rng, "student/fuse"),
          pool_score(2 * c.lstm_hidden, 1, false, rng, "student/pool") {}

    size_t pooled_width() const { return 6 * cfg.lstm_hidden; }
    size_t rep_width(bool single_sentence) const {
        return single_sentence ? pooled_width() : 2 * pooled_width();
    }

    Tensor<S> pool(const Tensor<S>& h, const IntMat& mask) const {
        size_t B = h.shape()[0], T = h.shape()[1], d = h.shape()[2];
        Tensor<S> maxp = max_axis(add(h, pool_max_mask<S>(mask, d)), 1);
        Tensor<S> meanp = reshape(matmul(pool_mean_weights<S>(mask), h), {B, d});
        Tensor<S> scores = reshape(pool_score.forward(h), {B, T});
        Tensor<S> w = softmax_axis(add(scores, additive_time_mask<S>(mask)), 1);
        Tensor<S> attnp = reshape(matmul(reshape(w, {B, 1, T}), h), {B, d});
        return concat(std::vector<Tensor<S>>{maxp, meanp, attnp}, 1);
    }

    BiattActivations<S> encode(const PairBatch& pb) const {
        for (int32_t l : pb.x_len)
            if (l == 0) fail("student", "biatt_encode: all-pad x sequence");
        for (int32_t l : pb.y_len)
            if (l == 0) fail("student", "biatt_encode: all-pad y sequence");
        BiattActivations<S> act;
        size_t Tx = pb.x_tokens.cols, Ty = pb.y_tokens.cols;

        Tensor<S> wx = embed_lookup(tok_emb, pb.x_tokens);
        Tensor<S> hx = relu(ff.forward(wx));
        act.X = enc.forward(hx, pb.x_len);
        if (pb.single) {
            act.Y = act.X;
        } else {
            Tensor<S> wy = embed_lookup(tok_emb, pb.y_tokens);
            act.Y = enc.forward(relu(ff.forward(wy)), pb.y_len);
        }

        act.A = matmul(act.X, transpose(act.Y)); // (B,Tx,Ty)
        act.A_x = softmax_axis(add(act.A, biatt_axis_mask<S>(pb.x_mask, Ty)), 1);
        act.A_y = softmax_axis(add(transpose(act.A), biatt_axis_mask<S>(pb.y_mask, Tx)), 1);
        act.C_x = matmul(transpose(act.A_x), act.X); // (B,Ty,2H)
        act.C_y = matmul(transpose(act.A_y), act.Y); // (B,Tx,2H)

        act.fused_x = concat(
            std::vector<Tensor<S>>{act.X, sub(act.X, act.C_y), mul(act.X, act.C_y)}, 2);
        act.fused_y = concat(
            std::vector<Tensor<S>>{act.Y, sub(act.Y, act.C_x), mul(act.Y, act.C_x)}, 2);
        act.X_y = fuse.forward(act.fused_x, pb.x_len);
        act.Y_x = fuse.forward(act.fused_y, pb.y_len);

        act.pooled_x = pool(act.X_y, pb.x_mask);
        if (pb.single) {
            act.pooled_y = act.pooled_x;
            act.rep = act.pooled_x;
        } else {
            act.pooled_y = pool(act.Y_x, pb.y_mask);
            act.rep = concat(std::vector<Tensor<S>>{act.pooled_x, act.pooled_y}, 1);
        }
        return act;
    }

    void collect(std::vector<Tensor<S>>& out) const {
        out.push_back(tok_emb);
        ff.collect(out);
        enc.collect(out);
        fuse.collect(out);
        pool_score.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Transformer student
// ---------------------------------------------------------------------------

template <typename S>
struct TransformerStudentActivations {
    std::vector<Tensor<S>> per_layer_cls; // (B,width) per layer
    Tensor<S> rep;                        // mean over layers
};

template <typename S>
struct TransformerStudent {
    TransformerConfig cfg;
    TransformerEncoder<S> encoder;

    TransformerStudent() = default;
    TransformerStudent(const TransformerConfig& c, size_t vocab_size, Rng& rng)
        : cfg(c), encoder(c, vocab_size, rng, "student") {}

    // Average of every layer's [CLS] vector.
    TransformerStudentActivations<S> encode(const JointBatch& jb) const {
        auto layer_outs = encoder.forward_layers(jb.tokens, jb.segments, jb.mask);
        TransformerStudentActivations<S> act;
        size_t B = jb.tokens.rows;
        for (const auto& lo : layer_outs)
            act.per_layer_cls.push_back(reshape(slice(lo, 1, 0, 1), {B, cfg.width}));
        Tensor<S> sum = act.per_layer_cls[0];
        for (size_t l = 1; l < act.per_layer_cls.size(); ++l)
            sum = add(sum, act.per_layer_cls[l]);
        act.rep = scale(sum, static_cast<S>(1.0 / double(act.per_layer_cls.size())));
        return act;
    }

    void collect(std::vector<Tensor<S>>& out) const { encoder.collect(out); }
};

// BERT-PKD-style initialization hook: copy embeddings and the first N layers
// from a teacher checkpoint when every shape matches. Returns false (and
// leaves the student untouched) otherwise.
template <typename S>
bool init_student_from_teacher(TransformerStudent<S>& student,
                               const std::vector<CheckpointArray>& teacher_arrays) {
    std::unordered_map<std::string, const CheckpointArray*> by_name;
    for (const auto& a : teacher_arrays) by_name[a.name] = &a;

    std::vector<Tensor<S>> targets;
    student.encoder.collect(targets);
    std::vector<std::pair<Tensor<S>*, const CheckpointArray*>> plan;
    for (auto& t : targets) {
        // student/... -> encoder/...
        std::string src_name = "encoder" + t.name().substr(std::string("student").size());
        auto it = by_name.find(src_name);
        if (it == by_name.end()) return false;
        if (it->second->shape != t.shape()) return false;
        plan.push_back({&t, it->second});
    }
    for (auto& [t, a] : plan)
        for (size_t i = 0; i < a->data.size(); ++i) t->data()[i] = static_cast<S>(a->data[i]);
    return true;
}

// ---------------------------------------------------------------------------
// Task layers and the student wrapper
// ---------------------------------------------------------------------------

template <typename S>
struct StudentTaskLayer {
    Linear<S> hidden; // rep -> task_layer_dim, ReLU
    Linear<S> out;    // task_layer_dim -> logits z = Wh

    StudentTaskLayer() = default;
    StudentTaskLayer(size_t rep_width, size_t task_layer_dim, size_t out_width, Rng& rng,
                     const std::string& name)
        : hidden(rep_width, task_layer_dim, true, rng, name + "/hidden"),
          out(task_layer_dim, out_width, true, rng, name + "/out") {}

    Tensor<S> forward(const Tensor<S>& rep) const {
        return out.forward(relu(hidden.forward(rep)));
    }

    void collect(std::vector<Tensor<S>>& p) const {
        hidden.collect(p);
        out.collect(p);
    }
};

template <typename S>
Tensor<S> student_logits(const Tensor<S>& rep, const StudentTaskLayer<S>& layer) {
    if (rep.rank() != 2 || rep.shape()[1] != layer.hidden.w.shape()[0])
        fail("student", "student_logits: representation width " + shape_str(rep.shape()) +
                            " does not match task layer input " +
                            std::to_string(layer.hidden.w.shape()[0]));
    return layer.forward(rep);
}

enum class StudentArch { bilstm, transformer };

inline StudentArch student_arch_from(const std::string& s) {
    if (s == "bilstm") return StudentArch::bilstm;
    if (s == "transformer") return StudentArch::transformer;
    fail("student", "unknown student arch: '" + s + "'");
}

struct StudentConfig {
    StudentArch arch = StudentArch::bilstm;
    BiattConfig bilstm;
    TransformerConfig transformer{.layers = 3};
    size_t task_layer_dim = 512;
};

template <typename S>
struct StudentModel {
    StudentConfig cfg;
    std::optional<BiattStudent<S>> bilstm;
    std::optional<TransformerStudent<S>> transformer;
    std::vector<StudentTaskLayer<S>> task_layers;
    std::vector<std::string> task_names;
    std::vector<TaskKind> task_kinds;

    StudentModel() = default;

    StudentModel(const StudentConfig& c, size_t vocab_size, std::span<const Task> tasks,
                 uint64_t seed)
        : cfg(c) {
        Rng rng = make_rng(seed, "student_init");
        if (c.arch == StudentArch::bilstm)
            bilstm.emplace(c.bilstm, vocab_size, rng);
        else
            transformer.emplace(c.transformer, vocab_size, rng);
        for (const Task& t : tasks) {
            size_t rep_w = rep_width(t.kind);
            task_layers.emplace_back(rep_w, c.task_layer_dim, t.logit_width(), rng,
                                     "task_layers/" + t.name);
            task_names.push_back(t.name);
            task_kinds.push_back(t.kind);
        }
    }

    size_t rep_width(TaskKind kind) const {
        if (cfg.arch == StudentArch::bilstm)
            return bilstm->rep_width(!is_pair_input(kind));
        return cfg.transformer.width;
    }

    // Shared-encoder representation for one batch. pad_to forces a fixed
    // sequence length (benchmark methodology); 0 pads to the batch maximum.
    Tensor<S> forward_rep(const TokenizedTask& tok, const Batch& batch, Split split,
                          size_t pad_to = 0) const {
        auto exs = gather_examples(tok.split(split), batch.example_ids);
        if (cfg.arch == StudentArch::bilstm) {
            PairBatch pb = materialize_pair(exs, pad_to);
            return bilstm->encode(pb).rep;
        }
        JointBatch jb = materialize_joint(exs, pad_to);
        return transformer->encode(jb).rep;
    }

    Tensor<S> forward_logits(size_t task_index, const TokenizedTask& tok, const Batch& batch,
                             Split split, size_t pad_to = 0) const {
        if (task_index >= task_layers.size())
            fail("student", "no task layer for index " + std::to_string(task_index));
        if (task_names[task_index] != tok.name)
            fail("student", "task mismatch: layer '" + task_names[task_index] +
                                "' vs batch of '" + tok.name + "'");
        return student_logits(forward_rep(tok, batch, split, pad_to), task_layers[task_index]);
    }

    std::vector<Tensor<S>> shared_params() const {
        std::vector<Tensor<S>> p;
        if (cfg.arch == StudentArch::bilstm)
            bilstm->collect(p);
        else
            transformer->collect(p);
        return p;
    }

    std::vector<Tensor<S>> task_params(size_t task_index) const {
        std::vector<Tensor<S>> p;
        task_layers.at(task_index).collect(p);
        return p;
    }

    std::vector<Tensor<S>> all_params() const {
        std::vector<Tensor<S>> p = shared_params();
        for (const auto& tl : task_layers) tl.collect(p);
        return p;
    }
};

// Exact count of scalar parameters; embedding tables (token, position,
// segment) are excluded unless requested.
template <typename S>
size_t count_parameters(std::span<const Tensor<S>> params, bool include_embeddings) {
    size_t n = 0;
    for (const auto& p : params) {
        bool is_embed = p.name().find("/embed/") != std::string::npos ||
                        p.name().rfind("embed/", 0) == 0;
        if (!include_embeddings && is_embed) continue;
        n += p.size();
    }
    return n;
}

} // namespace mtkd
