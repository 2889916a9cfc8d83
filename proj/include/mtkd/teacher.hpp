#pragma once

// Multi-task teacher: shared transformer encoder with one head per task and
// the multi-task refinement loop. Each head reads the [CLS] contextual
// embedding; the similarity and ranking heads are bias-free weight vectors.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtkd/checkpoint.hpp"
#include "mtkd/data.hpp"
#include "mtkd/nn.hpp"
#include "mtkd/optim.hpp"

namespace mtkd {

template <typename S>
struct TaskHead {
    TaskKind kind = TaskKind::single_classification;
    Linear<S> map;

    TaskHead() = default;
    TaskHead(TaskKind k, size_t width, size_t out, Rng& rng, const std::string& name)
        : kind(k), map(width, out, /*bias=*/is_classification(k), rng, name) {}

    void collect(std::vector<Tensor<S>>& out) const { map.collect(out); }
};

struct TeacherConfig {
    TransformerConfig encoder;
    double dropout = 0.1; // on the [CLS] representation during refinement
};

template <typename S>
struct TeacherModel {
    TeacherConfig cfg;
    TransformerEncoder<S> encoder;
    std::vector<TaskHead<S>> heads;
    std::vector<std::string> task_names;

    TeacherModel() = default;

    TeacherModel(const TeacherConfig& c, size_t vocab_size, std::span<const Task> tasks,
                 uint64_t seed)
        : cfg(c) {
        Rng rng = make_rng(seed, "teacher_init");
        encoder = TransformerEncoder<S>(c.encoder, vocab_size, rng, "encoder");
        for (const Task& t : tasks) {
            heads.emplace_back(t.kind, c.encoder.width, t.logit_width(), rng,
                               "heads/" + t.name);
            task_names.push_back(t.name);
        }
    }

    std::vector<Tensor<S>> encoder_params() const {
        std::vector<Tensor<S>> p;
        encoder.collect(p);
        return p;
    }

    std::vector<Tensor<S>> head_params(size_t task_index) const {
        std::vector<Tensor<S>> p;
        heads.at(task_index).collect(p);
        return p;
    }

    std::vector<Tensor<S>> all_params() const {
        std::vector<Tensor<S>> p = encoder_params();
        for (const auto& h : heads) h.collect(p);
        return p;
    }
};

// Classification: (batch, classes) logits. Regression / ranking: (batch, 1)
// scores. Dropout applies only when train is set.
template <typename S>
Tensor<S> teacher_forward(const TeacherModel<S>& teacher, size_t task_index,
                          const TokenizedTask& tok, const Batch& batch, Split split,
                          bool train = false, Rng* dropout_rng = nullptr) {
    if (task_index >= teacher.heads.size())
        fail("teacher", "no head for task index " + std::to_string(task_index));
    if (teacher.task_names[task_index] != tok.name)
        fail("teacher", "task mismatch: head '" + teacher.task_names[task_index] +
                            "' vs batch of '" + tok.name + "'");
    JointBatch jb = materialize_joint(gather_examples(tok.split(split), batch.example_ids));
    Tensor<S> cls = teacher.encoder.forward_cls(jb.tokens, jb.segments, jb.mask);
    if (train && dropout_rng) cls = dropout(cls, teacher.cfg.dropout, *dropout_rng, true);
    return teacher.heads[task_index].map.forward(cls);
}

// Task-specific objective: mean squared error for similarity, mean
// cross-entropy for classification, mean negative log-likelihood of the
// positive candidate for ranking.
template <typename S>
Tensor<S> task_loss(const Tensor<S>& logits, const Task& task, Split split, const Batch& batch) {
    size_t B = batch.size();
    if (logits.shape()[0] != B)
        fail("teacher", "task_loss: logits batch " + std::to_string(logits.shape()[0]) +
                            " vs batch of " + std::to_string(B));
    switch (task.kind) {
        case TaskKind::single_classification:
        case TaskKind::pair_classification: {
            if (logits.rank() != 2 || logits.shape()[1] != static_cast<size_t>(task.num_classes))
                fail("teacher", "task_loss: logits shape " + shape_str(logits.shape()) +
                                    " does not match " + std::to_string(task.num_classes) +
                                    " classes");
            std::vector<int32_t> labels;
            for (double l : gather_labels(task, split, batch.example_ids))
                labels.push_back(static_cast<int32_t>(l));
            return cross_entropy_mean(logits, labels);
        }
        case TaskKind::pair_regression: {
            if (logits.size() != B)
                fail("teacher", "task_loss: regression expects one score per example");
            std::vector<S> target;
            double span = task.label_max - task.label_min;
            for (double l : gather_labels(task, split, batch.example_ids))
                target.push_back(static_cast<S>((l - task.label_min) / span));
            Tensor<S> t = Tensor<S>::from(logits.shape(), std::move(target));
            Tensor<S> d = sub(logits, t);
            return mean_all(mul(d, d));
        }
        case TaskKind::relevance_ranking: {
            if (logits.size() != B)
                fail("teacher", "task_loss: ranking expects one score per candidate");
            BatchGroups bg = batch_ranking_groups(task, split, batch);
            return group_nll(logits, bg.groups, bg.positives);
        }
    }
    fail("teacher", "task_loss: bad task kind");
}

struct RefineReport {
    // per epoch, per task: mean loss over that task's batches
    std::vector<std::map<std::string, double>> per_epoch;
};

// One refinement step per batch: forward through the shared encoder and the
// batch task's head, then update the encoder plus that head only.
template <typename S>
RefineReport refine_multi_task(TeacherModel<S>& teacher, std::span<const Task> tasks,
                               std::span<const TokenizedTask> tok, const OptimizerConfig& opt_cfg,
                               size_t epochs, size_t batch_size, uint64_t seed) {
    if (tasks.size() != teacher.heads.size())
        fail("teacher", "refine: task list does not match teacher heads");
    Optimizer<S> opt(opt_cfg);
    std::vector<Tensor<S>> enc_params = teacher.encoder_params();
    RefineReport report;
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng sched_rng = make_rng(seed, "teacher_sched", epoch);
        Rng drop_rng = make_rng(seed, "teacher_dropout", epoch);
        std::vector<Batch> schedule = pack_epoch(tasks, Split::train, batch_size, sched_rng);
        std::map<std::string, double> sums;
        std::map<std::string, size_t> counts;
        for (const Batch& batch : schedule) {
            size_t ti = static_cast<size_t>(batch.task_index);
            Tensor<S> logits =
                teacher_forward(teacher, ti, tok[ti], batch, Split::train, true, &drop_rng);
            Tensor<S> loss = task_loss(logits, tasks[ti], Split::train, batch);
            if (!loss.all_finite())
                fail("teacher", "non-finite loss on task " + tasks[ti].name + " in epoch " +
                                    std::to_string(epoch));
            backward(loss);
            std::vector<Tensor<S>> params = enc_params;
            teacher.heads[ti].collect(params);
            opt.step(params);
            sums[tasks[ti].name] += loss.item();
            counts[tasks[ti].name] += 1;
        }
        std::map<std::string, double> means;
        for (const auto& [name, sum] : sums) means[name] = sum / counts[name];
        report.per_epoch.push_back(std::move(means));
    }
    return report;
}

} // namespace mtkd
