#pragma once

// Multi-task distillation: MSE on raw logits against a frozen teacher, one
// update per task-homogeneous batch, plus teacher-logit caching and
// post-distillation per-task fine-tuning. This code path never sees labels;
// it works from TokenizedTask views only.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtkd/checkpoint.hpp"
#include "mtkd/data.hpp"
#include "mtkd/optim.hpp"
#include "mtkd/student.hpp"
#include "mtkd/teacher.hpp"

namespace mtkd {

// Mean over the batch of the squared L2 distance between teacher and student
// logits. The teacher side is a constant.
template <typename S>
Tensor<S> distill_loss_task(const Tensor<S>& z_teacher, const Tensor<S>& z_student) {
    if (z_teacher.shape() != z_student.shape())
        fail("distill", "logit shape mismatch: teacher " + shape_str(z_teacher.shape()) +
                            " vs student " + shape_str(z_student.shape()));
    Tensor<S> d = sub(z_student, z_teacher);
    Tensor<S> sq = mul(d, d);
    if (sq.rank() == 2) return mean_all(sum_axis(sq, 1));
    return mean_all(sq);
}

// Sum over tasks of the accumulated per-task means; reported per epoch for
// monitoring, optimization itself is per batch.
inline double epoch_distill_loss(std::span<const double> per_task_losses) {
    if (per_task_losses.empty()) fail("distill", "epoch_distill_loss: empty loss list");
    double sum = 0;
    for (double l : per_task_losses) sum += l;
    return sum;
}

// ---------------------------------------------------------------------------
// Teacher logit cache
// ---------------------------------------------------------------------------

class LogitsStore {
public:
    static std::string key(const std::string& task, int32_t example) {
        return "task/" + task + "/example/" + std::to_string(example);
    }

    void insert(const std::string& task, int32_t example, std::vector<float> logits) {
        if (!records_.emplace(key(task, example), std::move(logits)).second)
            fail("distill", "logits store collision for " + key(task, example));
    }

    const std::vector<float>& require(const std::string& task, int32_t example) const {
        auto it = records_.find(key(task, example));
        if (it == records_.end())
            fail("distill", "missing teacher logits for task " + task + ", example " +
                                std::to_string(example));
        return it->second;
    }

    size_t size() const { return records_.size(); }

    void save(const std::string& path) const {
        std::vector<CheckpointArray> arrays;
        arrays.reserve(records_.size());
        for (const auto& [name, data] : records_)
            arrays.push_back({name, Shape{data.size()}, data});
        save_checkpoint(path, arrays);
    }

    static LogitsStore load(const std::string& path) {
        LogitsStore store;
        for (auto& a : load_checkpoint(path)) {
            if (!store.records_.emplace(a.name, std::move(a.data)).second)
                fail("distill", "duplicate record in logits store: " + a.name);
        }
        return store;
    }

private:
    std::map<std::string, std::vector<float>> records_; // ordered for stable files
};

// One record per (task, augmented example), produced with the teacher in
// evaluation mode.
template <typename S>
LogitsStore cache_teacher_logits(const TeacherModel<S>& teacher,
                                 std::span<const TokenizedTask> tok, size_t batch_size) {
    NoGradGuard ng;
    LogitsStore store;
    for (const TokenizedTask& tt : tok) {
        size_t ti = 0;
        while (ti < teacher.task_names.size() && teacher.task_names[ti] != tt.name) ++ti;
        if (ti == teacher.task_names.size())
            fail("distill", "teacher has no head for task " + tt.name);
        for (const Batch& b : sequential_batches(tt.view(Split::augmented),
                                                 static_cast<int>(ti), batch_size)) {
            Tensor<S> z = teacher_forward(teacher, ti, tt, b, Split::augmented);
            size_t width = z.size() / b.size();
            for (size_t i = 0; i < b.size(); ++i) {
                std::vector<float> row(width);
                for (size_t j = 0; j < width; ++j)
                    row[j] = static_cast<float>(z.data()[i * width + j]);
                store.insert(tt.name, b.example_ids[i], std::move(row));
            }
        }
    }
    return store;
}

// ---------------------------------------------------------------------------
// The distillation loop
// ---------------------------------------------------------------------------

struct DistillRunConfig {
    size_t epoch_max = 16;
    size_t batch_size = 128;
    OptimizerConfig opt{OptAlgo::adam, 5e-4, 0.9, 0.999, 1e-8, 1.0};
    uint64_t seed = 0;
    bool cache_logits = true;

    void validate() const {
        if (epoch_max < 1) fail("distill", "epoch_max must be >= 1");
        if (batch_size < 1) fail("distill", "batch_size must be >= 1");
        opt.validate();
    }
};

struct DistillEpochStats {
    std::map<std::string, double> per_task_mean;
    double sum = 0; // epoch_distill_loss of the per-task means
};

struct DistillReport {
    std::vector<DistillEpochStats> epochs;
};

namespace detail {

// Teacher logits for one batch as a constant tensor, from the cache when
// present, otherwise from a live eval-mode forward.
template <typename S>
Tensor<S> teacher_logits_for(const TeacherModel<S>& teacher, size_t teacher_index,
                             const TokenizedTask& tt, const Batch& batch,
                             const LogitsStore* cache, size_t width) {
    if (cache) {
        std::vector<S> z;
        z.reserve(batch.size() * width);
        for (int32_t id : batch.example_ids) {
            const std::vector<float>& row = cache->require(tt.name, id);
            if (row.size() != width)
                fail("distill", "cached logits width mismatch for task " + tt.name);
            for (float v : row) z.push_back(static_cast<S>(v));
        }
        return Tensor<S>::from({batch.size(), width}, std::move(z));
    }
    NoGradGuard ng;
    Tensor<S> z = teacher_forward(teacher, teacher_index, tt, batch, Split::augmented);
    return Tensor<S>::from({batch.size(), width}, z.data());
}

} // namespace detail

// Per epoch: reshuffled schedule over the augmented splits; per batch:
// teacher logits, student logits, MSE, one update of the shared student
// parameters plus that task's layer.
template <typename S>
DistillReport run_distillation(const TeacherModel<S>& teacher, StudentModel<S>& student,
                               std::span<const TokenizedTask> tok, const DistillRunConfig& cfg,
                               const LogitsStore* cache = nullptr) {
    cfg.validate();
    // task-set check before any training step
    std::vector<size_t> teacher_index(tok.size()), student_index(tok.size());
    for (size_t i = 0; i < tok.size(); ++i) {
        const std::string& name = tok[i].name;
        auto locate = [&](const std::vector<std::string>& names, const char* side) {
            for (size_t j = 0; j < names.size(); ++j)
                if (names[j] == name) return j;
            fail("distill", std::string(side) + " has no task '" + name + "'");
        };
        teacher_index[i] = locate(teacher.task_names, "teacher");
        student_index[i] = locate(student.task_names, "student");
        if (tok[i].augmented.empty())
            fail("distill", "task " + name + ": augmented dataset not built");
    }

    Optimizer<S> opt(cfg.opt);
    std::vector<Tensor<S>> shared = student.shared_params();
    DistillReport report;

    std::vector<ScheduleView> views;
    for (const auto& tt : tok) views.push_back(tt.view(Split::augmented));

    for (size_t epoch = 0; epoch < cfg.epoch_max; ++epoch) {
        Rng rng = make_rng(cfg.seed, "distill_sched", epoch);
        std::vector<Batch> schedule = pack_epoch(views, cfg.batch_size, rng);
        std::map<std::string, double> sums;
        std::map<std::string, size_t> counts;
        for (const Batch& batch : schedule) {
            size_t i = static_cast<size_t>(batch.task_index);
            size_t width = teacher.heads[teacher_index[i]].map.w.shape()[1];
            Tensor<S> z_t = detail::teacher_logits_for(teacher, teacher_index[i], tok[i], batch,
                                                       cache, width);
            Tensor<S> z_s =
                student.forward_logits(student_index[i], tok[i], batch, Split::augmented);
            Tensor<S> loss = distill_loss_task(z_t, z_s);
            if (!loss.all_finite())
                fail("distill", "non-finite loss on task " + tok[i].name + " in epoch " +
                                    std::to_string(epoch));
            backward(loss);
            std::vector<Tensor<S>> params = shared;
            student.task_layers[student_index[i]].collect(params);
            opt.step(params);
            sums[tok[i].name] += loss.item();
            counts[tok[i].name] += 1;
        }
        DistillEpochStats stats;
        std::vector<double> means;
        for (const auto& [name, sum] : sums) {
            stats.per_task_mean[name] = sum / counts[name];
            means.push_back(stats.per_task_mean[name]);
        }
        stats.sum = epoch_distill_loss(means);
        report.epochs.push_back(std::move(stats));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

// Mean supervised loss over a split, weighted per example (per group for
// ranking).
template <typename S>
double split_task_loss(const StudentModel<S>& student, const Task& task,
                       const TokenizedTask& tok, size_t task_index, Split split,
                       size_t batch_size) {
    NoGradGuard ng;
    double total = 0;
    size_t units = 0;
    for (const Batch& b : sequential_batches(tok.view(split), static_cast<int>(task_index),
                                             batch_size)) {
        Tensor<S> logits = student.forward_logits(task_index, tok, b, split);
        Tensor<S> loss = task_loss(logits, task, split, b);
        size_t w = task.kind == TaskKind::relevance_ranking
                       ? batch_ranking_groups(task, split, b).groups.size()
                       : b.size();
        total += loss.item() * static_cast<double>(w);
        units += w;
    }
    return total / static_cast<double>(units);
}

struct FinetuneResult {
    double chosen_lr = 0;
    double dev_loss_before = 0; // distilled model
    double dev_loss_after = 0;  // selected model
    size_t epochs_trained = 0;  // of the chosen learning rate
};

inline const std::vector<double>& finetune_learning_rates() {
    static const std::vector<double> lrs{1e-5, 1.5e-5, 5e-5};
    return lrs;
}

// Supervised training on the task's original train split with its true-label
// loss. For each candidate learning rate the best epoch by dev loss is kept
// (the unchanged model counts as epoch 0), then the best candidate is
// selected by dev loss and written back into the student.
template <typename S>
FinetuneResult finetune(StudentModel<S>& student, const Task& task, const TokenizedTask& tok,
                        size_t task_index, size_t epochs, size_t batch_size, uint64_t seed) {
    if (task_index >= student.task_names.size() ||
        student.task_names[task_index] != task.name)
        fail("distill", "finetune: task " + task.name + " has no task layer");
    if (task.dev.empty()) fail("distill", "finetune: task " + task.name + " has no dev split");

    std::vector<Tensor<S>> params = student.shared_params();
    student.task_layers[task_index].collect(params);
    auto base = snapshot_params<S>(params);
    double base_dev = split_task_loss(student, task, tok, task_index, Split::dev, batch_size);

    FinetuneResult result;
    result.chosen_lr = finetune_learning_rates()[0];
    result.dev_loss_before = base_dev;
    result.dev_loss_after = base_dev;
    auto best_state = base;
    size_t best_epochs = 0;

    const Task* task_ptr = &task;
    for (size_t li = 0; li < finetune_learning_rates().size(); ++li) {
        double lr = finetune_learning_rates()[li];
        restore_params<S>(params, base);
        OptimizerConfig ocfg;
        ocfg.learning_rate = lr;
        ocfg.clip_norm = 1.0;
        Optimizer<S> opt(ocfg);

        double lr_best_dev = base_dev;
        auto lr_best_state = base;
        size_t lr_best_epochs = 0;
        for (size_t epoch = 0; epoch < epochs; ++epoch) {
            Rng rng = make_rng(seed, "finetune/" + task.name, li * 1000 + epoch);
            std::vector<Batch> schedule =
                pack_epoch(std::span<const Task>(task_ptr, 1), Split::train, batch_size, rng);
            for (Batch& b : schedule) {
                b.task_index = static_cast<int>(task_index);
                Tensor<S> logits = student.forward_logits(task_index, tok, b, Split::train);
                Tensor<S> loss = task_loss(logits, task, Split::train, b);
                backward(loss);
                std::vector<Tensor<S>> upd = student.shared_params();
                student.task_layers[task_index].collect(upd);
                opt.step(upd);
            }
            double dev = split_task_loss(student, task, tok, task_index, Split::dev, batch_size);
            if (dev < lr_best_dev) {
                lr_best_dev = dev;
                lr_best_state = snapshot_params<S>(params);
                lr_best_epochs = epoch + 1;
            } else {
                break; // dev loss stopped improving
            }
        }
        if (lr_best_dev < result.dev_loss_after) {
            result.dev_loss_after = lr_best_dev;
            result.chosen_lr = lr;
            best_state = lr_best_state;
            best_epochs = lr_best_epochs;
        }
    }
    restore_params<S>(params, best_state);
    result.epochs_trained = best_epochs;
    return result;
}

} // namespace mtkd
