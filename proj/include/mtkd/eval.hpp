#pragma once

// Metrics (accuracy, binary F1, Pearson, Spearman), the empirical
// Lipschitz-ratio diagnostic over shared representations, and the
// inference-latency benchmark harness. Reports serialize to JSON-lines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtkd/data.hpp"
#include "mtkd/student.hpp"
#include "mtkd/teacher.hpp"

namespace mtkd {

struct MetricReport {
    std::string task;
    std::string split;
    std::map<std::string, double> metrics;
    size_t count = 0;
};

// ---------------------------------------------------------------------------
// Metric primitives
// ---------------------------------------------------------------------------

inline double accuracy(std::span<const int32_t> pred, std::span<const int32_t> label) {
    if (pred.size() != label.size() || pred.size() < 2)
        fail("eval", "accuracy: need equal lengths >= 2");
    size_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == label[i];
    return double(correct) / double(pred.size());
}

// F1 of the positive class (class id 1), the GLUE convention for MRPC/QQP.
inline double binary_f1(std::span<const int32_t> pred, std::span<const int32_t> label,
                        int32_t positive = 1) {
    if (pred.size() != label.size() || pred.size() < 2)
        fail("eval", "f1: need equal lengths >= 2");
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == positive && label[i] == positive) ++tp;
        if (pred[i] == positive && label[i] != positive) ++fp;
        if (pred[i] != positive && label[i] == positive) ++fn;
    }
    if (tp == 0) return 0.0;
    double prec = double(tp) / double(tp + fp);
    double rec = double(tp) / double(tp + fn);
    return 2 * prec * rec / (prec + rec);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) fail("eval", "pearson: need equal lengths >= 2");
    size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
    mx /= double(n);
    my /= double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) fail("eval", "pearson: zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

// Average ranks (1-based) with ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
    size_t n = x.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        double mean_rank = (double(i) + double(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) fail("eval", "spearman: need equal lengths >= 2");
    std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Per-task metric selection
// ---------------------------------------------------------------------------

// Classification: predictions are class ids. Regression: real scores.
// Ranking: per-candidate scores, judged by argmax within each group.
inline MetricReport compute_metrics(std::span<const double> predictions,
                                    std::span<const double> labels, const Task& task,
                                    const std::string& split_name = "dev") {
    if (predictions.size() != labels.size() || predictions.size() < 2)
        fail("eval", "compute_metrics: need equal lengths >= 2");
    MetricReport rep;
    rep.task = task.name;
    rep.split = split_name;
    rep.count = predictions.size();
    switch (task.kind) {
        case TaskKind::single_classification:
        case TaskKind::pair_classification: {
            std::vector<int32_t> p, l;
            for (double v : predictions) p.push_back(static_cast<int32_t>(v));
            for (double v : labels) l.push_back(static_cast<int32_t>(v));
            rep.metrics["accuracy"] = accuracy(p, l);
            if (task.num_classes == 2) rep.metrics["f1"] = binary_f1(p, l);
            break;
        }
        case TaskKind::pair_regression:
            rep.metrics["pearson"] = pearson(predictions, labels);
            rep.metrics["spearman"] = spearman(predictions, labels);
            break;
        case TaskKind::relevance_ranking:
            fail("eval", "compute_metrics: ranking needs group structure, use "
                         "compute_ranking_metrics");
    }
    return rep;
}

// Accuracy of the top-scored candidate per group.
inline MetricReport compute_ranking_metrics(std::span<const double> scores, const Task& task,
                                            Split split, const std::string& split_name) {
    const Dataset& ds = select_split(task, split);
    if (scores.size() != ds.size()) fail("eval", "ranking metrics: score count mismatch");
    auto groups = ranking_groups(ds, task.name);
    if (groups.size() < 2) fail("eval", "ranking metrics: need >= 2 groups");
    size_t correct = 0;
    for (const auto& g : groups) {
        int32_t best = g[0];
        for (int32_t i : g)
            if (scores[i] > scores[best]) best = i;
        correct += ds.examples[best].label == 1.0;
    }
    MetricReport rep;
    rep.task = task.name;
    rep.split = split_name;
    rep.count = groups.size();
    rep.metrics["accuracy"] = double(correct) / double(groups.size());
    return rep;
}

// ---------------------------------------------------------------------------
// Model predictions (evaluation mode)
// ---------------------------------------------------------------------------

// Per-example predictions in dataset order: class ids for classification,
// de-normalized scores for regression, raw scores for ranking.
template <typename S, typename ForwardFn>
std::vector<double> collect_predictions(ForwardFn&& forward, const Task& task,
                                        const TokenizedTask& tok, Split split,
                                        size_t batch_size) {
    NoGradGuard ng;
    const Dataset& ds = select_split(task, split);
    std::vector<double> preds(ds.size(), 0.0);
    for (const Batch& b : sequential_batches(tok.view(split), 0, batch_size)) {
        Tensor<S> logits = forward(b);
        if (is_classification(task.kind)) {
            size_t C = logits.shape()[1];
            for (size_t i = 0; i < b.size(); ++i) {
                size_t best = 0;
                for (size_t j = 1; j < C; ++j)
                    if (logits.data()[i * C + j] > logits.data()[i * C + best]) best = j;
                preds[b.example_ids[i]] = double(best);
            }
        } else {
            double lo = task.label_min, hi = task.label_max;
            for (size_t i = 0; i < b.size(); ++i) {
                double raw = double(logits.data()[i]);
                preds[b.example_ids[i]] =
                    task.kind == TaskKind::pair_regression ? raw * (hi - lo) + lo : raw;
            }
        }
    }
    return preds;
}

template <typename S>
std::vector<double> teacher_predictions(const TeacherModel<S>& teacher, size_t task_index,
                                        const Task& task, const TokenizedTask& tok, Split split,
                                        size_t batch_size) {
    auto fwd = [&](const Batch& b) {
        return teacher_forward(teacher, task_index, tok, b, split);
    };
    return collect_predictions<S>(fwd, task, tok, split, batch_size);
}

template <typename S>
std::vector<double> student_predictions(const StudentModel<S>& student, size_t task_index,
                                        const Task& task, const TokenizedTask& tok, Split split,
                                        size_t batch_size) {
    auto fwd = [&](const Batch& b) {
        return student.forward_logits(task_index, tok, b, split);
    };
    return collect_predictions<S>(fwd, task, tok, split, batch_size);
}

inline MetricReport evaluate_predictions(const std::vector<double>& preds, const Task& task,
                                         Split split, const std::string& split_name) {
    if (task.kind == TaskKind::relevance_ranking)
        return compute_ranking_metrics(preds, task, split, split_name);
    const Dataset& ds = select_split(task, split);
    std::vector<double> labels;
    labels.reserve(ds.size());
    for (const auto& ex : ds.examples) labels.push_back(ex.label);
    return compute_metrics(preds, labels, task, split_name);
}

// ---------------------------------------------------------------------------
// Lipschitz-ratio diagnostic
// ---------------------------------------------------------------------------

struct LipschitzEstimate {
    double eta_hat = 0;
    size_t pairs = 0; // pairs actually measured after exclusions
    std::string representation;
};

// eta_hat = max over sampled cross-task pairs of |h1-h2| / |x1-x2|; pairs
// with |x1-x2| < 1e-8 are excluded. A max over samples is a lower bound on
// the true constant, reported as a diagnostic only.
inline LipschitzEstimate lipschitz_ratio(const std::vector<std::vector<double>>& x1,
                                         const std::vector<std::vector<double>>& h1,
                                         const std::vector<std::vector<double>>& x2,
                                         const std::vector<std::vector<double>>& h2,
                                         size_t sample_count, uint64_t seed,
                                         std::string representation = "cls") {
    if (x1.size() != h1.size() || x2.size() != h2.size() || x1.empty() || x2.empty())
        fail("eval", "lipschitz_ratio: probe/representation size mismatch");
    if (sample_count < 2) fail("eval", "lipschitz_ratio: need sample_count >= 2");
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    LipschitzEstimate est;
    est.representation = std::move(representation);
    Rng rng(seed);
    size_t total = x1.size() * x2.size();
    for (size_t s = 0; s < std::min(sample_count, total); ++s) {
        size_t i, j;
        if (sample_count >= total) {
            i = s / x2.size();
            j = s % x2.size();
        } else {
            i = uniform_index(rng, x1.size());
            j = uniform_index(rng, x2.size());
        }
        double dx = dist(x1[i], x2[j]);
        if (dx < 1e-8) continue;
        est.eta_hat = std::max(est.eta_hat, dist(h1[i], h2[j]) / dx);
        ++est.pairs;
    }
    if (est.pairs == 0) fail("eval", "lipschitz_ratio: every sampled pair was excluded");
    return est;
}

// Probe extraction for the teacher encoder: x is the mean token embedding of
// the example's real tokens, h the [CLS] contextual embedding.
template <typename S>
void encoder_probes(const TeacherModel<S>& teacher, size_t task_index, const TokenizedTask& tok,
                    Split split, size_t max_examples, std::vector<std::vector<double>>& xs,
                    std::vector<std::vector<double>>& hs) {
    NoGradGuard ng;
    const auto& exs = tok.split(split);
    size_t n = std::min(max_examples, exs.size());
    size_t width = teacher.cfg.encoder.width;
    Batch b;
    b.task_index = static_cast<int>(task_index);
    for (size_t i = 0; i < n; ++i) b.example_ids.push_back(static_cast<int32_t>(i));
    JointBatch jb = materialize_joint(gather_examples(exs, b.example_ids));
    Tensor<S> cls = teacher.encoder.forward_cls(jb.tokens, jb.segments, jb.mask);
    const auto& table = teacher.encoder.embed.tok.data();
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> x(width, 0.0);
        size_t len = 0;
        for (size_t t = 0; t < jb.tokens.cols; ++t) {
            if (jb.mask.at(i, t) == 0) continue;
            ++len;
            for (size_t k = 0; k < width; ++k) x[k] += double(table[jb.tokens.at(i, t) * width + k]);
        }
        for (auto& v : x) v /= double(len);
        xs.push_back(std::move(x));
        std::vector<double> h(width);
        for (size_t k = 0; k < width; ++k) h[k] = double(cls.data()[i * width + k]);
        hs.push_back(std::move(h));
    }
}

// ---------------------------------------------------------------------------
// Inference benchmark
// ---------------------------------------------------------------------------

struct BenchReport {
    std::string model;
    size_t batches = 0, batch_size = 0, seq_len = 0;
    double total_seconds = 0, mean_ms = 0, std_ms = 0;
    double checksum = 0; // sum of outputs, for purity checks only
};

// Times `batches` calls of run_batch after `warmup` untimed ones on a
// monotonic clock. run_batch(i) returns a checksum of its outputs.
template <typename F>
BenchReport bench_inference(const std::string& model_name, F&& run_batch, size_t batches,
                            size_t batch_size, size_t seq_len, size_t warmup) {
    if (batches < 1) fail("eval", "bench_inference: batches must be >= 1");
    BenchReport rep;
    rep.model = model_name;
    rep.batches = batches;
    rep.batch_size = batch_size;
    rep.seq_len = seq_len;
    for (size_t i = 0; i < warmup; ++i) run_batch(i);
    std::vector<double> times_ms(batches);
    auto t_total0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < batches; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        rep.checksum += run_batch(warmup + i);
        auto t1 = std::chrono::steady_clock::now();
        times_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    auto t_total1 = std::chrono::steady_clock::now();
    rep.total_seconds = std::chrono::duration<double>(t_total1 - t_total0).count();
    double mean = 0;
    for (double t : times_ms) mean += t;
    mean /= double(batches);
    double var = 0;
    for (double t : times_ms) var += (t - mean) * (t - mean);
    rep.mean_ms = mean;
    rep.std_ms = std::sqrt(var / double(batches));
    return rep;
}

// Fixed-size batches cycling through a split.
inline std::vector<Batch> bench_batches(size_t available, size_t count, size_t batch_size) {
    if (available == 0) fail("eval", "bench: empty dataset");
    std::vector<Batch> out;
    size_t cursor = 0;
    for (size_t i = 0; i < count; ++i) {
        Batch b;
        b.task_index = 0;
        for (size_t k = 0; k < batch_size; ++k) {
            b.example_ids.push_back(static_cast<int32_t>(cursor));
            cursor = (cursor + 1) % available;
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization
// ---------------------------------------------------------------------------

inline std::string to_json_line(const MetricReport& rep) {
    nlohmann::json j;
    j["task"] = rep.task;
    j["split"] = rep.split;
    j["count"] = rep.count;
    for (const auto& [k, v] : rep.metrics) j["metrics"][k] = v;
    return j.dump();
}

inline std::string to_json_line(const BenchReport& rep) {
    nlohmann::json j;
    j["model"] = rep.model;
    j["batches"] = rep.batches;
    j["batch_size"] = rep.batch_size;
    j["seq_len"] = rep.seq_len;
    j["total_seconds"] = rep.total_seconds;
    j["mean_ms"] = rep.mean_ms;
    j["std_ms"] = rep.std_ms;
    return j.dump();
}

} // namespace mtkd
