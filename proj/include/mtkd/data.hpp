#pragma once

// Task registry, TSV ingestion, masking augmentation, and the
// task-homogeneous batch schedule shared by teacher refinement and
// distillation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtkd/error.hpp"
#include "mtkd/random.hpp"
#include "mtkd/tensor.hpp"
#include "mtkd/tokenize.hpp"

namespace mtkd {

enum class TaskKind {
    single_classification,
    pair_classification,
    pair_regression,
    relevance_ranking,
};

inline bool is_classification(TaskKind k) {
    return k == TaskKind::single_classification || k == TaskKind::pair_classification;
}

inline bool is_pair_input(TaskKind k) { return k != TaskKind::single_classification; }

inline TaskKind task_kind_from(const std::string& s) {
    if (s == "single_classification") return TaskKind::single_classification;
    if (s == "pair_classification") return TaskKind::pair_classification;
    if (s == "pair_regression") return TaskKind::pair_regression;
    if (s == "relevance_ranking") return TaskKind::relevance_ranking;
    fail("data", "unknown task kind: '" + s + "'");
}

inline std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::single_classification: return "single_classification";
        case TaskKind::pair_classification: return "pair_classification";
        case TaskKind::pair_regression: return "pair_regression";
        case TaskKind::relevance_ranking: return "relevance_ranking";
    }
    return "?";
}

// label: class index for classification, real value for regression,
// 1/0 positive flag for ranking. label_text preserves the original field so
// augmented TSVs round-trip byte-identically.
struct RawExample {
    std::string s1;
    std::optional<std::string> s2;
    double label = 0;
    std::string label_text;
    int64_t group = -1; // ranking only
};

struct Dataset {
    std::vector<RawExample> examples;
    size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

struct TsvSchema {
    int s1_col = 0;
    int s2_col = -1;
    int label_col = 1;
    int group_col = -1;
    bool header = false;
};

struct Task {
    std::string name;
    TaskKind kind = TaskKind::single_classification;
    int num_classes = 0;
    std::vector<std::string> labels; // classification label strings, index = class id
    double label_min = 0.0, label_max = 5.0; // regression reporting range
    TsvSchema schema;
    std::string train_path, dev_path;
    int aug_multiplier = 1;

    Dataset train, dev, augmented;

    void validate() const {
        if (name.empty()) fail("data", "task without a name");
        if (is_classification(kind)) {
            if (num_classes < 2)
                fail("data", "task " + name + ": classification needs num_classes >= 2");
            if (static_cast<int>(labels.size()) != num_classes)
                fail("data", "task " + name + ": label list does not match num_classes");
        } else if (num_classes != 0) {
            fail("data", "task " + name + ": num_classes only applies to classification");
        }
        if (kind == TaskKind::pair_regression && !(label_min < label_max))
            fail("data", "task " + name + ": label_min must be < label_max");
    }

    // Output width of both the teacher head and the student task layer.
    size_t logit_width() const {
        return is_classification(kind) ? static_cast<size_t>(num_classes) : 1;
    }
};

// ---------------------------------------------------------------------------
// TSV ingestion
// ---------------------------------------------------------------------------

struct LoadReport {
    size_t total_rows = 0;
    size_t skipped = 0;
    std::vector<std::string> messages; // first few skip reasons
};

namespace detail {

inline std::vector<std::string> split_tsv(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size() && std::isfinite(out);
    } catch (...) {
        return false;
    }
}

} // namespace detail

inline Dataset load_tsv(const std::string& path, const Task& task, const TsvSchema& schema,
                        LoadReport* report = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("data", "cannot read dataset file: " + path);

    LoadReport local;
    LoadReport& rep = report ? *report : local;
    Dataset ds;
    std::string line;
    bool saw_header = false;
    int max_col = std::max({schema.s1_col, schema.s2_col, schema.label_col, schema.group_col});

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("#mtkd-aug", 0) == 0) continue; // provenance header
        if (line.empty()) continue;
        if (schema.header && !saw_header) {
            saw_header = true;
            continue;
        }
        ++rep.total_rows;
        auto cols = detail::split_tsv(line);
        auto skip = [&](const std::string& why) {
            ++rep.skipped;
            if (rep.messages.size() < 5)
                rep.messages.push_back("row " + std::to_string(rep.total_rows) + ": " + why);
        };
        if (static_cast<int>(cols.size()) <= max_col) {
            skip("missing column");
            continue;
        }
        RawExample ex;
        ex.s1 = cols[schema.s1_col];
        if (ex.s1.empty()) {
            skip("empty sentence1");
            continue;
        }
        if (is_pair_input(task.kind)) {
            if (schema.s2_col < 0) fail("data", "task " + task.name + ": schema lacks sentence2");
            ex.s2 = cols[schema.s2_col];
            if (ex.s2->empty()) {
                skip("empty sentence2");
                continue;
            }
        }
        ex.label_text = cols[schema.label_col];
        if (is_classification(task.kind)) {
            auto it = std::find(task.labels.begin(), task.labels.end(), ex.label_text);
            if (it == task.labels.end()) {
                skip("unknown label '" + ex.label_text + "'");
                continue;
            }
            ex.label = static_cast<double>(it - task.labels.begin());
        } else if (task.kind == TaskKind::pair_regression) {
            if (!detail::parse_double(ex.label_text, ex.label)) {
                skip("bad regression label '" + ex.label_text + "'");
                continue;
            }
        } else { // relevance_ranking
            if (!detail::parse_double(ex.label_text, ex.label) ||
                (ex.label != 0.0 && ex.label != 1.0)) {
                skip("ranking label must be 0 or 1");
                continue;
            }
            if (schema.group_col < 0)
                fail("data", "task " + task.name + ": ranking schema lacks group column");
            try {
                ex.group = std::stoll(cols[schema.group_col]);
            } catch (...) {
                skip("bad group id");
                continue;
            }
        }
        ds.examples.push_back(std::move(ex));
    }
    if (rep.total_rows == 0) fail("data", "dataset is empty: " + path);
    if (rep.skipped * 10 > rep.total_rows)
        fail("data", "more than 10% malformed rows in " + path + " (" +
                         std::to_string(rep.skipped) + "/" + std::to_string(rep.total_rows) +
                         "), wrong schema?");
    return ds;
}

// Group ranking examples by id, in first-appearance order. Errors unless
// every group has exactly one positive.
inline std::vector<std::vector<int32_t>> ranking_groups(const Dataset& ds,
                                                        const std::string& task_name) {
    std::vector<std::vector<int32_t>> groups;
    std::map<int64_t, size_t> where;
    for (size_t i = 0; i < ds.examples.size(); ++i) {
        int64_t g = ds.examples[i].group;
        auto it = where.find(g);
        if (it == where.end()) {
            where[g] = groups.size();
            groups.push_back({static_cast<int32_t>(i)});
        } else {
            groups[it->second].push_back(static_cast<int32_t>(i));
        }
    }
    for (auto& g : groups) {
        int positives = 0;
        for (int32_t i : g) positives += ds.examples[i].label == 1.0;
        if (positives != 1)
            fail("data", "task " + task_name + ": ranking group " +
                             std::to_string(ds.examples[g[0]].group) + " has " +
                             std::to_string(positives) + " positives, want exactly 1");
    }
    return groups;
}

// ---------------------------------------------------------------------------
// Masking augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double p_mask = 0.1;
    int multiplier = 1;
    uint64_t seed = 0;

    void validate() const {
        if (p_mask < 0 || p_mask > 1) fail("data", "augment: p_mask must lie in [0,1]");
        if (multiplier < 1) fail("data", "augment: multiplier must be >= 1");
    }
};

namespace detail {

inline std::string mask_words(const std::string& text, double p, Rng& rng) {
    std::istringstream in(text);
    std::string word, out;
    bool first = true;
    while (in >> word) {
        if (!first) out += ' ';
        first = false;
        out += (uniform_unit(rng) < p) ? "[MASK]" : word;
    }
    return out;
}

} // namespace detail

// Each whitespace word is independently replaced by the literal token
// "[MASK]"; the label is untouched. Pairs mask both sentences independently.
inline RawExample mask_augment(const RawExample& ex, const AugmentConfig& cfg, Rng& rng) {
    RawExample out = ex;
    out.s1 = detail::mask_words(ex.s1, cfg.p_mask, rng);
    if (ex.s2) out.s2 = detail::mask_words(*ex.s2, cfg.p_mask, rng);
    return out;
}

// Original once plus (multiplier-1) independently masked copies. The rng
// stream is derived from cfg.seed and the task name, so reruns are
// bit-identical. Masked copies of ranking examples get fresh group ids: each
// copy is its own candidate group, so groups stay at their natural size and
// keep exactly one positive.
inline Dataset build_augmented_dataset(const Task& task, const AugmentConfig& cfg) {
    cfg.validate();
    if (task.train.empty()) fail("data", "task " + task.name + ": train split not loaded");
    Rng rng = make_rng(cfg.seed, "augment/" + task.name);

    std::map<int64_t, int64_t> dense;
    int64_t next_group = 0;
    if (task.kind == TaskKind::relevance_ranking) {
        for (const RawExample& ex : task.train.examples) {
            if (!dense.count(ex.group)) dense[ex.group] = static_cast<int64_t>(dense.size());
            next_group = std::max(next_group, ex.group + 1);
        }
    }

    Dataset out;
    out.examples = task.train.examples;
    out.examples.reserve(task.train.size() * static_cast<size_t>(cfg.multiplier));
    for (int copy = 1; copy < cfg.multiplier; ++copy)
        for (const RawExample& ex : task.train.examples) {
            RawExample masked = mask_augment(ex, cfg, rng);
            if (task.kind == TaskKind::relevance_ranking)
                masked.group = next_group +
                               (copy - 1) * static_cast<int64_t>(dense.size()) + dense[ex.group];
            out.examples.push_back(std::move(masked));
        }
    return out;
}

// Augmented TSV with the same column layout plus a provenance header line.
inline void save_augmented_tsv(const std::string& path, const Task& task, const Dataset& ds,
                               const AugmentConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("data", "cannot write augmented dataset: " + path);
    char header[128];
    std::snprintf(header, sizeof(header), "#mtkd-aug seed=%llu p=%g mult=%d",
                  static_cast<unsigned long long>(cfg.seed), cfg.p_mask, cfg.multiplier);
    out << header << '\n';
    const TsvSchema& sc = task.schema;
    int ncols = std::max({sc.s1_col, sc.s2_col, sc.label_col, sc.group_col}) + 1;
    for (const RawExample& ex : ds.examples) {
        std::vector<std::string> cols(ncols);
        cols[sc.s1_col] = ex.s1;
        if (sc.s2_col >= 0 && ex.s2) cols[sc.s2_col] = *ex.s2;
        cols[sc.label_col] = ex.label_text;
        if (sc.group_col >= 0) cols[sc.group_col] = std::to_string(ex.group);
        for (int i = 0; i < ncols; ++i) out << cols[i] << (i + 1 < ncols ? '\t' : '\n');
    }
}

// ---------------------------------------------------------------------------
// Batch packing
// ---------------------------------------------------------------------------

enum class Split { train, dev, augmented };

inline const Dataset& select_split(const Task& t, Split s) {
    switch (s) {
        case Split::train: return t.train;
        case Split::dev: return t.dev;
        case Split::augmented: return t.augmented;
    }
    fail("data", "bad split");
}

// Indices into one task's split; materialization into padded id matrices
// happens in the model layer.
struct Batch {
    int task_index = -1;
    std::vector<int32_t> example_ids;
    size_t size() const { return example_ids.size(); }
};

// Minimal packing view of one task's split: example count plus group ids for
// ranking tasks. Carrying no labels, it is what the distillation loop is
// allowed to see.
struct ScheduleView {
    std::string name;
    size_t n = 0;
    std::vector<int64_t> groups; // size n for ranking, else empty
};

inline ScheduleView schedule_view(const Task& task, Split split) {
    const Dataset& ds = select_split(task, split);
    ScheduleView v;
    v.name = task.name;
    v.n = ds.size();
    if (task.kind == TaskKind::relevance_ranking) {
        ranking_groups(ds, task.name); // validates the one-positive invariant
        v.groups.reserve(ds.size());
        for (const RawExample& ex : ds.examples) v.groups.push_back(ex.group);
    }
    return v;
}

namespace detail {

// Units that move together when shuffling/chunking: single examples, or
// whole candidate groups (first-appearance order) for ranking tasks.
inline std::vector<std::vector<int32_t>> schedule_units(const ScheduleView& view) {
    std::vector<std::vector<int32_t>> units;
    if (view.groups.empty()) {
        units.resize(view.n);
        for (size_t i = 0; i < view.n; ++i) units[i] = {static_cast<int32_t>(i)};
        return units;
    }
    std::map<int64_t, size_t> where;
    for (size_t i = 0; i < view.n; ++i) {
        auto it = where.find(view.groups[i]);
        if (it == where.end()) {
            where[view.groups[i]] = units.size();
            units.push_back({static_cast<int32_t>(i)});
        } else {
            units[it->second].push_back(static_cast<int32_t>(i));
        }
    }
    return units;
}

inline std::vector<Batch> chunk_units(int task_index, const std::string& task_name,
                                      const std::vector<std::vector<int32_t>>& units,
                                      size_t batch_size) {
    std::vector<Batch> batches;
    Batch cur;
    cur.task_index = task_index;
    for (const auto& u : units) {
        if (u.size() > batch_size)
            fail("data", "task " + task_name + ": ranking group of " +
                             std::to_string(u.size()) + " exceeds batch size " +
                             std::to_string(batch_size));
        if (!cur.example_ids.empty() && cur.example_ids.size() + u.size() > batch_size) {
            batches.push_back(std::move(cur));
            cur = Batch{};
            cur.task_index = task_index;
        }
        cur.example_ids.insert(cur.example_ids.end(), u.begin(), u.end());
        if (cur.example_ids.size() == batch_size) {
            batches.push_back(std::move(cur));
            cur = Batch{};
            cur.task_index = task_index;
        }
    }
    if (!cur.example_ids.empty()) batches.push_back(std::move(cur));
    return batches;
}

} // namespace detail

// One epoch: per task, shuffle then chunk (last batch may be short); merge
// every task's batches and shuffle the merged order. Every example appears
// exactly once and every batch holds a single task.
inline std::vector<Batch> pack_epoch(std::span<const ScheduleView> views, size_t batch_size,
                                     Rng& rng) {
    if (batch_size < 1) fail("data", "pack_epoch: batch_size must be >= 1");
    std::vector<Batch> all;
    for (size_t ti = 0; ti < views.size(); ++ti) {
        if (views[ti].n == 0)
            fail("data", "task " + views[ti].name + ": split is empty, cannot pack");
        auto units = detail::schedule_units(views[ti]);
        shuffle_inplace(units, rng);
        auto batches =
            detail::chunk_units(static_cast<int>(ti), views[ti].name, units, batch_size);
        for (auto& b : batches) all.push_back(std::move(b));
    }
    shuffle_inplace(all, rng);
    return all;
}

inline std::vector<Batch> pack_epoch(std::span<const Task> tasks, Split split, size_t batch_size,
                                     Rng& rng) {
    std::vector<ScheduleView> views;
    for (const Task& t : tasks) views.push_back(schedule_view(t, split));
    return pack_epoch(views, batch_size, rng);
}

// Deterministic in-order batches for evaluation and logit caching.
inline std::vector<Batch> sequential_batches(const ScheduleView& view, int task_index,
                                             size_t batch_size) {
    if (batch_size < 1) fail("data", "sequential_batches: batch_size must be >= 1");
    if (view.n == 0) fail("data", "task " + view.name + ": split is empty");
    auto units = detail::schedule_units(view);
    return detail::chunk_units(task_index, view.name, units, batch_size);
}

inline std::vector<Batch> sequential_batches(const Task& task, int task_index, Split split,
                                             size_t batch_size) {
    return sequential_batches(schedule_view(task, split), task_index, batch_size);
}

// ---------------------------------------------------------------------------
// Tokenized views
// ---------------------------------------------------------------------------

// Token data plus group structure only. Distillation consumes TokenizedTask
// and Batch exclusively, so true labels are structurally out of its reach;
// supervised paths fetch labels from the Task by example id.
struct TokenizedTask {
    std::string name;
    TaskKind kind = TaskKind::single_classification;
    std::vector<TokenizedExample> train, dev, augmented;
    std::vector<int64_t> train_groups, dev_groups, augmented_groups; // ranking only

    const std::vector<TokenizedExample>& split(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::dev: return dev;
            case Split::augmented: return augmented;
        }
        fail("data", "bad split");
    }

    ScheduleView view(Split s) const {
        ScheduleView v;
        v.name = name;
        v.n = split(s).size();
        switch (s) {
            case Split::train: v.groups = train_groups; break;
            case Split::dev: v.groups = dev_groups; break;
            case Split::augmented: v.groups = augmented_groups; break;
        }
        return v;
    }
};

namespace detail {
inline std::vector<TokenizedExample> tokenize_split(const Dataset& ds, TaskKind kind,
                                                    const Vocabulary& vocab, size_t max_seq_len,
                                                    TokenizerMode mode, size_t max_chars) {
    std::vector<TokenizedExample> out;
    out.reserve(ds.size());
    for (const RawExample& ex : ds.examples)
        out.push_back(encode_example(ex.s1, is_pair_input(kind) ? ex.s2 : std::nullopt, vocab,
                                     max_seq_len, mode, max_chars));
    return out;
}
} // namespace detail

inline TokenizedTask tokenize_task(const Task& task, const Vocabulary& vocab, size_t max_seq_len,
                                   TokenizerMode mode, size_t max_chars_per_word = 100) {
    TokenizedTask tt;
    tt.name = task.name;
    tt.kind = task.kind;
    auto groups_of = [&](const Dataset& ds) {
        std::vector<int64_t> g;
        if (task.kind == TaskKind::relevance_ranking) {
            g.reserve(ds.size());
            for (const RawExample& ex : ds.examples) g.push_back(ex.group);
        }
        return g;
    };
    tt.train = detail::tokenize_split(task.train, task.kind, vocab, max_seq_len, mode,
                                      max_chars_per_word);
    tt.train_groups = groups_of(task.train);
    if (!task.dev.empty()) {
        tt.dev = detail::tokenize_split(task.dev, task.kind, vocab, max_seq_len, mode,
                                        max_chars_per_word);
        tt.dev_groups = groups_of(task.dev);
    }
    if (!task.augmented.empty()) {
        tt.augmented = detail::tokenize_split(task.augmented, task.kind, vocab, max_seq_len, mode,
                                              max_chars_per_word);
        tt.augmented_groups = groups_of(task.augmented);
    }
    return tt;
}

inline std::vector<const TokenizedExample*> gather_examples(
    const std::vector<TokenizedExample>& split, const std::vector<int32_t>& ids) {
    std::vector<const TokenizedExample*> out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= split.size())
            fail("data", "example id " + std::to_string(id) + " outside split of " +
                             std::to_string(split.size()));
        out.push_back(&split[id]);
    }
    return out;
}

inline std::vector<double> gather_labels(const Task& task, Split split,
                                         const std::vector<int32_t>& ids) {
    const Dataset& ds = select_split(task, split);
    std::vector<double> out;
    out.reserve(ids.size());
    for (int32_t id : ids) out.push_back(ds.examples[id].label);
    return out;
}

// Within-batch ranking structure: groups of batch positions plus the batch
// position of each group's positive candidate. Supervised side only.
struct BatchGroups {
    std::vector<std::vector<int32_t>> groups;
    std::vector<int32_t> positives;
};

inline BatchGroups batch_ranking_groups(const Task& task, Split split, const Batch& batch) {
    const Dataset& ds = select_split(task, split);
    BatchGroups bg;
    std::map<int64_t, size_t> where;
    for (size_t pos = 0; pos < batch.example_ids.size(); ++pos) {
        const RawExample& ex = ds.examples[batch.example_ids[pos]];
        auto it = where.find(ex.group);
        if (it == where.end()) {
            where[ex.group] = bg.groups.size();
            bg.groups.push_back({static_cast<int32_t>(pos)});
            bg.positives.push_back(ex.label == 1.0 ? static_cast<int32_t>(pos) : -1);
        } else {
            bg.groups[it->second].push_back(static_cast<int32_t>(pos));
            if (ex.label == 1.0) bg.positives[it->second] = static_cast<int32_t>(pos);
        }
    }
    for (size_t g = 0; g < bg.groups.size(); ++g)
        if (bg.positives[g] < 0)
            fail("data", "task " + task.name + ": batch group without a positive candidate");
    return bg;
}

} // namespace mtkd
