#pragma once

// Bundled synthetic task suite: four tasks, one per head kind, generated
// from seeded lexical rules so every pipeline run works without downloads.
// Labels are simple functions of word identity, which both the teacher and
// the students can learn, and which all four tasks share.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/random.hpp"

namespace mtkd {

struct SyntheticSuiteConfig {
    uint64_t seed = 13;
    size_t train_single = 256;
    size_t train_pair = 256;
    size_t train_reg = 32; // deliberately low-data, mirrors a small similarity corpus
    size_t train_rank_groups = 128; // 512 candidates
    size_t dev_single = 64;
    size_t dev_pair = 64;
    size_t dev_reg = 48;
    size_t dev_rank_groups = 24;
    size_t rank_group_size = 4;
};

namespace synth {

inline const std::vector<std::string>& positive_words() {
    static const std::vector<std::string> w{"good", "great", "happy", "bright", "win", "fine"};
    return w;
}
inline const std::vector<std::string>& negative_words() {
    static const std::vector<std::string> w{"bad", "sad", "dark", "lose", "poor", "grim"};
    return w;
}
inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> w{"the", "a", "day", "thing", "time",
                                            "one", "it", "was", "very", "so"};
    return w;
}
inline const std::vector<std::string>& content_words() {
    static const std::vector<std::string> w{"sun",  "moon", "star", "cloud", "tree", "river",
                                            "stone", "bird", "fish", "wind",  "rain", "snow"};
    return w;
}

inline std::string pick(const std::vector<std::string>& words, Rng& rng) {
    return words[uniform_index(rng, words.size())];
}

inline std::string join_shuffled(std::vector<std::string> words, Rng& rng) {
    shuffle_inplace(words, rng);
    std::string s;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) s += ' ';
        s += words[i];
    }
    return s;
}

// Sentence with a clear majority polarity.
inline std::string polarity_sentence(bool positive, Rng& rng) {
    const auto& main_set = positive ? positive_words() : negative_words();
    const auto& other_set = positive ? negative_words() : positive_words();
    std::vector<std::string> words;
    size_t strong = 2 + uniform_index(rng, 2);
    for (size_t i = 0; i < strong; ++i) words.push_back(pick(main_set, rng));
    if (uniform_index(rng, 3) == 0) words.push_back(pick(other_set, rng));
    size_t fillers = 2 + uniform_index(rng, 3);
    for (size_t i = 0; i < fillers; ++i) words.push_back(pick(filler_words(), rng));
    return join_shuffled(std::move(words), rng);
}

inline std::vector<std::string> content_sample(Rng& rng, size_t n) {
    std::vector<std::string> pool = content_words();
    shuffle_inplace(pool, rng);
    pool.resize(n);
    return pool;
}

inline std::string content_sentence(const std::vector<std::string>& content, Rng& rng) {
    std::vector<std::string> words = content;
    size_t fillers = 1 + uniform_index(rng, 3);
    for (size_t i = 0; i < fillers; ++i) words.push_back(pick(filler_words(), rng));
    return join_shuffled(std::move(words), rng);
}

inline std::string format_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

} // namespace synth

inline std::vector<Task> make_synthetic_suite(const SyntheticSuiteConfig& cfg) {
    std::vector<Task> tasks(4);

    Task& senti = tasks[0];
    senti.name = "senti";
    senti.kind = TaskKind::single_classification;
    senti.num_classes = 2;
    senti.labels = {"0", "1"};
    senti.schema = {.s1_col = 0, .s2_col = -1, .label_col = 1, .group_col = -1};
    senti.aug_multiplier = 10;

    Task& paircls = tasks[1];
    paircls.name = "paircls";
    paircls.kind = TaskKind::pair_classification;
    paircls.num_classes = 2;
    paircls.labels = {"0", "1"};
    paircls.schema = {.s1_col = 0, .s2_col = 1, .label_col = 2, .group_col = -1};
    paircls.aug_multiplier = 10;

    Task& sim = tasks[2];
    sim.name = "sim";
    sim.kind = TaskKind::pair_regression;
    sim.label_min = 0;
    sim.label_max = 5;
    sim.schema = {.s1_col = 0, .s2_col = 1, .label_col = 2, .group_col = -1};
    sim.aug_multiplier = 40; // the small dataset gets the large multiplier

    Task& rank = tasks[3];
    rank.name = "rank";
    rank.kind = TaskKind::relevance_ranking;
    rank.schema = {.s1_col = 1, .s2_col = 2, .label_col = 3, .group_col = 0};
    rank.aug_multiplier = 10;

    auto gen_senti = [&](Dataset& ds, size_t n, Rng& rng) {
        for (size_t i = 0; i < n; ++i) {
            bool pos = uniform_index(rng, 2) == 1;
            RawExample ex;
            ex.s1 = synth::polarity_sentence(pos, rng);
            ex.label = pos ? 1.0 : 0.0;
            ex.label_text = pos ? "1" : "0";
            ds.examples.push_back(std::move(ex));
        }
    };
    auto gen_paircls = [&](Dataset& ds, size_t n, Rng& rng) {
        for (size_t i = 0; i < n; ++i) {
            bool a = uniform_index(rng, 2) == 1;
            bool same = uniform_index(rng, 2) == 1;
            bool b = same ? a : !a;
            RawExample ex;
            ex.s1 = synth::polarity_sentence(a, rng);
            ex.s2 = synth::polarity_sentence(b, rng);
            ex.label = same ? 1.0 : 0.0;
            ex.label_text = same ? "1" : "0";
            ds.examples.push_back(std::move(ex));
        }
    };
    auto gen_sim = [&](Dataset& ds, size_t n, Rng& rng) {
        // similarity = shared content words: both sentences carry two, the
        // pair shares 0, 1 or 2 of them, giving scores 0 / 2.5 / 5
        for (size_t i = 0; i < n; ++i) {
            std::vector<std::string> pool = synth::content_sample(rng, 4);
            size_t shared = uniform_index(rng, 3);
            std::vector<std::string> c1{pool[0], pool[1]};
            std::vector<std::string> c2;
            for (size_t k = 0; k < shared; ++k) c2.push_back(pool[k]);
            for (size_t k = shared; k < 2; ++k) c2.push_back(pool[2 + k - shared]);
            double score = 5.0 * double(shared) / 2.0;

            RawExample ex;
            ex.s1 = synth::content_sentence(c1, rng);
            ex.s2 = synth::content_sentence(c2, rng);
            ex.label_text = synth::format_label(score);
            ex.label = std::stod(ex.label_text);
            ds.examples.push_back(std::move(ex));
        }
    };
    auto gen_rank = [&](Dataset& ds, size_t n_groups, Rng& rng, int64_t group_base) {
        for (size_t g = 0; g < n_groups; ++g) {
            std::string target = synth::pick(synth::content_words(), rng);
            std::string query = synth::content_sentence({target}, rng);
            size_t pos = uniform_index(rng, cfg.rank_group_size);
            for (size_t c = 0; c < cfg.rank_group_size; ++c) {
                RawExample ex;
                ex.s1 = query;
                if (c == pos) {
                    ex.s2 = synth::content_sentence({target}, rng);
                } else {
                    std::string other = target;
                    while (other == target) other = synth::pick(synth::content_words(), rng);
                    ex.s2 = synth::content_sentence({other}, rng);
                }
                ex.label = c == pos ? 1.0 : 0.0;
                ex.label_text = c == pos ? "1" : "0";
                ex.group = group_base + static_cast<int64_t>(g);
                ds.examples.push_back(std::move(ex));
            }
        }
    };

    {
        Rng rng = make_rng(cfg.seed, "synth/senti");
        gen_senti(senti.train, cfg.train_single, rng);
        gen_senti(senti.dev, cfg.dev_single, rng);
    }
    {
        Rng rng = make_rng(cfg.seed, "synth/paircls");
        gen_paircls(paircls.train, cfg.train_pair, rng);
        gen_paircls(paircls.dev, cfg.dev_pair, rng);
    }
    {
        Rng rng = make_rng(cfg.seed, "synth/sim");
        gen_sim(sim.train, cfg.train_reg, rng);
        gen_sim(sim.dev, cfg.dev_reg, rng);
    }
    {
        Rng rng = make_rng(cfg.seed, "synth/rank");
        gen_rank(rank.train, cfg.train_rank_groups, rng, 0);
        gen_rank(rank.dev, cfg.dev_rank_groups, rng, 1000000);
    }
    for (Task& t : tasks) t.validate();
    return tasks;
}

// All training text, one sentence per line; input for build-vocab.
inline std::string synthetic_corpus(const std::vector<Task>& tasks) {
    std::string out;
    for (const Task& t : tasks)
        for (const RawExample& ex : t.train.examples) {
            out += ex.s1;
            out += '\n';
            if (ex.s2) {
                out += *ex.s2;
                out += '\n';
            }
        }
    return out;
}

// Writes <name>.train.tsv / <name>.dev.tsv per task and fills the path
// fields, so the suite can be consumed through the normal TSV loaders.
inline void save_synthetic_suite(const std::string& dir, std::vector<Task>& tasks) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (Task& t : tasks) {
        auto write = [&](const Dataset& ds, const std::string& split) {
            std::string path = (fs::path(dir) / (t.name + "." + split + ".tsv")).string();
            std::ofstream out(path, std::ios::binary);
            if (!out) fail("data", "cannot write " + path);
            int ncols = std::max({t.schema.s1_col, t.schema.s2_col, t.schema.label_col,
                                  t.schema.group_col}) +
                        1;
            for (const RawExample& ex : ds.examples) {
                std::vector<std::string> cols(ncols);
                cols[t.schema.s1_col] = ex.s1;
                if (t.schema.s2_col >= 0 && ex.s2) cols[t.schema.s2_col] = *ex.s2;
                cols[t.schema.label_col] = ex.label_text;
                if (t.schema.group_col >= 0) cols[t.schema.group_col] = std::to_string(ex.group);
                for (int i = 0; i < ncols; ++i) out << cols[i] << (i + 1 < ncols ? '\t' : '\n');
            }
            return path;
        };
        t.train_path = write(t.train, "train");
        t.dev_path = write(t.dev, "dev");
    }
}

} // namespace mtkd
