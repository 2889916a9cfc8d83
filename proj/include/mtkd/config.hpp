#pragma once

// Flat "key = value" run configuration. Unknown keys are errors; '#' starts
// a comment. Relative dataset paths resolve against the config file's
// directory so bundled suites stay relocatable.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/distill.hpp"
#include "mtkd/error.hpp"
#include "mtkd/student.hpp"
#include "mtkd/teacher.hpp"
#include "mtkd/tokenize.hpp"

namespace mtkd {

struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir; // optional, --out overrides

    TokenizerMode tokenizer_mode = TokenizerMode::wordpiece;
    std::string vocab_path;
    size_t vocab_size = 200;
    size_t max_seq_len = 24;
    size_t max_chars_per_word = 100;

    double augment_p_mask = 0.1;
    int augment_multiplier = 10; // per-task aug_multiplier overrides

    TeacherConfig teacher;
    size_t teacher_epochs = 1;
    size_t teacher_batch_size = 32;
    OptimizerConfig teacher_opt{OptAlgo::adam, 5e-4, 0.9, 0.999, 1e-8, 1.0};

    StudentConfig student;
    bool student_init_from_teacher = false;

    DistillRunConfig distill;
    std::vector<std::string> distill_tasks; // empty = all tasks

    size_t finetune_epochs = 4;
    size_t eval_batch_size = 64;

    size_t bench_batches = 100;
    size_t bench_batch_size = 128;
    size_t bench_seq_len = 128;
    size_t bench_warmup = 5;
    std::string bench_task; // default: first task

    std::vector<Task> tasks; // config-file order
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        fail("cli", "config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        fail("cli", "config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("cli", "config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

inline RunConfig parse_run_config_text(const std::string& text, const std::string& base_dir) {
    RunConfig cfg;
    bool seed_seen = false;
    bool encoder_msl_set = false, student_msl_set = false;
    std::map<std::string, bool> task_mult_set;
    std::map<std::string, size_t> task_index;
    auto task_of = [&](const std::string& name) -> Task& {
        auto it = task_index.find(name);
        if (it != task_index.end()) return cfg.tasks[it->second];
        task_index[name] = cfg.tasks.size();
        Task t;
        t.name = name;
        cfg.tasks.push_back(std::move(t));
        return cfg.tasks.back();
    };
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        if (fp.is_absolute() || base_dir.empty()) return p;
        return (std::filesystem::path(base_dir) / fp).string();
    };

    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = line;
        size_t hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            fail("cli", "config line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            fail("cli", "config line " + std::to_string(line_no) + ": empty key or value");

        using detail::parse_bool;
        using detail::parse_f64;
        using detail::parse_u64;

        if (key == "seed") {
            cfg.seed = parse_u64(key, val);
            seed_seen = true;
        } else if (key == "out") {
            cfg.out_dir = resolve(val);
        } else if (key == "tokenizer.mode") {
            cfg.tokenizer_mode = tokenizer_mode_from(val);
        } else if (key == "tokenizer.vocab") {
            cfg.vocab_path = resolve(val);
        } else if (key == "tokenizer.vocab_size") {
            cfg.vocab_size = parse_u64(key, val);
        } else if (key == "tokenizer.max_seq_len") {
            cfg.max_seq_len = parse_u64(key, val);
        } else if (key == "tokenizer.max_chars_per_word") {
            cfg.max_chars_per_word = parse_u64(key, val);
        } else if (key == "augment.p_mask") {
            cfg.augment_p_mask = parse_f64(key, val);
        } else if (key == "augment.multiplier") {
            cfg.augment_multiplier = static_cast<int>(parse_u64(key, val));
        } else if (key == "encoder.layers") {
            cfg.teacher.encoder.layers = parse_u64(key, val);
        } else if (key == "encoder.width") {
            cfg.teacher.encoder.width = parse_u64(key, val);
        } else if (key == "encoder.heads") {
            cfg.teacher.encoder.heads = parse_u64(key, val);
        } else if (key == "encoder.ffn_width") {
            cfg.teacher.encoder.ffn_width = parse_u64(key, val);
        } else if (key == "encoder.max_seq_len") {
            cfg.teacher.encoder.max_seq_len = parse_u64(key, val);
            encoder_msl_set = true;
        } else if (key == "teacher.dropout") {
            cfg.teacher.dropout = parse_f64(key, val);
        } else if (key == "teacher.epochs") {
            cfg.teacher_epochs = parse_u64(key, val);
        } else if (key == "teacher.batch_size") {
            cfg.teacher_batch_size = parse_u64(key, val);
        } else if (key == "teacher.lr") {
            cfg.teacher_opt.learning_rate = parse_f64(key, val);
        } else if (key == "teacher.clip_norm") {
            if (val == "none")
                cfg.teacher_opt.clip_norm.reset();
            else
                cfg.teacher_opt.clip_norm = parse_f64(key, val);
        } else if (key == "student.arch") {
            cfg.student.arch = student_arch_from(val);
        } else if (key == "student.embed_dim") {
            cfg.student.bilstm.embed_dim = parse_u64(key, val);
        } else if (key == "student.lstm_hidden") {
            cfg.student.bilstm.lstm_hidden = parse_u64(key, val);
        } else if (key == "student.task_layer_dim") {
            cfg.student.task_layer_dim = parse_u64(key, val);
            cfg.student.bilstm.task_layer_dim = cfg.student.task_layer_dim;
        } else if (key == "student.layers") {
            cfg.student.transformer.layers = parse_u64(key, val);
        } else if (key == "student.width") {
            cfg.student.transformer.width = parse_u64(key, val);
        } else if (key == "student.heads") {
            cfg.student.transformer.heads = parse_u64(key, val);
        } else if (key == "student.ffn_width") {
            cfg.student.transformer.ffn_width = parse_u64(key, val);
        } else if (key == "student.max_seq_len") {
            cfg.student.transformer.max_seq_len = parse_u64(key, val);
            student_msl_set = true;
        } else if (key == "student.init_from_teacher") {
            cfg.student_init_from_teacher = parse_bool(key, val);
        } else if (key == "distill.epochs") {
            cfg.distill.epoch_max = parse_u64(key, val);
        } else if (key == "distill.batch_size") {
            cfg.distill.batch_size = parse_u64(key, val);
        } else if (key == "distill.lr") {
            cfg.distill.opt.learning_rate = parse_f64(key, val);
        } else if (key == "distill.clip_norm") {
            if (val == "none")
                cfg.distill.opt.clip_norm.reset();
            else
                cfg.distill.opt.clip_norm = parse_f64(key, val);
        } else if (key == "distill.cache_logits") {
            cfg.distill.cache_logits = parse_bool(key, val);
        } else if (key == "distill.tasks") {
            cfg.distill_tasks = detail::split_commas(val);
        } else if (key == "finetune.epochs") {
            cfg.finetune_epochs = parse_u64(key, val);
        } else if (key == "eval.batch_size") {
            cfg.eval_batch_size = parse_u64(key, val);
        } else if (key == "bench.batches") {
            cfg.bench_batches = parse_u64(key, val);
        } else if (key == "bench.batch_size") {
            cfg.bench_batch_size = parse_u64(key, val);
        } else if (key == "bench.seq_len") {
            cfg.bench_seq_len = parse_u64(key, val);
        } else if (key == "bench.warmup") {
            cfg.bench_warmup = parse_u64(key, val);
        } else if (key == "bench.task") {
            cfg.bench_task = val;
        } else if (key.rfind("task.", 0) == 0) {
            std::string rest = key.substr(5);
            size_t dot = rest.find('.');
            if (dot == std::string::npos || dot == 0)
                fail("cli", "bad task key '" + key + "', want task.<name>.<field>");
            std::string name = rest.substr(0, dot);
            std::string field = rest.substr(dot + 1);
            Task& t = task_of(name);
            if (field == "kind") {
                t.kind = task_kind_from(val);
            } else if (field == "train") {
                t.train_path = resolve(val);
            } else if (field == "dev") {
                t.dev_path = resolve(val);
            } else if (field == "labels") {
                t.labels = detail::split_commas(val);
                t.num_classes = static_cast<int>(t.labels.size());
            } else if (field == "label_min") {
                t.label_min = parse_f64(key, val);
            } else if (field == "label_max") {
                t.label_max = parse_f64(key, val);
            } else if (field == "s1_col") {
                t.schema.s1_col = static_cast<int>(parse_u64(key, val));
            } else if (field == "s2_col") {
                t.schema.s2_col = static_cast<int>(parse_u64(key, val));
            } else if (field == "label_col") {
                t.schema.label_col = static_cast<int>(parse_u64(key, val));
            } else if (field == "group_col") {
                t.schema.group_col = static_cast<int>(parse_u64(key, val));
            } else if (field == "header") {
                t.schema.header = parse_bool(key, val);
            } else if (field == "aug_multiplier") {
                t.aug_multiplier = static_cast<int>(parse_u64(key, val));
                task_mult_set[name] = true;
            } else {
                fail("cli", "unknown config key '" + key + "'");
            }
        } else {
            fail("cli", "unknown config key '" + key + "'");
        }
    }

    if (!seed_seen) fail("cli", "config is missing the mandatory 'seed' key");
    if (cfg.tasks.empty()) fail("cli", "config defines no tasks");
    if (!encoder_msl_set) cfg.teacher.encoder.max_seq_len = cfg.max_seq_len;
    if (!student_msl_set) cfg.student.transformer.max_seq_len = cfg.max_seq_len;
    for (Task& t : cfg.tasks) {
        if (t.train_path.empty())
            fail("cli", "task " + t.name + ": missing task." + t.name + ".train");
        if (is_pair_input(t.kind) && t.schema.s2_col < 0)
            fail("cli", "task " + t.name + ": pair task needs task." + t.name + ".s2_col");
        if (t.kind == TaskKind::relevance_ranking && t.schema.group_col < 0)
            fail("cli", "task " + t.name + ": ranking task needs task." + t.name + ".group_col");
        if (!task_mult_set.count(t.name)) t.aug_multiplier = cfg.augment_multiplier;
        t.validate();
    }
    for (const std::string& name : cfg.distill_tasks) {
        bool found = false;
        for (const Task& t : cfg.tasks) found |= t.name == name;
        if (!found) fail("cli", "distill.tasks names unknown task '" + name + "'");
    }
    return cfg;
}

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cli", "cannot read config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string base = std::filesystem::absolute(path).parent_path().string();
    return parse_run_config_text(ss.str(), base);
}

} // namespace mtkd
