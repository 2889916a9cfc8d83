// mtkd: multi-task knowledge distillation pipeline driver.
//
// Subcommands: gen-synthetic, build-vocab, augment, train-teacher, distill,
// finetune, eval, bench. One config file per run; flags are limited to
// --config, --out, --seed and --dry-run. Every run writes a manifest with
// content hashes of its inputs beside its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mtkd/config.hpp"
#include "mtkd/distill.hpp"
#include "mtkd/eval.hpp"
#include "mtkd/hash.hpp"
#include "mtkd/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mtkd;

namespace {

struct CliContext {
    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool has_seed_override = false;
    bool dry_run = false;

    RunConfig cfg;
    std::string out;

    void load() {
        cfg = parse_run_config(config_path);
        if (has_seed_override) cfg.seed = seed_override;
        out = !out_override.empty() ? out_override : cfg.out_dir;
        if (out.empty()) fail("cli", "no output directory: pass --out or set 'out' in the config");
    }

    std::string vocab_path() const {
        return cfg.vocab_path.empty() ? (fs::path(out) / "vocab.txt").string() : cfg.vocab_path;
    }
    std::string aug_path(const Task& t) const {
        return (fs::path(out) / "aug" / (t.name + ".tsv")).string();
    }
    std::string teacher_ckpt() const { return (fs::path(out) / "teacher.mkd1").string(); }
    std::string student_ckpt() const { return (fs::path(out) / "student.mkd1").string(); }

    void ensure_out() const { fs::create_directories(out); }

    void require_file(const std::string& path, const std::string& hint) const {
        if (!fs::exists(path))
            fail("cli", "missing " + path + "; run `mtkd " + hint + "` first");
    }

    void write_manifest(const std::string& command, const std::vector<std::string>& inputs) const {
        nlohmann::json j;
        j["command"] = command;
        j["seed"] = cfg.seed;
        j["config"] = config_path;
        j["config_sha1"] = sha1_hex(read_file_bytes(config_path));
        for (const std::string& p : inputs)
            if (fs::exists(p)) j["inputs"][p] = git_blob_hash_file(p);
        std::ofstream outf(fs::path(out) / "manifest.json", std::ios::binary);
        outf << j.dump(2) << '\n';
    }
};

void load_train_splits(RunConfig& cfg, bool need_dev) {
    for (Task& t : cfg.tasks) {
        LoadReport rep;
        t.train = load_tsv(t.train_path, t, t.schema, &rep);
        if (rep.skipped > 0)
            std::cerr << "warning: " << t.name << ": skipped " << rep.skipped << "/"
                      << rep.total_rows << " malformed rows (" << rep.messages[0] << ")\n";
        if (!t.dev_path.empty()) {
            t.dev = load_tsv(t.dev_path, t, t.schema);
        } else if (need_dev) {
            fail("cli", "task " + t.name + ": missing dev split (task." + t.name + ".dev)");
        }
    }
}

std::vector<std::string> task_input_paths(const RunConfig& cfg) {
    std::vector<std::string> paths;
    for (const Task& t : cfg.tasks) {
        paths.push_back(t.train_path);
        if (!t.dev_path.empty()) paths.push_back(t.dev_path);
    }
    return paths;
}

std::vector<TokenizedTask> tokenize_all(const RunConfig& cfg, const Vocabulary& vocab,
                                        std::span<const Task> tasks) {
    std::vector<TokenizedTask> tok;
    for (const Task& t : tasks)
        tok.push_back(tokenize_task(t, vocab, cfg.max_seq_len, cfg.tokenizer_mode,
                                    cfg.max_chars_per_word));
    return tok;
}

constexpr float kKindTeacher = 0.f, kKindBilstm = 1.f, kKindTransformer = 2.f;

void save_model(const std::string& path, const std::vector<Tensor<float>>& params, float kind) {
    auto arrays = params_to_arrays<float>(params);
    arrays.push_back({"meta/kind", {1}, {kind}});
    save_checkpoint(path, arrays);
}

float checkpoint_kind(const std::vector<CheckpointArray>& arrays) {
    for (const auto& a : arrays)
        if (a.name == "meta/kind" && a.data.size() == 1) return a.data[0];
    fail("cli", "checkpoint has no meta/kind array; not produced by this tool?");
}

// Tasks (in config order) that have per-task arrays inside the checkpoint.
std::vector<Task> checkpoint_tasks(const RunConfig& cfg,
                                   const std::vector<CheckpointArray>& arrays,
                                   const std::string& prefix) {
    std::vector<Task> out;
    for (const Task& t : cfg.tasks) {
        std::string want = prefix + "/" + t.name + "/";
        for (const auto& a : arrays)
            if (a.name.rfind(want, 0) == 0) {
                out.push_back(t);
                break;
            }
    }
    if (out.empty()) fail("cli", "checkpoint holds no task arrays under '" + prefix + "/'");
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const std::string& out, uint64_t seed) {
    SyntheticSuiteConfig scfg;
    scfg.seed = seed;
    std::vector<Task> tasks = make_synthetic_suite(scfg);
    fs::create_directories(fs::path(out) / "data");
    save_synthetic_suite((fs::path(out) / "data").string(), tasks);

    std::ostringstream conf;
    conf << "# synthetic 4-task suite, generated by `mtkd gen-synthetic`\n";
    conf << "seed = " << seed << "\n\n";
    conf << "tokenizer.mode = wordpiece\n";
    conf << "tokenizer.vocab_size = 160\n";
    conf << "tokenizer.max_seq_len = 20\n";
    conf << "tokenizer.vocab = vocab.txt\n\n";
    conf << "augment.p_mask = 0.1\n";
    conf << "augment.multiplier = 4\n\n";
    conf << "encoder.layers = 2\nencoder.width = 32\nencoder.heads = 2\n";
    conf << "encoder.ffn_width = 64\n";
    conf << "teacher.epochs = 30\nteacher.batch_size = 16\nteacher.lr = 0.001\n\n";
    conf << "student.arch = bilstm\nstudent.embed_dim = 16\nstudent.lstm_hidden = 16\n";
    conf << "student.task_layer_dim = 32\n";
    conf << "student.layers = 3\nstudent.width = 32\nstudent.heads = 2\n";
    conf << "student.ffn_width = 64\n\n";
    conf << "distill.epochs = 8\ndistill.batch_size = 16\ndistill.lr = 0.0005\n";
    conf << "distill.cache_logits = true\n\n";
    conf << "finetune.epochs = 4\n";
    conf << "bench.batches = 10\nbench.batch_size = 32\nbench.seq_len = 20\n\n";
    for (const Task& t : tasks) {
        conf << "task." << t.name << ".kind = " << task_kind_name(t.kind) << "\n";
        conf << "task." << t.name << ".train = data/" << t.name << ".train.tsv\n";
        conf << "task." << t.name << ".dev = data/" << t.name << ".dev.tsv\n";
        if (is_classification(t.kind)) {
            conf << "task." << t.name << ".labels = ";
            for (size_t i = 0; i < t.labels.size(); ++i)
                conf << (i ? "," : "") << t.labels[i];
            conf << "\n";
        }
        if (is_pair_input(t.kind)) conf << "task." << t.name << ".s2_col = " << t.schema.s2_col << "\n";
        conf << "task." << t.name << ".s1_col = " << t.schema.s1_col << "\n";
        conf << "task." << t.name << ".label_col = " << t.schema.label_col << "\n";
        if (t.schema.group_col >= 0)
            conf << "task." << t.name << ".group_col = " << t.schema.group_col << "\n";
        if (t.kind == TaskKind::pair_regression) {
            conf << "task." << t.name << ".label_min = 0\n";
            conf << "task." << t.name << ".label_max = 5\n";
            conf << "task." << t.name << ".aug_multiplier = 8\n";
        }
        conf << "\n";
    }
    std::ofstream cf(fs::path(out) / "synthetic.conf", std::ios::binary);
    cf << conf.str();
    std::cout << "wrote synthetic suite under " << out << "\n";
    for (const Task& t : tasks)
        std::cout << "  " << t.name << ": " << t.train.size() << " train, " << t.dev.size()
                  << " dev\n";
    std::cout << "config: " << (fs::path(out) / "synthetic.conf").string() << "\n";
    return 0;
}

int cmd_build_vocab(CliContext& ctx, const std::vector<std::string>& corpora) {
    std::string corpus;
    std::vector<std::string> inputs;
    if (!corpora.empty()) {
        for (const std::string& p : corpora) {
            corpus += read_file_bytes(p);
            corpus += '\n';
            inputs.push_back(p);
        }
    } else {
        load_train_splits(ctx.cfg, false);
        for (const Task& t : ctx.cfg.tasks)
            for (const RawExample& ex : t.train.examples) {
                corpus += ex.s1;
                corpus += '\n';
                if (ex.s2) {
                    corpus += *ex.s2;
                    corpus += '\n';
                }
            }
        inputs = task_input_paths(ctx.cfg);
    }
    if (ctx.dry_run) {
        std::cout << "dry-run: would build a " << ctx.cfg.vocab_size << "-token "
                  << (ctx.cfg.tokenizer_mode == TokenizerMode::wordpiece ? "wordpiece" : "word")
                  << " vocabulary at " << ctx.vocab_path() << "\n";
        return 0;
    }
    Vocabulary vocab = build_vocab(corpus, ctx.cfg.vocab_size, ctx.cfg.tokenizer_mode);
    ctx.ensure_out();
    fs::create_directories(fs::path(ctx.vocab_path()).parent_path());
    vocab.save(ctx.vocab_path());
    ctx.write_manifest("build-vocab", inputs);
    std::cout << "vocabulary: " << vocab.size() << " tokens -> " << ctx.vocab_path() << "\n";
    return 0;
}

int cmd_augment(CliContext& ctx) {
    load_train_splits(ctx.cfg, false);
    if (ctx.dry_run) {
        for (const Task& t : ctx.cfg.tasks)
            std::cout << "dry-run: would augment " << t.name << " x" << t.aug_multiplier
                      << " -> " << ctx.aug_path(t) << "\n";
        return 0;
    }
    ctx.ensure_out();
    fs::create_directories(fs::path(ctx.out) / "aug");
    for (Task& t : ctx.cfg.tasks) {
        AugmentConfig acfg;
        acfg.p_mask = ctx.cfg.augment_p_mask;
        acfg.multiplier = t.aug_multiplier;
        acfg.seed = ctx.cfg.seed;
        Dataset aug = build_augmented_dataset(t, acfg);
        save_augmented_tsv(ctx.aug_path(t), t, aug, acfg);
        std::cout << t.name << ": " << t.train.size() << " x " << t.aug_multiplier << " = "
                  << aug.size() << " -> " << ctx.aug_path(t) << "\n";
    }
    ctx.write_manifest("augment", task_input_paths(ctx.cfg));
    return 0;
}

int cmd_train_teacher(CliContext& ctx) {
    ctx.require_file(ctx.vocab_path(), "build-vocab");
    Vocabulary vocab = Vocabulary::load(ctx.vocab_path());
    load_train_splits(ctx.cfg, false);
    if (ctx.dry_run) {
        std::cout << "dry-run: would refine the teacher for " << ctx.cfg.teacher_epochs
                  << " epochs over " << ctx.cfg.tasks.size() << " tasks -> "
                  << ctx.teacher_ckpt() << "\n";
        return 0;
    }
    auto tok = tokenize_all(ctx.cfg, vocab, ctx.cfg.tasks);
    TeacherModel<float> teacher(ctx.cfg.teacher, vocab.size(), ctx.cfg.tasks, ctx.cfg.seed);
    RefineReport report =
        refine_multi_task<float>(teacher, ctx.cfg.tasks, tok, ctx.cfg.teacher_opt,
                                 ctx.cfg.teacher_epochs, ctx.cfg.teacher_batch_size, ctx.cfg.seed);
    ctx.ensure_out();
    save_model(ctx.teacher_ckpt(), teacher.all_params(), kKindTeacher);
    std::ofstream log(fs::path(ctx.out) / "teacher_loss.jsonl", std::ios::binary);
    for (size_t e = 0; e < report.per_epoch.size(); ++e)
        for (const auto& [task, loss] : report.per_epoch[e]) {
            nlohmann::json j;
            j["epoch"] = e;
            j["task"] = task;
            j["loss"] = loss;
            log << j.dump() << '\n';
        }
    ctx.write_manifest("train-teacher", task_input_paths(ctx.cfg));
    std::cout << "teacher -> " << ctx.teacher_ckpt() << " (" << report.per_epoch.size()
              << " epochs)\n";
    if (!report.per_epoch.empty()) {
        std::cout << "final losses:";
        for (const auto& [task, loss] : report.per_epoch.back())
            std::cout << " " << task << "=" << loss;
        std::cout << "\n";
    }
    return 0;
}

// Tasks selected for distillation, in config order.
std::vector<size_t> distill_task_indices(const RunConfig& cfg) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < cfg.tasks.size(); ++i) {
        if (cfg.distill_tasks.empty()) {
            idx.push_back(i);
        } else {
            for (const auto& name : cfg.distill_tasks)
                if (cfg.tasks[i].name == name) idx.push_back(i);
        }
    }
    return idx;
}

int cmd_distill(CliContext& ctx) {
    ctx.require_file(ctx.vocab_path(), "build-vocab");
    ctx.require_file(ctx.teacher_ckpt(), "train-teacher");
    std::vector<size_t> selected = distill_task_indices(ctx.cfg);
    for (size_t i : selected) ctx.require_file(ctx.aug_path(ctx.cfg.tasks[i]), "augment");
    if (ctx.dry_run) {
        std::cout << "dry-run: would distill " << selected.size() << " task(s) for "
                  << ctx.cfg.distill.epoch_max << " epochs -> " << ctx.student_ckpt() << "\n";
        return 0;
    }

    Vocabulary vocab = Vocabulary::load(ctx.vocab_path());
    load_train_splits(ctx.cfg, false);

    // teacher over all config tasks, weights from the checkpoint
    TeacherModel<float> teacher(ctx.cfg.teacher, vocab.size(), ctx.cfg.tasks, ctx.cfg.seed);
    auto teacher_arrays = load_checkpoint(ctx.teacher_ckpt());
    {
        auto params = teacher.all_params();
        load_params<float>(params, teacher_arrays);
    }

    std::vector<Task> dist_tasks;
    for (size_t i : selected) {
        Task t = ctx.cfg.tasks[i];
        t.augmented = load_tsv(ctx.aug_path(t), t, t.schema);
        dist_tasks.push_back(std::move(t));
    }
    auto tok = tokenize_all(ctx.cfg, vocab, dist_tasks);

    StudentModel<float> student(ctx.cfg.student, vocab.size(), dist_tasks, ctx.cfg.seed);
    if (ctx.cfg.student_init_from_teacher) {
        bool loaded = ctx.cfg.student.arch == StudentArch::transformer &&
                      init_student_from_teacher(*student.transformer, teacher_arrays);
        std::cout << "init_from_teacher: " << (loaded ? "loaded first layers" : "shapes differ, skipped")
                  << "\n";
    }

    DistillRunConfig dcfg = ctx.cfg.distill;
    dcfg.seed = ctx.cfg.seed;
    LogitsStore store;
    const LogitsStore* cache = nullptr;
    if (dcfg.cache_logits) {
        store = cache_teacher_logits<float>(teacher, tok, dcfg.batch_size);
        ctx.ensure_out();
        store.save((fs::path(ctx.out) / "logits.mkd1").string());
        cache = &store;
        std::cout << "cached " << store.size() << " teacher logit records\n";
    }
    DistillReport report = run_distillation<float>(teacher, student, tok, dcfg, cache);

    ctx.ensure_out();
    save_model(ctx.student_ckpt(),
               student.all_params(),
               ctx.cfg.student.arch == StudentArch::bilstm ? kKindBilstm : kKindTransformer);
    std::ofstream log(fs::path(ctx.out) / "distill_report.jsonl", std::ios::binary);
    for (size_t e = 0; e < report.epochs.size(); ++e) {
        for (const auto& [task, loss] : report.epochs[e].per_task_mean) {
            nlohmann::json j;
            j["epoch"] = e;
            j["task"] = task;
            j["mean_loss"] = loss;
            log << j.dump() << '\n';
        }
        nlohmann::json j;
        j["epoch"] = e;
        j["sum"] = report.epochs[e].sum;
        log << j.dump() << '\n';
    }
    std::vector<std::string> inputs = task_input_paths(ctx.cfg);
    inputs.push_back(ctx.teacher_ckpt());
    for (size_t i : selected) inputs.push_back(ctx.aug_path(ctx.cfg.tasks[i]));
    ctx.write_manifest("distill", inputs);
    std::cout << "student -> " << ctx.student_ckpt() << "; first epoch sum "
              << report.epochs.front().sum << ", last " << report.epochs.back().sum << "\n";
    return 0;
}

// Student construction matching a checkpoint (arch + task subset).
StudentModel<float> student_from_checkpoint(const CliContext& ctx, const Vocabulary& vocab,
                                            const std::vector<CheckpointArray>& arrays,
                                            std::vector<Task>& tasks_out) {
    float kind = checkpoint_kind(arrays);
    if (kind != kKindBilstm && kind != kKindTransformer)
        fail("cli", "checkpoint is not a student model");
    StudentConfig scfg = ctx.cfg.student;
    scfg.arch = kind == kKindBilstm ? StudentArch::bilstm : StudentArch::transformer;
    tasks_out = checkpoint_tasks(ctx.cfg, arrays, "task_layers");
    StudentModel<float> student(scfg, vocab.size(), tasks_out, ctx.cfg.seed);
    auto params = student.all_params();
    load_params<float>(params, arrays);
    return student;
}

int cmd_finetune(CliContext& ctx, const std::string& task_name) {
    ctx.require_file(ctx.vocab_path(), "build-vocab");
    ctx.require_file(ctx.student_ckpt(), "distill");
    if (ctx.dry_run) {
        std::cout << "dry-run: would fine-tune " << task_name << " for up to "
                  << ctx.cfg.finetune_epochs << " epochs per learning rate\n";
        return 0;
    }
    Vocabulary vocab = Vocabulary::load(ctx.vocab_path());
    load_train_splits(ctx.cfg, false);

    auto arrays = load_checkpoint(ctx.student_ckpt());
    std::vector<Task> tasks;
    StudentModel<float> student = student_from_checkpoint(ctx, vocab, arrays, tasks);
    size_t ti = tasks.size();
    for (size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].name == task_name) ti = i;
    if (ti == tasks.size())
        fail("cli", "task '" + task_name + "' has no task layer in " + ctx.student_ckpt());
    if (tasks[ti].dev_path.empty())
        fail("cli", "task " + task_name + ": fine-tuning needs a dev split");

    auto tok = tokenize_all(ctx.cfg, vocab, tasks);
    FinetuneResult res = finetune<float>(student, tasks[ti], tok[ti], ti, ctx.cfg.finetune_epochs,
                                         ctx.cfg.distill.batch_size, ctx.cfg.seed);
    ctx.ensure_out();
    std::string out_path = (fs::path(ctx.out) / ("finetuned_" + task_name + ".mkd1")).string();
    save_model(out_path, student.all_params(),
               student.cfg.arch == StudentArch::bilstm ? kKindBilstm : kKindTransformer);
    std::vector<std::string> inputs = {ctx.student_ckpt(), tasks[ti].train_path,
                                       tasks[ti].dev_path};
    ctx.write_manifest("finetune", inputs);
    std::cout << "finetuned " << task_name << ": chosen lr " << res.chosen_lr << ", dev loss "
              << res.dev_loss_before << " -> " << res.dev_loss_after << " ("
              << res.epochs_trained << " epochs) -> " << out_path << "\n";
    return 0;
}

int cmd_eval(CliContext& ctx, const std::string& ckpt_path, const std::string& split_name) {
    ctx.require_file(ctx.vocab_path(), "build-vocab");
    if (!fs::exists(ckpt_path)) fail("cli", "checkpoint not found: " + ckpt_path);
    Split split;
    if (split_name == "dev")
        split = Split::dev;
    else if (split_name == "train")
        split = Split::train;
    else
        fail("cli", "unknown split '" + split_name + "', want dev or train");
    if (ctx.dry_run) {
        std::cout << "dry-run: would evaluate " << ckpt_path << " on " << split_name << "\n";
        return 0;
    }

    Vocabulary vocab = Vocabulary::load(ctx.vocab_path());
    load_train_splits(ctx.cfg, split == Split::dev);
    auto arrays = load_checkpoint(ckpt_path);
    float kind = checkpoint_kind(arrays);

    std::vector<MetricReport> reports;
    if (kind == kKindTeacher) {
        std::vector<Task> tasks = checkpoint_tasks(ctx.cfg, arrays, "heads");
        TeacherModel<float> teacher(ctx.cfg.teacher, vocab.size(), tasks, ctx.cfg.seed);
        auto params = teacher.all_params();
        load_params<float>(params, arrays);
        auto tok = tokenize_all(ctx.cfg, vocab, tasks);
        for (size_t i = 0; i < tasks.size(); ++i) {
            auto preds = teacher_predictions<float>(teacher, i, tasks[i], tok[i], split,
                                                    ctx.cfg.eval_batch_size);
            reports.push_back(evaluate_predictions(preds, tasks[i], split, split_name));
        }
    } else {
        std::vector<Task> tasks;
        StudentModel<float> student = student_from_checkpoint(ctx, vocab, arrays, tasks);
        auto tok = tokenize_all(ctx.cfg, vocab, tasks);
        for (size_t i = 0; i < tasks.size(); ++i) {
            auto preds = student_predictions<float>(student, i, tasks[i], tok[i], split,
                                                    ctx.cfg.eval_batch_size);
            reports.push_back(evaluate_predictions(preds, tasks[i], split, split_name));
        }
    }

    ctx.ensure_out();
    std::ofstream outf(fs::path(ctx.out) / "metrics.jsonl", std::ios::binary);
    for (const auto& rep : reports) {
        outf << to_json_line(rep) << '\n';
        std::cout << to_json_line(rep) << "\n";
    }
    std::vector<std::string> inputs = task_input_paths(ctx.cfg);
    inputs.push_back(ckpt_path);
    ctx.write_manifest("eval", inputs);
    return 0;
}

int cmd_bench(CliContext& ctx, const std::string& ckpt_path) {
    ctx.require_file(ctx.vocab_path(), "build-vocab");
    if (!fs::exists(ckpt_path)) fail("cli", "checkpoint not found: " + ckpt_path);
    if (ctx.dry_run) {
        std::cout << "dry-run: would time " << ctx.cfg.bench_batches << " batches of "
                  << ctx.cfg.bench_batch_size << " at seq len " << ctx.cfg.bench_seq_len << "\n";
        return 0;
    }
    Vocabulary vocab = Vocabulary::load(ctx.vocab_path());
    load_train_splits(ctx.cfg, false);
    auto arrays = load_checkpoint(ckpt_path);
    std::vector<Task> tasks;
    StudentModel<float> student = student_from_checkpoint(ctx, vocab, arrays, tasks);

    size_t ti = 0;
    if (!ctx.cfg.bench_task.empty()) {
        ti = tasks.size();
        for (size_t i = 0; i < tasks.size(); ++i)
            if (tasks[i].name == ctx.cfg.bench_task) ti = i;
        if (ti == tasks.size()) fail("cli", "bench.task '" + ctx.cfg.bench_task + "' not in model");
    }
    // tokenize at the benchmark's sequence cap
    TokenizedTask tok = tokenize_task(tasks[ti], vocab, ctx.cfg.bench_seq_len,
                                      ctx.cfg.tokenizer_mode, ctx.cfg.max_chars_per_word);
    auto batches = bench_batches(tok.train.size(), ctx.cfg.bench_batches + ctx.cfg.bench_warmup,
                                 ctx.cfg.bench_batch_size);
    NoGradGuard ng;
    auto run_batch = [&](size_t i) {
        Tensor<float> z =
            student.forward_logits(ti, tok, batches[i], Split::train, ctx.cfg.bench_seq_len);
        double acc = 0;
        for (float v : z.data()) acc += v;
        return acc;
    };
    std::string model_name =
        student.cfg.arch == StudentArch::bilstm ? "mkd-lstm" : "mkd-transformer";
    BenchReport rep = bench_inference(model_name, run_batch, ctx.cfg.bench_batches,
                                      ctx.cfg.bench_batch_size, ctx.cfg.bench_seq_len,
                                      ctx.cfg.bench_warmup);
    ctx.ensure_out();
    std::ofstream outf(fs::path(ctx.out) / "bench.jsonl", std::ios::binary);
    outf << to_json_line(rep) << '\n';
    std::cout << to_json_line(rep) << "\n";
    ctx.write_manifest("bench", {ckpt_path, tasks[ti].train_path});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task knowledge distillation pipeline"};
    app.require_subcommand(1);

    CliContext ctx;
    std::string gen_out = "runs/synthetic";
    uint64_t gen_seed = 13;
    std::vector<std::string> corpora;
    std::string finetune_task, eval_ckpt, eval_split = "dev", bench_ckpt;

    auto add_common = [&](CLI::App* cmd, bool config_required = true) {
        auto* opt = cmd->add_option("--config", ctx.config_path, "run config file");
        if (config_required) opt->required();
        cmd->add_option("--out", ctx.out_override, "output directory (overrides 'out')");
        cmd->add_option("--seed", ctx.seed_override, "seed override")
            ->each([&](const std::string&) { ctx.has_seed_override = true; });
        cmd->add_flag("--dry-run", ctx.dry_run, "validate only, no side effects");
    };

    CLI::App* gen = app.add_subcommand("gen-synthetic", "write the bundled synthetic task suite");
    gen->add_option("--out", gen_out, "directory for data/ and synthetic.conf");
    gen->add_option("--seed", gen_seed, "generation seed");

    CLI::App* vocab_cmd = app.add_subcommand("build-vocab", "build the tokenizer vocabulary");
    vocab_cmd->add_option("corpora", corpora, "optional raw-text corpus files");
    add_common(vocab_cmd);

    add_common(app.add_subcommand("augment", "write augmented training TSVs"));
    add_common(app.add_subcommand("train-teacher", "multi-task refine the teacher"));
    add_common(app.add_subcommand("distill", "distill the student from the teacher"));

    CLI::App* ft = app.add_subcommand("finetune", "fine-tune the distilled student on one task");
    ft->add_option("task", finetune_task, "task name")->required();
    add_common(ft);

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("checkpoint", eval_ckpt, "teacher or student checkpoint")->required();
    ev->add_option("split", eval_split, "dev (default) or train");
    add_common(ev);

    CLI::App* bn = app.add_subcommand("bench", "time student inference");
    bn->add_option("checkpoint", bench_ckpt, "student checkpoint")->required();
    add_common(bn);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synthetic(gen_out, gen_seed);
        ctx.load();
        if (app.get_subcommand("build-vocab")->parsed()) return cmd_build_vocab(ctx, corpora);
        if (app.get_subcommand("augment")->parsed()) return cmd_augment(ctx);
        if (app.get_subcommand("train-teacher")->parsed()) return cmd_train_teacher(ctx);
        if (app.get_subcommand("distill")->parsed()) return cmd_distill(ctx);
        if (ft->parsed()) return cmd_finetune(ctx, finetune_task);
        if (ev->parsed()) return cmd_eval(ctx, eval_ckpt, eval_split);
        if (bn->parsed()) return cmd_bench(ctx, bench_ckpt);
    } catch (const Error& e) {
        std::cerr << "ERROR " << e.module() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "ERROR cli: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
