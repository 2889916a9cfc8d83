#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "mtkd/gradcheck.hpp"
#include "mtkd/student.hpp"
#include "mtkd/synthetic.hpp"
#include "mtkd/teacher.hpp"

using namespace mtkd;

using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

Vocabulary test_vocab() {
    std::vector<std::string> toks = Vocabulary::specials();
    for (char c = 'a'; c <= 'j'; ++c) toks.push_back(std::string(1, c));
    return Vocabulary::from_tokens(std::move(toks));
}

// One task of each kind over a tiny template vocabulary.
std::vector<Task> four_tasks() {
    std::vector<Task> tasks(4);
    tasks[0].name = "single";
    tasks[0].kind = TaskKind::single_classification;
    tasks[0].num_classes = 2;
    tasks[0].labels = {"0", "1"};
    tasks[1].name = "pair";
    tasks[1].kind = TaskKind::pair_classification;
    tasks[1].num_classes = 2;
    tasks[1].labels = {"no", "yes"};
    tasks[2].name = "sim";
    tasks[2].kind = TaskKind::pair_regression;
    tasks[2].label_min = 0;
    tasks[2].label_max = 5;
    tasks[3].name = "rank";
    tasks[3].kind = TaskKind::relevance_ranking;
    return tasks;
}

std::string random_sentence(Rng& rng, size_t min_words = 1, size_t max_words = 5) {
    size_t n = min_words + uniform_index(rng, max_words - min_words + 1);
    std::string s;
    for (size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += std::string(1, 'a' + char(uniform_index(rng, 10)));
    }
    return s;
}

void fill_synthetic(std::vector<Task>& tasks, size_t n, Rng& rng) {
    for (Task& t : tasks) {
        for (size_t i = 0; i < n; ++i) {
            RawExample ex;
            ex.s1 = random_sentence(rng);
            if (is_pair_input(t.kind)) ex.s2 = random_sentence(rng);
            switch (t.kind) {
                case TaskKind::single_classification:
                case TaskKind::pair_classification:
                    ex.label = double(uniform_index(rng, 2));
                    ex.label_text = std::to_string(int(ex.label));
                    break;
                case TaskKind::pair_regression:
                    ex.label = uniform_range(rng, 0, 5);
                    ex.label_text = "x";
                    break;
                case TaskKind::relevance_ranking:
                    break;
            }
            t.train.examples.push_back(std::move(ex));
        }
        if (t.kind == TaskKind::relevance_ranking) {
            t.train.examples.clear();
            for (size_t g = 0; g * 4 < n; ++g) {
                size_t pos = uniform_index(rng, 4);
                for (size_t c = 0; c < 4; ++c) {
                    RawExample ex;
                    ex.s1 = random_sentence(rng);
                    ex.s2 = random_sentence(rng);
                    ex.label = c == pos ? 1.0 : 0.0;
                    ex.label_text = c == pos ? "1" : "0";
                    ex.group = static_cast<int64_t>(g);
                    t.train.examples.push_back(std::move(ex));
                }
            }
        }
    }
}

TeacherConfig tiny_teacher_cfg(size_t layers = 1) {
    TeacherConfig cfg;
    cfg.encoder = {.layers = layers, .width = 8, .heads = 2, .ffn_width = 16, .max_seq_len = 16};
    return cfg;
}

Batch first_batch(int task_index, size_t n) {
    Batch b;
    b.task_index = task_index;
    for (size_t i = 0; i < n; ++i) b.example_ids.push_back(static_cast<int32_t>(i));
    return b;
}

} // namespace

// ---------------------------------------------------------------------------
// Teacher
// ---------------------------------------------------------------------------

TEST(Teacher, ZeroedHeadGivesZeroLogits) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(1);
    fill_synthetic(tasks, 8, rng);
    TeacherModel<double> teacher(tiny_teacher_cfg(), vocab.size(), tasks, 11);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));

    auto& head = teacher.heads[0].map;
    std::fill(head.w.data().begin(), head.w.data().end(), 0.0);
    std::fill(head.b.data().begin(), head.b.data().end(), 0.0);
    Tensor<double> logits =
        teacher_forward(teacher, 0, tok[0], first_batch(0, 4), Split::train);
    EXPECT_EQ(logits.shape(), (Shape{4, 2}));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Teacher, RegressionHeadBasisVectorReadsFirstCoordinate) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(2);
    fill_synthetic(tasks, 6, rng);
    TeacherModel<double> teacher(tiny_teacher_cfg(), vocab.size(), tasks, 3);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));

    auto& w = teacher.heads[2].map.w; // (width, 1)
    std::fill(w.data().begin(), w.data().end(), 0.0);
    w.data()[0] = 1.0;
    Batch b = first_batch(2, 3);
    Tensor<double> sim = teacher_forward(teacher, 2, tok[2], b, Split::train);

    JointBatch jb = materialize_joint(gather_examples(tok[2].train, b.example_ids));
    Tensor<double> cls = teacher.encoder.forward_cls(jb.tokens, jb.segments, jb.mask);
    for (size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(sim.data()[i], cls.data()[i * teacher.cfg.encoder.width], 1e-12);
}

TEST(Teacher, TaskMismatchRejected) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(3);
    fill_synthetic(tasks, 4, rng);
    TeacherModel<double> teacher(tiny_teacher_cfg(), vocab.size(), tasks, 3);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));
    EXPECT_THROW(teacher_forward(teacher, 1, tok[0], first_batch(0, 2), Split::train), Error);
}

TEST(TaskLoss, KnownValues) {
    auto tasks = four_tasks();
    // regression: predictions equal normalized labels -> 0
    Task& sim = tasks[2];
    sim.train.examples = {{"a", std::optional<std::string>("b"), 2.5, "2.5", -1},
                          {"a", std::optional<std::string>("b"), 5.0, "5", -1}};
    Batch b = first_batch(2, 2);
    TD logits = TD::from({2, 1}, {0.5, 1.0});
    EXPECT_NEAR(task_loss(logits, sim, Split::train, b).item(), 0.0, 1e-12);

    TD off = TD::from({2, 1}, {0.5 + 0.1, 1.0 + 0.1});
    EXPECT_NEAR(task_loss(off, sim, Split::train, b).item(), 0.01, 1e-12);

    // 2-class uniform logits -> ln 2 whatever the label
    Task& cls = tasks[0];
    cls.train.examples = {{"a", std::nullopt, 1.0, "1", -1}};
    Batch cb = first_batch(0, 1);
    EXPECT_NEAR(task_loss(TD::zeros({1, 2}), cls, Split::train, cb).item(), std::log(2.0),
                1e-12);

    // ranking: 4 uniform candidates -> ln 4
    Task& rank = tasks[3];
    for (int c = 0; c < 4; ++c)
        rank.train.examples.push_back(
            {"q", std::optional<std::string>("c"), c == 2 ? 1.0 : 0.0, "", 0});
    Batch rb = first_batch(3, 4);
    EXPECT_NEAR(task_loss(TD::zeros({4, 1}), rank, Split::train, rb).item(), std::log(4.0),
                1e-12);

    // ranking group without exactly one positive -> error
    rank.train.examples[2].label = 0.0;
    EXPECT_THROW(task_loss(TD::zeros({4, 1}), rank, Split::train, rb), Error);
}

TEST(Teacher, ZeroLearningRateLeavesParamsUnchanged) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(5);
    fill_synthetic(tasks, 8, rng);
    TeacherModel<float> teacher(tiny_teacher_cfg(), vocab.size(), tasks, 7);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));

    auto before = snapshot_params<float>(teacher.all_params());
    OptimizerConfig opt;
    opt.algorithm = OptAlgo::sgd;
    opt.learning_rate = 0.0;
    RefineReport rep = refine_multi_task<float>(teacher, tasks, tok, opt, 1, 4, 13);
    auto params = teacher.all_params();
    auto after = snapshot_params<float>(params);
    EXPECT_EQ(before, after);
    EXPECT_EQ(rep.per_epoch.size(), 1u);
    EXPECT_EQ(rep.per_epoch[0].size(), 4u); // one mean loss per task
}

TEST(Teacher, RefineStepTouchesOnlyThatTasksHead) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(6);
    fill_synthetic(tasks, 4, rng);
    TeacherModel<float> teacher(tiny_teacher_cfg(), vocab.size(), tasks, 7);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));

    auto head1_before = snapshot_params<float>(teacher.head_params(1));
    auto head3_before = snapshot_params<float>(teacher.head_params(3));

    // one manual step on task 0
    OptimizerConfig ocfg;
    ocfg.learning_rate = 5e-4;
    Optimizer<float> opt(ocfg);
    Batch b = first_batch(0, 4);
    Tensor<float> logits = teacher_forward(teacher, 0, tok[0], b, Split::train);
    backward(task_loss(logits, tasks[0], Split::train, b));
    std::vector<Tensor<float>> params = teacher.encoder_params();
    teacher.heads[0].collect(params);
    opt.step(params);

    EXPECT_EQ(snapshot_params<float>(teacher.head_params(1)), head1_before);
    EXPECT_EQ(snapshot_params<float>(teacher.head_params(3)), head3_before);
}

TEST(Teacher, EvalForwardDeterministic) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(8);
    fill_synthetic(tasks, 6, rng);
    TeacherModel<float> teacher(tiny_teacher_cfg(2), vocab.size(), tasks, 9);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));
    NoGradGuard ng;
    Batch b = first_batch(1, 4);
    auto l1 = teacher_forward(teacher, 1, tok[1], b, Split::train);
    auto l2 = teacher_forward(teacher, 1, tok[1], b, Split::train);
    EXPECT_EQ(l1.data(), l2.data());
}

TEST(Teacher, LearnsLinearlySeparableTask) {
    // class 1 sentences contain the token "a", class 0 the token "b"
    Vocabulary vocab = test_vocab();
    std::vector<Task> tasks(1);
    tasks[0].name = "sep";
    tasks[0].kind = TaskKind::single_classification;
    tasks[0].num_classes = 2;
    tasks[0].labels = {"0", "1"};
    Rng rng(10);
    for (int i = 0; i < 64; ++i) {
        bool pos = i % 2 == 0;
        RawExample ex;
        ex.s1 = pos ? "a " + random_sentence(rng) : "b " + random_sentence(rng);
        ex.label = pos ? 1.0 : 0.0;
        ex.label_text = pos ? "1" : "0";
        tasks[0].train.examples.push_back(std::move(ex));
    }
    std::vector<TokenizedTask> tok{tokenize_task(tasks[0], vocab, 16, TokenizerMode::word)};
    TeacherModel<float> teacher(tiny_teacher_cfg(1), vocab.size(), tasks, 21);
    OptimizerConfig opt;
    opt.learning_rate = 5e-3;
    opt.clip_norm = 1.0;
    RefineReport rep = refine_multi_task<float>(teacher, tasks, tok, opt, 30, 16, 22);

    NoGradGuard ng;
    Batch all = first_batch(0, tasks[0].train.size());
    Tensor<float> logits = teacher_forward(teacher, 0, tok[0], all, Split::train);
    size_t correct = 0;
    for (size_t i = 0; i < all.size(); ++i) {
        int pred = logits.data()[2 * i + 1] > logits.data()[2 * i] ? 1 : 0;
        correct += pred == int(tasks[0].train.examples[i].label);
    }
    EXPECT_GE(double(correct) / double(all.size()), 0.99);
    // training curve sanity: last epoch no worse than the first
    EXPECT_LE(rep.per_epoch.back().at("sep"), rep.per_epoch.front().at("sep"));
}

TEST(Teacher, PerTaskLossNonIncreasingAcrossEpochs) {
    // learnable rule-based tasks: the per-task train losses trend down,
    // allowing 5% epoch-to-epoch noise
    SyntheticSuiteConfig scfg;
    scfg.seed = 14;
    scfg.train_single = 96;
    scfg.train_pair = 96;
    scfg.train_reg = 24;
    scfg.train_rank_groups = 24;
    scfg.dev_single = scfg.dev_pair = 8;
    scfg.dev_reg = 8;
    scfg.dev_rank_groups = 2;
    std::vector<Task> tasks = make_synthetic_suite(scfg);
    Vocabulary vocab = build_vocab(synthetic_corpus(tasks), 160, TokenizerMode::wordpiece);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::wordpiece));
    TeacherModel<float> teacher(tiny_teacher_cfg(2), vocab.size(), tasks, 15);
    OptimizerConfig opt;
    opt.learning_rate = 1e-3;
    opt.clip_norm = 1.0;
    RefineReport rep = refine_multi_task<float>(teacher, tasks, tok, opt, 6, 16, 16);
    for (size_t e = 1; e < rep.per_epoch.size(); ++e)
        for (const auto& [task, loss] : rep.per_epoch[e])
            EXPECT_LE(loss, rep.per_epoch[e - 1].at(task) * 1.05)
                << task << " rose at epoch " << e;
}

TEST(Teacher, GradCheckEachHeadKind) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(12);
    fill_synthetic(tasks, 4, rng);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));
    TeacherModel<double> teacher(tiny_teacher_cfg(1), vocab.size(), tasks, 31);

    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        Batch b = first_batch(static_cast<int>(ti), 2);
        if (tasks[ti].kind == TaskKind::relevance_ranking) b = first_batch(3, 4);
        std::vector<TD> params = teacher.encoder_params();
        teacher.heads[ti].collect(params);
        auto builder = [&]() {
            Tensor<double> logits = teacher_forward(teacher, ti, tok[ti], b, Split::train);
            return task_loss(logits, tasks[ti], Split::train, b);
        };
        GradCheckReport rep = gradient_check(builder, params, 1e-5, 1e-4, 24);
        EXPECT_TRUE(rep.pass) << tasks[ti].name << " max rel err " << rep.max_rel_err;
    }
}

// ---------------------------------------------------------------------------
// Students
// ---------------------------------------------------------------------------

TEST(BiattStudent, SingleTokenAttentionIsOne) {
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = 3, .task_layer_dim = 8};
    Rng rng(41);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {5};
    ex.segment_ids = {0};
    PairBatch pb = materialize_pair({&ex});
    auto act = student.encode(pb);
    EXPECT_EQ(act.A.shape(), (Shape{1, 1, 1}));
    EXPECT_NEAR(act.A_x.data()[0], 1.0, 1e-15);
    for (size_t i = 0; i < act.C_x.size(); ++i)
        EXPECT_NEAR(act.C_x.data()[i], act.X.data()[i], 1e-15);
}

TEST(BiattStudent, ShapeArithmetic) {
    size_t H = 5;
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = H, .task_layer_dim = 8};
    Rng rng(42);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {5, 6};
    ex.segment_ids = {0, 0};
    ex.token_ids.insert(ex.token_ids.end(), {7, 8, 9});
    ex.segment_ids.insert(ex.segment_ids.end(), {1, 1, 1});
    PairBatch pb = materialize_pair({&ex});
    auto act = student.encode(pb);
    EXPECT_EQ(act.A.shape(), (Shape{1, 2, 3}));
    EXPECT_EQ(act.fused_x.shape(), (Shape{1, 2, 6 * H}));
    EXPECT_EQ(act.pooled_x.shape(), (Shape{1, 6 * H}));
    EXPECT_EQ(act.rep.shape(), (Shape{1, 12 * H}));
}

TEST(BiattStudent, ContextVectorsMatchDenseOracle) {
    BiattConfig cfg{.embed_dim = 3, .lstm_hidden = 2, .task_layer_dim = 4};
    Rng rng(43);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {5, 7};
    ex.segment_ids = {0, 0};
    ex.token_ids.insert(ex.token_ids.end(), {6, 9});
    ex.segment_ids.insert(ex.segment_ids.end(), {1, 1});
    PairBatch pb = materialize_pair({&ex});
    auto act = student.encode(pb);

    size_t Tx = 2, Ty = 2, d = 4; // d = 2H
    // dense oracle: A = X Y^T, A_x = column softmax, C_x = A_x^T X
    auto X = act.X.data();
    auto Y = act.Y.data();
    std::vector<double> A(Tx * Ty, 0);
    for (size_t i = 0; i < Tx; ++i)
        for (size_t j = 0; j < Ty; ++j)
            for (size_t k = 0; k < d; ++k) A[i * Ty + j] += X[i * d + k] * Y[j * d + k];
    for (size_t i = 0; i < A.size(); ++i) EXPECT_NEAR(A[i], act.A.data()[i], 1e-10);

    for (size_t j = 0; j < Ty; ++j) {
        double mx = A[j];
        for (size_t i = 1; i < Tx; ++i) mx = std::max(mx, A[i * Ty + j]);
        double sum = 0;
        for (size_t i = 0; i < Tx; ++i) sum += std::exp(A[i * Ty + j] - mx);
        std::vector<double> cx(d, 0);
        for (size_t i = 0; i < Tx; ++i) {
            double w = std::exp(A[i * Ty + j] - mx) / sum;
            EXPECT_NEAR(w, act.A_x.data()[i * Ty + j], 1e-10);
            for (size_t k = 0; k < d; ++k) cx[k] += w * X[i * d + k];
        }
        for (size_t k = 0; k < d; ++k) EXPECT_NEAR(cx[k], act.C_x.data()[j * d + k], 1e-10);
    }
}

TEST(BiattStudent, AttentionColumnsSumToOneAndPadsGetZero) {
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = 3, .task_layer_dim = 8};
    Rng rng(44);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample e1, e2;
    e1.token_ids = {5, 6, 7};
    e1.segment_ids = {0, 0, 0};
    e1.token_ids.insert(e1.token_ids.end(), {8, 9});
    e1.segment_ids.insert(e1.segment_ids.end(), {1, 1});
    e2.token_ids = {5};
    e2.segment_ids = {0};
    e2.token_ids.insert(e2.token_ids.end(), {6, 7, 8});
    e2.segment_ids.insert(e2.segment_ids.end(), {1, 1, 1});
    PairBatch pb = materialize_pair({&e1, &e2});
    auto act = student.encode(pb);
    size_t Tx = pb.x_tokens.cols, Ty = pb.y_tokens.cols;
    for (size_t b = 0; b < 2; ++b)
        for (size_t j = 0; j < Ty; ++j) {
            if (pb.y_mask.at(b, j) == 0) continue; // only unpadded columns
            double sum = 0;
            for (size_t i = 0; i < Tx; ++i) {
                double w = act.A_x.data()[(b * Tx + i) * Ty + j];
                if (pb.x_mask.at(b, i) == 0) {
                    EXPECT_EQ(w, 0.0); // pads carry exactly zero weight
                }
                sum += w;
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
}

TEST(BiattStudent, SingleSentencePathSymmetric) {
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = 3, .task_layer_dim = 8};
    Rng rng(45);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {5, 6, 7, 8};
    ex.segment_ids = {0, 0, 0, 0};
    PairBatch pb = materialize_pair({&ex});
    EXPECT_TRUE(pb.single);
    auto act = student.encode(pb);
    EXPECT_EQ(act.X.data(), act.Y.data());
    size_t T = 4;
    for (size_t i = 0; i < T; ++i)
        for (size_t j = 0; j < T; ++j)
            EXPECT_NEAR(act.A.data()[i * T + j], act.A.data()[j * T + i], 1e-10);
}

TEST(BiattStudent, PaddingInvariance) {
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = 3, .task_layer_dim = 8};
    Rng rng(46);
    BiattStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {5, 6, 7};
    ex.segment_ids = {0, 0, 0};
    ex.token_ids.insert(ex.token_ids.end(), {8, 9});
    ex.segment_ids.insert(ex.segment_ids.end(), {1, 1});
    TokenizedExample longer; // forces extra pad columns in the batch
    longer.token_ids = {5, 6, 7, 8, 9, 5, 6};
    longer.segment_ids = {0, 0, 0, 0, 0, 0, 0};
    longer.token_ids.insert(longer.token_ids.end(), {9, 8, 7, 6, 5});
    longer.segment_ids.insert(longer.segment_ids.end(), {1, 1, 1, 1, 1});

    PairBatch alone = materialize_pair({&ex});
    PairBatch padded = materialize_pair({&ex, &longer});
    auto act1 = student.encode(alone);
    auto act2 = student.encode(padded);
    for (size_t k = 0; k < act1.rep.shape()[1]; ++k)
        EXPECT_NEAR(act1.rep.data()[k], act2.rep.data()[k], 1e-10);
}

TEST(BiattStudent, MaxPoolDominatesMeanPoolOnNonNegative) {
    BiattConfig cfg{.embed_dim = 4, .lstm_hidden = 2, .task_layer_dim = 8};
    Rng rng(47);
    BiattStudent<double> student(cfg, 10, rng);
    Rng vals(48);
    size_t B = 3, T = 5, d = 4;
    std::vector<double> h(B * T * d);
    for (auto& v : h) v = uniform_range(vals, 0.0, 2.0); // non-negative activations
    IntMat mask(B, T, 1);
    mask.at(0, 4) = 0;
    mask.at(2, 3) = 0;
    mask.at(2, 4) = 0;
    Tensor<double> pooled = student.pool(Tensor<double>::from({B, T, d}, h), mask);
    // layout: [max | mean | attn], each of width d
    for (size_t b = 0; b < B; ++b)
        for (size_t k = 0; k < d; ++k)
            EXPECT_GE(pooled.data()[b * 3 * d + k] + 1e-12, pooled.data()[b * 3 * d + d + k]);
}

TEST(TransformerStudent, OneLayerEqualsItsClsVector) {
    TransformerConfig cfg{.layers = 1, .width = 8, .heads = 2, .ffn_width = 16, .max_seq_len = 12};
    Rng rng(50);
    TransformerStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {2, 5, 6, 3};
    ex.segment_ids = {0, 0, 0, 0};
    JointBatch jb = materialize_joint({&ex});
    auto act = student.encode(jb);
    ASSERT_EQ(act.per_layer_cls.size(), 1u);
    EXPECT_EQ(act.rep.data(), act.per_layer_cls[0].data());
}

TEST(TransformerStudent, RepIsMeanOfPerLayerCls) {
    TransformerConfig cfg{.layers = 3, .width = 8, .heads = 2, .ffn_width = 16, .max_seq_len = 12};
    Rng rng(51);
    TransformerStudent<double> student(cfg, 10, rng);
    TokenizedExample ex;
    ex.token_ids = {2, 5, 6, 7, 3};
    ex.segment_ids = {0, 0, 0, 0, 0};
    JointBatch jb = materialize_joint({&ex});
    auto act = student.encode(jb);
    ASSERT_EQ(act.per_layer_cls.size(), 3u);
    for (size_t k = 0; k < cfg.width; ++k) {
        double mean = (act.per_layer_cls[0].data()[k] + act.per_layer_cls[1].data()[k] +
                       act.per_layer_cls[2].data()[k]) /
                      3.0;
        EXPECT_NEAR(act.rep.data()[k], mean, 1e-12);
    }
}

TEST(TransformerStudent, ZeroedLayersGiveEqualClsAcrossLayers) {
    TransformerConfig cfg{.layers = 3, .width = 8, .heads = 2, .ffn_width = 16, .max_seq_len = 12};
    Rng rng(52);
    TransformerStudent<double> student(cfg, 10, rng);
    for (auto& layer : student.encoder.layers) {
        std::vector<Tensor<double>> ps;
        layer.collect(ps);
        for (auto& p : ps)
            if (p.name().find("/ln") == std::string::npos)
                std::fill(p.data().begin(), p.data().end(), 0.0);
    }
    TokenizedExample ex;
    ex.token_ids = {2, 5, 9, 3};
    ex.segment_ids = {0, 0, 0, 0};
    JointBatch jb = materialize_joint({&ex});
    auto act = student.encode(jb);
    for (size_t l = 1; l < 3; ++l)
        for (size_t k = 0; k < cfg.width; ++k)
            EXPECT_NEAR(act.per_layer_cls[l].data()[k], act.per_layer_cls[0].data()[k], 1e-9);
    for (size_t k = 0; k < cfg.width; ++k)
        EXPECT_NEAR(act.rep.data()[k], act.per_layer_cls[0].data()[k], 1e-9);
}

TEST(StudentTaskLayer, LogitContracts) {
    Rng rng(53);
    StudentTaskLayer<double> layer(4, 2, 2, rng, "task_layers/t");
    // zero W -> z = bias (zeros by init)
    std::fill(layer.out.w.data().begin(), layer.out.w.data().end(), 0.0);
    TD rep = TD::from({1, 4}, {0.3, -0.2, 0.9, 0.1});
    TD z0 = student_logits(rep, layer);
    EXPECT_EQ(z0.data(), (std::vector<double>{0.0, 0.0}));

    // identity-like W on the 2-dim hidden h -> z = h
    layer.out.w.data() = {1.0, 0.0, 0.0, 1.0};
    TD z = student_logits(rep, layer);
    TD h = relu(layer.hidden.forward(rep));
    EXPECT_EQ(z.data(), h.data());

    // softmax of logits sums to 1
    TD p = softmax_axis(z, 1);
    double sum = p.data()[0] + p.data()[1];
    EXPECT_NEAR(sum, 1.0, 1e-12);

    EXPECT_THROW(student_logits(TD::zeros({1, 5}), layer), Error);
}

TEST(CountParameters, LinearAndBiLstmFormulas) {
    Rng rng(54);
    Linear<double> lin(3, 2, true, rng, "lin");
    std::vector<TD> lp;
    lin.collect(lp);
    EXPECT_EQ(count_parameters<double>(lp, true), 8u); // 3*2+2

    size_t d = 5, h = 3;
    BiLstm<double> bi(d, h, rng, "bi");
    std::vector<TD> bp;
    bi.collect(bp);
    EXPECT_EQ(count_parameters<double>(bp, true), 2 * 4 * (d * h + h * h + 2 * h));
}

TEST(CountParameters, EmbeddingExclusion) {
    std::vector<Task> tasks = four_tasks();
    Rng rng(55);
    fill_synthetic(tasks, 4, rng);
    size_t vocab = 10, e = 4;
    StudentConfig cfg;
    cfg.arch = StudentArch::bilstm;
    cfg.bilstm = {.embed_dim = e, .lstm_hidden = 3, .task_layer_dim = 8};
    cfg.task_layer_dim = 8;
    StudentModel<double> student(cfg, vocab, tasks, 77);
    auto params = student.all_params();
    size_t with = count_parameters<double>(params, true);
    size_t without = count_parameters<double>(params, false);
    EXPECT_EQ(with - without, vocab * e); // only the token table here

    TransformerStudent<double> ts({.layers = 1, .width = 8, .heads = 2, .ffn_width = 16,
                                   .max_seq_len = 12},
                                  vocab, rng);
    std::vector<TD> tp;
    ts.collect(tp);
    size_t tw = count_parameters<double>(tp, true);
    size_t two = count_parameters<double>(tp, false);
    EXPECT_EQ(tw - two, vocab * 8 + 12 * 8 + 2 * 8); // token + position + segment tables
}

TEST(Students, GradCheckBothArchitectures) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(56);
    fill_synthetic(tasks, 4, rng);
    std::vector<TokenizedTask> tok;
    for (auto& t : tasks) tok.push_back(tokenize_task(t, vocab, 16, TokenizerMode::word));

    for (StudentArch arch : {StudentArch::bilstm, StudentArch::transformer}) {
        StudentConfig cfg;
        cfg.arch = arch;
        cfg.bilstm = {.embed_dim = 3, .lstm_hidden = 2, .task_layer_dim = 4};
        cfg.transformer = {.layers = 2, .width = 4, .heads = 2, .ffn_width = 8,
                           .max_seq_len = 16};
        cfg.task_layer_dim = 4;
        StudentModel<double> student(cfg, vocab.size(), tasks, 99);
        Batch b = first_batch(1, 2);
        auto builder = [&]() {
            Tensor<double> logits = student.forward_logits(1, tok[1], b, Split::train);
            // squared-error style scalar so the check exercises the task layer
            return mean_all(mul(logits, logits));
        };
        std::vector<TD> params = student.shared_params();
        student.task_layers[1].collect(params);
        GradCheckReport rep = gradient_check(builder, params, 1e-5, 1e-4, 16);
        EXPECT_TRUE(rep.pass) << "arch " << int(arch) << " max rel err " << rep.max_rel_err;
    }
}

TEST(Students, InitFromTeacherHook) {
    Vocabulary vocab = test_vocab();
    auto tasks = four_tasks();
    Rng rng(57);
    fill_synthetic(tasks, 4, rng);

    TeacherConfig tcfg;
    tcfg.encoder = {.layers = 3, .width = 8, .heads = 2, .ffn_width = 16, .max_seq_len = 12};
    TeacherModel<float> teacher(tcfg, vocab.size(), tasks, 1);
    auto teacher_params = teacher.all_params();
    auto arrays = params_to_arrays<float>(teacher_params);

    // matching shapes: hook loads and copies
    TransformerConfig scfg{.layers = 3, .width = 8, .heads = 2, .ffn_width = 16,
                           .max_seq_len = 12};
    Rng srng(2);
    TransformerStudent<float> student(scfg, vocab.size(), srng);
    EXPECT_TRUE(init_student_from_teacher(student, arrays));
    EXPECT_EQ(student.encoder.layers[0].wq.w.data(), teacher.encoder.layers[0].wq.w.data());

    // mismatched width: hook declines and leaves the student untouched
    TransformerConfig bad{.layers = 3, .width = 4, .heads = 2, .ffn_width = 16,
                          .max_seq_len = 12};
    Rng brng(3);
    TransformerStudent<float> other(bad, vocab.size(), brng);
    std::vector<Tensor<float>> other_params;
    other.collect(other_params);
    auto before = snapshot_params<float>(other_params);
    EXPECT_FALSE(init_student_from_teacher(other, arrays));
    EXPECT_EQ(snapshot_params<float>(other_params), before);
}
