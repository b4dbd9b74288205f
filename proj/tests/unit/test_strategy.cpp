#include "rubi/datagen.hpp"
#include "rubi/strategy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace rubi;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void assign(Tensor t, std::vector<double> v) {
    ASSERT_EQ(t.size(), v.size());
    std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

// Independent softmax cross-entropy for one row.
double ce_oracle(const std::vector<double>& logits, std::size_t answer) {
    double z = 0;
    for (double l : logits) z += std::exp(l);
    return -std::log(std::exp(logits[answer]) / z);
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Bench {
    Corpus corpus;
    Network net;
    Batch batch;
};

Bench make_setup(std::uint64_t seed = 3) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.n_objects = 4;
    spec.n_colors = 3;
    spec.max_count = 2;
    spec.n_regions = 3;
    spec.n_noise_dims = 1;
    spec.n_train = 32;
    spec.n_test_id = 1;
    spec.n_test_ood = 1;
    Bench s;
    s.corpus = generate(spec);
    ModelConfig mc;
    mc.d_emb = 6;
    mc.d_q = 5;
    mc.d_h = 8;
    mc.d_m = 6;
    mc.classifier_hidden = {8};
    mc.branch_hidden = {6};
    s.net = Network(mc, s.corpus.data_shape());
    s.net.init(seed);
    s.batch = make_batch(s.corpus.train, spec.n_regions);
    return s;
}

std::map<std::string, std::vector<double>> grads(const Network& net) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& p : net.parameters()) out[p.name] = p.tensor.grad();
    return out;
}

void zero(const Network& net) {
    for (auto p : net.parameters()) p.tensor.zero_grad();
}

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

bool starts(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

} // namespace

TEST(Mask, ZeroPreActivation) {
    QuestionOnlyBranch b(ModelConfig{.d_q = 2, .branch_hidden = {}}, DataShape{1, 1, 1, 3});
    const Tensor q = Tensor::matrix({{1.5, -2}});
    EXPECT_EQ(values(mask(q, b, MaskActivation::Sigmoid)), (std::vector<double>{0.5, 0.5, 0.5}));
    EXPECT_EQ(values(mask(q, b, MaskActivation::Relu)), (std::vector<double>{0, 0, 0}));
}

TEST(Mask, SigmoidValues) {
    QuestionOnlyBranch b(ModelConfig{.d_q = 2, .branch_hidden = {}}, DataShape{1, 1, 1, 2});
    assign(b.nn_q.layers[0].weight, {1, 0, 0, 1});
    const Tensor m = mask(Tensor::matrix({{2, -2}}), b, MaskActivation::Sigmoid);
    EXPECT_NEAR(m[0], 0.8808, 1e-4);
    EXPECT_NEAR(m[1], 0.1192, 1e-4);
}

TEST(Fuse, ProductAndSum) {
    const Tensor logits = Tensor::vector({2.0, 0.5});
    const Tensor m = Tensor::vector({0.5, 0.5});
    EXPECT_EQ(values(fuse_predictions(logits, m, Combine::Product)), (std::vector<double>{1.0, 0.25}));
    EXPECT_EQ(values(fuse_predictions(logits, m, Combine::Sum)), (std::vector<double>{2.5, 1.0}));
    EXPECT_THROW(fuse_predictions(logits, Tensor::vector({1, 2, 3}), Combine::Product), ShapeError);
}

TEST(Fuse, ZeroLogitsStayUniform) {
    const Tensor fused = fuse_predictions(Tensor::vector({0, 0, 0, 0}), Tensor::vector({0.9, 0.1, 0.3, 0.7}),
                                          Combine::Product);
    const Tensor lsm = ops::log_softmax(ops::reshape(fused, {1, 4}));
    for (double v : lsm.data()) EXPECT_NEAR(v, -std::log(4.0), 1e-15);
}

TEST(CrossEntropy, KnownProbabilities) {
    // p(correct) = 0.8 with two answers: logit gap ln 4.
    EXPECT_NEAR(cross_entropy(Tensor::vector({std::log(4.0), 0}), std::vector<int>{0}).item(), 0.2231, 1e-3);
    EXPECT_NEAR(cross_entropy(Tensor::vector({1.3, 1.3}), std::vector<int>{1}).item(), 0.6931, 1e-3);
    EXPECT_NEAR(cross_entropy(Tensor::from({10}, std::vector<double>(10, 0.7)), std::vector<int>{4}).item(),
                std::log(10.0), 1e-12);
}

TEST(CrossEntropy, BatchMeanMatchesOracle) {
    const Tensor logits = Tensor::matrix({{1, 2, 0.5}, {-1, 0, 3}});
    const double expected = 0.5 * (ce_oracle({1, 2, 0.5}, 0) + ce_oracle({-1, 0, 3}, 2));
    EXPECT_NEAR(cross_entropy(logits, std::vector<int>{0, 2}).item(), expected, 1e-14);
    EXPECT_THROW(cross_entropy(logits, std::vector<int>{0}), ShapeError);
}

// Two-answer scenes built so the fused numbers line up with the worked
// illustration: a confident correct answer gets more confident, an
// uncertain example gets pushed towards the wrong answer.
TEST(LossModulation, MaskFavouringCorrectAnswerLowersLoss) {
    const double gap = std::log(4.0); // p = 0.8
    const Tensor logits = Tensor::vector({4.0, 4.0 - gap});
    // fused gap ln(0.94 / 0.06) with mask 0.9 on the correct answer
    const double target = std::log(0.94 / 0.06);
    const double m1 = 0.9;
    const double m2 = (4.0 * m1 - target) / (4.0 - gap);
    const Tensor m = Tensor::vector({m1, m2});
    const double before = cross_entropy(logits, std::vector<int>{0}).item();
    const double after = cross_entropy(fuse_predictions(logits, m, Combine::Product), std::vector<int>{0}).item();
    EXPECT_NEAR(before, 0.22, 5e-3);
    EXPECT_NEAR(after, 0.06, 5e-3);
    EXPECT_NEAR(std::exp(-after), 0.94, 1e-9);
}

TEST(LossModulation, MaskFavouringWrongAnswerRaisesLoss) {
    const Tensor logits = Tensor::vector({2.0, 2.0}); // p = 0.5
    // Correct answer 0; mask pre-activations [0, z].
    const double needed = std::log(std::exp(1.20) - 1.0) / 2.0; // sigmoid(z) - 0.5
    const double z = std::log((0.5 + needed) / (0.5 - needed));
    const Tensor m = Tensor::vector({sigm(0.0), sigm(z)});
    const double before = cross_entropy(logits, std::vector<int>{0}).item();
    const double after = cross_entropy(fuse_predictions(logits, m, Combine::Product), std::vector<int>{0}).item();
    EXPECT_NEAR(before, 0.69, 5e-3);
    EXPECT_NEAR(after, 1.20, 1e-9);
}

// Against an uninformative branch (zero pre-activation, uniform 0.5 mask),
// a one-hot pre-activation on the correct answer always lowers the loss and
// one on a wrong answer always raises it, for any nonnegative logits whose
// target entry is positive.
TEST(LossModulation, DirectionAgainstNeutralMask) {
    Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(8);
        std::vector<double> l(n);
        for (double& x : l) x = rng.uniform(0.0, 5.0);
        const int correct = static_cast<int>(rng.below(n));
        int wrong = static_cast<int>(rng.below(n - 1));
        if (wrong >= correct) ++wrong;
        const double alpha = rng.uniform(0.1, 6.0);
        const Tensor logits = Tensor::from({n}, l);
        const Tensor neutral = ops::sigmoid(Tensor::zeros({n}));
        const double base =
            cross_entropy(fuse_predictions(logits, neutral, Combine::Product), std::vector<int>{correct}).item();
        for (int target : {correct, wrong}) {
            std::vector<double> pre(n, 0.0);
            pre[static_cast<std::size_t>(target)] = alpha;
            const Tensor m = ops::sigmoid(Tensor::from({n}, pre));
            const double fused =
                cross_entropy(fuse_predictions(logits, m, Combine::Product), std::vector<int>{correct}).item();
            if (target == correct) {
                EXPECT_LT(fused, base) << "trial " << trial;
            } else {
                EXPECT_GT(fused, base) << "trial " << trial;
            }
        }
    }
}

// With tied positive logits the comparison against the unfused loss holds
// directly.
TEST(LossModulation, DirectionAgainstUnfusedOnTiedLogits) {
    Rng rng(78);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(8);
        const Tensor logits = Tensor::full({n}, rng.uniform(0.1, 5.0));
        const int correct = static_cast<int>(rng.below(n));
        int wrong = static_cast<int>(rng.below(n - 1));
        if (wrong >= correct) ++wrong;
        const double alpha = rng.uniform(0.1, 6.0);
        const double plain = cross_entropy(logits, std::vector<int>{correct}).item();
        EXPECT_NEAR(plain, std::log(static_cast<double>(n)), 1e-12);
        for (int target : {correct, wrong}) {
            std::vector<double> pre(n, 0.0);
            pre[static_cast<std::size_t>(target)] = alpha;
            const Tensor m = ops::sigmoid(Tensor::from({n}, pre));
            const double fused =
                cross_entropy(fuse_predictions(logits, m, Combine::Product), std::vector<int>{correct}).item();
            if (target == correct) {
                EXPECT_LT(fused, plain);
            } else {
                EXPECT_GT(fused, plain);
            }
        }
    }
}

TEST(QuestionOnlyLogits, SameValuesAsAttachedPath) {
    Bench s = make_setup();
    const Tensor q = s.net.model.encode_questions(s.batch);
    const Tensor detached = question_only_logits(q, s.net.branch);
    const Tensor attached = s.net.branch.c_q.forward(s.net.branch.nn_q.forward(q));
    const auto a = values(detached);
    const auto b = values(attached);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Routing, QuestionOnlyLossNeverReachesEncoder) {
    Bench s = make_setup();
    const LossTriple l = compute_losses(s.net, s.batch, StrategyConfig{});
    zero(s.net);
    backward(l.l_qo);
    for (const auto& [name, g] : grads(s.net)) {
        if (starts(name, "branch.")) {
            EXPECT_FALSE(all_zero(g)) << name;
        } else {
            EXPECT_TRUE(all_zero(g)) << name;
        }
    }
}

TEST(Routing, MainLossNeverReachesQuestionOnlyClassifier) {
    Bench s = make_setup();
    const LossTriple l = compute_losses(s.net, s.batch, StrategyConfig{});
    zero(s.net);
    backward(l.l_qm);
    for (const auto& [name, g] : grads(s.net)) {
        if (starts(name, "branch.c_q") || starts(name, "standalone.")) {
            EXPECT_TRUE(all_zero(g)) << name;
        } else {
            EXPECT_FALSE(all_zero(g)) << name;
        }
    }
}

TEST(Routing, CombinedGradientsSplitByLoss) {
    Bench s = make_setup();
    const StrategyConfig cfg;
    zero(s.net);
    backward(compute_losses(s.net, s.batch, cfg).l_qm);
    const auto from_qm = grads(s.net);
    zero(s.net);
    backward(compute_losses(s.net, s.batch, cfg).l_qo);
    const auto from_qo = grads(s.net);
    zero(s.net);
    backward_and_route(compute_losses(s.net, s.batch, cfg), cfg);
    const auto both = grads(s.net);
    EXPECT_EQ(both.at("branch.c_q.weight"), from_qo.at("branch.c_q.weight"));
    EXPECT_EQ(both.at("branch.c_q.bias"), from_qo.at("branch.c_q.bias"));
    EXPECT_EQ(both.at("model.question.embed.table"), from_qm.at("model.question.embed.table"));
    EXPECT_EQ(both.at("model.question.proj.weight"), from_qm.at("model.question.proj.weight"));
    // nn_q hears from both losses.
    const auto& nq = both.at("branch.nn_q.0.weight");
    const auto& a = from_qm.at("branch.nn_q.0.weight");
    const auto& b = from_qo.at("branch.nn_q.0.weight");
    for (std::size_t i = 0; i < nq.size(); ++i) EXPECT_NEAR(nq[i], a[i] + b[i], 1e-15);
}

TEST(Routing, NoQoLeavesQuestionOnlyClassifierUntouched) {
    Bench s = make_setup();
    StrategyConfig cfg;
    cfg.use_qo_loss = false;
    zero(s.net);
    const LossTriple l = compute_losses(s.net, s.batch, cfg);
    EXPECT_EQ(l.qo, 0.0);
    backward_and_route(l, cfg);
    const auto g = grads(s.net);
    EXPECT_TRUE(all_zero(g.at("branch.c_q.weight")));
    EXPECT_TRUE(all_zero(g.at("branch.c_q.bias")));
    EXPECT_FALSE(all_zero(g.at("branch.nn_q.0.weight")));
}

TEST(Routing, ClassicalTouchesOnlyBaseModel) {
    Bench s = make_setup();
    const StrategyConfig cfg{StrategyKind::Classical};
    zero(s.net);
    backward_and_route(compute_losses(s.net, s.batch, cfg), cfg);
    for (const auto& [name, g] : grads(s.net)) EXPECT_EQ(all_zero(g), !starts(name, "model.")) << name;
}

TEST(Routing, QuestionOnlyStrategyTrainsPrivateEncoder) {
    Bench s = make_setup();
    const StrategyConfig cfg{StrategyKind::QuestionOnly};
    zero(s.net);
    backward_and_route(compute_losses(s.net, s.batch, cfg), cfg);
    for (const auto& [name, g] : grads(s.net)) EXPECT_EQ(all_zero(g), starts(name, "model.")) << name;
}

TEST(Losses, TotalIsSumOfParts) {
    for (std::uint64_t seed : {1, 2, 3}) {
        Bench s = make_setup(seed);
        const LossTriple l = compute_losses(s.net, s.batch, StrategyConfig{});
        EXPECT_NEAR(l.l_rubi.item() - l.l_qm.item() - l.l_qo.item(), 0.0, 1e-12);
        EXPECT_EQ(l.total, l.l_rubi.item());
    }
}

TEST(Losses, FusedLossMatchesOracle) {
    Bench s = make_setup();
    const LossTriple l = compute_losses(s.net, s.batch, StrategyConfig{});
    const Tensor base = *l.base_logits;
    const Tensor m = mask(s.net.model.encode_questions(s.batch), s.net.branch, MaskActivation::Sigmoid);
    const std::size_t n = base.cols();
    double total = 0;
    for (std::size_t r = 0; r < base.rows(); ++r) {
        std::vector<double> row(n);
        for (std::size_t c = 0; c < n; ++c) row[c] = base.at(r, c) * m.at(r, c);
        total += ce_oracle(row, static_cast<std::size_t>(s.batch.answers[r]));
    }
    EXPECT_NEAR(l.qm, total / static_cast<double>(base.rows()), 1e-12);
}

TEST(Losses, RejectsBadAnswers) {
    Bench s = make_setup();
    s.batch.answers[0] = 99;
    EXPECT_THROW(compute_losses(s.net, s.batch, StrategyConfig{}), std::out_of_range);
}

TEST(StrategyConfig, Labels) {
    EXPECT_EQ(StrategyConfig{StrategyKind::Classical}.label(), "classical");
    EXPECT_EQ(StrategyConfig{}.label(), "rubi(sigmoid,product)");
    StrategyConfig c;
    c.use_qo_loss = false;
    EXPECT_EQ(c.label(), "rubi(sigmoid,product,no_qo)");
    EXPECT_EQ(parse_strategy("question_only"), StrategyKind::QuestionOnly);
    EXPECT_THROW(parse_combine("concat"), std::invalid_argument);
}
