#include "rubi/datagen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace rubi;

namespace {

DatasetSpec small_spec(std::uint64_t seed = 1) {
    DatasetSpec s;
    s.seed = seed;
    s.n_train = 2000;
    s.n_test_id = 500;
    s.n_test_ood = 500;
    return s;
}

const Corpus& default_corpus() {
    static const Corpus corpus = [] {
        DatasetSpec s;
        s.seed = 7;
        return generate(s);
    }();
    return corpus;
}

double entropy_oracle(const std::vector<std::size_t>& counts) {
    double n = 0;
    for (auto c : counts) n += static_cast<double>(c);
    double h = 0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

} // namespace

TEST(DatasetSpecCheck, DefaultsAndDerivedSizes) {
    const DatasetSpec s;
    EXPECT_EQ(s.d_raw(), 22u);
    EXPECT_EQ(s.answer_count(), 13u);
    EXPECT_NO_THROW(s.validate());
}

TEST(DatasetSpecCheck, WeakBiasHasNoMajority) {
    DatasetSpec s;
    s.bias_strength = 0.05;
    try {
        s.validate();
        FAIL() << "accepted b = 0.05";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("no majority exists"), std::string::npos);
    }
    // Yes/no has two answers, so b must exceed one half as well.
    s.bias_strength = 0.5;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.bias_strength = 1.01;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(DatasetSpecCheck, ImpossibleCountsRejected) {
    DatasetSpec s;
    s.max_count = 9;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Priors, BiasedMassOnMajority) {
    const PriorTable t = build_priors(DatasetSpec{});
    const PatternPrior& p = t.at({Family::Color, 0});
    ASSERT_EQ(p.domain.size(), 6u);
    for (std::size_t i = 0; i < p.domain.size(); ++i) {
        EXPECT_NEAR(p.train[i], p.domain[i] == p.majority ? 0.8 : 0.04, 1e-15);
    }
    EXPECT_EQ(p.test_id, p.train);
}

TEST(Priors, SwapMovesMassToAlternate) {
    const DatasetSpec spec;
    for (const PatternPrior& p : build_priors(spec).patterns) {
        EXPECT_NE(p.majority, p.alternate);
        EXPECT_DOUBLE_EQ(p.probability(Split::Train, p.majority), spec.bias_strength);
        EXPECT_DOUBLE_EQ(p.probability(Split::TestOod, p.alternate), spec.bias_strength);
        const double k = static_cast<double>(p.domain.size());
        EXPECT_NEAR(p.probability(Split::TestOod, p.majority), (1 - spec.bias_strength) / (k - 1), 1e-15);
        double total = 0;
        for (double q : p.test_ood) total += q;
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Priors, UniformOodMode) {
    DatasetSpec spec;
    spec.ood_mode = OodMode::Uniform;
    const PriorTable t = build_priors(spec);
    const PatternPrior& p = t.at({Family::Exist, 4});
    const AnswerSpace a(spec);
    EXPECT_EQ(p.probability(Split::TestOod, a.yes()), 0.5);
    EXPECT_EQ(p.probability(Split::TestOod, a.no()), 0.5);
}

TEST(Priors, UnknownPatternRejected) {
    const PriorTable t = build_priors(DatasetSpec{});
    EXPECT_THROW(t.at({Family::Count, 12}), std::invalid_argument);
}

TEST(Patterns, KeyRoundTrip) {
    const QuestionPattern p{Family::Count, 11};
    EXPECT_EQ(p.key(), "count:11");
    EXPECT_EQ(QuestionPattern::parse("count:11"), p);
    EXPECT_EQ(QuestionPattern::parse("color:3"), (QuestionPattern{Family::Color, 3}));
    EXPECT_THROW(QuestionPattern::parse("colour:3"), std::invalid_argument);
    EXPECT_THROW(QuestionPattern::parse("color"), std::invalid_argument);
    EXPECT_THROW(QuestionPattern::parse("color:-1"), std::invalid_argument);
}

TEST(AnswerSpace, LayoutAndFamilies) {
    const AnswerSpace a{DatasetSpec{}};
    EXPECT_EQ(a.size(), 13u);
    EXPECT_EQ(a.count(0), 6);
    EXPECT_EQ(a.yes(), 11);
    EXPECT_EQ(a.no(), 12);
    EXPECT_EQ(a.family_of(3), Family::Color);
    EXPECT_EQ(a.family_of(10), Family::Count);
    EXPECT_EQ(a.family_of(12), Family::Exist);
    EXPECT_EQ(family_column(Family::Exist), "yes_no");
    EXPECT_EQ(family_column(Family::Count), "number");
    EXPECT_EQ(family_column(Family::Color), "other");
}

TEST(Generate, NoiseFreeScenesAreReadable) {
    DatasetSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    const Corpus c = generate(spec);
    for (Split s : kSplits) {
        for (const Example& ex : c.split(s)) ASSERT_EQ(read_scene(spec, ex), ex.answer) << ex.pattern.key();
    }
}

TEST(Generate, AbsentObjectHasNoComponent) {
    DatasetSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    const Corpus c = generate(spec);
    const AnswerSpace a(spec);
    std::size_t checked = 0;
    for (const Example& ex : c.train) {
        if (ex.pattern.family != Family::Exist || ex.answer != a.no()) continue;
        ++checked;
        for (std::size_t r = 0; r < spec.n_regions; ++r) {
            EXPECT_EQ(ex.regions[r * spec.d_raw() + static_cast<std::size_t>(ex.pattern.object)], 0.0);
        }
    }
    EXPECT_GT(checked, 20u);
}

TEST(Generate, Deterministic) {
    const Corpus a = generate(small_spec(4));
    const Corpus b = generate(small_spec(4));
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test_ood, b.test_ood);
    const Corpus c = generate(small_spec(5));
    EXPECT_NE(a.train, c.train);
}

TEST(Generate, ExamplesIndependentOfOrder) {
    const DatasetSpec spec = small_spec(4);
    const Corpus c = generate(spec);
    EXPECT_EQ(generate_example(spec, c.priors, c.vocab, Split::TestId, 321), c.test_id[321]);
    EXPECT_EQ(generate_example(spec, c.priors, c.vocab, Split::Train, 0), c.train[0]);
}

TEST(Generate, SplitsDisjoint) {
    const Corpus c = generate(small_spec(2));
    std::set<std::vector<double>> seen;
    for (const Example& ex : c.train) seen.insert(ex.regions);
    for (Split s : {Split::TestId, Split::TestOod}) {
        for (const Example& ex : c.split(s)) EXPECT_FALSE(seen.count(ex.regions));
    }
}

TEST(Generate, QuestionsMatchTemplates) {
    const Corpus c = generate(small_spec());
    for (const Example& ex : c.train) ASSERT_EQ(ex.tokens, c.vocab.question(ex.pattern));
    EXPECT_EQ(c.answers.size(), 13u);
    EXPECT_EQ(c.answers[11], "yes");
}

TEST(Generate, MajorityShareNearBias) {
    const Corpus& c = default_corpus();
    std::map<QuestionPattern, std::pair<double, double>> share;
    double hits = 0;
    for (const Example& ex : c.train) {
        auto& [maj, n] = share[ex.pattern];
        n += 1;
        if (ex.answer == c.priors.at(ex.pattern).majority) {
            maj += 1;
            hits += 1;
        }
    }
    const double b = c.spec.bias_strength;
    EXPECT_NEAR(hits / static_cast<double>(c.train.size()), b, 0.03);
    for (const auto& [p, mn] : share) {
        const double sigma = std::sqrt(b * (1 - b) / mn.second);
        EXPECT_NEAR(mn.first / mn.second, b, 4 * sigma) << p.key();
    }
}

TEST(Generate, EmpiricalPriorsWithinTotalVariation) {
    const Corpus& c = default_corpus();
    std::map<QuestionPattern, std::map<int, double>> counts;
    std::map<QuestionPattern, double> totals;
    for (const Example& ex : c.train) {
        counts[ex.pattern][ex.answer] += 1;
        totals[ex.pattern] += 1;
    }
    for (const PatternPrior& p : c.priors.patterns) {
        double tv = 0;
        for (std::size_t i = 0; i < p.domain.size(); ++i) {
            tv += std::abs(counts[p.pattern][p.domain[i]] / totals[p.pattern] - p.train[i]);
        }
        EXPECT_LE(tv / 2, 0.05) << p.pattern.key();
    }
}

TEST(Audit, DeterministicPattern) {
    DatasetSpec spec = small_spec();
    spec.bias_strength = 1.0;
    const Corpus c = generate(spec);
    for (const PatternAudit& a : bias_audit(c.train)) {
        EXPECT_EQ(a.majority_share, 1.0);
        EXPECT_EQ(a.entropy, 0.0);
        EXPECT_EQ(a.majority_answer, c.priors.at(a.pattern).majority);
    }
}

TEST(Audit, EntropyMatchesCounts) {
    const auto audit = bias_audit(default_corpus().train);
    EXPECT_EQ(audit.size(), 36u);
    std::size_t total = 0;
    for (const PatternAudit& a : audit) {
        std::vector<std::size_t> counts;
        std::size_t max = 0;
        for (auto [answer, n] : a.answer_counts) {
            counts.push_back(n);
            max = std::max(max, n);
        }
        total += a.count;
        EXPECT_NEAR(a.entropy, entropy_oracle(counts), 1e-12);
        EXPECT_DOUBLE_EQ(a.majority_share, static_cast<double>(max) / static_cast<double>(a.count));
    }
    EXPECT_EQ(total, default_corpus().train.size());
    for (std::size_t i = 1; i < audit.size(); ++i) EXPECT_GE(audit[i - 1].majority_share, audit[i].majority_share);
}

TEST(Audit, SwapChangesEveryMajority) {
    const Corpus& c = default_corpus();
    std::map<QuestionPattern, int> train_major;
    for (const PatternAudit& a : bias_audit(c.train)) train_major[a.pattern] = a.majority_answer;
    for (const PatternAudit& a : bias_audit(c.test_ood)) EXPECT_NE(a.majority_answer, train_major.at(a.pattern));
}

TEST(Sampler, StandardIsPermutation) {
    const Corpus c = generate(small_spec());
    Sampler s(SamplerKind::Standard, c.train, 3);
    for (int epoch = 0; epoch < 2; ++epoch) {
        auto idx = s.next_epoch();
        std::sort(idx.begin(), idx.end());
        for (std::size_t i = 0; i < idx.size(); ++i) ASSERT_EQ(idx[i], i);
    }
    Sampler again(SamplerKind::Standard, c.train, 3);
    Sampler other(SamplerKind::Standard, c.train, 4);
    EXPECT_NE(again.next_epoch(), other.next_epoch());
}

TEST(Sampler, AnswerBalancedFrequencies) {
    const Corpus& c = default_corpus();
    Sampler s(SamplerKind::AnswerBalanced, c.train, 5);
    std::map<int, double> freq;
    double draws = 0;
    while (draws < 1e5) {
        for (std::size_t i : s.next_epoch()) {
            freq[c.train[i].answer] += 1;
            draws += 1;
        }
    }
    for (const auto& [answer, n] : freq) EXPECT_NEAR(n / draws, 1.0 / static_cast<double>(freq.size()), 0.02);
}

TEST(Sampler, QtypeBalancedFlattensAnswersWithinPattern) {
    const Corpus& c = default_corpus();
    Sampler s(SamplerKind::QtypeBalanced, c.train, 5);
    std::map<QuestionPattern, std::pair<double, double>> maj;
    std::map<QuestionPattern, double> drawn;
    std::map<QuestionPattern, double> original;
    for (const Example& ex : c.train) original[ex.pattern] += 1;
    double draws = 0;
    while (draws < 4e5) {
        for (std::size_t i : s.next_epoch()) {
            const Example& ex = c.train[i];
            auto& [hit, n] = maj[ex.pattern];
            n += 1;
            hit += ex.answer == c.priors.at(ex.pattern).majority ? 1 : 0;
            draws += 1;
        }
    }
    for (const auto& [p, hn] : maj) {
        EXPECT_NEAR(hn.first / hn.second, 1.0 / static_cast<double>(c.priors.at(p).domain.size()), 0.02) << p.key();
        // Question-type frequencies are preserved.
        EXPECT_NEAR(hn.second / draws, original[p] / static_cast<double>(c.train.size()), 0.005) << p.key();
    }
}

TEST(Batch, Layout) {
    const Corpus c = generate(small_spec());
    const std::vector<std::size_t> idx{4, 1};
    const Batch b = make_batch(c.train, idx, c.spec.n_regions);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.regions.shape(), (Shape{2 * c.spec.n_regions, c.spec.d_raw()}));
    EXPECT_EQ(b.answers, (std::vector<int>{c.train[4].answer, c.train[1].answer}));
    EXPECT_EQ(b.offsets[1], c.train[4].tokens.size());
    EXPECT_EQ(b.regions.at(c.spec.n_regions, 0), c.train[1].regions[0]);
}
