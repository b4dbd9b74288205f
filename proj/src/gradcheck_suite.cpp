#include "rubi/gradcheck_suite.hpp"

#include "rubi/datagen.hpp"
#include "rubi/gradcheck.hpp"
#include "rubi/random.hpp"
#include "rubi/strategy.hpp"

#include <algorithm>
#include <functional>

namespace rubi {

namespace {

Tensor random_leaf(Rng& rng, Shape shape) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor random_const(Rng& rng, Shape shape) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::from(std::move(shape), std::move(v));
}

struct Case {
    std::function<Tensor()> f;
    std::vector<Tensor> wrt;
};

using CaseBuilder = std::function<Case(Rng&)>;

struct Primitive {
    OpKind kind;
    CaseBuilder build;
};

std::vector<Primitive> primitives() {
    std::vector<Primitive> out;
    out.push_back({OpKind::Matmul, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor b = random_leaf(rng, {4, 2});
                       Tensor w = random_const(rng, {3, 2});
                       return Case{[=] { return ops::sum(ops::mul(ops::matmul(a, b), w)); }, {a, b}};
                   }});
    out.push_back({OpKind::MatmulNT, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor b = random_leaf(rng, {2, 4});
                       Tensor w = random_const(rng, {3, 2});
                       return Case{[=] { return ops::sum(ops::mul(ops::matmul_nt(a, b), w)); }, {a, b}};
                   }});
    out.push_back({OpKind::Add, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor b = random_leaf(rng, {3, 4});
                       Tensor bias = random_leaf(rng, {4});
                       Tensor w = random_const(rng, {3, 4});
                       return Case{[=] { return ops::sum(ops::mul(ops::add(ops::add(a, b), bias), w)); }, {a, b, bias}};
                   }});
    out.push_back({OpKind::Mul, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor b = random_leaf(rng, {3, 4});
                       return Case{[=] { return ops::sum(ops::mul(a, b)); }, {a, b}};
                   }});
    out.push_back({OpKind::Scale, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor w = random_const(rng, {3, 4});
                       return Case{[=] { return ops::sum(ops::mul(ops::scale(a, -1.7), w)); }, {a}};
                   }});
    out.push_back({OpKind::Sigmoid, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor w = random_const(rng, {3, 4});
                       return Case{[=] { return ops::sum(ops::mul(ops::sigmoid(a), w)); }, {a}};
                   }});
    out.push_back({OpKind::Relu, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 4});
                       Tensor w = random_const(rng, {3, 4});
                       return Case{[=] { return ops::sum(ops::mul(ops::relu(a), w)); }, {a}};
                   }});
    out.push_back({OpKind::LogSoftmax, [](Rng& rng) {
                       Tensor a = random_leaf(rng, {3, 5});
                       Tensor w = random_const(rng, {3, 5});
                       return Case{[=] { return ops::sum(ops::mul(ops::log_softmax(a), w)); }, {a}};
                   }});
    out.push_back({OpKind::Embedding, [](Rng& rng) {
                       Tensor table = random_leaf(rng, {6, 3});
                       Tensor w = random_const(rng, {4, 3});
                       const std::vector<int> ids{0, 2, 2, 5};
                       return Case{[=] { return ops::sum(ops::mul(ops::embedding(table, ids), w)); }, {table}};
                   }});
    out.push_back({OpKind::SegmentMean, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {5, 3});
                       Tensor w = random_const(rng, {2, 3});
                       const std::vector<std::size_t> offsets{0, 2, 5};
                       return Case{[=] { return ops::sum(ops::mul(ops::segment_mean(x, offsets), w)); }, {x}};
                   }});
    out.push_back({OpKind::RepeatRows, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {2, 3});
                       Tensor w = random_const(rng, {6, 3});
                       return Case{[=] { return ops::sum(ops::mul(ops::repeat_rows(x, 3), w)); }, {x}};
                   }});
    out.push_back({OpKind::MaxRows, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {6, 3});
                       Tensor w = random_const(rng, {2, 3});
                       return Case{[=] { return ops::sum(ops::mul(ops::max_rows(x, 3), w)); }, {x}};
                   }});
    out.push_back({OpKind::Pick, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {3, 4});
                       Tensor w = random_const(rng, {3});
                       const std::vector<int> index{1, 0, 3};
                       return Case{[=] { return ops::sum(ops::mul(ops::pick(x, index), w)); }, {x}};
                   }});
    out.push_back({OpKind::Sum, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {3, 4});
                       return Case{[=] { return ops::sum(x); }, {x}};
                   }});
    out.push_back({OpKind::Mean, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {3, 4});
                       return Case{[=] { return ops::mean(x); }, {x}};
                   }});
    out.push_back({OpKind::Reshape, [](Rng& rng) {
                       Tensor x = random_leaf(rng, {3, 4});
                       Tensor w = random_const(rng, {2, 6});
                       return Case{[=] { return ops::sum(ops::mul(ops::reshape(x, {2, 6}), w)); }, {x}};
                   }});
    return out;
}

// A small network over a small synthetic batch keeps the composite checks fast.
struct Fixture {
    Corpus corpus;
    Network net;
    Batch batch;
};

Fixture make_fixture(std::uint64_t seed) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.n_objects = 4;
    spec.n_colors = 3;
    spec.max_count = 2;
    spec.n_regions = 3;
    spec.n_noise_dims = 1;
    spec.n_train = 6;
    spec.n_test_id = 1;
    spec.n_test_ood = 1;
    Fixture fx;
    fx.corpus = generate(spec);
    ModelConfig mc;
    mc.d_emb = 4;
    mc.d_q = 5;
    mc.d_h = 6;
    mc.d_m = 5;
    mc.classifier_hidden = {6};
    mc.branch_hidden = {4};
    fx.net = Network(mc, fx.corpus.data_shape());
    fx.net.init(seed);
    fx.batch = make_batch(fx.corpus.train, spec.n_regions);
    return fx;
}

std::vector<Tensor> tensors_of(const ParameterList& params, const std::string& prefix) {
    std::vector<Tensor> out;
    for (const auto& p : params) {
        if (p.name.rfind(prefix, 0) == 0) out.push_back(p.tensor);
    }
    return out;
}

GradcheckEntry check(const std::string& name, bool composite, std::size_t points, double eps, double tolerance,
                     const std::function<Case(std::size_t)>& make) {
    GradcheckEntry entry;
    entry.name = name;
    entry.composite = composite;
    entry.points = points;
    for (std::size_t i = 0; i < points; ++i) {
        Case c = make(i);
        const GradCheckResult r = finite_difference_check(c.f, c.wrt, eps);
        entry.max_rel_error = std::max(entry.max_rel_error, r.max_rel_error);
        entry.coordinates += r.coordinates;
    }
    entry.passed = entry.max_rel_error < tolerance;
    return entry;
}

} // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options) {
    std::vector<GradcheckEntry> out;
    for (const Primitive& p : primitives()) {
        out.push_back(check(op_name(p.kind), false, options.points, options.eps, options.tolerance,
                            [&](std::size_t i) {
                                Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(p.kind) * 1000 + i));
                                return p.build(rng);
                            }));
    }

    const std::size_t composite_points = options.points;
    std::vector<Fixture> fixtures;
    for (std::size_t i = 0; i < composite_points; ++i) fixtures.push_back(make_fixture(options.seed + i));

    out.push_back(check("predict_logits", true, composite_points, options.composite_eps, options.tolerance,
                        [&](std::size_t i) {
                            const Fixture& fx = fixtures[i];
                            Rng rng(mix_seed(options.seed, 0x7072656400 + i));
                            const Example& ex = fx.corpus.train.front();
                            const Tensor regions =
                                Tensor::from({fx.corpus.spec.n_regions, fx.corpus.spec.d_raw()}, ex.regions);
                            const Tensor w = random_const(rng, {fx.corpus.answers.size()});
                            const VqaModel* model = &fx.net.model;
                            return Case{[=] { return ops::sum(ops::mul(model->predict_logits(regions, ex.tokens), w)); },
                                        tensors_of(fx.net.parameters(), "model.")};
                        }));

    StrategyConfig rubi;
    out.push_back(check("fused_loss", true, composite_points, options.composite_eps, options.tolerance,
                        [&](std::size_t i) {
                            const Fixture* fx = &fixtures[i];
                            return Case{[=] { return compute_losses(fx->net, fx->batch, rubi).l_qm; },
                                        tensors_of(fx->net.parameters(), "")};
                        }));
    out.push_back(check("question_only_loss", true, composite_points, options.composite_eps, options.tolerance,
                        [&](std::size_t i) {
                            const Fixture* fx = &fixtures[i];
                            // The encoder sits behind detach: only the branch is differentiated.
                            return Case{[=] { return compute_losses(fx->net, fx->batch, rubi).l_qo; },
                                        tensors_of(fx->net.parameters(), "branch.")};
                        }));
    return out;
}

} // namespace rubi
