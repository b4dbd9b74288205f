#include "rubi/strategy.hpp"

#include <stdexcept>

namespace rubi {

namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

} // namespace

std::string_view to_string(MaskActivation v) { return v == MaskActivation::Sigmoid ? "sigmoid" : "relu"; }
std::string_view to_string(Combine v) { return v == Combine::Product ? "product" : "sum"; }

std::string_view to_string(StrategyKind v) {
    switch (v) {
    case StrategyKind::Classical: return "classical";
    case StrategyKind::Rubi: return "rubi";
    case StrategyKind::QuestionOnly: return "question_only";
    }
    return "?";
}

MaskActivation parse_mask_activation(std::string_view s) {
    if (s == "sigmoid") return MaskActivation::Sigmoid;
    if (s == "relu") return MaskActivation::Relu;
    throw std::invalid_argument("unknown mask activation '" + std::string(s) + "' (expected sigmoid or relu)");
}

Combine parse_combine(std::string_view s) {
    if (s == "product") return Combine::Product;
    if (s == "sum") return Combine::Sum;
    throw std::invalid_argument("unknown combine mode '" + std::string(s) + "' (expected product or sum)");
}

StrategyKind parse_strategy(std::string_view s) {
    if (s == "classical") return StrategyKind::Classical;
    if (s == "rubi") return StrategyKind::Rubi;
    if (s == "question_only") return StrategyKind::QuestionOnly;
    throw std::invalid_argument("unknown strategy '" + std::string(s) +
                                "' (expected classical, rubi or question_only)");
}

std::string StrategyConfig::label() const {
    if (strategy != StrategyKind::Rubi) {
        return std::string(to_string(strategy));
    }
    std::string out = "rubi(" + std::string(to_string(mask_activation)) + "," + std::string(to_string(combine));
    if (!use_qo_loss) {
        out += ",no_qo";
    }
    return out + ")";
}

QuestionOnlyBranch::QuestionOnlyBranch(const ModelConfig& config, const DataShape& shape)
    : nn_q(chain(config.d_q, config.branch_hidden, shape.answers)), c_q(shape.answers, shape.answers) {}

void QuestionOnlyBranch::init(Rng& rng) {
    nn_q.init(rng);
    c_q.init(rng);
}

void QuestionOnlyBranch::collect(ParameterList& out) const {
    nn_q.collect("branch.nn_q", out);
    c_q.collect("branch.c_q", out);
}

Network::Network(const ModelConfig& cfg, const DataShape& data_shape)
    : config(cfg), shape(data_shape), model(cfg, data_shape), branch(cfg, data_shape),
      standalone_encoder(data_shape.vocab, cfg.d_emb, cfg.d_q) {}

void Network::init(std::uint64_t seed) {
    Rng rng(seed);
    model.init(rng);
    branch.init(rng);
    standalone_encoder.init(rng);
}

ParameterList Network::parameters() const {
    ParameterList out;
    model.collect(out);
    branch.collect(out);
    standalone_encoder.collect("standalone.question", out);
    return out;
}

ParameterList Network::branch_parameters() const {
    ParameterList out;
    branch.collect(out);
    return out;
}

Tensor Network::inference_logits(const Batch& batch, StrategyKind strategy) const {
    if (strategy == StrategyKind::QuestionOnly) {
        const Tensor q = standalone_encoder.encode_batch(batch.tokens, batch.offsets);
        return branch.c_q.forward(branch.nn_q.forward(q));
    }
    return model.logits_from(model.encode_questions(batch), batch.regions);
}

std::vector<int> Network::predict(const Batch& batch, StrategyKind strategy) const {
    NoGradGuard guard;
    return argmax_rows(inference_logits(batch, strategy));
}

Tensor mask(const Tensor& q_repr, const QuestionOnlyBranch& branch, MaskActivation activation) {
    const Tensor pre = branch.nn_q.forward(q_repr);
    switch (activation) {
    case MaskActivation::Sigmoid: return ops::sigmoid(pre);
    case MaskActivation::Relu: return ops::relu(pre);
    }
    throw std::invalid_argument("mask: unknown activation");
}

Tensor fuse_predictions(const Tensor& logits, const Tensor& mask_values, Combine combine) {
    if (logits.shape() != mask_values.shape()) {
        throw ShapeError("fuse_predictions: logits " + shape_str(logits.shape()) + " and mask " +
                         shape_str(mask_values.shape()) + " differ");
    }
    switch (combine) {
    case Combine::Product: return ops::mul(logits, mask_values);
    case Combine::Sum: return ops::add(logits, mask_values);
    }
    throw std::invalid_argument("fuse_predictions: unknown combine mode");
}

Tensor question_only_logits(const Tensor& q_repr, const QuestionOnlyBranch& branch) {
    return branch.c_q.forward(branch.nn_q.forward(ops::detach(q_repr)));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> answers) {
    const Tensor rows = logits.dim() == 1 ? ops::reshape(logits, {1, logits.size()}) : logits;
    if (answers.size() != rows.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(answers.size()) + " answers for logits " +
                         shape_str(logits.shape()));
    }
    return ops::scale(ops::mean(ops::pick(ops::log_softmax(rows), answers)), -1.0);
}

LossTriple compute_losses(const Network& net, const Batch& batch, const StrategyConfig& config) {
    if (batch.size() == 0) {
        throw std::invalid_argument("compute_losses: empty batch");
    }
    for (int a : batch.answers) {
        if (a < 0 || static_cast<std::size_t>(a) >= net.shape.answers) {
            throw std::out_of_range("compute_losses: answer index " + std::to_string(a) + " outside [0, " +
                                    std::to_string(net.shape.answers) + ")");
        }
    }

    LossTriple out;
    const Tensor zero = Tensor::scalar(0.0);
    switch (config.strategy) {
    case StrategyKind::Classical: {
        const Tensor logits = net.model.logits_from(net.model.encode_questions(batch), batch.regions);
        out.l_qm = cross_entropy(logits, batch.answers);
        out.l_qo = zero;
        out.l_rubi = out.l_qm;
        out.train_logits = logits;
        out.base_logits = logits;
        break;
    }
    case StrategyKind::Rubi: {
        const Tensor q_repr = net.model.encode_questions(batch);
        const Tensor logits = net.model.logits_from(q_repr, batch.regions);
        const Tensor fused =
            fuse_predictions(logits, mask(q_repr, net.branch, config.mask_activation), config.combine);
        out.l_qm = cross_entropy(fused, batch.answers);
        out.l_qo = config.use_qo_loss ? cross_entropy(question_only_logits(q_repr, net.branch), batch.answers)
                                      : zero;
        out.l_rubi = ops::add(out.l_qm, out.l_qo);
        out.train_logits = fused;
        out.base_logits = logits;
        break;
    }
    case StrategyKind::QuestionOnly: {
        const Tensor q = net.standalone_encoder.encode_batch(batch.tokens, batch.offsets);
        const Tensor logits = net.branch.c_q.forward(net.branch.nn_q.forward(q));
        out.l_qm = zero;
        out.l_qo = cross_entropy(logits, batch.answers);
        out.l_rubi = out.l_qo;
        out.train_logits = logits;
        break;
    }
    }
    out.qm = out.l_qm.item();
    out.qo = out.l_qo.item();
    out.total = out.l_rubi.item();
    return out;
}

void backward_and_route(const LossTriple& losses, const StrategyConfig& config) {
    if (config.strategy != StrategyKind::QuestionOnly && losses.l_qm.requires_grad()) {
        backward(losses.l_qm);
    }
    if (losses.l_qo.requires_grad()) {
        backward(losses.l_qo);
    }
}

} // namespace rubi
