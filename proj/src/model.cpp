#include "rubi/model.hpp"

namespace rubi {

namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

} // namespace

QuestionEncoder::QuestionEncoder(std::size_t vocab, std::size_t d_emb, std::size_t d_q)
    : embed(vocab, d_emb), proj(d_emb, d_q) {}

void QuestionEncoder::init(Rng& rng) {
    embed.init(rng);
    proj.init(rng);
}

Tensor QuestionEncoder::encode(std::span<const int> tokens) const {
    if (tokens.empty()) {
        throw std::invalid_argument("encode_question: empty token sequence");
    }
    const std::size_t offsets[] = {0, tokens.size()};
    return ops::reshape(encode_batch(tokens, offsets), {proj.out_features()});
}

Tensor QuestionEncoder::encode_batch(std::span<const int> tokens, std::span<const std::size_t> offsets) const {
    return proj.forward(ops::segment_mean(embed.lookup(tokens), offsets));
}

void QuestionEncoder::collect(const std::string& prefix, ParameterList& out) const {
    embed.collect(prefix + ".embed", out);
    proj.collect(prefix + ".proj", out);
}

VqaModel::VqaModel(const ModelConfig& config, const DataShape& shape)
    : image_proj(shape.d_raw, config.d_v == 0 ? shape.d_raw : config.d_v),
      question(shape.vocab, config.d_emb, config.d_q),
      fusion(config.d_q, config.d_v == 0 ? shape.d_raw : config.d_v, config.d_h, config.d_m),
      classifier(chain(config.d_m, config.classifier_hidden, shape.answers)),
      shape_(shape) {}

void VqaModel::init(Rng& rng) {
    image_proj.init(rng);
    question.init(rng);
    fusion.init(rng);
    classifier.init(rng);
}

Tensor VqaModel::encode_question(std::span<const int> tokens) const { return question.encode(tokens); }

Tensor VqaModel::encode_image(const Tensor& raw_regions) const {
    if (raw_regions.dim() != 2 || raw_regions.rows() != shape_.n_regions) {
        throw ShapeError("encode_image: expected " + std::to_string(shape_.n_regions) + " regions (got " +
                         shape_str(raw_regions.shape()) + ")");
    }
    return image_proj.forward(raw_regions);
}

Tensor VqaModel::logits_from(const Tensor& q_repr, const Tensor& raw_regions) const {
    const std::size_t batch = q_repr.rows();
    if (raw_regions.rows() != batch * shape_.n_regions) {
        throw ShapeError("predict_logits: expected " + std::to_string(batch * shape_.n_regions) +
                         " region rows (got " + shape_str(raw_regions.shape()) + ")");
    }
    const Tensor regions = image_proj.forward(raw_regions);
    const Tensor fused = fusion.fuse_rows(ops::repeat_rows(q_repr, shape_.n_regions), regions);
    return classifier.forward(ops::max_rows(fused, shape_.n_regions));
}

Tensor VqaModel::encode_questions(const Batch& batch) const {
    return question.encode_batch(batch.tokens, batch.offsets);
}

Tensor VqaModel::predict_logits(const Tensor& raw_regions, std::span<const int> tokens) const {
    const Tensor regions = ops::reshape(raw_regions, raw_regions.dim() == 3
                                                         ? Shape{raw_regions.rows(), raw_regions.cols()}
                                                         : raw_regions.shape());
    if (regions.dim() != 2 || regions.rows() != shape_.n_regions) {
        throw ShapeError("predict_logits: expected " + std::to_string(shape_.n_regions) + " regions (got " +
                         shape_str(raw_regions.shape()) + ")");
    }
    const Tensor q = ops::reshape(encode_question(tokens), {1, question.proj.out_features()});
    return ops::reshape(logits_from(q, regions), {shape_.answers});
}

int VqaModel::predict_answer(const Tensor& raw_regions, std::span<const int> tokens) const {
    NoGradGuard guard;
    return argmax(predict_logits(raw_regions, tokens).data());
}

void VqaModel::collect(ParameterList& out) const {
    image_proj.collect("model.image_proj", out);
    question.collect("model.question", out);
    fusion.collect("model.fusion", out);
    classifier.collect("model.classifier", out);
}

int argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return static_cast<int>(best);
}

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    const std::size_t width = logits.cols();
    for (std::size_t r = 0; r < out.size(); ++r) {
        out[r] = argmax(logits.data().subspan(r * width, width));
    }
    return out;
}

} // namespace rubi
