#pragma once

#include "rubi/layers.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace rubi {

/// Layer sizes of the network. The hidden lists give the widths between the
/// input and the |A|-wide output layer.
struct ModelConfig {
    std::size_t d_v = 0; // 0: same as the raw region width
    std::size_t d_emb = 64;
    std::size_t d_q = 64;
    std::size_t d_h = 128;
    std::size_t d_m = 128;
    std::vector<std::size_t> classifier_hidden{128, 128};
    std::vector<std::size_t> branch_hidden{64, 64};
};

/// Sizes fixed by the data: region width and count, vocabulary, answers.
struct DataShape {
    std::size_t d_raw = 0;
    std::size_t n_regions = 0;
    std::size_t vocab = 0;
    std::size_t answers = 0;
};

/// One batch in model layout. Regions of example i occupy rows
/// [i * n_regions, (i + 1) * n_regions); tokens of example i occupy
/// [offsets[i], offsets[i + 1]).
struct Batch {
    Tensor regions;
    std::vector<int> tokens;
    std::vector<std::size_t> offsets{0};
    std::vector<int> answers;

    std::size_t size() const { return offsets.size() - 1; }
};

/// Embedding, mean over tokens, affine map to d_q.
class QuestionEncoder {
  public:
    QuestionEncoder() = default;
    QuestionEncoder(std::size_t vocab, std::size_t d_emb, std::size_t d_q);

    void init(Rng& rng);
    /// Single question -> [d_q].
    Tensor encode(std::span<const int> tokens) const;
    /// Concatenated questions split by offsets -> [B, d_q].
    Tensor encode_batch(std::span<const int> tokens, std::span<const std::size_t> offsets) const;
    void collect(const std::string& prefix, ParameterList& out) const;

    Embedding embed;
    Linear proj;
};

/// Base model: classifier(max over regions of fuse(e_q(q), e_v(region))).
class VqaModel {
  public:
    VqaModel() = default;
    VqaModel(const ModelConfig& config, const DataShape& shape);

    void init(Rng& rng);

    Tensor encode_question(std::span<const int> tokens) const;
    /// [n_regions, d_raw] -> [n_regions, d_v].
    Tensor encode_image(const Tensor& raw_regions) const;
    /// Logits for one example: [|A|].
    Tensor predict_logits(const Tensor& raw_regions, std::span<const int> tokens) const;
    /// Argmax of the logits, ties to the lowest index.
    int predict_answer(const Tensor& raw_regions, std::span<const int> tokens) const;

    /// Batched path used in training: q_repr [B, d_q] and regions [B * n_regions, d_raw] -> [B, |A|].
    Tensor logits_from(const Tensor& q_repr, const Tensor& raw_regions) const;
    Tensor encode_questions(const Batch& batch) const;

    void collect(ParameterList& out) const;

    std::size_t n_regions() const { return shape_.n_regions; }
    std::size_t answer_count() const { return shape_.answers; }
    const DataShape& data_shape() const { return shape_; }

    Linear image_proj;
    QuestionEncoder question;
    LowRankBilinearFusion fusion;
    Mlp classifier;

  private:
    DataShape shape_;
};

/// Index of the largest value, lowest index on ties.
int argmax(std::span<const double> values);
/// Row-wise argmax of a [B, n] tensor.
std::vector<int> argmax_rows(const Tensor& logits);

} // namespace rubi
