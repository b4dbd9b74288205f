#pragma once

#include "rubi/model.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace rubi {

enum class MaskActivation { Sigmoid, Relu };
enum class Combine { Product, Sum };
enum class StrategyKind { Classical, Rubi, QuestionOnly };

std::string_view to_string(MaskActivation v);
std::string_view to_string(Combine v);
std::string_view to_string(StrategyKind v);
MaskActivation parse_mask_activation(std::string_view s);
Combine parse_combine(std::string_view s);
StrategyKind parse_strategy(std::string_view s);

struct StrategyConfig {
    StrategyKind strategy = StrategyKind::Rubi;
    MaskActivation mask_activation = MaskActivation::Sigmoid;
    Combine combine = Combine::Product;
    bool use_qo_loss = true;

    /// Short row label, e.g. "rubi(sigmoid,product)" or "rubi(sigmoid,product,no_qo)".
    std::string label() const;
    bool operator==(const StrategyConfig&) const = default;
};

/// nn_q and c_q. nn_q feeds both the mask and, through c_q, the question-only logits.
class QuestionOnlyBranch {
  public:
    QuestionOnlyBranch() = default;
    QuestionOnlyBranch(const ModelConfig& config, const DataShape& shape);

    void init(Rng& rng);
    void collect(ParameterList& out) const;

    Mlp nn_q;
    Linear c_q;
};

/// Everything a run trains: the base model, the branch, and the private
/// encoder of the standalone question-only baseline.
struct Network {
    Network() = default;
    Network(const ModelConfig& config, const DataShape& shape);

    /// Deterministic in seed; construction order fixes the stream layout.
    void init(std::uint64_t seed);
    ParameterList parameters() const;
    /// Parameters belonging to the branch (never read at inference).
    ParameterList branch_parameters() const;

    /// Branch-free predictions for a batch: argmax of f for classical/rubi,
    /// argmax of the standalone question-only model otherwise.
    std::vector<int> predict(const Batch& batch, StrategyKind strategy) const;
    Tensor inference_logits(const Batch& batch, StrategyKind strategy) const;

    ModelConfig config;
    DataShape shape;
    VqaModel model;
    QuestionOnlyBranch branch;
    QuestionEncoder standalone_encoder;
};

/// activation(nn_q(q_repr)).
Tensor mask(const Tensor& q_repr, const QuestionOnlyBranch& branch, MaskActivation activation);
/// logits ⊙ mask or logits + mask.
Tensor fuse_predictions(const Tensor& logits, const Tensor& mask, Combine combine);
/// c_q(nn_q(detach(q_repr))): same values as the attached path, no gradient into the encoder.
Tensor question_only_logits(const Tensor& q_repr, const QuestionOnlyBranch& branch);
/// Mean over rows of -log_softmax(logits)[answer].
Tensor cross_entropy(const Tensor& logits, std::span<const int> answers);

struct LossTriple {
    Tensor l_qm;
    Tensor l_qo;
    Tensor l_rubi;
    double qm = 0.0;
    double qo = 0.0;
    double total = 0.0;
    /// Fused predictions (rubi) or plain logits (other strategies), for diagnostics.
    Tensor train_logits;
    /// Base-model logits, branch-free (absent for question_only).
    std::optional<Tensor> base_logits;
};

LossTriple compute_losses(const Network& net, const Batch& batch, const StrategyConfig& config);

/// Runs the backward passes for each active loss. L_QM reaches f, nn_q and the
/// shared encoder; L_QO reaches only nn_q and c_q. Gradients must be zeroed
/// beforehand.
void backward_and_route(const LossTriple& losses, const StrategyConfig& config);

} // namespace rubi
