#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rubi {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Raised when operand shapes violate a primitive's contract.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or infinity reaches a primitive or the optimizer.
class NonFiniteError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

enum class OpKind {
    Matmul,
    MatmulNT,
    Add,
    Mul,
    Scale,
    Sigmoid,
    Relu,
    LogSoftmax,
    Embedding,
    SegmentMean,
    RepeatRows,
    MaxRows,
    Pick,
    Sum,
    Mean,
    Reshape,
};

const char* op_name(OpKind kind);
/// Inverse of op_name; throws std::invalid_argument on an unknown name.
OpKind parse_op(std::string_view name);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<double> grad;
    std::shared_ptr<Node> node;
    std::atomic<std::uint64_t> reads{0};
};

// Receives the output gradient and accumulates into the per-input slots.
// A slot is null when the corresponding input does not require gradients.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)>;

struct Node {
    std::uint64_t id = 0;
    OpKind kind{};
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

} // namespace detail

/// Dense row-major array of doubles with an optional link into the
/// computation graph. Copies share storage; use clone() for a deep copy.
class Tensor {
  public:
    Tensor();

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor scalar(double value);
    /// Leaf that accumulates gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return impl_->data; }
    /// Direct write access for initializers and the optimizer; never recorded.
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return impl_->node == nullptr; }
    bool has_grad() const { return impl_->has_grad; }
    /// Gradient values, or an all-zero view-equivalent when none accumulated.
    std::vector<double> grad() const;
    std::span<const double> grad_view() const { return impl_->grad; }
    void zero_grad();

    std::uint64_t node_id() const;
    OpKind node_kind() const;
    std::uint64_t reads() const { return impl_->reads.load(std::memory_order_relaxed); }
    void reset_reads() { impl_->reads.store(0, std::memory_order_relaxed); }

    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

struct BackwardStats {
    std::size_t nodes_visited = 0;
    std::size_t leaves_updated = 0;
};

/// Reverse sweep from a scalar loss. Leaf gradients accumulate additively.
BackwardStats backward(const Tensor& loss);

/// Mutation-testing hook: while alive, every backward of `kind` on this
/// thread receives its upstream gradient multiplied by `factor`.
class ScopedBackwardFault {
  public:
    ScopedBackwardFault(OpKind kind, double factor);
    ~ScopedBackwardFault();
    ScopedBackwardFault(const ScopedBackwardFault&) = delete;
    ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

  private:
    std::optional<std::pair<OpKind, double>> previous_;
};

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ, with b stored as [n, k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Elementwise sum; b may also be a vector of length cols(a), added to every row.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// Row-wise over the last axis, max-subtracted.
Tensor log_softmax(const Tensor& x);
/// Rows of table selected by ids: [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Mean of consecutive row segments; offsets has one entry per segment plus the end.
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> offsets);
/// Each row repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);
/// Column-wise max over consecutive groups of `group` rows. Ties go to the
/// lowest row.
Tensor max_rows(const Tensor& x, std::size_t group);
/// out[i] = x[i, index[i]].
Tensor pick(const Tensor& x, std::span<const int> index);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Same values, no graph linkage, requires_grad == false.
Tensor detach(const Tensor& x);

} // namespace ops

} // namespace rubi
