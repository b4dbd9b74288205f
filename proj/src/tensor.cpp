#include "rubi/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rubi {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;
thread_local std::optional<std::pair<OpKind, double>> g_backward_fault;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

void require_finite(const Tensor& t, OpKind kind) {
    // v * 0 is NaN exactly when v is NaN or infinite; the sum stays vectorizable.
    double probe = 0.0;
    for (double v : t.data()) {
        probe += v * 0.0;
    }
    if (probe != 0.0) {
        throw NonFiniteError(std::string(op_name(kind)) + ": non-finite input value");
    }
}

[[noreturn]] void shape_fail(OpKind kind, const std::string& what, const Tensor& a) {
    throw ShapeError(std::string(op_name(kind)) + ": " + what + " (got " + shape_str(a.shape()) + ")");
}

[[noreturn]] void shape_fail(OpKind kind, const std::string& what, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op_name(kind)) + ": " + what + " (got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + ")");
}

void require_matrix(const Tensor& t, OpKind kind) {
    if (t.dim() != 2) {
        shape_fail(kind, "expected a 2-d tensor", t);
    }
}

ImplPtr new_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

// Builds the output tensor and, when any input takes gradients and recording
// is enabled, the graph node that routes gradients back to the inputs.
Tensor record(OpKind kind, Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
              detail::BackwardFn backward_fn) {
    auto impl = new_impl(std::move(shape), std::move(data));
    bool needs_grad = false;
    for (const Tensor* in : inputs) {
        in->impl()->reads.fetch_add(1, std::memory_order_relaxed);
        needs_grad = needs_grad || in->requires_grad();
    }
    if (needs_grad && g_grad_enabled) {
        auto node = std::make_shared<detail::Node>();
        node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
        node->kind = kind;
        for (const Tensor* in : inputs) {
            node->inputs.push_back(in->impl());
        }
        node->backward = std::move(backward_fn);
        impl->node = std::move(node);
        impl->requires_grad = true;
    }
    return Tensor(std::move(impl));
}

void add_into(std::vector<double>* dst, std::span<const double> src) {
    if (dst == nullptr) {
        return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        (*dst)[i] += src[i];
    }
}

} // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Matmul: return "matmul";
    case OpKind::MatmulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Embedding: return "embedding";
    case OpKind::SegmentMean: return "segment_mean";
    case OpKind::RepeatRows: return "repeat_rows";
    case OpKind::MaxRows: return "max_rows";
    case OpKind::Pick: return "pick";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Reshape: return "reshape";
    }
    return "unknown";
}

OpKind parse_op(std::string_view name) {
    for (int k = 0; k <= static_cast<int>(OpKind::Reshape); ++k) {
        if (name == op_name(static_cast<OpKind>(k))) return static_cast<OpKind>(k);
    }
    throw std::invalid_argument("unknown primitive '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(new_impl({}, {0.0})) {}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_size(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive (got " + shape_str(shape) + ")");
        }
    }
    if (shape.size() > 3) {
        throw ShapeError("tensors have at most 3 dimensions (got " + shape_str(shape) + ")");
    }
    if (shape_size(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    }
    return Tensor(new_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return from({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> flat;
    const std::size_t n_cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
        if (row.size() != n_cols) {
            throw ShapeError("ragged matrix literal");
        }
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return from({rows.size(), n_cols}, std::move(flat));
}

Tensor Tensor::scalar(double value) { return Tensor(new_impl({}, {value})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
}

std::size_t Tensor::rows() const {
    const auto& s = impl_->shape;
    if (s.empty()) {
        return 1;
    }
    return size() / s.back();
}

std::size_t Tensor::cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() requires a single-element tensor (got " + shape_str(shape()) + ")");
    }
    return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) {
        throw std::logic_error("requires_grad can only be changed on leaf tensors");
    }
    impl_->requires_grad = on;
    return *this;
}

std::vector<double> Tensor::grad() const {
    if (!impl_->has_grad) {
        return std::vector<double>(size(), 0.0);
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->has_grad = false;
    impl_->grad.clear();
}

std::uint64_t Tensor::node_id() const { return impl_->node ? impl_->node->id : 0; }

OpKind Tensor::node_kind() const {
    if (!impl_->node) {
        throw std::logic_error("tensor has no graph node");
    }
    return impl_->node->kind;
}

Tensor Tensor::clone() const {
    auto impl = new_impl(impl_->shape, impl_->data);
    impl->requires_grad = impl_->requires_grad && is_leaf();
    return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Backward

BackwardStats backward(const Tensor& loss) {
    const auto& root = loss.impl();
    if (!root->node) {
        throw std::invalid_argument("backward: loss is not attached to a computation graph");
    }
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar (got " + shape_str(loss.shape()) + ")");
    }

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root->node.get()};
    seen.insert(root->node.get());
    while (!stack.empty()) {
        detail::Node* node = stack.back();
        stack.pop_back();
        order.push_back(node);
        for (const auto& in : node->inputs) {
            if (in->node && seen.insert(in->node.get()).second) {
                stack.push_back(in->node.get());
            }
        }
    }
    // Inputs always carry smaller ids than the nodes consuming them.
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id > b->id; });

    std::unordered_map<detail::Node*, std::vector<double>> pending;
    pending[root->node.get()] = std::vector<double>(1, 1.0);
    std::unordered_set<detail::TensorImpl*> touched_leaves;

    BackwardStats stats;
    std::vector<std::vector<double>*> slots;
    for (detail::Node* node : order) {
        auto it = pending.find(node);
        if (it == pending.end()) {
            continue;
        }
        std::vector<double> grad_out = std::move(it->second);
        pending.erase(it);

        slots.assign(node->inputs.size(), nullptr);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            auto& in = node->inputs[i];
            if (!in->requires_grad) {
                continue;
            }
            if (in->node) {
                auto& g = pending[in->node.get()];
                if (g.empty()) {
                    g.assign(in->data.size(), 0.0);
                }
                slots[i] = &g;
            } else {
                if (!in->has_grad) {
                    in->grad.assign(in->data.size(), 0.0);
                    in->has_grad = true;
                }
                touched_leaves.insert(in.get());
                slots[i] = &in->grad;
            }
        }
        if (g_backward_fault && g_backward_fault->first == node->kind) {
            for (double& v : grad_out) v *= g_backward_fault->second;
        }
        node->backward(grad_out, slots);
        ++stats.nodes_visited;
    }
    stats.leaves_updated = touched_leaves.size();
    return stats;
}

ScopedBackwardFault::ScopedBackwardFault(OpKind kind, double factor) : previous_(g_backward_fault) {
    g_backward_fault = std::make_pair(kind, factor);
}

ScopedBackwardFault::~ScopedBackwardFault() { g_backward_fault = previous_; }

// ---------------------------------------------------------------------------
// Primitives

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    constexpr auto kind = OpKind::Matmul;
    require_matrix(a, kind);
    require_matrix(b, kind);
    if (a.cols() != b.rows()) {
        shape_fail(kind, "inner dimensions differ", a, b);
    }
    require_finite(a, kind);
    require_finite(b, kind);
    const auto m = static_cast<Eigen::Index>(a.rows());
    const auto k = static_cast<Eigen::Index>(a.cols());
    const auto n = static_cast<Eigen::Index>(b.cols());
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    auto ai = a.impl();
    auto bi = b.impl();
    return record(kind, {a.rows(), b.cols()}, std::move(out), {&a, &b},
                  [ai, bi, m, k, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      ConstMap gm(g.data(), m, n);
                      if (gin[0]) {
                          MutMap(gin[0]->data(), m, k).noalias() += gm * ConstMap(bi->data.data(), k, n).transpose();
                      }
                      if (gin[1]) {
                          MutMap(gin[1]->data(), k, n).noalias() += ConstMap(ai->data.data(), m, k).transpose() * gm;
                      }
                  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    constexpr auto kind = OpKind::MatmulNT;
    require_matrix(a, kind);
    require_matrix(b, kind);
    if (a.cols() != b.cols()) {
        shape_fail(kind, "inner dimensions differ", a, b);
    }
    require_finite(a, kind);
    require_finite(b, kind);
    const auto m = static_cast<Eigen::Index>(a.rows());
    const auto k = static_cast<Eigen::Index>(a.cols());
    const auto n = static_cast<Eigen::Index>(b.rows());
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
    auto ai = a.impl();
    auto bi = b.impl();
    return record(kind, {a.rows(), b.rows()}, std::move(out), {&a, &b},
                  [ai, bi, m, k, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      ConstMap gm(g.data(), m, n);
                      if (gin[0]) {
                          MutMap(gin[0]->data(), m, k).noalias() += gm * ConstMap(bi->data.data(), n, k);
                      }
                      if (gin[1]) {
                          MutMap(gin[1]->data(), n, k).noalias() += gm.transpose() * ConstMap(ai->data.data(), m, k);
                      }
                  });
}

Tensor add(const Tensor& a, const Tensor& b) {
    constexpr auto kind = OpKind::Add;
    const bool same = a.shape() == b.shape();
    const bool row_bias = !same && a.dim() == 2 && b.dim() == 1 && b.size() == a.cols();
    if (!same && !row_bias) {
        shape_fail(kind, "operands must match or the second must be a row bias", a, b);
    }
    require_finite(a, kind);
    require_finite(b, kind);
    std::vector<double> out(a.data().begin(), a.data().end());
    const std::size_t n_cols = b.size();
    const double* bias = b.data().data();
    for (std::size_t start = 0; start < out.size(); start += n_cols) {
        double* row = out.data() + start;
        const double* src = same ? bias + start : bias;
        for (std::size_t c = 0; c < n_cols; ++c) {
            row[c] += src[c];
        }
    }
    return record(kind, a.shape(), std::move(out), {&a, &b},
                  [same, n_cols](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      add_into(gin[0], g);
                      if (gin[1]) {
                          if (same) {
                              add_into(gin[1], g);
                          } else {
                              double* dst = gin[1]->data();
                              for (std::size_t start = 0; start < g.size(); start += n_cols) {
                                  for (std::size_t c = 0; c < n_cols; ++c) {
                                      dst[c] += g[start + c];
                                  }
                              }
                          }
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    constexpr auto kind = OpKind::Mul;
    if (a.shape() != b.shape()) {
        shape_fail(kind, "operands must have identical shapes", a, b);
    }
    require_finite(a, kind);
    require_finite(b, kind);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return record(kind, a.shape(), std::move(out), {&a, &b},
                  [ai, bi](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      if (gin[0]) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              (*gin[0])[i] += g[i] * bi->data[i];
                          }
                      }
                      if (gin[1]) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              (*gin[1])[i] += g[i] * ai->data[i];
                          }
                      }
                  });
}

Tensor scale(const Tensor& x, double factor) {
    constexpr auto kind = OpKind::Scale;
    require_finite(x, kind);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) {
        v *= factor;
    }
    return record(kind, x.shape(), std::move(out), {&x},
                  [factor](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          (*gin[0])[i] += g[i] * factor;
                      }
                  });
}

Tensor sigmoid(const Tensor& x) {
    constexpr auto kind = OpKind::Sigmoid;
    require_finite(x, kind);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        // Branch on sign so exp never overflows.
        if (v >= 0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    auto saved = std::make_shared<std::vector<double>>(out);
    return record(kind, x.shape(), std::move(out), {&x},
                  [saved](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      const auto& y = *saved;
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          (*gin[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                      }
                  });
}

Tensor relu(const Tensor& x) {
    constexpr auto kind = OpKind::Relu;
    require_finite(x, kind);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] > 0.0 ? x[i] : 0.0;
    }
    auto xi = x.impl();
    return record(kind, x.shape(), std::move(out), {&x},
                  [xi](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          if (xi->data[i] > 0.0) {
                              (*gin[0])[i] += g[i];
                          }
                      }
                  });
}

Tensor log_softmax(const Tensor& x) {
    constexpr auto kind = OpKind::LogSoftmax;
    require_finite(x, kind);
    const std::size_t n_rows = x.rows();
    const std::size_t n_cols = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < n_rows; ++r) {
        const double* row = x.data().data() + r * n_cols;
        const double peak = *std::max_element(row, row + n_cols);
        double total = 0.0;
        for (std::size_t c = 0; c < n_cols; ++c) {
            total += std::exp(row[c] - peak);
        }
        const double log_norm = peak + std::log(total);
        for (std::size_t c = 0; c < n_cols; ++c) {
            out[r * n_cols + c] = row[c] - log_norm;
        }
    }
    auto saved = std::make_shared<std::vector<double>>(out);
    return record(kind, x.shape(), std::move(out), {&x},
                  [saved, n_rows, n_cols](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      const auto& y = *saved;
                      for (std::size_t r = 0; r < n_rows; ++r) {
                          double g_total = 0.0;
                          for (std::size_t c = 0; c < n_cols; ++c) {
                              g_total += g[r * n_cols + c];
                          }
                          for (std::size_t c = 0; c < n_cols; ++c) {
                              const std::size_t i = r * n_cols + c;
                              (*gin[0])[i] += g[i] - std::exp(y[i]) * g_total;
                          }
                      }
                  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    constexpr auto kind = OpKind::Embedding;
    require_matrix(table, kind);
    if (ids.empty()) {
        throw ShapeError("embedding: empty id sequence");
    }
    const std::size_t vocab = table.rows();
    const std::size_t width = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(id) + " outside vocabulary of size " +
                                    std::to_string(vocab));
        }
    }
    require_finite(table, kind);
    std::vector<int> saved_ids(ids.begin(), ids.end());
    std::vector<double> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
    }
    return record(kind, {ids.size(), width}, std::move(out), {&table},
                  [saved_ids = std::move(saved_ids), width](std::span<const double> g,
                                                            std::span<std::vector<double>*> gin) {
                      for (std::size_t i = 0; i < saved_ids.size(); ++i) {
                          double* dst = gin[0]->data() + static_cast<std::size_t>(saved_ids[i]) * width;
                          for (std::size_t c = 0; c < width; ++c) {
                              dst[c] += g[i * width + c];
                          }
                      }
                  });
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> offsets) {
    constexpr auto kind = OpKind::SegmentMean;
    require_matrix(x, kind);
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows()) {
        shape_fail(kind, "offsets must start at 0 and end at the row count", x);
    }
    require_finite(x, kind);
    const std::size_t width = x.cols();
    const std::size_t n_seg = offsets.size() - 1;
    std::vector<double> out(n_seg * width, 0.0);
    for (std::size_t s = 0; s < n_seg; ++s) {
        if (offsets[s + 1] <= offsets[s]) {
            shape_fail(kind, "segment " + std::to_string(s) + " is empty", x);
        }
        const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                out[s * width + c] += x[r * width + c];
            }
        }
        for (std::size_t c = 0; c < width; ++c) {
            out[s * width + c] *= inv;
        }
    }
    std::vector<std::size_t> saved(offsets.begin(), offsets.end());
    return record(kind, {n_seg, width}, std::move(out), {&x},
                  [saved = std::move(saved), width](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t s = 0; s + 1 < saved.size(); ++s) {
                          const double inv = 1.0 / static_cast<double>(saved[s + 1] - saved[s]);
                          for (std::size_t r = saved[s]; r < saved[s + 1]; ++r) {
                              for (std::size_t c = 0; c < width; ++c) {
                                  (*gin[0])[r * width + c] += g[s * width + c] * inv;
                              }
                          }
                      }
                  });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
    constexpr auto kind = OpKind::RepeatRows;
    require_matrix(x, kind);
    if (times == 0) {
        shape_fail(kind, "repeat count must be positive", x);
    }
    require_finite(x, kind);
    const std::size_t n_rows = x.rows();
    const std::size_t width = x.cols();
    std::vector<double> out(n_rows * times * width);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t t = 0; t < times; ++t) {
            std::copy_n(x.data().data() + r * width, width, out.data() + (r * times + t) * width);
        }
    }
    return record(kind, {n_rows * times, width}, std::move(out), {&x},
                  [n_rows, times, width](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t r = 0; r < n_rows; ++r) {
                          for (std::size_t t = 0; t < times; ++t) {
                              for (std::size_t c = 0; c < width; ++c) {
                                  (*gin[0])[r * width + c] += g[(r * times + t) * width + c];
                              }
                          }
                      }
                  });
}

Tensor max_rows(const Tensor& x, std::size_t group) {
    constexpr auto kind = OpKind::MaxRows;
    require_matrix(x, kind);
    if (group == 0 || x.rows() % group != 0) {
        shape_fail(kind, "row count must be a multiple of the group size " + std::to_string(group), x);
    }
    require_finite(x, kind);
    const std::size_t n_groups = x.rows() / group;
    const std::size_t width = x.cols();
    std::vector<double> out(n_groups * width);
    std::vector<std::size_t> winner(n_groups * width);
    for (std::size_t gi = 0; gi < n_groups; ++gi) {
        for (std::size_t c = 0; c < width; ++c) {
            std::size_t best = gi * group;
            double best_val = x[best * width + c];
            for (std::size_t r = best + 1; r < (gi + 1) * group; ++r) {
                if (x[r * width + c] > best_val) {
                    best_val = x[r * width + c];
                    best = r;
                }
            }
            out[gi * width + c] = best_val;
            winner[gi * width + c] = best * width + c;
        }
    }
    return record(kind, {n_groups, width}, std::move(out), {&x},
                  [winner = std::move(winner)](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          (*gin[0])[winner[i]] += g[i];
                      }
                  });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
    constexpr auto kind = OpKind::Pick;
    require_matrix(x, kind);
    if (index.size() != x.rows()) {
        shape_fail(kind, "need one index per row, got " + std::to_string(index.size()), x);
    }
    const std::size_t width = x.cols();
    for (int id : index) {
        if (id < 0 || static_cast<std::size_t>(id) >= width) {
            throw std::out_of_range("pick: column " + std::to_string(id) + " outside width " +
                                    std::to_string(width));
        }
    }
    require_finite(x, kind);
    std::vector<double> out(index.size());
    std::vector<std::size_t> flat(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        flat[r] = r * width + static_cast<std::size_t>(index[r]);
        out[r] = x[flat[r]];
    }
    return record(kind, {index.size()}, std::move(out), {&x},
                  [flat = std::move(flat)](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (std::size_t r = 0; r < flat.size(); ++r) {
                          (*gin[0])[flat[r]] += g[r];
                      }
                  });
}

Tensor sum(const Tensor& x) {
    constexpr auto kind = OpKind::Sum;
    require_finite(x, kind);
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    return record(kind, {}, {total}, {&x}, [](std::span<const double> g, std::span<std::vector<double>*> gin) {
        for (double& v : *gin[0]) {
            v += g[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    constexpr auto kind = OpKind::Mean;
    require_finite(x, kind);
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    const double inv = 1.0 / static_cast<double>(x.size());
    return record(kind, {}, {total * inv}, {&x},
                  [inv](std::span<const double> g, std::span<std::vector<double>*> gin) {
                      for (double& v : *gin[0]) {
                          v += g[0] * inv;
                      }
                  });
}

Tensor reshape(const Tensor& x, Shape shape) {
    constexpr auto kind = OpKind::Reshape;
    if (shape_size(shape) != x.size() || shape.size() > 3) {
        throw ShapeError(std::string(op_name(kind)) + ": cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return record(kind, std::move(shape), std::move(out), {&x},
                  [](std::span<const double> g, std::span<std::vector<double>*> gin) { add_into(gin[0], g); });
}

Tensor detach(const Tensor& x) {
    return Tensor::from(x.shape().empty() ? Shape{} : x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

} // namespace ops

} // namespace rubi
