#pragma once

#include "rubi/random.hpp"
#include "rubi/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace rubi {

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

std::size_t parameter_count(const ParameterList& params);

/// y = x Wᵀ + b with W stored [d_out, d_in].
class Linear {
  public:
    Linear() = default;
    Linear(std::size_t d_in, std::size_t d_out);

    /// Fan-based uniform weights in ±sqrt(6 / (d_in + d_out)), zero bias.
    void init(Rng& rng);

    /// Accepts [d_in] or [n, d_in]; returns the matching rank.
    Tensor forward(const Tensor& x) const;

    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }
    void collect(const std::string& prefix, ParameterList& out) const;

    Tensor weight;
    Tensor bias;
};

class Embedding {
  public:
    Embedding() = default;
    Embedding(std::size_t vocab, std::size_t width);

    void init(Rng& rng);
    /// [ids.size(), width]; ids must be < vocab.
    Tensor lookup(std::span<const int> ids) const;

    std::size_t vocab() const { return table.rows(); }
    std::size_t width() const { return table.cols(); }
    void collect(const std::string& prefix, ParameterList& out) const;

    Tensor table;
};

/// Affine layers with ReLU between them and nothing after the last.
class Mlp {
  public:
    Mlp() = default;
    /// sizes = {d_in, hidden..., d_out}.
    explicit Mlp(std::span<const std::size_t> sizes);

    void init(Rng& rng);
    Tensor forward(const Tensor& x) const;

    std::size_t in_features() const { return layers.front().in_features(); }
    std::size_t out_features() const { return layers.back().out_features(); }
    void collect(const std::string& prefix, ParameterList& out) const;

    std::vector<Linear> layers;
};

/// fuse(q, v) = proj_out(proj_q(q) ⊙ proj_v(v)).
class LowRankBilinearFusion {
  public:
    LowRankBilinearFusion() = default;
    LowRankBilinearFusion(std::size_t d_q, std::size_t d_v, std::size_t d_hidden, std::size_t d_out);

    void init(Rng& rng);
    /// Single pair: q [d_q], v [d_v] -> [d_out].
    Tensor fuse(const Tensor& q, const Tensor& v) const;
    /// Row-aligned batch: q [n, d_q], v [n, d_v] -> [n, d_out].
    Tensor fuse_rows(const Tensor& q, const Tensor& v) const;

    std::size_t out_features() const { return proj_out.out_features(); }
    void collect(const std::string& prefix, ParameterList& out) const;

    Linear proj_q;
    Linear proj_v;
    Linear proj_out;
};

} // namespace rubi
