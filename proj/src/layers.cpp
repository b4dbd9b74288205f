#include "rubi/layers.hpp"

#include <cmath>

namespace rubi {

namespace {

void fill_uniform(Tensor& t, Rng& rng, double bound) {
    for (double& v : t.mutable_data()) {
        v = rng.uniform(-bound, bound);
    }
}

} // namespace

std::size_t parameter_count(const ParameterList& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.tensor.size();
    }
    return n;
}

Linear::Linear(std::size_t d_in, std::size_t d_out)
    : weight(Tensor::parameter({d_out, d_in}, std::vector<double>(d_out * d_in, 0.0))),
      bias(Tensor::parameter({d_out}, std::vector<double>(d_out, 0.0))) {}

void Linear::init(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
    fill_uniform(weight, rng, bound);
    for (double& v : bias.mutable_data()) {
        v = 0.0;
    }
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.cols() != in_features() || x.dim() == 0 || x.dim() > 2) {
        throw ShapeError("linear: expected last dimension " + std::to_string(in_features()) + " (got " +
                         shape_str(x.shape()) + ")");
    }
    if (x.dim() == 1) {
        Tensor row = ops::reshape(x, {1, x.size()});
        return ops::reshape(ops::add(ops::matmul_nt(row, weight), bias), {out_features()});
    }
    return ops::add(ops::matmul_nt(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Embedding::Embedding(std::size_t vocab, std::size_t width)
    : table(Tensor::parameter({vocab, width}, std::vector<double>(vocab * width, 0.0))) {}

void Embedding::init(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(vocab() + width()));
    fill_uniform(table, rng, bound);
}

Tensor Embedding::lookup(std::span<const int> ids) const { return ops::embedding(table, ids); }

void Embedding::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".table", table});
}

Mlp::Mlp(std::span<const std::size_t> sizes) {
    if (sizes.size() < 2) {
        throw ShapeError("mlp: need at least input and output sizes");
    }
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        layers.emplace_back(sizes[i], sizes[i + 1]);
    }
}

void Mlp::init(Rng& rng) {
    for (auto& layer : layers) {
        layer.init(rng);
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = layers.front().forward(x);
    for (std::size_t i = 1; i < layers.size(); ++i) {
        h = layers[i].forward(ops::relu(h));
    }
    return h;
}

void Mlp::collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(prefix + "." + std::to_string(i), out);
    }
}

LowRankBilinearFusion::LowRankBilinearFusion(std::size_t d_q, std::size_t d_v, std::size_t d_hidden,
                                             std::size_t d_out)
    : proj_q(d_q, d_hidden), proj_v(d_v, d_hidden), proj_out(d_hidden, d_out) {}

void LowRankBilinearFusion::init(Rng& rng) {
    proj_q.init(rng);
    proj_v.init(rng);
    proj_out.init(rng);
}

Tensor LowRankBilinearFusion::fuse(const Tensor& q, const Tensor& v) const {
    if (q.dim() != 1 || v.dim() != 1) {
        throw ShapeError("bilinear_fuse: expected vectors (got " + shape_str(q.shape()) + " and " +
                         shape_str(v.shape()) + ")");
    }
    return proj_out.forward(ops::mul(proj_q.forward(q), proj_v.forward(v)));
}

Tensor LowRankBilinearFusion::fuse_rows(const Tensor& q, const Tensor& v) const {
    if (q.dim() != 2 || v.dim() != 2 || q.rows() != v.rows()) {
        throw ShapeError("bilinear_fuse: expected row-aligned matrices (got " + shape_str(q.shape()) + " and " +
                         shape_str(v.shape()) + ")");
    }
    return proj_out.forward(ops::mul(proj_q.forward(q), proj_v.forward(v)));
}

void LowRankBilinearFusion::collect(const std::string& prefix, ParameterList& out) const {
    proj_q.collect(prefix + ".proj_q", out);
    proj_v.collect(prefix + ".proj_v", out);
    proj_out.collect(prefix + ".proj_out", out);
}

} // namespace rubi
