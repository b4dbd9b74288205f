#include "rubi/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rubi {

namespace {

constexpr std::uint64_t kSamplerStream = 0x73616d706c6572ULL;
constexpr char kMagic[8] = {'R', 'U', 'B', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

double accuracy_of(std::span<const int> predicted, std::span<const int> truth) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        hits += predicted[i] == truth[i] ? 1 : 0;
    }
    return predicted.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double split_accuracy(const Network& net, std::span<const Example> split, StrategyKind strategy) {
    const auto predicted = predict_split(net, split, strategy);
    std::vector<int> truth;
    truth.reserve(split.size());
    for (const Example& ex : split) truth.push_back(ex.answer);
    return accuracy_of(predicted, truth);
}

class Writer {
  public:
    void u32(std::uint32_t v) { bytes(v, 4); }
    void u64(std::uint64_t v) { bytes(v, 8); }
    void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buffer_.append(s);
    }
    void raw(const char* p, std::size_t n) { buffer_.append(p, n); }
    const std::string& buffer() const { return buffer_; }

  private:
    void bytes(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    std::string buffer_;
};

class Reader {
  public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
    std::uint64_t u64() { return bytes(8); }
    double f64() { return std::bit_cast<double>(bytes(8)); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return data_.size() - pos_; }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw std::runtime_error("checkpoint truncated: need " + std::to_string(pos_ + n) +
                                     " bytes, file has " + std::to_string(data_.size()));
        }
    }
    std::uint64_t bytes(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string data_;
    std::size_t pos_ = 0;
};

} // namespace

void TrainConfig::validate() const {
    if (!(base_lr > 0.0) || !(peak_lr > 0.0) || !(decay_factor > 0.0) || !(eps > 0.0)) {
        throw std::invalid_argument("learning rates, decay_factor and eps must be positive");
    }
    if (peak_lr < base_lr) {
        throw std::invalid_argument("peak_lr must be at least base_lr");
    }
    if (batch_size == 0 || epochs == 0 || decay_every == 0) {
        throw std::invalid_argument("batch_size, epochs and decay_every must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in (0, 1)");
    }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
    if (epoch < config.warmup_epochs) {
        const double t = static_cast<double>(epoch) / static_cast<double>(config.warmup_epochs);
        return config.base_lr + (config.peak_lr - config.base_lr) * t;
    }
    if (epoch < config.decay_start_epoch) {
        return config.peak_lr;
    }
    const std::size_t applications = 1 + (epoch - config.decay_start_epoch) / config.decay_every;
    return config.peak_lr * std::pow(config.decay_factor, static_cast<double>(applications));
}

AdamState::AdamState(const ParameterList& params) {
    for (const auto& p : params) {
        first_moment.emplace_back(p.tensor.size(), 0.0);
        second_moment.emplace_back(p.tensor.size(), 0.0);
    }
}

void adam_step(const ParameterList& params, AdamState& state, double lr, const AdamHyper& hyper) {
    if (state.first_moment.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state does not match the parameter list");
    }
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad_view()) {
            if (!std::isfinite(g)) {
                throw NonFiniteError("adam_step: non-finite gradient in parameter " + p.name);
            }
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(hyper.beta1, t);
    const double correction2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor param = params[i].tensor;
        if (!param.has_grad()) continue;
        const auto grad = param.grad_view();
        auto values = param.mutable_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * grad[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * grad[j] * grad[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

std::vector<int> predict_split(const Network& net, std::span<const Example> split, StrategyKind strategy,
                               std::size_t chunk) {
    std::vector<int> out;
    out.reserve(split.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(split.size(), start + chunk); ++i) idx.push_back(i);
        const auto part = net.predict(make_batch(split, idx, net.shape.n_regions), strategy);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

RunLog train(Network& net, const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const ParameterList params = net.parameters();
    AdamState state(params);
    const AdamHyper hyper{config.beta1, config.beta2, config.eps};
    Sampler sampler(config.sampler, corpus.train, mix_seed(config.seed, kSamplerStream));
    const StrategyKind kind = config.strategy.strategy;

    RunLog log;
    std::vector<std::size_t> idx;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        const auto order = sampler.next_epoch();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        std::size_t n_batches = 0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
            const Batch batch = make_batch(corpus.train, idx, corpus.spec.n_regions);
            for (const auto& p : params) {
                Tensor(p.tensor).zero_grad();
            }
            const LossTriple losses = compute_losses(net, batch, config.strategy);
            if (!std::isfinite(losses.total)) {
                throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(log.steps));
            }
            backward_and_route(losses, config.strategy);
            adam_step(params, state, lr, hyper);
            ++log.steps;

            const Tensor& scored = kind == StrategyKind::QuestionOnly ? losses.train_logits : *losses.base_logits;
            const auto predicted = argmax_rows(scored);
            for (std::size_t i = 0; i < predicted.size(); ++i) {
                hits += predicted[i] == batch.answers[i] ? 1 : 0;
            }
            rec.mean_l_qm += losses.qm;
            rec.mean_l_qo += losses.qo;
            rec.mean_l_total += losses.total;
            ++n_batches;
        }
        rec.mean_l_qm /= static_cast<double>(n_batches);
        rec.mean_l_qo /= static_cast<double>(n_batches);
        rec.mean_l_total /= static_cast<double>(n_batches);
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(order.size());
        rec.test_id_accuracy = split_accuracy(net, corpus.test_id, kind);
        rec.test_ood_accuracy = split_accuracy(net, corpus.test_ood, kind);
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return log;
}

std::uint64_t layout_digest(const ParameterList& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params) {
        feed(p.name);
        feed(shape_str(p.tensor.shape()));
        feed(";");
    }
    return h;
}

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);
    w.u64(layout_digest(params));
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.tensor.dim()));
        for (std::size_t d : p.tensor.shape()) w.u64(d);
        for (double v : p.tensor.data()) w.f64(v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) {
        throw std::runtime_error("failed writing checkpoint " + path.string());
    }
}

void load_checkpoint(const ParameterList& params, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read checkpoint " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    Reader r(buf.str());
    if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    if (const auto version = r.u32(); version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t digest = r.u64();
    if (digest != layout_digest(params)) {
        throw std::runtime_error("checkpoint digest mismatch: file was written for a different layer configuration");
    }
    const std::uint32_t count = r.u32();
    if (count != params.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                                 std::to_string(params.size()));
    }
    // Parse everything before touching the live parameters.
    std::vector<std::vector<double>> values(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        if (name != params[i].name) {
            throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                     params[i].name + "'");
        }
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u64();
        if (shape != params[i].tensor.shape()) {
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                                     ", expected " + shape_str(params[i].tensor.shape()));
        }
        values[i].resize(shape_size(shape));
        for (double& v : values[i]) v = r.f64();
    }
    if (r.remaining() != 0) {
        throw std::runtime_error("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t = params[i].tensor;
        std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
    }
}

} // namespace rubi
