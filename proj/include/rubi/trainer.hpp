#pragma once

#include "rubi/datagen.hpp"
#include "rubi/strategy.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace rubi {

struct TrainConfig {
    double base_lr = 1.5e-4;
    double peak_lr = 6e-4;
    std::size_t warmup_epochs = 7;
    std::size_t decay_start_epoch = 14;
    double decay_factor = 0.25;
    std::size_t decay_every = 2;
    std::size_t batch_size = 256;
    std::size_t epochs = 22;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    StrategyConfig strategy;
    SamplerKind sampler = SamplerKind::Standard;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup base -> peak over [0, warmup), plateau until decay_start,
/// then peak * factor^(1 + floor((epoch - decay_start) / decay_every)).
double lr_at(std::size_t epoch, const TrainConfig& config);

struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;

    explicit AdamState(const ParameterList& params);
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter holding a gradient.
/// Parameters without a gradient are left untouched; the step counter always
/// advances. Throws NonFiniteError naming the parameter on a bad gradient.
void adam_step(const ParameterList& params, AdamState& state, double lr, const AdamHyper& hyper = {});

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double mean_l_qm = 0.0;
    double mean_l_qo = 0.0;
    double mean_l_total = 0.0;
    double train_accuracy = 0.0;
    double test_id_accuracy = 0.0;
    double test_ood_accuracy = 0.0;
};

struct RunLog {
    std::vector<EpochRecord> epochs;
    std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full optimisation run; deterministic in config.seed.
RunLog train(Network& net, const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Predictions of the inference path over a whole split, evaluated in chunks.
std::vector<int> predict_split(const Network& net, std::span<const Example> split, StrategyKind strategy,
                               std::size_t chunk = 512);

/// Digest of the layer layout (names and shapes); checkpoints carry it.
std::uint64_t layout_digest(const ParameterList& params);

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path);
/// Loads values into params in place. Rejects truncated files, digest
/// mismatches, and name/shape disagreements.
void load_checkpoint(const ParameterList& params, const std::filesystem::path& path);

} // namespace rubi
