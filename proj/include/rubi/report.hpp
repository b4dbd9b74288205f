#pragma once

#include "rubi/datagen.hpp"
#include "rubi/trainer.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rubi {

/// Top-1 exact match, overall and per accuracy column. A family with no
/// examples in the split has no accuracy (std::nullopt), never 0.
struct Accuracy {
    double overall = 0.0;
    std::size_t total = 0;
    std::array<std::optional<double>, 3> family{}; // indexed like kFamilies
    std::array<std::size_t, 3> family_count{};

    std::optional<double> of(Family f) const { return family[static_cast<std::size_t>(f)]; }
};

/// Throws std::invalid_argument when the lengths differ or the split is empty.
Accuracy accuracy(std::span<const int> predictions, std::span<const Example> examples);

/// min(#annotators giving `prediction` / 3, 1). Requires at least one annotator.
double soft_accuracy(int prediction, std::span<const int> annotators);

/// Half the L1 distance between two count histograms after normalisation.
/// Throws if the lengths differ or either histogram is empty.
double total_variation(std::span<const std::size_t> a, std::span<const std::size_t> b);

/// Answer histograms of one pattern over the global answer space.
struct PatternDistribution {
    QuestionPattern pattern;
    std::vector<int> domain;
    std::vector<std::size_t> train;
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> truth;
    /// TV(predicted, truth); absent when the split holds no example of the pattern.
    std::optional<double> tv;
};

/// Histograms for the requested patterns (all patterns when empty), in
/// pattern order. Throws std::invalid_argument on a pattern outside the
/// corpus or a prediction count that does not match the split.
std::vector<PatternDistribution> distribution_report(const Corpus& corpus, Split split,
                                                     std::span<const int> predictions,
                                                     std::span<const QuestionPattern> patterns = {});

struct RunReport {
    std::string label;
    std::string split;
    std::string config_digest;
    std::uint64_t seed = 0;
    Accuracy accuracy;
    std::vector<PatternDistribution> patterns;
    std::vector<EpochRecord> trace;
};

RunReport make_run_report(const Corpus& corpus, Split split, std::span<const int> predictions,
                          std::string label, std::string config_digest, std::uint64_t seed, const RunLog& log);

struct Stat {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation; 0 for a single run
    std::size_t n = 0;
};

/// Mean and sample standard deviation of the present values.
std::optional<Stat> summarize(std::span<const std::optional<double>> values);

struct ComparisonRow {
    std::string label;
    std::size_t runs = 0;
    Stat overall;
    std::array<std::optional<Stat>, 3> family{};
};

struct ComparisonTable {
    std::string split;
    std::vector<ComparisonRow> rows; // overall mean, descending
};

/// Groups reports by label. Throws std::invalid_argument on an empty input
/// or on reports from different splits.
ComparisonTable compare_runs(std::span<const RunReport> reports);

/// Header row, one line per strategy, '.' decimals; absent cells are empty.
std::string to_csv(const ComparisonTable& table);
/// Fixed-width text table with "mean ± std" cells.
std::string to_text(const ComparisonTable& table);

void to_json(nlohmann::json& j, const Accuracy& a);
void from_json(const nlohmann::json& j, Accuracy& a);
void to_json(nlohmann::json& j, const PatternDistribution& d);
void from_json(const nlohmann::json& j, PatternDistribution& d);
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const RunLog& log);
void from_json(const nlohmann::json& j, RunLog& log);
void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);
void to_json(nlohmann::json& j, const ComparisonTable& t);

} // namespace rubi
