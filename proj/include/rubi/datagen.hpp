#pragma once

#include "rubi/model.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rubi {

/// Question families; each maps to one accuracy column.
enum class Family { Color, Exist, Count };
inline constexpr std::array<Family, 3> kFamilies{Family::Color, Family::Exist, Family::Count};

std::string_view to_string(Family f);
Family parse_family(std::string_view s);
/// Accuracy column: exist -> "yes_no", count -> "number", color -> "other".
std::string_view family_column(Family f);

enum class OodMode { Swap, Uniform };
std::string_view to_string(OodMode m);
OodMode parse_ood_mode(std::string_view s);

enum class Split { Train, TestId, TestOod };
inline constexpr std::array<Split, 3> kSplits{Split::Train, Split::TestId, Split::TestOod};
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct DatasetSpec {
    std::uint64_t seed = 0;
    std::size_t n_objects = 12;
    std::size_t n_colors = 6;
    std::size_t max_count = 4;
    std::size_t n_regions = 8;
    std::size_t n_noise_dims = 4;
    double noise_sigma = 0.1;
    double bias_strength = 0.8;
    std::size_t n_train = 20000;
    std::size_t n_test_id = 5000;
    std::size_t n_test_ood = 5000;
    OodMode ood_mode = OodMode::Swap;

    std::size_t d_raw() const { return n_objects + n_colors + n_noise_dims; }
    std::size_t answer_count() const { return n_colors + max_count + 1 + 2; }
    std::size_t split_size(Split s) const;
    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

struct QuestionPattern {
    Family family = Family::Color;
    int object = 0;

    /// "color:3" style key.
    std::string key() const;
    static QuestionPattern parse(std::string_view key);
    auto operator<=>(const QuestionPattern&) const = default;
};

/// Global answer indices: colors, then counts 0..max_count, then yes, no.
struct AnswerSpace {
    std::size_t n_colors = 0;
    std::size_t max_count = 0;

    explicit AnswerSpace(const DatasetSpec& spec) : n_colors(spec.n_colors), max_count(spec.max_count) {}

    int color(std::size_t c) const { return static_cast<int>(c); }
    int count(std::size_t k) const { return static_cast<int>(n_colors + k); }
    int yes() const { return static_cast<int>(n_colors + max_count + 1); }
    int no() const { return yes() + 1; }
    std::size_t size() const { return n_colors + max_count + 3; }
    std::vector<int> domain(Family f) const;
    Family family_of(int answer) const;
    std::vector<std::string> labels() const;
};

struct Example {
    std::vector<double> regions; // n_regions x d_raw, row-major
    std::vector<int> tokens;
    int answer = 0;
    QuestionPattern pattern;

    bool operator==(const Example&) const = default;
};

struct PatternPrior {
    QuestionPattern pattern;
    std::vector<int> domain;
    int majority = 0;
    int alternate = 0;
    std::vector<double> train;    // aligned with domain
    std::vector<double> test_id;
    std::vector<double> test_ood;

    const std::vector<double>& for_split(Split s) const;
    double probability(Split s, int answer) const;
};

struct PriorTable {
    std::vector<PatternPrior> patterns; // family-major, then object

    const PatternPrior& at(const QuestionPattern& p) const;
};

/// Token vocabulary: template words then one word per object.
struct Vocabulary {
    std::vector<std::string> words;

    static Vocabulary build(const DatasetSpec& spec);
    int id(std::string_view word) const;
    std::vector<int> question(const QuestionPattern& p) const;
};

struct Corpus {
    DatasetSpec spec;
    PriorTable priors;
    Vocabulary vocab;
    std::vector<std::string> answers;
    std::vector<Example> train;
    std::vector<Example> test_id;
    std::vector<Example> test_ood;

    const std::vector<Example>& split(Split s) const;
    DataShape data_shape() const;
};

/// Per-pattern majority/alternate answers and per-split answer distributions.
PriorTable build_priors(const DatasetSpec& spec);

/// All three splits, reproducible from spec.seed. Each example draws from its
/// own seeded stream, so generation order does not matter.
Corpus generate(const DatasetSpec& spec);

/// Example i of a split.
Example generate_example(const DatasetSpec& spec, const PriorTable& priors, const Vocabulary& vocab, Split split,
                         std::size_t index);

/// Stacks examples (by index) into model layout.
Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices, std::size_t n_regions);
Batch make_batch(std::span<const Example> examples, std::size_t n_regions);

/// Rule-based reader of noise-free scenes: thresholds the one-hot components.
int read_scene(const DatasetSpec& spec, const Example& example);

struct PatternAudit {
    QuestionPattern pattern;
    std::size_t count = 0;
    int majority_answer = 0;
    double majority_share = 0.0;
    double entropy = 0.0; // nats
    std::vector<std::pair<int, std::size_t>> answer_counts;
};

/// Exact empirical answer statistics per pattern, sorted by majority share
/// descending (pattern order breaks ties).
std::vector<PatternAudit> bias_audit(std::span<const Example> split);

enum class SamplerKind { Standard, AnswerBalanced, QtypeBalanced };
std::string_view to_string(SamplerKind k);
SamplerKind parse_sampler(std::string_view s);

/// Yields one epoch of example indices at a time. Standard: a permutation.
/// Balanced kinds draw len(split) indices with replacement.
class Sampler {
  public:
    Sampler(SamplerKind kind, std::span<const Example> split, std::uint64_t seed);

    std::vector<std::size_t> next_epoch();
    SamplerKind kind() const { return kind_; }

  private:
    struct Cell {
        int answer = 0;
        std::vector<std::size_t> members;
    };
    struct PatternCells {
        QuestionPattern pattern;
        std::vector<Cell> cells;
    };

    SamplerKind kind_;
    std::size_t size_;
    Rng rng_;
    std::vector<Cell> by_answer_;
    std::vector<PatternCells> by_pattern_;
    std::vector<std::size_t> pattern_of_example_;
};

} // namespace rubi
