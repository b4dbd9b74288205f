#include "rubi/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace rubi {

namespace {

constexpr std::uint64_t kPriorStream = 0x70726f7273ULL;
constexpr std::array<std::uint64_t, 3> kSplitStream{0x747261696eULL, 0x69645f74ULL, 0x6f6f645fULL};

const std::array<const char*, 12> kObjectWords{"banana", "apple", "car",  "dog",  "cup",   "chair",
                                               "ball",   "hat",   "boat", "lamp", "shirt", "bird"};
const std::array<const char*, 8> kColorWords{"red", "green", "blue", "yellow", "white", "black", "brown", "pink"};
const std::array<const char*, 9> kTemplateWords{"what", "color", "is", "the", "how", "many", "are", "there", "a"};

std::string object_word(std::size_t o) {
    return o < kObjectWords.size() ? kObjectWords[o] : "object" + std::to_string(o);
}

std::string color_word(std::size_t c) {
    return c < kColorWords.size() ? kColorWords[c] : "color" + std::to_string(c);
}

std::vector<double> prior_with_peak(const std::vector<int>& domain, int peak, double mass) {
    const double rest = (1.0 - mass) / static_cast<double>(domain.size() - 1);
    std::vector<double> p(domain.size(), rest);
    for (std::size_t i = 0; i < domain.size(); ++i) {
        if (domain[i] == peak) {
            p[i] = mass;
        }
    }
    return p;
}

int sample_categorical(Rng& rng, const std::vector<int>& domain, const std::vector<double>& probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < domain.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
            return domain[i];
        }
    }
    return domain.back();
}

} // namespace

std::string_view to_string(Family f) {
    switch (f) {
    case Family::Color: return "color";
    case Family::Exist: return "exist";
    case Family::Count: return "count";
    }
    return "?";
}

Family parse_family(std::string_view s) {
    if (s == "color") return Family::Color;
    if (s == "exist") return Family::Exist;
    if (s == "count") return Family::Count;
    throw std::invalid_argument("unknown question family '" + std::string(s) + "'");
}

std::string_view family_column(Family f) {
    switch (f) {
    case Family::Color: return "other";
    case Family::Exist: return "yes_no";
    case Family::Count: return "number";
    }
    return "?";
}

std::string_view to_string(OodMode m) { return m == OodMode::Swap ? "swap" : "uniform"; }

OodMode parse_ood_mode(std::string_view s) {
    if (s == "swap") return OodMode::Swap;
    if (s == "uniform") return OodMode::Uniform;
    throw std::invalid_argument("unknown ood_mode '" + std::string(s) + "' (expected swap or uniform)");
}

std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::TestId: return "test_id";
    case Split::TestOod: return "test_ood";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test_id") return Split::TestId;
    if (s == "test_ood") return Split::TestOod;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::size_t DatasetSpec::split_size(Split s) const {
    switch (s) {
    case Split::Train: return n_train;
    case Split::TestId: return n_test_id;
    case Split::TestOod: return n_test_ood;
    }
    return 0;
}

void DatasetSpec::validate() const {
    if (n_objects < 2) {
        throw std::invalid_argument("n_objects must be at least 2 (distractors need another object)");
    }
    if (n_colors < 2) {
        throw std::invalid_argument("n_colors must be at least 2");
    }
    if (n_regions == 0) {
        throw std::invalid_argument("n_regions must be positive");
    }
    if (max_count < 1) {
        throw std::invalid_argument("max_count must be at least 1");
    }
    if (max_count > n_regions) {
        throw std::invalid_argument("max_count " + std::to_string(max_count) + " exceeds n_regions " +
                                    std::to_string(n_regions) + ": count scenes would be impossible");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw std::invalid_argument("noise_sigma must be a finite non-negative number");
    }
    if (n_train == 0 || n_test_id == 0 || n_test_ood == 0) {
        throw std::invalid_argument("split sizes must be positive");
    }
    if (!(bias_strength <= 1.0)) {
        throw std::invalid_argument("bias_strength must be at most 1");
    }
    const AnswerSpace answers(*this);
    for (Family f : kFamilies) {
        const std::size_t k = answers.domain(f).size();
        if (!(bias_strength > 1.0 / static_cast<double>(k))) {
            throw std::invalid_argument("bias_strength " + std::to_string(bias_strength) +
                                        " does not exceed the uniform mass 1/" + std::to_string(k) + " of family " +
                                        std::string(to_string(f)) + ": no majority exists");
        }
    }
}

std::string QuestionPattern::key() const { return std::string(to_string(family)) + ":" + std::to_string(object); }

QuestionPattern QuestionPattern::parse(std::string_view key) {
    const auto colon = key.find(':');
    if (colon == std::string_view::npos) {
        throw std::invalid_argument("pattern '" + std::string(key) + "' is not of the form family:object");
    }
    QuestionPattern p;
    p.family = parse_family(key.substr(0, colon));
    const std::string number(key.substr(colon + 1));
    std::size_t used = 0;
    int object = -1;
    try {
        object = std::stoi(number, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != number.size() || number.empty() || object < 0) {
        throw std::invalid_argument("pattern '" + std::string(key) + "' has an invalid object id");
    }
    p.object = object;
    return p;
}

std::vector<int> AnswerSpace::domain(Family f) const {
    std::vector<int> out;
    switch (f) {
    case Family::Color:
        for (std::size_t c = 0; c < n_colors; ++c) out.push_back(color(c));
        break;
    case Family::Count:
        for (std::size_t k = 0; k <= max_count; ++k) out.push_back(count(k));
        break;
    case Family::Exist:
        out = {yes(), no()};
        break;
    }
    return out;
}

Family AnswerSpace::family_of(int answer) const {
    if (answer < static_cast<int>(n_colors)) return Family::Color;
    if (answer < yes()) return Family::Count;
    return Family::Exist;
}

std::vector<std::string> AnswerSpace::labels() const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < n_colors; ++c) out.push_back(color_word(c));
    for (std::size_t k = 0; k <= max_count; ++k) out.push_back(std::to_string(k));
    out.emplace_back("yes");
    out.emplace_back("no");
    return out;
}

const std::vector<double>& PatternPrior::for_split(Split s) const {
    switch (s) {
    case Split::Train: return train;
    case Split::TestId: return test_id;
    case Split::TestOod: return test_ood;
    }
    return train;
}

double PatternPrior::probability(Split s, int answer) const {
    const auto& p = for_split(s);
    for (std::size_t i = 0; i < domain.size(); ++i) {
        if (domain[i] == answer) return p[i];
    }
    return 0.0;
}

const PatternPrior& PriorTable::at(const QuestionPattern& p) const {
    for (const auto& entry : patterns) {
        if (entry.pattern == p) return entry;
    }
    throw std::invalid_argument("unknown pattern " + p.key());
}

Vocabulary Vocabulary::build(const DatasetSpec& spec) {
    Vocabulary v;
    v.words.assign(kTemplateWords.begin(), kTemplateWords.end());
    for (std::size_t o = 0; o < spec.n_objects; ++o) {
        v.words.push_back(object_word(o));
    }
    return v;
}

int Vocabulary::id(std::string_view word) const {
    const auto it = std::find(words.begin(), words.end(), word);
    if (it == words.end()) {
        throw std::invalid_argument("word '" + std::string(word) + "' not in vocabulary");
    }
    return static_cast<int>(it - words.begin());
}

std::vector<int> Vocabulary::question(const QuestionPattern& p) const {
    const int obj = static_cast<int>(kTemplateWords.size()) + p.object;
    switch (p.family) {
    case Family::Color: return {id("what"), id("color"), id("is"), id("the"), obj};
    case Family::Count: return {id("how"), id("many"), obj, id("are"), id("there")};
    case Family::Exist: return {id("is"), id("there"), id("a"), obj};
    }
    return {};
}

const std::vector<Example>& Corpus::split(Split s) const {
    switch (s) {
    case Split::Train: return train;
    case Split::TestId: return test_id;
    case Split::TestOod: return test_ood;
    }
    return train;
}

DataShape Corpus::data_shape() const {
    return DataShape{spec.d_raw(), spec.n_regions, vocab.words.size(), answers.size()};
}

PriorTable build_priors(const DatasetSpec& spec) {
    spec.validate();
    const AnswerSpace answers(spec);
    Rng rng(mix_seed(spec.seed, kPriorStream));
    PriorTable table;
    for (Family f : kFamilies) {
        const auto domain = answers.domain(f);
        for (std::size_t o = 0; o < spec.n_objects; ++o) {
            PatternPrior entry;
            entry.pattern = {f, static_cast<int>(o)};
            entry.domain = domain;
            const std::size_t maj = rng.below(domain.size());
            std::size_t alt = rng.below(domain.size() - 1);
            if (alt >= maj) ++alt;
            entry.majority = domain[maj];
            entry.alternate = domain[alt];
            entry.train = prior_with_peak(domain, entry.majority, spec.bias_strength);
            entry.test_id = entry.train;
            if (spec.ood_mode == OodMode::Swap) {
                entry.test_ood = prior_with_peak(domain, entry.alternate, spec.bias_strength);
            } else {
                entry.test_ood.assign(domain.size(), 1.0 / static_cast<double>(domain.size()));
            }
            table.patterns.push_back(std::move(entry));
        }
    }
    return table;
}

Example generate_example(const DatasetSpec& spec, const PriorTable& priors, const Vocabulary& vocab, Split split,
                         std::size_t index) {
    const AnswerSpace answers(spec);
    Rng rng(mix_seed(mix_seed(spec.seed, kSplitStream[static_cast<std::size_t>(split)]), index));

    Example ex;
    ex.pattern.family = kFamilies[rng.below(kFamilies.size())];
    ex.pattern.object = static_cast<int>(rng.below(spec.n_objects));
    const PatternPrior& prior = priors.at(ex.pattern);
    ex.answer = sample_categorical(rng, prior.domain, prior.for_split(split));

    // (object, color) per region.
    std::vector<std::pair<std::size_t, std::size_t>> scene;
    const auto target = static_cast<std::size_t>(ex.pattern.object);
    std::size_t target_regions = 0;
    switch (ex.pattern.family) {
    case Family::Color:
        scene.emplace_back(target, static_cast<std::size_t>(ex.answer));
        break;
    case Family::Count:
        target_regions = static_cast<std::size_t>(ex.answer) - spec.n_colors;
        break;
    case Family::Exist:
        target_regions = ex.answer == answers.yes() ? 1 + rng.below(spec.max_count) : 0;
        break;
    }
    for (std::size_t i = 0; i < target_regions; ++i) {
        scene.emplace_back(target, rng.below(spec.n_colors));
    }
    while (scene.size() < spec.n_regions) {
        std::size_t other = rng.below(spec.n_objects - 1);
        if (other >= target) ++other;
        scene.emplace_back(other, rng.below(spec.n_colors));
    }
    rng.shuffle(scene.begin(), scene.end());

    const std::size_t width = spec.d_raw();
    ex.regions.assign(spec.n_regions * width, 0.0);
    for (std::size_t r = 0; r < spec.n_regions; ++r) {
        ex.regions[r * width + scene[r].first] = 1.0;
        ex.regions[r * width + spec.n_objects + scene[r].second] = 1.0;
    }
    if (spec.noise_sigma > 0.0) {
        for (double& v : ex.regions) {
            v += spec.noise_sigma * rng.normal();
        }
    }
    ex.tokens = vocab.question(ex.pattern);
    return ex;
}

Corpus generate(const DatasetSpec& spec) {
    Corpus corpus;
    corpus.spec = spec;
    corpus.priors = build_priors(spec);
    corpus.vocab = Vocabulary::build(spec);
    corpus.answers = AnswerSpace(spec).labels();
    for (Split s : kSplits) {
        auto& out = s == Split::Train ? corpus.train : s == Split::TestId ? corpus.test_id : corpus.test_ood;
        out.reserve(spec.split_size(s));
        for (std::size_t i = 0; i < spec.split_size(s); ++i) {
            out.push_back(generate_example(spec, corpus.priors, corpus.vocab, s, i));
        }
    }
    return corpus;
}

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices, std::size_t n_regions) {
    if (indices.empty()) {
        throw std::invalid_argument("make_batch: no examples");
    }
    const std::size_t region_values = examples[indices.front()].regions.size();
    Batch batch;
    std::vector<double> regions;
    regions.reserve(indices.size() * region_values);
    if (n_regions == 0 || region_values % n_regions != 0) {
        throw ShapeError("make_batch: " + std::to_string(region_values) + " region values do not split into " +
                         std::to_string(n_regions) + " regions");
    }
    for (std::size_t idx : indices) {
        const Example& ex = examples[idx];
        if (ex.regions.size() != region_values) {
            throw ShapeError("make_batch: examples disagree on region layout");
        }
        regions.insert(regions.end(), ex.regions.begin(), ex.regions.end());
        batch.tokens.insert(batch.tokens.end(), ex.tokens.begin(), ex.tokens.end());
        batch.offsets.push_back(batch.tokens.size());
        batch.answers.push_back(ex.answer);
    }
    batch.regions = Tensor::from({indices.size() * n_regions, region_values / n_regions}, std::move(regions));
    return batch;
}

Batch make_batch(std::span<const Example> examples, std::size_t n_regions) {
    std::vector<std::size_t> all(examples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch(examples, all, n_regions);
}

int read_scene(const DatasetSpec& spec, const Example& example) {
    const AnswerSpace answers(spec);
    const std::size_t width = spec.d_raw();
    const auto target = static_cast<std::size_t>(example.pattern.object);
    std::size_t present = 0;
    int color = -1;
    for (std::size_t r = 0; r < spec.n_regions; ++r) {
        const double* row = example.regions.data() + r * width;
        if (row[target] > 0.5) {
            ++present;
            for (std::size_t c = 0; c < spec.n_colors; ++c) {
                if (row[spec.n_objects + c] > 0.5) color = static_cast<int>(c);
            }
        }
    }
    switch (example.pattern.family) {
    case Family::Color: return color < 0 ? -1 : answers.color(static_cast<std::size_t>(color));
    case Family::Count: return answers.count(present);
    case Family::Exist: return present > 0 ? answers.yes() : answers.no();
    }
    return -1;
}

std::vector<PatternAudit> bias_audit(std::span<const Example> split) {
    if (split.empty()) {
        throw std::invalid_argument("bias_audit: empty split");
    }
    std::map<QuestionPattern, std::map<int, std::size_t>> counts;
    for (const Example& ex : split) {
        ++counts[ex.pattern][ex.answer];
    }
    std::vector<PatternAudit> out;
    for (const auto& [pattern, by_answer] : counts) {
        PatternAudit audit;
        audit.pattern = pattern;
        for (const auto& [answer, n] : by_answer) {
            audit.count += n;
            audit.answer_counts.emplace_back(answer, n);
        }
        std::size_t best = 0;
        for (const auto& [answer, n] : audit.answer_counts) {
            if (n > best) {
                best = n;
                audit.majority_answer = answer;
            }
        }
        const double total = static_cast<double>(audit.count);
        audit.majority_share = static_cast<double>(best) / total;
        for (const auto& [answer, n] : audit.answer_counts) {
            const double p = static_cast<double>(n) / total;
            audit.entropy -= p * std::log(p);
        }
        out.push_back(std::move(audit));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const PatternAudit& a, const PatternAudit& b) { return a.majority_share > b.majority_share; });
    return out;
}

std::string_view to_string(SamplerKind k) {
    switch (k) {
    case SamplerKind::Standard: return "standard";
    case SamplerKind::AnswerBalanced: return "answer_balanced";
    case SamplerKind::QtypeBalanced: return "qtype_balanced";
    }
    return "?";
}

SamplerKind parse_sampler(std::string_view s) {
    if (s == "standard") return SamplerKind::Standard;
    if (s == "answer_balanced") return SamplerKind::AnswerBalanced;
    if (s == "qtype_balanced") return SamplerKind::QtypeBalanced;
    throw std::invalid_argument("unknown sampler '" + std::string(s) +
                                "' (expected standard, answer_balanced or qtype_balanced)");
}

Sampler::Sampler(SamplerKind kind, std::span<const Example> split, std::uint64_t seed)
    : kind_(kind), size_(split.size()), rng_(seed) {
    if (split.empty()) {
        throw std::invalid_argument("sampler: empty split");
    }
    std::map<int, std::vector<std::size_t>> answer_members;
    std::map<QuestionPattern, std::map<int, std::vector<std::size_t>>> pattern_members;
    for (std::size_t i = 0; i < split.size(); ++i) {
        answer_members[split[i].answer].push_back(i);
        pattern_members[split[i].pattern][split[i].answer].push_back(i);
    }
    for (auto& [answer, members] : answer_members) {
        by_answer_.push_back({answer, std::move(members)});
    }
    std::map<QuestionPattern, std::size_t> pattern_slot;
    for (auto& [pattern, cells] : pattern_members) {
        pattern_slot[pattern] = by_pattern_.size();
        PatternCells pc{pattern, {}};
        for (auto& [answer, members] : cells) {
            pc.cells.push_back({answer, std::move(members)});
        }
        by_pattern_.push_back(std::move(pc));
    }
    pattern_of_example_.resize(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        pattern_of_example_[i] = pattern_slot[split[i].pattern];
    }
}

std::vector<std::size_t> Sampler::next_epoch() {
    std::vector<std::size_t> out(size_);
    switch (kind_) {
    case SamplerKind::Standard:
        for (std::size_t i = 0; i < size_; ++i) out[i] = i;
        rng_.shuffle(out.begin(), out.end());
        break;
    case SamplerKind::AnswerBalanced:
        for (auto& slot : out) {
            const Cell& cell = by_answer_[rng_.below(by_answer_.size())];
            slot = cell.members[rng_.below(cell.members.size())];
        }
        break;
    case SamplerKind::QtypeBalanced:
        for (auto& slot : out) {
            // The pattern of a uniformly drawn example follows the empirical pattern frequencies.
            const PatternCells& pc = by_pattern_[pattern_of_example_[rng_.below(size_)]];
            const Cell& cell = pc.cells[rng_.below(pc.cells.size())];
            if (cell.members.empty()) {
                throw std::runtime_error("sampler: empty cell for pattern " + pc.pattern.key());
            }
            slot = cell.members[rng_.below(cell.members.size())];
        }
        break;
    }
    return out;
}

} // namespace rubi
