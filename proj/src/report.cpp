#include "rubi/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rubi {

using nlohmann::json;

Accuracy accuracy(std::span<const int> predictions, std::span<const Example> examples) {
    if (predictions.size() != examples.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                    std::to_string(examples.size()) + " examples");
    }
    if (examples.empty()) {
        throw std::invalid_argument("accuracy: empty split");
    }
    Accuracy acc;
    std::array<std::size_t, 3> hits{};
    std::size_t total_hits = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto f = static_cast<std::size_t>(examples[i].pattern.family);
        const bool hit = predictions[i] == examples[i].answer;
        ++acc.family_count[f];
        hits[f] += hit ? 1 : 0;
        total_hits += hit ? 1 : 0;
    }
    acc.total = examples.size();
    acc.overall = static_cast<double>(total_hits) / static_cast<double>(acc.total);
    for (std::size_t f = 0; f < 3; ++f) {
        if (acc.family_count[f] > 0) {
            acc.family[f] = static_cast<double>(hits[f]) / static_cast<double>(acc.family_count[f]);
        }
    }
    return acc;
}

double soft_accuracy(int prediction, std::span<const int> annotators) {
    if (annotators.empty()) {
        throw std::invalid_argument("soft_accuracy: at least one annotator answer is required");
    }
    const auto matches = std::count(annotators.begin(), annotators.end(), prediction);
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

double total_variation(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("total_variation: histograms of different lengths");
    }
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]);
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("total_variation: empty histogram");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += std::abs(static_cast<double>(a[i]) / na - static_cast<double>(b[i]) / nb);
    }
    return 0.5 * sum;
}

std::vector<PatternDistribution> distribution_report(const Corpus& corpus, Split split,
                                                     std::span<const int> predictions,
                                                     std::span<const QuestionPattern> patterns) {
    const auto& examples = corpus.split(split);
    if (predictions.size() != examples.size()) {
        throw std::invalid_argument("distribution_report: " + std::to_string(predictions.size()) +
                                    " predictions for a split of " + std::to_string(examples.size()));
    }
    std::vector<QuestionPattern> wanted(patterns.begin(), patterns.end());
    if (wanted.empty()) {
        for (const auto& prior : corpus.priors.patterns) wanted.push_back(prior.pattern);
    }
    std::sort(wanted.begin(), wanted.end());
    wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());

    const std::size_t n_answers = corpus.answers.size();
    std::map<QuestionPattern, PatternDistribution> out;
    for (const auto& p : wanted) {
        const PatternPrior& prior = corpus.priors.at(p); // rejects unknown patterns
        PatternDistribution d;
        d.pattern = p;
        d.domain = prior.domain;
        d.train.assign(n_answers, 0);
        d.predicted.assign(n_answers, 0);
        d.truth.assign(n_answers, 0);
        out.emplace(p, std::move(d));
    }
    auto bucket = [&](int answer) {
        if (answer < 0 || static_cast<std::size_t>(answer) >= n_answers) {
            throw std::out_of_range("distribution_report: answer index " + std::to_string(answer) +
                                    " outside the answer space");
        }
        return static_cast<std::size_t>(answer);
    };
    for (const Example& ex : corpus.train) {
        if (auto it = out.find(ex.pattern); it != out.end()) ++it->second.train[bucket(ex.answer)];
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (auto it = out.find(examples[i].pattern); it != out.end()) {
            ++it->second.truth[bucket(examples[i].answer)];
            ++it->second.predicted[bucket(predictions[i])];
        }
    }
    std::vector<PatternDistribution> result;
    result.reserve(out.size());
    for (auto& [p, d] : out) {
        const bool present = std::any_of(d.truth.begin(), d.truth.end(), [](std::size_t c) { return c > 0; });
        if (present) d.tv = total_variation(d.predicted, d.truth);
        result.push_back(std::move(d));
    }
    return result;
}

RunReport make_run_report(const Corpus& corpus, Split split, std::span<const int> predictions, std::string label,
                          std::string config_digest, std::uint64_t seed, const RunLog& log) {
    RunReport r;
    r.label = std::move(label);
    r.split = std::string(to_string(split));
    r.config_digest = std::move(config_digest);
    r.seed = seed;
    r.accuracy = accuracy(predictions, corpus.split(split));
    r.patterns = distribution_report(corpus, split, predictions);
    r.trace = log.epochs;
    return r;
}

std::optional<Stat> summarize(std::span<const std::optional<double>> values) {
    Stat s;
    double sum = 0.0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++s.n;
        }
    }
    if (s.n == 0) return std::nullopt;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        double sq = 0.0;
        for (const auto& v : values) {
            if (v) sq += (*v - s.mean) * (*v - s.mean);
        }
        s.stddev = std::sqrt(sq / static_cast<double>(s.n - 1));
    }
    return s;
}

ComparisonTable compare_runs(std::span<const RunReport> reports) {
    if (reports.empty()) {
        throw std::invalid_argument("compare_runs: no reports");
    }
    ComparisonTable table;
    table.split = reports.front().split;
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunReport*>> groups;
    for (const RunReport& r : reports) {
        if (r.split != table.split) {
            throw std::invalid_argument("compare_runs: mixed splits '" + table.split + "' and '" + r.split + "'");
        }
        auto& group = groups[r.label];
        if (group.empty()) order.push_back(r.label);
        group.push_back(&r);
    }
    for (const auto& label : order) {
        const auto& group = groups[label];
        ComparisonRow row;
        row.label = label;
        row.runs = group.size();
        std::vector<std::optional<double>> overall;
        for (const auto* r : group) overall.emplace_back(r->accuracy.overall);
        row.overall = *summarize(overall);
        for (std::size_t f = 0; f < 3; ++f) {
            std::vector<std::optional<double>> column;
            for (const auto* r : group) column.push_back(r->accuracy.family[f]);
            row.family[f] = summarize(column);
        }
        table.rows.push_back(std::move(row));
    }
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.overall.mean > b.overall.mean; });
    return table;
}

namespace {

// std::to_chars ignores the locale, so the decimal separator is always '.'.
std::string number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
    return std::string(buf, res.ptr);
}

std::string quoted(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string cell(const std::optional<Stat>& s) {
    if (!s) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s->mean, s->stddev);
    return buf;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_absent(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

json stat_json(const std::optional<Stat>& s) {
    if (!s) return nullptr;
    return json{{"mean", s->mean}, {"std", s->stddev}, {"n", s->n}};
}

} // namespace

std::string to_csv(const ComparisonTable& table) {
    std::string out = "strategy,split,runs,overall_mean,overall_std";
    for (Family f : kFamilies) {
        const std::string col(family_column(f));
        out += "," + col + "_mean," + col + "_std";
    }
    out += "\n";
    for (const auto& row : table.rows) {
        out += quoted(row.label) + "," + quoted(table.split) + "," + std::to_string(row.runs) + "," +
               number(row.overall.mean) + "," + number(row.overall.stddev);
        for (const auto& f : row.family) {
            out += f ? "," + number(f->mean) + "," + number(f->stddev) : std::string(",,");
        }
        out += "\n";
    }
    return out;
}

std::string to_text(const ComparisonTable& table) {
    std::size_t width = 8;
    for (const auto& row : table.rows) width = std::max(width, row.label.size());
    std::ostringstream out;
    auto pad = [](std::string s, std::size_t w) {
        // "±" is two bytes but one column.
        std::size_t columns = s.size();
        if (s.find("±") != std::string::npos) --columns;
        if (columns < w) s.append(w - columns, ' ');
        return s;
    };
    out << "split: " << table.split << "\n";
    out << pad("strategy", width) << "  runs  " << pad("overall", 17);
    for (Family f : kFamilies) out << "  " << pad(std::string(family_column(f)), 17);
    out << "\n";
    for (const auto& row : table.rows) {
        out << pad(row.label, width) << "  " << pad(std::to_string(row.runs), 4) << "  "
            << pad(cell(row.overall), 17);
        for (const auto& f : row.family) out << "  " << pad(cell(f), 17);
        out << "\n";
    }
    return out.str();
}

void to_json(json& j, const Accuracy& a) {
    json family = json::object();
    json counts = json::object();
    for (Family f : kFamilies) {
        const std::string col(family_column(f));
        family[col] = optional_number(a.of(f));
        counts[col] = a.family_count[static_cast<std::size_t>(f)];
    }
    j = json{{"overall", a.overall}, {"total", a.total}, {"family", family}, {"family_count", counts}};
}

void from_json(const json& j, Accuracy& a) {
    a.overall = j.at("overall").get<double>();
    a.total = j.at("total").get<std::size_t>();
    for (Family f : kFamilies) {
        const std::string col(family_column(f));
        const auto i = static_cast<std::size_t>(f);
        a.family[i] = number_or_absent(j.at("family").at(col));
        a.family_count[i] = j.at("family_count").at(col).get<std::size_t>();
    }
}

void to_json(json& j, const PatternDistribution& d) {
    j = json{{"pattern", d.pattern.key()}, {"domain", d.domain}, {"train", d.train},
             {"predicted", d.predicted}, {"truth", d.truth}, {"tv", optional_number(d.tv)}};
}

void from_json(const json& j, PatternDistribution& d) {
    d.pattern = QuestionPattern::parse(j.at("pattern").get<std::string>());
    d.domain = j.at("domain").get<std::vector<int>>();
    d.train = j.at("train").get<std::vector<std::size_t>>();
    d.predicted = j.at("predicted").get<std::vector<std::size_t>>();
    d.truth = j.at("truth").get<std::vector<std::size_t>>();
    d.tv = number_or_absent(j.at("tv"));
}

void to_json(json& j, const EpochRecord& r) {
    j = json{{"epoch", r.epoch},
             {"lr", r.lr},
             {"mean_l_qm", r.mean_l_qm},
             {"mean_l_qo", r.mean_l_qo},
             {"mean_l_total", r.mean_l_total},
             {"train_accuracy", r.train_accuracy},
             {"test_id_accuracy", r.test_id_accuracy},
             {"test_ood_accuracy", r.test_ood_accuracy}};
}

void from_json(const json& j, EpochRecord& r) {
    r.epoch = j.at("epoch").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.mean_l_qm = j.at("mean_l_qm").get<double>();
    r.mean_l_qo = j.at("mean_l_qo").get<double>();
    r.mean_l_total = j.at("mean_l_total").get<double>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.test_id_accuracy = j.at("test_id_accuracy").get<double>();
    r.test_ood_accuracy = j.at("test_ood_accuracy").get<double>();
}

void to_json(json& j, const RunLog& log) { j = json{{"steps", log.steps}, {"epochs", log.epochs}}; }

void from_json(const json& j, RunLog& log) {
    log.steps = j.at("steps").get<std::size_t>();
    log.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
}

void to_json(json& j, const RunReport& r) {
    j = json{{"label", r.label},       {"split", r.split},       {"config_digest", r.config_digest},
             {"seed", r.seed},         {"accuracy", r.accuracy}, {"patterns", r.patterns},
             {"trace", r.trace}};
}

void from_json(const json& j, RunReport& r) {
    r.label = j.at("label").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.accuracy = j.at("accuracy").get<Accuracy>();
    r.patterns = j.at("patterns").get<std::vector<PatternDistribution>>();
    r.trace = j.at("trace").get<std::vector<EpochRecord>>();
}

void to_json(json& j, const ComparisonTable& t) {
    json rows = json::array();
    for (const auto& row : t.rows) {
        json family = json::object();
        for (Family f : kFamilies) family[std::string(family_column(f))] = stat_json(row.family[static_cast<std::size_t>(f)]);
        rows.push_back(json{{"strategy", row.label}, {"runs", row.runs}, {"overall", stat_json(row.overall)},
                            {"family", family}});
    }
    j = json{{"split", t.split}, {"rows", rows}};
}

} // namespace rubi
