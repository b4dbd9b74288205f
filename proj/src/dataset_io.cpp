#include "rubi/dataset_io.hpp"

#include "rubi/config.hpp"

#include <fstream>
#include <stdexcept>

namespace rubi {

using nlohmann::json;

namespace {

json example_to_json(const Example& ex, std::size_t n_regions) {
    const std::size_t width = ex.regions.size() / n_regions;
    json regions = json::array();
    for (std::size_t r = 0; r < n_regions; ++r) {
        regions.push_back(std::vector<double>(ex.regions.begin() + static_cast<std::ptrdiff_t>(r * width),
                                              ex.regions.begin() + static_cast<std::ptrdiff_t>((r + 1) * width)));
    }
    return json{{"regions", std::move(regions)},
                {"tokens", ex.tokens},
                {"answer", ex.answer},
                {"family", std::string(to_string(ex.pattern.family))},
                {"object", ex.pattern.object}};
}

Example example_from_json(const json& j, const DatasetSpec& spec) {
    Example ex;
    const auto& regions = j.at("regions");
    if (regions.size() != spec.n_regions) {
        throw std::runtime_error("expected " + std::to_string(spec.n_regions) + " regions, got " +
                                 std::to_string(regions.size()));
    }
    ex.regions.reserve(spec.n_regions * spec.d_raw());
    for (const auto& row : regions) {
        if (row.size() != spec.d_raw()) {
            throw std::runtime_error("region of width " + std::to_string(row.size()) + ", expected " +
                                     std::to_string(spec.d_raw()));
        }
        for (const auto& v : row) ex.regions.push_back(v.get<double>());
    }
    ex.tokens = j.at("tokens").get<std::vector<int>>();
    ex.answer = j.at("answer").get<int>();
    ex.pattern.family = parse_family(j.at("family").get<std::string>());
    ex.pattern.object = j.at("object").get<int>();
    if (ex.answer < 0 || static_cast<std::size_t>(ex.answer) >= spec.answer_count()) {
        throw std::runtime_error("answer index " + std::to_string(ex.answer) + " out of range");
    }
    if (ex.pattern.object < 0 || static_cast<std::size_t>(ex.pattern.object) >= spec.n_objects) {
        throw std::runtime_error("object id " + std::to_string(ex.pattern.object) + " out of range");
    }
    return ex;
}

json prior_to_json(const PatternPrior& p) {
    return json{{"pattern", p.pattern.key()}, {"domain", p.domain},   {"majority", p.majority},
                {"alternate", p.alternate},   {"train", p.train},     {"test_id", p.test_id},
                {"test_ood", p.test_ood}};
}

PatternPrior prior_from_json(const json& j) {
    PatternPrior p;
    p.pattern = QuestionPattern::parse(j.at("pattern").get<std::string>());
    p.domain = j.at("domain").get<std::vector<int>>();
    p.majority = j.at("majority").get<int>();
    p.alternate = j.at("alternate").get<int>();
    p.train = j.at("train").get<std::vector<double>>();
    p.test_id = j.at("test_id").get<std::vector<double>>();
    p.test_ood = j.at("test_ood").get<std::vector<double>>();
    return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

} // namespace

std::string split_file(Split s) { return std::string(to_string(s)) + ".jsonl"; }

void write_dataset(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (Split s : kSplits) {
        std::string text;
        for (const Example& ex : corpus.split(s)) {
            text += example_to_json(ex, corpus.spec.n_regions).dump();
            text += '\n';
        }
        write_text(dir / split_file(s), text);
    }
    json priors = json::array();
    for (const auto& p : corpus.priors.patterns) priors.push_back(prior_to_json(p));
    const json sidecar{{"spec", to_json(corpus.spec)},
                       {"priors", std::move(priors)},
                       {"vocab", corpus.vocab.words},
                       {"answers", corpus.answers}};
    write_text(dir / kSidecarFile, sidecar.dump(2) + "\n");
}

bool dataset_exists(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / kSidecarFile)) return false;
    for (Split s : kSplits) {
        if (!std::filesystem::exists(dir / split_file(s))) return false;
    }
    return true;
}

Corpus read_dataset(const std::filesystem::path& dir) {
    std::ifstream side(dir / kSidecarFile);
    if (!side) {
        throw std::runtime_error("no dataset at " + dir.string() + " (missing " + kSidecarFile + ")");
    }
    Corpus corpus;
    try {
        const json sidecar = json::parse(side);
        corpus.spec = dataset_from_json(sidecar.at("spec"));
        for (const auto& p : sidecar.at("priors")) corpus.priors.patterns.push_back(prior_from_json(p));
        corpus.vocab.words = sidecar.at("vocab").get<std::vector<std::string>>();
        corpus.answers = sidecar.at("answers").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
        throw std::runtime_error("malformed " + (dir / kSidecarFile).string() + ": " + e.what());
    }
    for (Split s : kSplits) {
        const auto path = dir / split_file(s);
        std::ifstream in(path);
        if (!in) {
            throw std::runtime_error("missing split file " + path.string());
        }
        auto& out = s == Split::Train ? corpus.train : s == Split::TestId ? corpus.test_id : corpus.test_ood;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                out.push_back(example_from_json(json::parse(line), corpus.spec));
            } catch (const std::exception& e) {
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (out.size() != corpus.spec.split_size(s)) {
            throw std::runtime_error(path.string() + " holds " + std::to_string(out.size()) + " examples, spec says " +
                                     std::to_string(corpus.spec.split_size(s)));
        }
    }
    return corpus;
}

} // namespace rubi
