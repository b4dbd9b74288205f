#include "rubi/experiment.hpp"

#include "rubi/dataset_io.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

namespace rubi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RunResult train_network(const RunConfig& config, const Corpus& corpus, Network& net, const EpochCallback& on_epoch) {
    if (!(corpus.spec == config.dataset)) {
        throw std::invalid_argument("corpus was generated from a different dataset spec than the run config");
    }
    net = Network(config.model, corpus.data_shape());
    net.init(config.train.seed);
    RunResult result;
    result.config = config;
    result.run_id = run_id(config);
    result.log = train(net, corpus, config.train, on_epoch);
    const std::string digest = config_digest(config);
    const std::string label = run_label(config);
    const StrategyKind kind = config.train.strategy.strategy;
    for (Split s : {Split::TestId, Split::TestOod}) {
        const auto predictions = predict_split(net, corpus.split(s), kind);
        RunReport report = make_run_report(corpus, s, predictions, label, digest, config.train.seed, result.log);
        (s == Split::TestId ? result.test_id : result.test_ood) = std::move(report);
    }
    return result;
}

} // namespace

std::string dataset_digest(const DatasetSpec& spec) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(spec).dump())));
    return std::string(buf).substr(0, 12);
}

fs::path dataset_dir(const RunConfig& config) {
    return resolve_output_dir(config) / "data" / dataset_digest(config.dataset);
}

Corpus load_corpus(const RunConfig& config) {
    const fs::path dir = dataset_dir(config);
    if (!dataset_exists(dir)) {
        throw std::runtime_error("no dataset for this configuration at " + dir.string() + " (run gen-data first)");
    }
    Corpus corpus = read_dataset(dir);
    if (!(corpus.spec == config.dataset)) {
        throw std::runtime_error("dataset at " + dir.string() + " was generated from a different spec");
    }
    return corpus;
}

std::string report_file(Split split) { return "report_" + std::string(to_string(split)) + ".json"; }

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

RunResult train_in_memory(const RunConfig& config, const Corpus& corpus, const EpochCallback& on_epoch) {
    Network net;
    return train_network(config, corpus, net, on_epoch);
}

RunResult run_training(const RunConfig& config, const Corpus& corpus, bool force, const EpochCallback& on_epoch) {
    const fs::path dir = resolve_output_dir(config) / run_id(config);
    if (fs::exists(dir / kCheckpointFile) && !force) {
        throw RunExists("run " + dir.string() + " already exists (use --force to overwrite)");
    }
    Network net;
    RunResult result = train_network(config, corpus, net, on_epoch);
    result.dir = dir;
    fs::create_directories(dir);
    write_json(dir / kRunConfigFile, config_to_json(config));
    save_checkpoint(net.parameters(), dir / kCheckpointFile);
    write_json(dir / kRunLogFile, result.log);
    write_json(dir / report_file(Split::TestId), result.test_id);
    write_json(dir / report_file(Split::TestOod), result.test_ood);
    return result;
}

RunResult load_run(const fs::path& dir) {
    RunResult result;
    result.dir = dir;
    try {
        result.config = parse_config(read_json(dir / kRunConfigFile));
    } catch (const ConfigError& e) {
        throw std::runtime_error((dir / kRunConfigFile).string() + ": " + e.what());
    }
    result.run_id = run_id(result.config);
    result.log = read_json(dir / kRunLogFile).get<RunLog>();
    result.test_id = read_json(dir / report_file(Split::TestId)).get<RunReport>();
    result.test_ood = read_json(dir / report_file(Split::TestOod)).get<RunReport>();
    return result;
}

Network load_network(const RunResult& run, const Corpus& corpus) {
    Network net(run.config.model, corpus.data_shape());
    load_checkpoint(net.parameters(), run.dir / kCheckpointFile);
    return net;
}

std::vector<RunConfig> seed_sweep(const RunConfig& config, std::size_t count) {
    std::vector<RunConfig> out;
    for (std::size_t i = 0; i < count; ++i) {
        RunConfig c = config;
        c.train.seed = config.train.seed + i;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<GridCell> ablation_grid(const RunConfig& base) {
    auto with = [&base](StrategyConfig s, SamplerKind sampler) {
        RunConfig c = base;
        c.train.strategy = s;
        c.train.sampler = sampler;
        return c;
    };
    const StrategyConfig classical{StrategyKind::Classical, MaskActivation::Sigmoid, Combine::Product, true};
    const StrategyConfig rubi{StrategyKind::Rubi, MaskActivation::Sigmoid, Combine::Product, true};
    StrategyConfig relu = rubi;
    relu.mask_activation = MaskActivation::Relu;
    StrategyConfig sum = rubi;
    sum.combine = Combine::Sum;
    StrategyConfig no_qo = rubi;
    no_qo.use_qo_loss = false;
    const StrategyConfig question_only{StrategyKind::QuestionOnly, MaskActivation::Sigmoid, Combine::Product, true};

    std::vector<GridCell> grid;
    for (const auto& s : {classical, rubi, relu, sum, no_qo, question_only}) {
        RunConfig c = with(s, SamplerKind::Standard);
        grid.push_back({run_label(c), c});
    }
    for (SamplerKind k : {SamplerKind::Standard, SamplerKind::AnswerBalanced, SamplerKind::QtypeBalanced}) {
        RunConfig c = with(classical, k);
        grid.push_back({classical.label() + "+" + std::string(to_string(k)), c});
    }
    return grid;
}

void run_parallel(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& job) {
    workers = std::max<std::size_t>(1, std::min(workers, jobs));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
            {
                std::lock_guard lock(failure_mutex);
                if (failure) return;
            }
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

TvSummary tv_summary(const std::string& candidate, std::span<const RunReport> candidate_runs,
                     const std::string& baseline, std::span<const RunReport> baseline_runs) {
    if (candidate_runs.empty() || baseline_runs.empty()) {
        throw std::invalid_argument("tv_summary: both sides need at least one run");
    }
    auto mean_tv = [](std::span<const RunReport> runs) {
        std::map<QuestionPattern, std::pair<double, std::size_t>> acc;
        for (const RunReport& r : runs) {
            for (const auto& d : r.patterns) {
                if (!d.tv) continue;
                auto& [sum, n] = acc[d.pattern];
                sum += *d.tv;
                ++n;
            }
        }
        std::map<QuestionPattern, double> out;
        for (const auto& [p, sn] : acc) out[p] = sn.first / static_cast<double>(sn.second);
        return out;
    };
    const auto cand = mean_tv(candidate_runs);
    const auto base = mean_tv(baseline_runs);
    TvSummary s;
    s.candidate = candidate;
    s.baseline = baseline;
    for (const auto& [p, tv] : cand) {
        const auto it = base.find(p);
        if (it == base.end()) continue;
        ++s.patterns;
        s.candidate_closer += tv < it->second ? 1 : 0;
        s.mean_tv_candidate += tv;
        s.mean_tv_baseline += it->second;
    }
    if (s.patterns > 0) {
        const auto n = static_cast<double>(s.patterns);
        s.fraction = static_cast<double>(s.candidate_closer) / n;
        s.mean_tv_candidate /= n;
        s.mean_tv_baseline /= n;
    }
    return s;
}

void to_json(json& j, const TvSummary& s) {
    j = json{{"candidate", s.candidate},
             {"baseline", s.baseline},
             {"patterns", s.patterns},
             {"candidate_closer", s.candidate_closer},
             {"fraction", s.fraction},
             {"mean_tv_candidate", s.mean_tv_candidate},
             {"mean_tv_baseline", s.mean_tv_baseline}};
}

} // namespace rubi
