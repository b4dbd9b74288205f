#pragma once

#include "rubi/config.hpp"
#include "rubi/report.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rubi {

/// Raised when a run directory already holds results and overwriting was not requested.
class RunExists : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Where gen-data writes and train reads the corpus of a configuration:
/// <output>/data/<dataset digest>.
std::filesystem::path dataset_dir(const RunConfig& config);
std::string dataset_digest(const DatasetSpec& spec);

/// Reads the corpus generated for this configuration; throws
/// std::runtime_error if gen-data has not been run.
Corpus load_corpus(const RunConfig& config);

/// File names inside a run directory.
inline constexpr const char* kRunConfigFile = "config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kRunLogFile = "run_log.json";
std::string report_file(Split split); // "report_test_ood.json", ...

struct RunResult {
    RunConfig config;
    std::string run_id;
    std::filesystem::path dir;
    RunLog log;
    RunReport test_id;
    RunReport test_ood;
};

/// Trains one configuration and writes config, checkpoint, run log and both
/// test reports under <output>/<run-id>. Throws RunExists if the directory
/// already holds a checkpoint and force is false.
RunResult run_training(const RunConfig& config, const Corpus& corpus, bool force, const EpochCallback& on_epoch = {});

/// Trains without touching the filesystem.
RunResult train_in_memory(const RunConfig& config, const Corpus& corpus, const EpochCallback& on_epoch = {});

/// Loads the artifacts of a finished run directory.
RunResult load_run(const std::filesystem::path& dir);

/// Rebuilds the network of a finished run from its checkpoint.
Network load_network(const RunResult& run, const Corpus& corpus);

/// `count` copies of config with train seeds seed, seed + 1, ...
std::vector<RunConfig> seed_sweep(const RunConfig& config, std::size_t count);

struct GridCell {
    std::string label;
    RunConfig config;
};

/// The nine ablation rows: classical; rubi(sigmoid,product); rubi(relu,product);
/// rubi(sigmoid,sum); rubi without the question-only loss; question_only; and
/// classical under each sampler (standard, answer_balanced, qtype_balanced).
std::vector<GridCell> ablation_grid(const RunConfig& base);

/// Runs jobs on up to `workers` threads; rethrows the first failure after all
/// threads stop.
void run_parallel(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& job);

struct TvSummary {
    std::string candidate;
    std::string baseline;
    std::size_t patterns = 0;
    std::size_t candidate_closer = 0;
    double fraction = 0.0;
    double mean_tv_candidate = 0.0;
    double mean_tv_baseline = 0.0;
};

/// Per pattern, averages TV(prediction, truth) over the runs of each side and
/// counts patterns where the candidate is strictly closer to the truth.
TvSummary tv_summary(const std::string& candidate, std::span<const RunReport> candidate_runs,
                     const std::string& baseline, std::span<const RunReport> baseline_runs);

void to_json(nlohmann::json& j, const TvSummary& s);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

} // namespace rubi
