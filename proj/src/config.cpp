#include "rubi/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>

namespace rubi {

using nlohmann::json;

namespace {

// Reads typed fields out of one JSON object and rejects any key it was not
// asked about.
bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Section {
  public:
    Section(const json& doc, std::string name) : name_(std::move(name)) {
        if (doc.is_null()) {
            obj_ = json::object();
        } else if (!doc.is_object()) {
            throw ConfigError("section '" + name_ + "' must be a JSON object");
        } else {
            obj_ = doc;
        }
    }

    template <class T>
    void read(const char* key, T& out) {
        known_.insert(key);
        if (!obj_.contains(key)) return;
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!non_negative_integer(obj_.at(key))) {
                throw ConfigError("'" + path(key) + "' must be a non-negative integer (got " + obj_.at(key).dump() + ")");
            }
        }
        if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            const json& list = obj_.at(key);
            if (!list.is_array() || !std::all_of(list.begin(), list.end(), non_negative_integer)) {
                throw ConfigError("'" + path(key) + "' must be a list of non-negative integers");
            }
        }
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("'" + path(key) + "' has the wrong type (got " + obj_.at(key).dump() + ")");
        }
    }

    template <class T>
    void require(const char* key, T& out) {
        if (!obj_.contains(key)) {
            throw ConfigError("'" + path(key) + "' is required");
        }
        read(key, out);
    }

    template <class Enum, class Parse>
    void read_enum(const char* key, Enum& out, Parse parse) {
        std::string text;
        read(key, text);
        if (!obj_.contains(key)) return;
        try {
            out = parse(text);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("'" + path(key) + "': " + e.what());
        }
    }

    void size(const char* key, std::size_t& out) {
        read(key, out);
        if (obj_.contains(key) && out == 0) {
            throw ConfigError("'" + path(key) + "' must be positive");
        }
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!known_.count(key)) {
                throw ConfigError("unknown key '" + path(key) + "'");
            }
        }
    }

  private:
    std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

    std::string name_;
    json obj_;
    std::set<std::string> known_;
};

const json& section_of(const json& doc, const char* key) {
    static const json null_section;
    return doc.contains(key) ? doc.at(key) : null_section;
}

DatasetSpec parse_dataset(const json& j, bool seed_required) {
    DatasetSpec spec;
    Section s(j, "dataset");
    if (seed_required) {
        s.require("seed", spec.seed);
    } else {
        s.read("seed", spec.seed);
    }
    s.read("n_objects", spec.n_objects);
    s.read("n_colors", spec.n_colors);
    s.read("max_count", spec.max_count);
    s.read("n_regions", spec.n_regions);
    s.read("n_noise_dims", spec.n_noise_dims);
    s.read("noise_sigma", spec.noise_sigma);
    s.read("bias_strength", spec.bias_strength);
    s.read("n_train", spec.n_train);
    s.read("n_test_id", spec.n_test_id);
    s.read("n_test_ood", spec.n_test_ood);
    s.read_enum("ood_mode", spec.ood_mode, parse_ood_mode);
    s.finish();
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
    return spec;
}

ModelConfig parse_model(const json& j) {
    ModelConfig m;
    Section s(j, "model");
    s.read("d_v", m.d_v);
    s.size("d_emb", m.d_emb);
    s.size("d_q", m.d_q);
    s.size("d_h", m.d_h);
    s.size("d_m", m.d_m);
    s.read("classifier_hidden", m.classifier_hidden);
    s.read("branch_hidden", m.branch_hidden);
    s.finish();
    for (const auto* list : {&m.classifier_hidden, &m.branch_hidden}) {
        for (std::size_t w : *list) {
            if (w == 0) throw ConfigError("model: hidden layer widths must be positive");
        }
    }
    return m;
}

StrategyConfig parse_strategy_section(const json& j) {
    StrategyConfig c;
    Section s(j, "strategy");
    s.read_enum("strategy", c.strategy, parse_strategy);
    s.read_enum("mask_activation", c.mask_activation, parse_mask_activation);
    s.read_enum("combine", c.combine, parse_combine);
    s.read("use_qo_loss", c.use_qo_loss);
    s.finish();
    return c;
}

TrainConfig parse_train(const json& j) {
    TrainConfig t;
    Section s(j, "train");
    s.require("seed", t.seed);
    s.read("base_lr", t.base_lr);
    s.read("peak_lr", t.peak_lr);
    s.read("warmup_epochs", t.warmup_epochs);
    s.read("decay_start_epoch", t.decay_start_epoch);
    s.read("decay_factor", t.decay_factor);
    s.size("decay_every", t.decay_every);
    s.size("batch_size", t.batch_size);
    s.size("epochs", t.epochs);
    s.read("adam_beta1", t.beta1);
    s.read("adam_beta2", t.beta2);
    s.read("adam_eps", t.eps);
    s.read_enum("sampler", t.sampler, parse_sampler);
    s.finish();
    return t;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

RunConfig parse_config(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    Section top(doc, "");
    std::string output_dir = "runs";
    json ignored;
    for (const char* key : {"dataset", "model", "train", "strategy"}) top.read(key, ignored);
    top.read("output_dir", output_dir);
    top.finish();

    RunConfig config;
    config.dataset = parse_dataset(section_of(doc, "dataset"), true);
    config.model = parse_model(section_of(doc, "model"));
    config.train = parse_train(section_of(doc, "train"));
    config.train.strategy = parse_strategy_section(section_of(doc, "strategy"));
    config.output_dir = output_dir;
    try {
        config.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

json to_json(const DatasetSpec& spec) {
    return json{{"seed", spec.seed},
                {"n_objects", spec.n_objects},
                {"n_colors", spec.n_colors},
                {"max_count", spec.max_count},
                {"n_regions", spec.n_regions},
                {"n_noise_dims", spec.n_noise_dims},
                {"noise_sigma", spec.noise_sigma},
                {"bias_strength", spec.bias_strength},
                {"n_train", spec.n_train},
                {"n_test_id", spec.n_test_id},
                {"n_test_ood", spec.n_test_ood},
                {"ood_mode", std::string(to_string(spec.ood_mode))}};
}

DatasetSpec dataset_from_json(const json& j) {
    try {
        return parse_dataset(j, true);
    } catch (const ConfigError& e) {
        throw std::invalid_argument(e.what());
    }
}

json to_json(const ModelConfig& m) {
    return json{{"d_v", m.d_v},
                {"d_emb", m.d_emb},
                {"d_q", m.d_q},
                {"d_h", m.d_h},
                {"d_m", m.d_m},
                {"classifier_hidden", m.classifier_hidden},
                {"branch_hidden", m.branch_hidden}};
}

json to_json(const StrategyConfig& c) {
    return json{{"strategy", std::string(to_string(c.strategy))},
                {"mask_activation", std::string(to_string(c.mask_activation))},
                {"combine", std::string(to_string(c.combine))},
                {"use_qo_loss", c.use_qo_loss}};
}

json config_to_json(const RunConfig& config) {
    const TrainConfig& t = config.train;
    json train{{"seed", t.seed},
               {"base_lr", t.base_lr},
               {"peak_lr", t.peak_lr},
               {"warmup_epochs", t.warmup_epochs},
               {"decay_start_epoch", t.decay_start_epoch},
               {"decay_factor", t.decay_factor},
               {"decay_every", t.decay_every},
               {"batch_size", t.batch_size},
               {"epochs", t.epochs},
               {"adam_beta1", t.beta1},
               {"adam_beta2", t.beta2},
               {"adam_eps", t.eps},
               {"sampler", std::string(to_string(t.sampler))}};
    return json{{"dataset", to_json(config.dataset)},
                {"model", to_json(config.model)},
                {"train", train},
                {"strategy", to_json(t.strategy)},
                {"output_dir", config.output_dir}};
}

std::string config_digest(const RunConfig& config) {
    json doc = config_to_json(config);
    doc.erase("output_dir");
    doc["train"].erase("seed");
    return hex64(fnv1a(doc.dump()));
}

std::string run_label(const RunConfig& config) {
    std::string label = config.train.strategy.label();
    if (config.train.sampler != SamplerKind::Standard) {
        label += "+" + std::string(to_string(config.train.sampler));
    }
    return label;
}

std::string run_id(const RunConfig& config) {
    std::string safe;
    for (char c : run_label(config)) {
        if (c == '(' || c == ',' || c == '+') {
            safe += '-';
        } else if (c != ')') {
            safe += c;
        }
    }
    return safe + "-" + config_digest(config).substr(0, 12) + "-s" + std::to_string(config.train.seed);
}

std::filesystem::path resolve_output_dir(const RunConfig& config) {
    if (const char* env = std::getenv("RUBI_BENCH_OUT"); env != nullptr && *env != '\0') {
        return env;
    }
    return config.output_dir;
}

} // namespace rubi
