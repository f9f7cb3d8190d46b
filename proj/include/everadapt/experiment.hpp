#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "everadapt/data.hpp"
#include "everadapt/trainer.hpp"

// Experiment configuration and the batch command drivers behind the CLI.
// A config file is one JSON document with sections (data, model, train,
// losses, scenario); unspecified fields fall back to the selected preset.

namespace everadapt {

struct DomainKnobs {
    std::string domain_id;
    double rotation_hz = 64.0;
    double load_scale = 1.0;
    double noise_sigma = 0.1;
};

struct DataConfig {
    std::size_t window_len = 128;
    std::size_t n_per_class = 200;
    std::size_t n_test_per_class = 100;
    double sample_rate_hz = 4096.0;
    std::uint64_t seed = 7;
    std::vector<FaultClass> classes;
    std::vector<DomainKnobs> domains;

    const DomainKnobs& knobs(const std::string& id) const {
        for (const auto& d : domains)
            if (d.domain_id == id) return d;
        throw config_error("unknown domain id '" + id + "' in config");
    }

    DomainSpec domain_spec(const std::string& id, std::size_t samples_per_class) const {
        const DomainKnobs& k = knobs(id);
        DomainSpec s;
        s.domain_id = k.domain_id;
        s.rotation_hz = k.rotation_hz;
        s.load_scale = k.load_scale;
        s.noise_sigma = k.noise_sigma;
        s.n_per_class = samples_per_class;
        s.classes = classes;
        s.sample_rate_hz = sample_rate_hz;
        return s;
    }
};

struct ExperimentConfig {
    std::string preset = "desk";
    DataConfig data;
    ModelSpec model;
    TrainConfig train;
    Scenario scenario;

    void validate() const {
        if (data.classes.empty()) throw config_error("data: class list is empty");
        if (data.window_len == 0) throw config_error("data: window_len must be positive");
        if (data.domains.empty()) throw config_error("data: domain list is empty");
        if (model.num_classes != data.classes.size())
            throw config_error("model: num_classes must match the data class list");
        model.validate();
        train.validate();
        if (scenario.source.empty() || scenario.targets.empty())
            throw config_error("scenario: source and at least one target required");
        data.knobs(scenario.source);
        for (const auto& t : scenario.targets) data.knobs(t);
    }

    static ExperimentConfig desk();
    static ExperimentConfig paper();
    static ExperimentConfig preset_by_name(const std::string& name);
    static ExperimentConfig from_file(const std::string& path,
                                      const std::string& preset_override = "");
    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Presets. The desk preset is the bundled benchmark every test runs on;
// the paper preset carries the full-scale hyperparameters (1024-sample
// windows, 256-wide backbone, batch 256, 40 epochs, 1% replay).
// ---------------------------------------------------------------------------

inline ExperimentConfig ExperimentConfig::desk() {
    ExperimentConfig c;
    c.preset = "desk";
    c.data.window_len = 128;
    c.data.n_per_class = 200;
    c.data.n_test_per_class = 100;
    c.data.sample_rate_hz = 4096.0;
    c.data.seed = 7;
    c.data.classes = {{0, 0.0, 0.0, 0.0},
                      {1, 3.2, 1.1, 780.0},
                      {2, 4.9, 0.9, 1430.0}};
    // One operating knob moves per domain, mirroring a working-condition
    // grid: speed change, load change, noise-floor change.
    c.data.domains = {{"D0", 64.0, 1.0, 0.10},
                      {"D1", 40.0, 1.0, 0.10},
                      {"D2", 64.0, 0.45, 0.10},
                      {"D3", 64.0, 1.0, 0.35}};
    c.model = ModelSpec::desk_default(3);
    c.train = TrainConfig{};
    // Plain SGD needs a larger step than the full-scale Adam-style 1e-3.
    c.train.lr = 0.02;
    c.train.epochs = 10;
    c.train.batch_size = 32;
    c.train.replay_fraction = 0.05;
    c.scenario.source = "D0";
    c.scenario.targets = {"D1", "D2", "D3"};
    return c;
}

inline ExperimentConfig ExperimentConfig::paper() {
    ExperimentConfig c = desk();
    c.preset = "paper";
    c.train.lr = 1e-3;
    c.data.window_len = 1024;
    c.data.n_per_class = 400;
    c.data.n_test_per_class = 200;
    c.data.domains = {{"D0", 25.0, 1.0, 0.10},
                      {"D1", 15.0, 1.0, 0.10},
                      {"D2", 25.0, 0.45, 0.10},
                      {"D3", 25.0, 1.0, 0.28}};
    c.model = ModelSpec::paper_default(3);
    c.train.epochs = 40;
    c.train.batch_size = 256;
    c.train.replay_fraction = 0.01;
    return c;
}

inline ExperimentConfig ExperimentConfig::preset_by_name(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw config_error("unknown preset '" + name + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// JSON round trip with field-level diagnostics.
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const char* section,
                                std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok)
            throw config_error(std::string(section) + ": unknown field '" + it.key() + "'");
    }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

} // namespace detail

inline nlohmann::json ExperimentConfig::to_json() const {
    using nlohmann::json;
    json classes = json::array();
    for (const auto& fc : data.classes)
        classes.push_back({{"class_id", fc.class_id},
                           {"impulse_rate", fc.impulse_rate},
                           {"impulse_amplitude", fc.impulse_amplitude},
                           {"resonance_hz", fc.resonance_hz}});
    json domains = json::array();
    for (const auto& d : data.domains)
        domains.push_back({{"domain_id", d.domain_id},
                           {"rotation_hz", d.rotation_hz},
                           {"load_scale", d.load_scale},
                           {"noise_sigma", d.noise_sigma}});
    json blocks = json::array();
    for (const auto& b : model.conv_blocks)
        blocks.push_back({b.channels, b.kernel, b.dropout_p});
    return json{
        {"preset", preset},
        {"data",
         {{"window_len", data.window_len},
          {"n_per_class", data.n_per_class},
          {"n_test_per_class", data.n_test_per_class},
          {"sample_rate_hz", data.sample_rate_hz},
          {"seed", data.seed},
          {"classes", classes},
          {"domains", domains}}},
        {"model",
         {{"conv_blocks", blocks},
          {"pool_window", model.pool_window},
          {"adaptive_out", model.adaptive_out},
          {"feature_dim", model.feature_dim},
          {"num_classes", model.num_classes}}},
        {"train",
         {{"lr", train.lr},
          {"weight_decay", train.weight_decay},
          {"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"seed", train.seed},
          {"replay_fraction", train.replay_fraction},
          {"pseudo_threshold", train.pseudo_threshold},
          {"norm_mode", train.norm_mode == NormKind::CBN ? "cbn" : "bn"},
          {"cbn_source_stream",
           train.cbn_source_stream == SourceStreamNorm::Frozen ? "frozen" : "batch"},
          {"replay_scope", train.replay_scope == ReplayScope::All ? "all" : "last"}}},
        {"losses",
         {{"alpha_start", train.weights.alpha_start},
          {"alpha_end", train.weights.alpha_end},
          {"beta_replay", train.weights.beta_replay},
          {"bandwidths", train.kernel.bandwidths},
          {"median_heuristic", train.kernel.median_heuristic},
          {"cca_confident_only", train.cca_confident_only}}},
        {"scenario", {{"source", scenario.source}, {"targets", scenario.targets}}}};
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path,
                                                    const std::string& preset_override) {
    if (!std::filesystem::exists(path))
        throw config_error("config file does not exist: " + path);
    std::ifstream f(path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": JSON parse error: " + e.what());
    }

    std::string preset_name = preset_override;
    if (preset_name.empty()) preset_name = j.value("preset", std::string("desk"));
    ExperimentConfig c = preset_by_name(preset_name);

    try {
        detail::reject_unknown_keys(
            j, "config", {"preset", "data", "model", "train", "losses", "scenario"});
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::reject_unknown_keys(d, "data",
                                        {"window_len", "n_per_class", "n_test_per_class",
                                         "sample_rate_hz", "seed", "classes", "domains"});
            detail::maybe(d, "window_len", c.data.window_len);
            detail::maybe(d, "n_per_class", c.data.n_per_class);
            detail::maybe(d, "n_test_per_class", c.data.n_test_per_class);
            detail::maybe(d, "sample_rate_hz", c.data.sample_rate_hz);
            detail::maybe(d, "seed", c.data.seed);
            if (d.contains("classes")) {
                c.data.classes.clear();
                for (const auto& fj : d.at("classes"))
                    c.data.classes.push_back({fj.at("class_id").get<int>(),
                                              fj.at("impulse_rate").get<double>(),
                                              fj.at("impulse_amplitude").get<double>(),
                                              fj.at("resonance_hz").get<double>()});
                c.model.num_classes = c.data.classes.size();
            }
            if (d.contains("domains")) {
                c.data.domains.clear();
                for (const auto& dj : d.at("domains"))
                    c.data.domains.push_back({dj.at("domain_id").get<std::string>(),
                                              dj.at("rotation_hz").get<double>(),
                                              dj.at("load_scale").get<double>(),
                                              dj.at("noise_sigma").get<double>()});
            }
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail::reject_unknown_keys(m, "model",
                                        {"conv_blocks", "pool_window", "adaptive_out",
                                         "feature_dim", "num_classes"});
            if (m.contains("conv_blocks")) {
                c.model.conv_blocks.clear();
                for (const auto& bj : m.at("conv_blocks"))
                    c.model.conv_blocks.push_back({bj.at(0).get<std::size_t>(),
                                                   bj.at(1).get<std::size_t>(),
                                                   bj.at(2).get<double>()});
                c.model.feature_dim =
                    c.model.conv_blocks.back().channels * c.model.adaptive_out;
            }
            detail::maybe(m, "pool_window", c.model.pool_window);
            detail::maybe(m, "adaptive_out", c.model.adaptive_out);
            detail::maybe(m, "feature_dim", c.model.feature_dim);
            detail::maybe(m, "num_classes", c.model.num_classes);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown_keys(
                t, "train",
                {"lr", "weight_decay", "epochs", "batch_size", "seed", "replay_fraction",
                 "pseudo_threshold", "norm_mode", "cbn_source_stream", "replay_scope"});
            detail::maybe(t, "lr", c.train.lr);
            detail::maybe(t, "weight_decay", c.train.weight_decay);
            detail::maybe(t, "epochs", c.train.epochs);
            detail::maybe(t, "batch_size", c.train.batch_size);
            detail::maybe(t, "seed", c.train.seed);
            detail::maybe(t, "replay_fraction", c.train.replay_fraction);
            detail::maybe(t, "pseudo_threshold", c.train.pseudo_threshold);
            if (t.contains("norm_mode")) {
                const auto s = t.at("norm_mode").get<std::string>();
                if (s != "bn" && s != "cbn")
                    throw config_error("train.norm_mode: expected 'bn' or 'cbn'");
                c.train.norm_mode = s == "cbn" ? NormKind::CBN : NormKind::BN;
            }
            if (t.contains("cbn_source_stream")) {
                const auto s = t.at("cbn_source_stream").get<std::string>();
                if (s != "frozen" && s != "batch")
                    throw config_error("train.cbn_source_stream: expected 'frozen' or 'batch'");
                c.train.cbn_source_stream =
                    s == "frozen" ? SourceStreamNorm::Frozen : SourceStreamNorm::Batch;
            }
            if (t.contains("replay_scope")) {
                const auto s = t.at("replay_scope").get<std::string>();
                if (s != "all" && s != "last")
                    throw config_error("train.replay_scope: expected 'all' or 'last'");
                c.train.replay_scope = s == "all" ? ReplayScope::All : ReplayScope::Last;
            }
        }
        if (j.contains("losses")) {
            const auto& l = j.at("losses");
            detail::reject_unknown_keys(l, "losses",
                                        {"alpha_start", "alpha_end", "beta_replay",
                                         "bandwidths", "median_heuristic",
                                         "cca_confident_only"});
            detail::maybe(l, "alpha_start", c.train.weights.alpha_start);
            detail::maybe(l, "alpha_end", c.train.weights.alpha_end);
            detail::maybe(l, "beta_replay", c.train.weights.beta_replay);
            detail::maybe(l, "bandwidths", c.train.kernel.bandwidths);
            detail::maybe(l, "median_heuristic", c.train.kernel.median_heuristic);
            detail::maybe(l, "cca_confident_only", c.train.cca_confident_only);
        }
        if (j.contains("scenario")) {
            const auto& s = j.at("scenario");
            detail::reject_unknown_keys(s, "scenario", {"source", "targets"});
            detail::maybe(s, "source", c.scenario.source);
            detail::maybe(s, "targets", c.scenario.targets);
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": " + e.what());
    }

    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Content hashing and small numeric helpers for the reports.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t hash_file(const std::string& path, std::uint64_t h) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return h;
    char buf[1 << 14];
    while (f.read(buf, sizeof buf) || f.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline double vec_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two observations.
inline double vec_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = vec_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double vec_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
        if (!f) throw data_error("cannot write: " + tmp);
        f << content;
    }
    std::filesystem::rename(tmp, path);
}

} // namespace detail

// ---------------------------------------------------------------------------
// gen-data: synthesize every configured domain to disk (train + test splits,
// disjoint by sample index) along with the scenario file and a manifest.
// ---------------------------------------------------------------------------

struct GenDataResult {
    std::vector<std::string> domain_dirs;
    std::string scenario_file;
};

inline GenDataResult cmd_gen_data(const ExperimentConfig& cfg, const std::string& data_dir,
                                  std::ostream* log = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(data_dir);

    GenDataResult res;
    for (const auto& knobs : cfg.data.domains) {
        const DomainSpec train_spec = cfg.data.domain_spec(knobs.domain_id, cfg.data.n_per_class);
        const DomainSpec test_spec =
            cfg.data.domain_spec(knobs.domain_id, cfg.data.n_test_per_class);
        DomainDataset train =
            generate_domain(train_spec, cfg.data.window_len, cfg.data.seed, 0);
        DomainDataset test = generate_domain(test_spec, cfg.data.window_len, cfg.data.seed,
                                             cfg.data.n_per_class);
        const fs::path dir = fs::path(data_dir) / knobs.domain_id;
        save_dataset((dir / "train").string(), train);
        save_dataset((dir / "test").string(), test);
        res.domain_dirs.push_back(dir.string());
        if (log)
            *log << "generated " << knobs.domain_id << ": " << train.size() << " train / "
                 << test.size() << " test segments\n";
    }
    res.scenario_file = (fs::path(data_dir) / "scenario.json").string();
    save_scenario(res.scenario_file, cfg.scenario);

    nlohmann::json manifest{{"config", cfg.to_json()},
                            {"domains", res.domain_dirs.size()},
                            {"window_len", cfg.data.window_len}};
    detail::write_text_atomic((fs::path(data_dir) / "gen_manifest.json").string(),
                              manifest.dump(2) + "\n");
    return res;
}

// Per-segment standardization is applied at load time for every consumer.
inline DomainBundle load_domain_bundle(const std::string& data_dir,
                                       const std::string& domain_id) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(data_dir) / domain_id;
    if (!fs::exists(dir / "train") || !fs::exists(dir / "test"))
        throw data_error("dataset for domain '" + domain_id + "' not found under " +
                         data_dir + " (run gen-data first)");
    DomainBundle b;
    b.train = load_dataset((dir / "train").string());
    b.test = load_dataset((dir / "test").string());
    normalize_per_segment(b.train);
    normalize_per_segment(b.test);
    return b;
}

// ---------------------------------------------------------------------------
// run: execute the adaptation sequence for one mode over several seeds.
// ---------------------------------------------------------------------------

enum class RunMode { EverAdapt, BnBaseline, CcaOnly, CcaReplay };

inline const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::EverAdapt: return "everadapt";
        case RunMode::BnBaseline: return "bn_baseline";
        case RunMode::CcaOnly: return "cca_only";
        case RunMode::CcaReplay: return "cca_replay";
    }
    return "everadapt";
}

inline RunMode run_mode_from_name(const std::string& s) {
    if (s == "everadapt") return RunMode::EverAdapt;
    if (s == "bn_baseline") return RunMode::BnBaseline;
    if (s == "cca_only") return RunMode::CcaOnly;
    if (s == "cca_replay") return RunMode::CcaReplay;
    throw config_error("unknown mode '" + s +
                       "' (expected everadapt, bn_baseline, cca_only, cca_replay)");
}

// Ablation knobs per mode. The cca_* modes run conventional BN with the
// entropy term disabled (alpha pinned to 0 puts full weight on the
// class-conditional alignment), mirroring the ablation rows; bn_baseline
// is the frozen source model, the no-adaptation control.
inline TrainConfig make_mode_config(const ExperimentConfig& cfg, RunMode mode) {
    TrainConfig t = cfg.train;
    switch (mode) {
        case RunMode::EverAdapt:
            t.norm_mode = NormKind::CBN;
            break;
        case RunMode::BnBaseline:
            t.norm_mode = NormKind::BN;
            t.adaptation_enabled = false;
            t.replay_enabled = false;
            break;
        case RunMode::CcaOnly:
            t.norm_mode = NormKind::BN;
            t.weights.alpha_start = 0.0;
            t.weights.alpha_end = 0.0;
            t.replay_enabled = false;
            break;
        case RunMode::CcaReplay:
            t.norm_mode = NormKind::BN;
            t.weights.alpha_start = 0.0;
            t.weights.alpha_end = 0.0;
            break;
    }
    return t;
}

struct SeedResult {
    std::uint64_t seed = 0;
    double acc = 0.0;
    std::optional<double> bwt;
    double adapt = 0.0;
    double source_test_accuracy = 0.0;
    std::vector<double> stage_seconds;
    ResultMatrix matrix;
};

struct RunReport {
    RunMode mode = RunMode::EverAdapt;
    std::vector<SeedResult> seeds;
    double acc_mean = 0.0, acc_std = 0.0;
    double adapt_mean = 0.0, adapt_std = 0.0;
    std::optional<double> bwt_mean, bwt_std;
};

inline SeedResult execute_seed(const ExperimentConfig& cfg, const TrainConfig& train_cfg,
                               const DomainBundle& source,
                               const std::vector<DomainBundle>& targets,
                               std::uint64_t seed, const std::string& checkpoint_dir = "") {
    TrainConfig t = train_cfg;
    t.seed = seed;
    AdaptationRun run = run_sequence(cfg.model, source, targets, t, checkpoint_dir);
    SeedResult r;
    r.seed = seed;
    r.matrix = run.results;
    r.acc = acc_metric(run.results);
    r.bwt = bwt_metric(run.results);
    r.adapt = adapt_metric(run.results, AdaptMode::Corrected);
    r.source_test_accuracy = run.source_test_accuracy;
    r.stage_seconds = run.stage_seconds;
    return r;
}

inline RunReport summarize(RunMode mode, std::vector<SeedResult> seeds) {
    RunReport rep;
    rep.mode = mode;
    rep.seeds = std::move(seeds);
    std::vector<double> accs, adapts, bwts;
    bool bwt_defined = true;
    for (const auto& s : rep.seeds) {
        accs.push_back(s.acc);
        adapts.push_back(s.adapt);
        if (s.bwt)
            bwts.push_back(*s.bwt);
        else
            bwt_defined = false;
    }
    rep.acc_mean = detail::vec_mean(accs);
    rep.acc_std = detail::vec_std(accs);
    rep.adapt_mean = detail::vec_mean(adapts);
    rep.adapt_std = detail::vec_std(adapts);
    if (bwt_defined && !bwts.empty()) {
        rep.bwt_mean = detail::vec_mean(bwts);
        rep.bwt_std = detail::vec_std(bwts);
    }
    return rep;
}

inline std::vector<std::uint64_t> seed_list(const ExperimentConfig& cfg, std::size_t n) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n; ++i) seeds.push_back(cfg.train.seed + i);
    return seeds;
}

inline std::string dataset_content_hash(const ExperimentConfig& cfg,
                                        const std::string& data_dir) {
    namespace fs = std::filesystem;
    std::uint64_t h = 1469598103934665603ull;
    const std::string dump = cfg.to_json().dump();
    h = detail::fnv1a64(dump.data(), dump.size(), h);
    std::vector<std::string> ids{cfg.scenario.source};
    ids.insert(ids.end(), cfg.scenario.targets.begin(), cfg.scenario.targets.end());
    for (const auto& id : ids)
        for (const char* split : {"train", "test"})
            for (const char* file : {"manifest.json", "segments.bin", "labels.bin"})
                h = detail::hash_file((fs::path(data_dir) / id / split / file).string(), h);
    return detail::hex64(h);
}

namespace detail {

inline nlohmann::json seed_result_json(const SeedResult& s,
                                       const std::vector<std::string>& names) {
    nlohmann::json j{{"seed", s.seed},
                     {"acc", s.acc},
                     {"adapt", s.adapt},
                     {"source_test_accuracy", s.source_test_accuracy}};
    j["bwt"] = s.bwt ? nlohmann::json(*s.bwt) : nlohmann::json(nullptr);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < s.matrix.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t jx = 0; jx <= i; ++jx) row.push_back(s.matrix.get(i, jx));
        rows.push_back(row);
    }
    j["result_matrix"] = rows;
    j["domains"] = names;
    return j;
}

} // namespace detail

inline RunReport cmd_run(const ExperimentConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir, std::size_t n_seeds, RunMode mode,
                         std::ostream* log = nullptr, bool write_checkpoints = true) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const DomainBundle source = load_domain_bundle(data_dir, cfg.scenario.source);
    std::vector<DomainBundle> targets;
    for (const auto& id : cfg.scenario.targets)
        targets.push_back(load_domain_bundle(data_dir, id));

    const TrainConfig train_cfg = make_mode_config(cfg, mode);
    std::vector<SeedResult> results;
    for (std::uint64_t seed : seed_list(cfg, n_seeds)) {
        const std::string ckpt_dir =
            write_checkpoints ? (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string()
                              : "";
        results.push_back(execute_seed(cfg, train_cfg, source, targets, seed, ckpt_dir));
        if (log)
            *log << "mode " << run_mode_name(mode) << " seed " << seed << ": ACC "
                 << detail::fmt(results.back().acc, 2) << " BWT "
                 << (results.back().bwt ? detail::fmt(*results.back().bwt, 2)
                                        : std::string("absent"))
                 << " ADAPT " << detail::fmt(results.back().adapt, 2) << "\n";
    }
    RunReport rep = summarize(mode, std::move(results));

    // results.csv: one row per seed; summary.csv: the mean +/- std row.
    std::ostringstream raw;
    raw << "scenario,seed,mode,ACC,BWT,ADAPT\n";
    const std::string scen = cfg.scenario.source;
    for (const auto& s : rep.seeds) {
        raw << scen << ',' << s.seed << ',' << run_mode_name(mode) << ','
            << detail::fmt(s.acc) << ','
            << (s.bwt ? detail::fmt(*s.bwt) : std::string()) << ','
            << detail::fmt(s.adapt) << '\n';
    }
    detail::write_text_atomic((fs::path(out_dir) / "results.csv").string(), raw.str());

    std::ostringstream summary;
    summary << "mode,seeds,acc_mean,acc_std,bwt_mean,bwt_std,adapt_mean,adapt_std\n";
    summary << run_mode_name(mode) << ',' << rep.seeds.size() << ','
            << detail::fmt(rep.acc_mean) << ',' << detail::fmt(rep.acc_std) << ','
            << (rep.bwt_mean ? detail::fmt(*rep.bwt_mean) : std::string()) << ','
            << (rep.bwt_std ? detail::fmt(*rep.bwt_std) : std::string()) << ','
            << detail::fmt(rep.adapt_mean) << ',' << detail::fmt(rep.adapt_std) << '\n';
    detail::write_text_atomic((fs::path(out_dir) / "summary.csv").string(), summary.str());

    for (const auto& s : rep.seeds)
        detail::write_text_atomic(
            (fs::path(out_dir) / ("rmatrix_seed" + std::to_string(s.seed) + ".csv")).string(),
            rmatrix_to_csv(s.matrix, cfg.scenario.targets));

    nlohmann::json report{{"type", "run"},
                          {"mode", run_mode_name(mode)},
                          {"scenario", {{"source", cfg.scenario.source},
                                        {"targets", cfg.scenario.targets}}},
                          {"acc_mean", rep.acc_mean},
                          {"acc_std", rep.acc_std},
                          {"adapt_mean", rep.adapt_mean},
                          {"adapt_std", rep.adapt_std}};
    report["bwt_mean"] = rep.bwt_mean ? nlohmann::json(*rep.bwt_mean) : nlohmann::json(nullptr);
    report["bwt_std"] = rep.bwt_std ? nlohmann::json(*rep.bwt_std) : nlohmann::json(nullptr);
    nlohmann::json seeds_j = nlohmann::json::array();
    for (const auto& s : rep.seeds)
        seeds_j.push_back(detail::seed_result_json(s, cfg.scenario.targets));
    report["seeds"] = seeds_j;
    detail::write_text_atomic((fs::path(out_dir) / "report.json").string(),
                              report.dump(2) + "\n");

    // Run manifest: config snapshot, content hash, wall-clock timings.
    nlohmann::json manifest{{"command", "run"},
                            {"mode", run_mode_name(mode)},
                            {"config", cfg.to_json()},
                            {"seeds", seed_list(cfg, n_seeds)},
                            {"content_hash", dataset_content_hash(cfg, data_dir)}};
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& s : rep.seeds)
        timings.push_back({{"seed", s.seed}, {"stage_seconds", s.stage_seconds}});
    manifest["timings"] = timings;
    detail::write_text_atomic((fs::path(out_dir) / "manifest.json").string(),
                              manifest.dump(2) + "\n");

    if (log) {
        *log << "\n" << run_mode_name(mode) << " over " << rep.seeds.size() << " seeds:\n"
             << "  ACC   " << detail::fmt(rep.acc_mean, 2) << " +/- "
             << detail::fmt(rep.acc_std, 2) << "\n"
             << "  BWT   "
             << (rep.bwt_mean ? detail::fmt(*rep.bwt_mean, 2) + " +/- " +
                                    detail::fmt(*rep.bwt_std, 2)
                              : std::string("absent (single target)"))
             << "\n"
             << "  ADAPT " << detail::fmt(rep.adapt_mean, 2) << " +/- "
             << detail::fmt(rep.adapt_std, 2) << "\n";
    }
    return rep;
}

// ---------------------------------------------------------------------------
// replay-study: BWT as a function of replay fraction, with and without CBN.
// ---------------------------------------------------------------------------

struct ReplayStudyRow {
    double fraction = 0.0;
    bool cbn = false;
    double bwt_mean = 0.0, bwt_std = 0.0;
    double acc_mean = 0.0, acc_std = 0.0;
};

struct ReplayStudyReport {
    std::vector<ReplayStudyRow> rows;
};

inline ReplayStudyReport cmd_replay_study(const ExperimentConfig& cfg,
                                          const std::string& data_dir,
                                          const std::string& out_dir,
                                          std::vector<double> fractions, std::size_t n_seeds,
                                          std::ostream* log = nullptr) {
    cfg.validate();
    if (fractions.empty()) fractions = {0.01, 0.05, 0.10};
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0)
            throw config_error("replay-study: fractions must be in (0,1]");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const DomainBundle source = load_domain_bundle(data_dir, cfg.scenario.source);
    std::vector<DomainBundle> targets;
    for (const auto& id : cfg.scenario.targets)
        targets.push_back(load_domain_bundle(data_dir, id));

    ReplayStudyReport rep;
    for (bool cbn : {true, false}) {
        for (double fraction : fractions) {
            TrainConfig t = make_mode_config(cfg, RunMode::EverAdapt);
            if (!cbn) t.norm_mode = NormKind::BN;   // full objective, conventional BN
            t.replay_fraction = fraction;
            std::vector<SeedResult> results;
            for (std::uint64_t seed : seed_list(cfg, n_seeds))
                results.push_back(execute_seed(cfg, t, source, targets, seed));
            RunReport rr = summarize(RunMode::EverAdapt, std::move(results));
            ReplayStudyRow row;
            row.fraction = fraction;
            row.cbn = cbn;
            row.bwt_mean = rr.bwt_mean.value_or(0.0);
            row.bwt_std = rr.bwt_std.value_or(0.0);
            row.acc_mean = rr.acc_mean;
            row.acc_std = rr.acc_std;
            rep.rows.push_back(row);
            if (log)
                *log << "replay fraction " << detail::fmt(fraction, 2) << " cbn="
                     << (cbn ? "on" : "off") << ": BWT " << detail::fmt(row.bwt_mean, 2)
                     << " +/- " << detail::fmt(row.bwt_std, 2) << "\n";
        }
    }

    std::ostringstream csv;
    csv << "replay_fraction,cbn,seeds,bwt_mean,bwt_std,acc_mean,acc_std\n";
    for (const auto& r : rep.rows)
        csv << detail::fmt(r.fraction, 4) << ',' << (r.cbn ? "on" : "off") << ','
            << n_seeds << ',' << detail::fmt(r.bwt_mean) << ',' << detail::fmt(r.bwt_std)
            << ',' << detail::fmt(r.acc_mean) << ',' << detail::fmt(r.acc_std) << '\n';
    detail::write_text_atomic((fs::path(out_dir) / "replay_study.csv").string(), csv.str());

    nlohmann::json report{{"type", "replay_study"}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rep.rows)
        report["rows"].push_back({{"replay_fraction", r.fraction},
                                  {"cbn", r.cbn},
                                  {"bwt_mean", r.bwt_mean},
                                  {"bwt_std", r.bwt_std},
                                  {"acc_mean", r.acc_mean},
                                  {"acc_std", r.acc_std}});
    detail::write_text_atomic((fs::path(out_dir) / "report.json").string(),
                              report.dump(2) + "\n");
    nlohmann::json manifest{{"command", "replay-study"},
                            {"config", cfg.to_json()},
                            {"fractions", fractions},
                            {"seeds", seed_list(cfg, n_seeds)},
                            {"content_hash", dataset_content_hash(cfg, data_dir)}};
    detail::write_text_atomic((fs::path(out_dir) / "manifest.json").string(),
                              manifest.dump(2) + "\n");
    return rep;
}

// ---------------------------------------------------------------------------
// stability-study: seed-to-seed accuracy spread of full EverAdapt vs the
// CBN-without-entropy variant vs the no-CBN variant, on identical seeds.
// ---------------------------------------------------------------------------

struct StabilityVariantResult {
    std::string variant;
    std::vector<double> accs;   // per seed, paired across variants
    double min = 0.0, median = 0.0, max = 0.0;
    double spread() const { return max - min; }
};

struct StabilityReport {
    std::vector<StabilityVariantResult> variants;
};

inline StabilityReport cmd_stability_study(const ExperimentConfig& cfg,
                                           const std::string& data_dir,
                                           const std::string& out_dir, std::size_t n_seeds,
                                           std::ostream* log = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const DomainBundle source = load_domain_bundle(data_dir, cfg.scenario.source);
    std::vector<DomainBundle> targets;
    for (const auto& id : cfg.scenario.targets)
        targets.push_back(load_domain_bundle(data_dir, id));

    struct Variant {
        const char* name;
        TrainConfig cfg;
    };
    TrainConfig full = make_mode_config(cfg, RunMode::EverAdapt);
    TrainConfig no_entropy = full;
    no_entropy.weights.alpha_start = 0.0;
    no_entropy.weights.alpha_end = 0.0;
    TrainConfig no_cbn = full;
    no_cbn.norm_mode = NormKind::BN;
    const std::vector<Variant> variants{{"full", full},
                                        {"cbn_no_entropy", no_entropy},
                                        {"no_cbn", no_cbn}};

    StabilityReport rep;
    for (const auto& v : variants) {
        StabilityVariantResult res;
        res.variant = v.name;
        for (std::uint64_t seed : seed_list(cfg, n_seeds))
            res.accs.push_back(
                execute_seed(cfg, v.cfg, source, targets, seed).acc);
        res.min = *std::min_element(res.accs.begin(), res.accs.end());
        res.max = *std::max_element(res.accs.begin(), res.accs.end());
        res.median = detail::vec_median(res.accs);
        rep.variants.push_back(res);
        if (log)
            *log << "variant " << v.name << ": min " << detail::fmt(res.min, 2) << " median "
                 << detail::fmt(res.median, 2) << " max " << detail::fmt(res.max, 2)
                 << " range " << detail::fmt(res.spread(), 2) << "\n";
    }

    std::ostringstream csv;
    csv << "variant,seed,acc\n";
    const auto seeds = seed_list(cfg, n_seeds);
    for (const auto& v : rep.variants)
        for (std::size_t i = 0; i < v.accs.size(); ++i)
            csv << v.variant << ',' << seeds[i] << ',' << detail::fmt(v.accs[i]) << '\n';
    detail::write_text_atomic((fs::path(out_dir) / "stability_raw.csv").string(), csv.str());

    std::ostringstream summary;
    summary << "variant,min,median,max,range\n";
    for (const auto& v : rep.variants)
        summary << v.variant << ',' << detail::fmt(v.min) << ',' << detail::fmt(v.median)
                << ',' << detail::fmt(v.max) << ',' << detail::fmt(v.spread()) << '\n';
    detail::write_text_atomic((fs::path(out_dir) / "stability_summary.csv").string(),
                              summary.str());

    nlohmann::json report{{"type", "stability_study"},
                          {"variants", nlohmann::json::array()}};
    for (const auto& v : rep.variants)
        report["variants"].push_back({{"variant", v.variant},
                                      {"accs", v.accs},
                                      {"min", v.min},
                                      {"median", v.median},
                                      {"max", v.max},
                                      {"range", v.spread()}});
    detail::write_text_atomic((fs::path(out_dir) / "report.json").string(),
                              report.dump(2) + "\n");
    nlohmann::json manifest{{"command", "stability-study"},
                            {"config", cfg.to_json()},
                            {"seeds", seeds},
                            {"content_hash", dataset_content_hash(cfg, data_dir)}};
    detail::write_text_atomic((fs::path(out_dir) / "manifest.json").string(),
                              manifest.dump(2) + "\n");
    return rep;
}

// report: render an existing run directory's report.json as a table.
inline std::string cmd_report(const std::string& run_dir) {
    namespace fs = std::filesystem;
    const fs::path path = fs::path(run_dir) / "report.json";
    if (!fs::exists(path))
        throw data_error("no report.json under " + run_dir);
    std::ifstream f(path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path.string() + ": " + e.what());
    }

    std::ostringstream os;
    const std::string type = j.value("type", "run");
    if (type == "run") {
        os << "mode: " << j.value("mode", "?") << "\n";
        os << "ACC   " << detail::fmt(j.at("acc_mean").get<double>(), 2) << " +/- "
           << detail::fmt(j.at("acc_std").get<double>(), 2) << "\n";
        if (j.at("bwt_mean").is_null())
            os << "BWT   absent (single target)\n";
        else
            os << "BWT   " << detail::fmt(j.at("bwt_mean").get<double>(), 2) << " +/- "
               << detail::fmt(j.at("bwt_std").get<double>(), 2) << "\n";
        os << "ADAPT " << detail::fmt(j.at("adapt_mean").get<double>(), 2) << " +/- "
           << detail::fmt(j.at("adapt_std").get<double>(), 2) << "\n";
    } else if (type == "replay_study") {
        os << "replay_fraction  cbn  BWT(mean +/- std)\n";
        for (const auto& r : j.at("rows"))
            os << detail::fmt(r.at("replay_fraction").get<double>(), 3) << "  "
               << (r.at("cbn").get<bool>() ? "on " : "off") << "  "
               << detail::fmt(r.at("bwt_mean").get<double>(), 2) << " +/- "
               << detail::fmt(r.at("bwt_std").get<double>(), 2) << "\n";
    } else if (type == "stability_study") {
        os << "variant  min / median / max (range)\n";
        for (const auto& v : j.at("variants"))
            os << v.at("variant").get<std::string>() << "  "
               << detail::fmt(v.at("min").get<double>(), 2) << " / "
               << detail::fmt(v.at("median").get<double>(), 2) << " / "
               << detail::fmt(v.at("max").get<double>(), 2) << " ("
               << detail::fmt(v.at("range").get<double>(), 2) << ")\n";
    } else {
        throw format_error("unknown report type '" + type + "'");
    }
    return os.str();
}

} // namespace everadapt
