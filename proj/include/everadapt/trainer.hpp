#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "everadapt/data.hpp"
#include "everadapt/evaluation.hpp"
#include "everadapt/losses.hpp"
#include "everadapt/model.hpp"

// Sequential adaptation: pretrain on the labeled source, then walk the
// target domains in order, each step mixing a source batch, a target batch
// and a memory batch under the weighted objective. Replay memory keeps a
// small pseudo-labeled fraction of every finished target domain.

namespace everadapt {

enum class SourceStreamNorm { Frozen, Batch };
enum class ReplayScope { All, Last };

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    double replay_fraction = 0.05;
    double pseudo_threshold = 0.8;
    LossWeights weights;
    KernelConfig kernel;
    NormKind norm_mode = NormKind::CBN;
    SourceStreamNorm cbn_source_stream = SourceStreamNorm::Frozen;
    ReplayScope replay_scope = ReplayScope::All;
    bool cca_confident_only = true;   // threshold pseudo-labels entering CCA
    bool replay_enabled = true;
    bool adaptation_enabled = true;   // false = frozen source model baseline

    void validate() const {
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
        if (batch_size < 2) throw config_error("train: batch_size must be >= 2");
        if (pseudo_threshold < 0.0 || pseudo_threshold >= 1.0)
            throw config_error("train: pseudo_threshold must be in [0,1)");
        if (!(replay_fraction > 0.0) || replay_fraction > 1.0)
            throw config_error("train: replay_fraction must be in (0,1]");
        if (weights.alpha_start < 0.0 || weights.alpha_start > 1.0 ||
            weights.alpha_end < 0.0 || weights.alpha_end > 1.0)
            throw config_error("train: alpha weights must be in [0,1]");
        if (weights.beta_replay < 0.0)
            throw config_error("train: beta_replay must be >= 0");
        kernel.validate();
    }
};

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

// Cyclic batch supply over a dataset, reshuffling on wrap-around.
class BatchCycler {
public:
    BatchCycler(std::size_t n, Rng rng) : n_(n), rng_(rng) { refill(); }

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        out.reserve(count);
        while (out.size() < count) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_ = shuffled_indices(n_, rng_);
        pos_ = 0;
    }
    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

struct NormModeGuard {
    Model& model;
    std::vector<NormMode> saved;
    explicit NormModeGuard(Model& m) : model(m) {
        for (const auto& b : m.blocks) saved.push_back(b.norm.mode);
    }
    ~NormModeGuard() {
        for (std::size_t i = 0; i < model.blocks.size(); ++i)
            model.blocks[i].norm.mode = saved[i];
    }
};

} // namespace detail

// Stored segments plus frozen pseudo-labels from finished target domains.
class ReplayBuffer {
public:
    struct Entry {
        std::vector<double> segment;
        int pseudo_label;
        std::size_t domain_index;
    };

    explicit ReplayBuffer(double capacity_fraction = 0.01)
        : capacity_fraction_(capacity_fraction) {
        if (!(capacity_fraction > 0.0) || capacity_fraction > 1.0)
            throw config_error("replay buffer: capacity fraction must be in (0,1]");
    }

    double capacity_fraction() const { return capacity_fraction_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t count_for_domain(std::size_t d) const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.domain_index == d) ++n;
        return n;
    }

    void append(Entry e) { entries_.push_back(std::move(e)); }

    // Up to batch_size entries without replacement; Last scope restricts to
    // the most recently buffered domain.
    std::pair<TensorPtr, std::vector<int>> sample_batch(std::size_t batch_size, Rng& rng,
                                                        ReplayScope scope) const {
        std::vector<std::size_t> candidates;
        if (scope == ReplayScope::Last && !entries_.empty()) {
            std::size_t last = 0;
            for (const auto& e : entries_) last = std::max(last, e.domain_index);
            for (std::size_t i = 0; i < entries_.size(); ++i)
                if (entries_[i].domain_index == last) candidates.push_back(i);
        } else {
            candidates.resize(entries_.size());
            std::iota(candidates.begin(), candidates.end(), std::size_t{0});
        }
        const std::size_t take = std::min(batch_size, candidates.size());
        for (std::size_t i = 0; i < take; ++i)
            std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);

        if (take == 0) return {nullptr, {}};
        const std::size_t w = entries_[candidates[0]].segment.size();
        auto x = make_tensor({take, std::size_t{1}, w});
        std::vector<int> y(take);
        for (std::size_t i = 0; i < take; ++i) {
            const Entry& e = entries_[candidates[i]];
            std::copy_n(e.segment.data(), w, &x->data[i * w]);
            y[i] = e.pseudo_label;
        }
        return {x, y};
    }

private:
    double capacity_fraction_;
    std::vector<Entry> entries_;
};

// argmax prediction plus a confidence mask (max softmax probability >=
// threshold). The model is evaluated in eval mode regardless of its
// current training flag; TrainBN states fall back to their running
// statistics for the labeling pass.
struct PseudoLabels {
    std::vector<int> labels;
    std::vector<bool> confident;
};

inline PseudoLabels pseudo_label(Model& model, const TensorPtr& batch, double threshold) {
    if (threshold < 0.0 || threshold >= 1.0)
        throw value_error("pseudo_label: threshold must be in [0,1)");
    const bool was_training = model.training;
    detail::NormModeGuard guard(model);
    model.set_training(false);
    for (auto& b : model.blocks)
        if (b.norm.mode == NormMode::TrainBN) b.norm.mode = NormMode::EvalBN;

    Graph g;
    TensorPtr logits = model.forward(g, batch);
    TensorPtr probs = softmax(g, logits);
    const std::size_t n = probs->dim(0), classes = probs->dim(1);
    PseudoLabels out;
    out.labels.resize(n);
    out.confident.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (probs->at2(b, c) > probs->at2(b, best)) best = c;
        out.labels[b] = static_cast<int>(best);
        out.confident[b] = probs->at2(b, best) >= threshold;
    }
    model.set_training(was_training);
    return out;
}

// Mini-batch SGD on the source cross-entropy with TrainBN statistics
// accumulation. Leaves the model in eval mode with EvalBN states.
inline void pretrain_source(Model& model, const DomainDataset& source,
                            const TrainConfig& cfg) {
    if (!source.labeled()) throw data_error("pretrain_source: source must be labeled");
    if (source.size() == 0) throw data_error("pretrain_source: empty source dataset");

    model.set_training(true);
    model.set_norm_mode(NormMode::TrainBN);
    Rng shuffle_rng(hash_mix(cfg.seed, "pretrain-shuffle"));
    auto params = model.parameters();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = detail::shuffled_indices(source.size(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) continue;   // TrainBN needs a real batch
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(source.labels[i]);

            Graph g;
            TensorPtr loss = cross_entropy(g, model.forward(g, make_batch(source, idx)),
                                           labels);
            g.backward(loss);
            sgd_step(params, cfg.lr, cfg.weight_decay);
        }
    }
    model.set_training(false);
    model.set_norm_mode(NormMode::EvalBN);
}

// Samples round(fraction * n) segments from the finished target domain,
// class-balanced over the model's frozen pseudo-labels (round-robin across
// classes, uniform within each class). Earlier domains are retained.
inline void update_buffer(ReplayBuffer& buffer, Model& model,
                          const DomainDataset& finished_target, double fraction,
                          std::size_t domain_index, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw config_error("update_buffer: fraction must be in (0,1]");
    const std::size_t n = finished_target.size();
    const auto n_keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_keep == 0) return;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    PseudoLabels pl = pseudo_label(model, make_batch(finished_target, all), 0.0);

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[pl.labels[i]].push_back(i);

    Rng rng(hash_mix(hash_mix(seed, "replay-buffer"),
                     static_cast<std::uint64_t>(domain_index)));
    for (auto& [cls, idx] : by_class) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.below(i)]);
    }

    std::vector<std::size_t> chosen;
    std::map<int, std::size_t> cursor;
    while (chosen.size() < n_keep) {
        bool progressed = false;
        for (auto& [cls, idx] : by_class) {
            if (chosen.size() == n_keep) break;
            std::size_t& c = cursor[cls];
            if (c < idx.size()) {
                chosen.push_back(idx[c++]);
                progressed = true;
            }
        }
        if (!progressed) break;
    }

    const std::size_t w = finished_target.window_len;
    for (std::size_t i : chosen) {
        ReplayBuffer::Entry e;
        e.segment.assign(&finished_target.segments->data[i * w],
                         &finished_target.segments->data[i * w] + w);
        e.pseudo_label = pl.labels[i];
        e.domain_index = domain_index;
        buffer.append(std::move(e));
    }
}

// One pass of Algorithm-style adaptation on a single target domain: per
// step draw source/target/memory batches, normalize them under the active
// scheme, and minimize alpha(t) L_e + (1-alpha(t)) L_loc + beta L_m + L_s.
inline void adapt_to_domain(Model& model, const DomainDataset& source,
                            const DomainDataset& target, const ReplayBuffer& buffer,
                            const TrainConfig& cfg, std::size_t domain_index) {
    cfg.validate();
    if (target.size() == 0) throw data_error("adapt_to_domain: empty target dataset");
    if (!source.labeled()) throw data_error("adapt_to_domain: source must be labeled");
    for (const auto& b : model.blocks)
        if (!b.norm.stats_initialized)
            throw state_error("adapt_to_domain: pretraining has not populated statistics");

    const bool cbn = cfg.norm_mode == NormKind::CBN;
    model.set_norm_mode(cbn ? NormMode::CBN : NormMode::TrainBN);

    const std::size_t n_t = target.size();
    const std::size_t steps_per_epoch = (n_t + cfg.batch_size - 1) / cfg.batch_size;
    LossWeights weights = cfg.weights;
    weights.total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch);

    const std::uint64_t dseed = hash_mix(cfg.seed, static_cast<std::uint64_t>(domain_index));
    Rng target_rng(hash_mix(dseed, "adapt-target"));
    detail::BatchCycler source_cycle(source.size(), Rng(hash_mix(dseed, "adapt-source")));
    Rng memory_rng(hash_mix(dseed, "adapt-memory"));

    auto params = model.parameters();
    const std::size_t num_classes = model.spec.num_classes;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = detail::shuffled_indices(n_t, target_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) continue;
            std::vector<std::size_t> t_idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            TensorPtr target_batch = make_batch(target, t_idx);

            auto s_idx = source_cycle.next(cfg.batch_size);
            TensorPtr source_batch = make_batch(source, s_idx);
            std::vector<int> source_labels;
            for (std::size_t i : s_idx) source_labels.push_back(source.labels[i]);

            PseudoLabels pl = pseudo_label(model, target_batch, cfg.pseudo_threshold);

            model.set_training(true);
            Graph g;

            TensorPtr feat_s;
            if (cbn && cfg.cbn_source_stream == SourceStreamNorm::Batch) {
                detail::NormModeGuard guard(model);
                for (auto& b : model.blocks) {
                    b.norm.mode = NormMode::TrainBN;
                    b.norm.freeze_ema = true;
                }
                feat_s = model.extract_features(g, source_batch);
                for (auto& b : model.blocks) b.norm.freeze_ema = false;
            } else {
                feat_s = model.extract_features(g, source_batch);
            }
            TensorPtr l_src = cross_entropy(g, model.classify(g, feat_s), source_labels);

            TensorPtr feat_t = model.extract_features(g, target_batch);
            TensorPtr l_entropy = entropy_loss(g, model.classify(g, feat_t));

            std::vector<std::size_t> conf_idx;
            std::vector<int> conf_labels;
            for (std::size_t i = 0; i < t_idx.size(); ++i) {
                if (cfg.cca_confident_only && !pl.confident[i]) continue;
                conf_idx.push_back(i);
                conf_labels.push_back(pl.labels[i]);
            }
            TensorPtr l_local =
                conf_idx.empty()
                    ? scalar_tensor(0.0)
                    : class_conditional_mmd(g, feat_s, source_labels,
                                            take_rows(g, feat_t, conf_idx), conf_labels,
                                            num_classes, cfg.kernel);

            TensorPtr l_replay = scalar_tensor(0.0);
            if (cfg.replay_enabled && !buffer.empty()) {
                auto [mem_x, mem_y] =
                    buffer.sample_batch(cfg.batch_size, memory_rng, cfg.replay_scope);
                // A TrainBN forward needs at least two samples.
                if (mem_x && (cbn || mem_y.size() >= 2))
                    l_replay = replay_loss(g, model, mem_x, mem_y);
            }

            TensorPtr total = overall_loss(g, l_entropy, l_local, l_replay, l_src,
                                           step, weights);
            g.backward(total);
            sgd_step(params, cfg.lr, cfg.weight_decay);
            model.set_training(false);
            ++step;
        }
    }
    // BN-mode evaluation falls back to the (drifted) running statistics.
    if (!cbn) model.set_norm_mode(NormMode::EvalBN);
}

// Train + held-out test split of one domain.
struct DomainBundle {
    DomainDataset train;
    DomainDataset test;
};

struct AdaptationRun {
    Scenario scenario;
    ResultMatrix results;
    double source_test_accuracy = 0.0;
    std::vector<double> stage_seconds;
    std::vector<std::string> checkpoint_files;
};

// Full sequence: pretrain, then adapt / evaluate / re-evaluate / buffer for
// each target domain in order. Checkpoints are written per stage when
// checkpoint_dir is non-empty (stage_0 is the pretrained model).
inline AdaptationRun run_sequence(const ModelSpec& model_spec, const DomainBundle& source,
                                  const std::vector<DomainBundle>& targets,
                                  const TrainConfig& cfg,
                                  const std::string& checkpoint_dir = "") {
    cfg.validate();
    if (targets.empty()) throw data_error("run_sequence: at least one target domain required");

    AdaptationRun run;
    run.scenario.source = source.train.domain_id;
    for (const auto& t : targets) run.scenario.targets.push_back(t.train.domain_id);
    run.results = ResultMatrix(targets.size());

    ModelSpec spec = model_spec;
    spec.norm_mode = cfg.norm_mode;
    Model model = build_model(spec, cfg.seed);

    auto checkpoint = [&](std::size_t stage) {
        if (checkpoint_dir.empty()) return;
        std::filesystem::create_directories(checkpoint_dir);
        const std::string path =
            (std::filesystem::path(checkpoint_dir) / ("stage_" + std::to_string(stage) + ".ckpt"))
                .string();
        save_model(path, model);
        run.checkpoint_files.push_back(path);
    };

    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    pretrain_source(model, source.train, cfg);
    if (source.test.size() > 0)
        run.source_test_accuracy = accuracy(model, source.test);
    if (cfg.norm_mode == NormKind::CBN) model.set_norm_mode(NormMode::CBN);
    run.stage_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    checkpoint(0);

    ReplayBuffer buffer(cfg.replay_fraction);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        t0 = clock::now();
        if (cfg.adaptation_enabled)
            adapt_to_domain(model, source.train, targets[k].train.without_labels(), buffer,
                            cfg, k);
        run.results.set(k, k, accuracy(model, targets[k].test));
        for (std::size_t j = 0; j < k; ++j)
            run.results.set(k, j, accuracy(model, targets[j].test));
        if (cfg.adaptation_enabled && cfg.replay_enabled)
            update_buffer(buffer, model, targets[k].train.without_labels(),
                          cfg.replay_fraction, k, cfg.seed);
        run.stage_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
        checkpoint(k + 1);
    }
    return run;
}

} // namespace everadapt
