#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "everadapt/normalization.hpp"
#include "everadapt/ops.hpp"
#include "everadapt/rng.hpp"

namespace everadapt {

// Declarative architecture: a stack of conv blocks (conv -> norm -> relu ->
// maxpool -> optional dropout), an adaptive average pool, and a dense
// classifier head.
struct ConvBlockSpec {
    std::size_t channels = 0;
    std::size_t kernel = 0;
    double dropout_p = 0.0;
};

enum class NormKind { BN, CBN };

struct ModelSpec {
    std::vector<ConvBlockSpec> conv_blocks;
    std::size_t in_channels = 1;
    std::size_t pool_window = 2;   // max pooling window == stride
    std::size_t adaptive_out = 1;
    std::size_t feature_dim = 0;   // must equal last channels * adaptive_out
    std::size_t num_classes = 0;
    NormKind norm_mode = NormKind::CBN;

    void validate() const {
        if (conv_blocks.empty())
            throw config_error("model spec: at least one conv block required");
        for (const auto& b : conv_blocks)
            if (b.channels == 0 || b.kernel == 0)
                throw config_error("model spec: channels and kernels must be positive");
        if (num_classes < 2) throw config_error("model spec: num_classes must be >= 2");
        if (pool_window == 0) throw config_error("model spec: pool_window must be positive");
        if (adaptive_out == 0) throw config_error("model spec: adaptive_out must be positive");
        if (feature_dim != conv_blocks.back().channels * adaptive_out)
            throw config_error("model spec: feature_dim must equal last channels * adaptive_out");
    }

    // Backbone used in the reference experiments: three conv blocks at
    // 128/256/128 channels with kernels 5/8/8, dropout 0.5 on the first.
    static ModelSpec paper_default(std::size_t num_classes) {
        ModelSpec s;
        s.conv_blocks = {{128, 5, 0.5}, {256, 8, 0.0}, {128, 8, 0.0}};
        s.feature_dim = 128;
        s.num_classes = num_classes;
        return s;
    }

    // Small preset that keeps CI runs fast.
    static ModelSpec desk_default(std::size_t num_classes) {
        ModelSpec s;
        s.conv_blocks = {{8, 5, 0.0}, {16, 5, 0.0}};
        s.feature_dim = 16;
        s.num_classes = num_classes;
        return s;
    }
};

struct ConvBlock {
    TensorPtr kernel;   // [Cout, Cin, K]
    TensorPtr bias;     // [Cout]
    BatchNormState norm;
    double dropout_p = 0.0;
};

// Feature extractor + classifier pair. Owns its dropout RNG so a run is
// reproducible from (spec, seed) alone.
class Model {
public:
    ModelSpec spec;
    std::vector<ConvBlock> blocks;
    TensorPtr fc_weight;   // [num_classes, feature_dim]
    TensorPtr fc_bias;     // [num_classes]
    bool training = false;
    Rng dropout_rng{0};

    std::vector<TensorPtr> parameters() const {
        std::vector<TensorPtr> ps;
        for (const auto& b : blocks) {
            ps.push_back(b.kernel);
            ps.push_back(b.bias);
            ps.push_back(b.norm.gamma);
            ps.push_back(b.norm.beta);
        }
        ps.push_back(fc_weight);
        ps.push_back(fc_bias);
        return ps;
    }

    void set_training(bool t) { training = t; }

    void set_norm_mode(NormMode m) {
        for (auto& b : blocks) b.norm.mode = m;
    }

    // batch [B, in_channels, L] -> features [B, feature_dim]. When
    // capture_norm_inputs is given, a copy of each norm layer's input
    // (the conv output) is appended, for representation-stability probes.
    TensorPtr extract_features(Graph& g, const TensorPtr& batch,
                               std::vector<Tensor>* capture_norm_inputs = nullptr) {
        if (batch->rank() != 3 || batch->dim(1) != spec.in_channels)
            throw dimension_error("extract_features: expected batch [B," +
                                  std::to_string(spec.in_channels) + ",L]");
        TensorPtr x = batch;
        for (auto& blk : blocks) {
            x = conv1d(g, x, blk.kernel, blk.bias, 1, 0);
            if (capture_norm_inputs) capture_norm_inputs->push_back(*x);
            x = norm_forward(g, x, blk.norm);
            x = relu(g, x);
            x = maxpool1d(g, x, spec.pool_window, spec.pool_window);
            if (blk.dropout_p > 0.0)
                x = dropout(g, x, blk.dropout_p, training, dropout_rng);
        }
        x = adaptive_avg_pool1d(g, x, spec.adaptive_out);
        return reshape(g, x, {x->dim(0), spec.feature_dim});
    }

    TensorPtr classify(Graph& g, const TensorPtr& features) const {
        if (features->rank() != 2 || features->dim(1) != spec.feature_dim)
            throw dimension_error("classify: expected features [B," +
                                  std::to_string(spec.feature_dim) + "]");
        return dense(g, features, fc_weight, fc_bias);
    }

    TensorPtr forward(Graph& g, const TensorPtr& batch) {
        return classify(g, extract_features(g, batch));
    }
};

namespace detail {

inline TensorPtr init_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> w(Tensor::count(shape));
    for (double& v : w) v = rng.uniform(-bound, bound);
    return make_param(std::move(shape), std::move(w));
}

} // namespace detail

inline Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng(hash_mix(seed, "model-init"));
    std::size_t cin = spec.in_channels;
    for (const auto& bs : spec.conv_blocks) {
        ConvBlock blk;
        const std::size_t fan_in = cin * bs.kernel;
        blk.kernel = detail::init_uniform(rng, {bs.channels, cin, bs.kernel}, fan_in);
        blk.bias = detail::init_uniform(rng, {bs.channels}, fan_in);
        blk.norm = BatchNormState::create(bs.channels);
        blk.dropout_p = bs.dropout_p;
        m.blocks.push_back(std::move(blk));
        cin = bs.channels;
    }
    m.fc_weight = detail::init_uniform(rng, {spec.num_classes, spec.feature_dim},
                                       spec.feature_dim);
    m.fc_bias = detail::init_uniform(rng, {spec.num_classes}, spec.feature_dim);
    m.dropout_rng = Rng(hash_mix(seed, "dropout"));
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic + version, a JSON header describing the spec and
// the array table, then one contiguous little-endian float64 blob holding
// every parameter and running statistic. Doubles never pass through text,
// so a save/load round trip is bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCkptMagic[4] = {'E', 'V', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

struct ArrayRef {
    std::string name;
    std::vector<std::size_t> shape;
    const std::vector<double>* data;
};

inline void collect_arrays(const Model& m, std::vector<ArrayRef>& out) {
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const auto& b = m.blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        out.push_back({p + "kernel", b.kernel->shape, &b.kernel->data});
        out.push_back({p + "bias", b.bias->shape, &b.bias->data});
        out.push_back({p + "gamma", b.norm.gamma->shape, &b.norm.gamma->data});
        out.push_back({p + "beta", b.norm.beta->shape, &b.norm.beta->data});
        out.push_back({p + "mu_ema", {b.norm.mu_ema.size()}, &b.norm.mu_ema});
        out.push_back({p + "var_ema", {b.norm.var_ema.size()}, &b.norm.var_ema});
    }
    out.push_back({"fc.weight", m.fc_weight->shape, &m.fc_weight->data});
    out.push_back({"fc.bias", m.fc_bias->shape, &m.fc_bias->data});
}

inline const char* norm_mode_name(NormMode m) {
    switch (m) {
        case NormMode::TrainBN: return "train_bn";
        case NormMode::EvalBN: return "eval_bn";
        case NormMode::CBN: return "cbn";
    }
    return "train_bn";
}

inline NormMode norm_mode_from_name(const std::string& s) {
    if (s == "train_bn") return NormMode::TrainBN;
    if (s == "eval_bn") return NormMode::EvalBN;
    if (s == "cbn") return NormMode::CBN;
    throw format_error("checkpoint: unknown norm mode '" + s + "'");
}

} // namespace detail

inline void save_model(const std::string& path, const Model& m) {
    using nlohmann::json;
    std::vector<detail::ArrayRef> arrays;
    detail::collect_arrays(m, arrays);

    json spec_j{{"in_channels", m.spec.in_channels},
                {"pool_window", m.spec.pool_window},
                {"adaptive_out", m.spec.adaptive_out},
                {"feature_dim", m.spec.feature_dim},
                {"num_classes", m.spec.num_classes},
                {"norm_mode", m.spec.norm_mode == NormKind::CBN ? "cbn" : "bn"}};
    spec_j["conv_blocks"] = json::array();
    for (const auto& b : m.spec.conv_blocks)
        spec_j["conv_blocks"].push_back({{"channels", b.channels},
                                         {"kernel", b.kernel},
                                         {"dropout_p", b.dropout_p}});

    json arr_j = json::array();
    std::size_t offset = 0;
    for (const auto& a : arrays) {
        arr_j.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                         {"count", a.data->size()}});
        offset += a.data->size();
    }

    json norm_j = json::array();
    for (const auto& b : m.blocks)
        norm_j.push_back({{"epsilon", b.norm.epsilon},
                          {"ema_momentum", b.norm.ema_momentum},
                          {"mode", detail::norm_mode_name(b.norm.mode)},
                          {"stats_initialized", b.norm.stats_initialized}});

    const std::string header =
        json{{"spec", spec_j}, {"arrays", arr_j}, {"norm_states", norm_j}}.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot open checkpoint for writing: " + path);
    f.write(detail::kCkptMagic, 4);
    std::uint32_t version = detail::kCkptVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    std::uint64_t hlen = header.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& a : arrays)
        f.write(reinterpret_cast<const char*>(a.data->data()),
                static_cast<std::streamsize>(a.data->size() * sizeof(double)));
    if (!f) throw data_error("checkpoint write failed: " + path);
}

inline Model load_model(const std::string& path) {
    using nlohmann::json;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
        throw format_error("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != detail::kCkptVersion)
        throw format_error("unsupported checkpoint version in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string header(hlen, '\0');
    f.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw format_error("truncated checkpoint header: " + path);

    json j;
    try {
        j = json::parse(header);
    } catch (const json::exception& e) {
        throw format_error("checkpoint header parse error: " + std::string(e.what()));
    }

    ModelSpec spec;
    const json& sj = j.at("spec");
    spec.in_channels = sj.at("in_channels").get<std::size_t>();
    spec.pool_window = sj.at("pool_window").get<std::size_t>();
    spec.adaptive_out = sj.at("adaptive_out").get<std::size_t>();
    spec.feature_dim = sj.at("feature_dim").get<std::size_t>();
    spec.num_classes = sj.at("num_classes").get<std::size_t>();
    spec.norm_mode = sj.at("norm_mode").get<std::string>() == "cbn" ? NormKind::CBN
                                                                    : NormKind::BN;
    for (const auto& bj : sj.at("conv_blocks"))
        spec.conv_blocks.push_back({bj.at("channels").get<std::size_t>(),
                                    bj.at("kernel").get<std::size_t>(),
                                    bj.at("dropout_p").get<double>()});

    Model m = build_model(spec, 0);
    const json& nj = j.at("norm_states");
    if (nj.size() != m.blocks.size())
        throw format_error("checkpoint norm state count mismatch");
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        m.blocks[i].norm.epsilon = nj[i].at("epsilon").get<double>();
        m.blocks[i].norm.ema_momentum = nj[i].at("ema_momentum").get<double>();
        m.blocks[i].norm.mode = detail::norm_mode_from_name(nj[i].at("mode").get<std::string>());
        m.blocks[i].norm.stats_initialized = nj[i].at("stats_initialized").get<bool>();
    }

    std::vector<detail::ArrayRef> arrays;
    detail::collect_arrays(m, arrays);
    const json& aj = j.at("arrays");
    if (aj.size() != arrays.size()) throw format_error("checkpoint array table mismatch");
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        if (aj[i].at("name").get<std::string>() != arrays[i].name ||
            aj[i].at("count").get<std::size_t>() != arrays[i].data->size())
            throw format_error("checkpoint array '" + arrays[i].name + "' mismatch");
        auto* dst = const_cast<std::vector<double>*>(arrays[i].data);
        f.read(reinterpret_cast<char*>(dst->data()),
               static_cast<std::streamsize>(dst->size() * sizeof(double)));
    }
    if (!f) throw format_error("truncated checkpoint data: " + path);
    return m;
}

} // namespace everadapt
