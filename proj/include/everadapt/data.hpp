#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "everadapt/errors.hpp"
#include "everadapt/rng.hpp"
#include "everadapt/tensor.hpp"

// Synthetic multi-domain fault-signal benchmark plus ingestion of external
// signal files. A domain models one operating condition (speed, load,
// noise); classes model damage signatures as impulse trains with a
// resonance ring-down on top of the shaft carrier.

namespace everadapt {

struct FaultClass {
    int class_id = 0;
    double impulse_rate = 0.0;        // impulses per shaft revolution; 0 = healthy
    double impulse_amplitude = 0.0;
    double resonance_hz = 0.0;
};

struct DomainSpec {
    std::string domain_id;
    double rotation_hz = 64.0;        // shaft speed
    double load_scale = 1.0;          // carrier amplitude multiplier
    double noise_sigma = 0.1;         // additive Gaussian noise std
    std::size_t n_per_class = 100;
    std::vector<FaultClass> classes;
    double sample_rate_hz = 4096.0;

    void validate() const {
        if (domain_id.empty()) throw config_error("domain spec: empty domain_id");
        if (!(rotation_hz > 0.0)) throw config_error("domain spec: rotation_hz must be > 0");
        if (noise_sigma < 0.0) throw config_error("domain spec: noise_sigma must be >= 0");
        if (n_per_class < 1) throw config_error("domain spec: n_per_class must be >= 1");
        if (classes.empty()) throw config_error("domain spec: class list is empty");
        for (std::size_t i = 0; i < classes.size(); ++i) {
            if (classes[i].impulse_rate < 0.0)
                throw config_error("domain spec: impulse_rate must be >= 0");
            if (classes[i].class_id != static_cast<int>(i))
                throw config_error("domain spec: class_id must equal its list position");
        }
        if (!(sample_rate_hz > 0.0))
            throw config_error("domain spec: sample_rate_hz must be > 0");
    }
};

// Fixed-length signal segments with an optional label column. Labels are
// present on disk and for evaluation; the adaptation path strips them via
// without_labels() so the trainer never sees target ground truth.
struct DomainDataset {
    std::string domain_id;
    TensorPtr segments;          // [n, 1, window_len]
    std::vector<int> labels;     // empty when withheld
    std::size_t window_len = 0;

    std::size_t size() const { return segments ? segments->dim(0) : 0; }
    bool labeled() const { return !labels.empty(); }

    DomainDataset without_labels() const {
        DomainDataset d = *this;
        d.labels.clear();
        return d;
    }
};

// Batch assembly: copies the selected segments into a fresh [B,1,W] tensor.
inline TensorPtr make_batch(const DomainDataset& ds, const std::vector<std::size_t>& idx) {
    if (!ds.segments) throw data_error("make_batch: dataset has no segments");
    const std::size_t w = ds.window_len;
    auto out = make_tensor({idx.size(), std::size_t{1}, w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= ds.size()) throw value_error("make_batch: index out of range");
        std::copy_n(&ds.segments->data[idx[i] * w], w, &out->data[i * w]);
    }
    return out;
}

namespace detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kRingTau = 0.002;        // impulse ring-down time constant [s]
constexpr double kSecondHarmonic = 0.3;   // carrier second-harmonic fraction

// One segment of synthetic vibration. The RNG is already positioned for
// this sample, so generation order does not matter.
inline void synth_segment(const DomainSpec& spec, const FaultClass& fc,
                          std::size_t window_len, Rng& rng, double* out) {
    const double dt = 1.0 / spec.sample_rate_hz;
    const double phase1 = rng.uniform(0.0, kTwoPi);
    const double phase2 = rng.uniform(0.0, kTwoPi);
    for (std::size_t n = 0; n < window_len; ++n) {
        const double t = static_cast<double>(n) * dt;
        out[n] = spec.load_scale *
                 (std::sin(kTwoPi * spec.rotation_hz * t + phase1) +
                  kSecondHarmonic * std::sin(2.0 * kTwoPi * spec.rotation_hz * t + phase2));
    }
    if (fc.impulse_rate > 0.0) {
        const double period = 1.0 / (fc.impulse_rate * spec.rotation_hz);
        const double span = static_cast<double>(window_len) * dt;
        double t_k = rng.uniform(0.0, period);
        while (t_k < span) {
            const std::size_t n0 =
                static_cast<std::size_t>(std::ceil(t_k / dt));
            const std::size_t n1 = std::min<std::size_t>(
                window_len, n0 + static_cast<std::size_t>(8.0 * kRingTau / dt));
            for (std::size_t n = n0; n < n1; ++n) {
                const double u = static_cast<double>(n) * dt - t_k;
                out[n] += fc.impulse_amplitude * std::exp(-u / kRingTau) *
                          std::sin(kTwoPi * fc.resonance_hz * u);
            }
            t_k += period * (1.0 + 0.02 * rng.normal());
        }
    }
    if (spec.noise_sigma > 0.0)
        for (std::size_t n = 0; n < window_len; ++n)
            out[n] += spec.noise_sigma * rng.normal();
}

} // namespace detail

// Deterministic domain synthesis: sample i of class c draws its randomness
// from hash(seed, domain_id, class_id, sample_index_base + i), so datasets
// are reproducible independent of generation order, and disjoint splits
// come from disjoint index ranges.
inline DomainDataset generate_domain(const DomainSpec& spec, std::size_t window_len,
                                     std::uint64_t seed, std::size_t sample_index_base = 0) {
    spec.validate();
    if (window_len == 0) throw config_error("generate_domain: window_len must be positive");

    const std::size_t n = spec.n_per_class * spec.classes.size();
    DomainDataset ds;
    ds.domain_id = spec.domain_id;
    ds.window_len = window_len;
    ds.segments = make_tensor({n, std::size_t{1}, window_len});
    ds.labels.resize(n);

    std::size_t row = 0;
    for (const FaultClass& fc : spec.classes) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i, ++row) {
            std::uint64_t h = hash_mix(seed, spec.domain_id);
            h = hash_mix(h, static_cast<std::uint64_t>(fc.class_id));
            h = hash_mix(h, static_cast<std::uint64_t>(sample_index_base + i));
            Rng rng(h);
            detail::synth_segment(spec, fc, window_len, rng,
                                  &ds.segments->data[row * window_len]);
            ds.labels[row] = fc.class_id;
        }
    }
    return ds;
}

// Moving-window segmentation: offsets 0, stride, 2*stride, ... while the
// window fits; stride == window gives distinct non-overlapping segments.
inline std::vector<std::vector<double>> segment_signal(const std::vector<double>& signal,
                                                       std::size_t window,
                                                       std::size_t stride) {
    if (window == 0 || stride == 0)
        throw value_error("segment_signal: window and stride must be positive");
    if (signal.size() < window)
        throw value_error("segment_signal: window larger than signal");
    std::vector<std::vector<double>> out;
    for (std::size_t off = 0; off + window <= signal.size(); off += stride)
        out.emplace_back(signal.begin() + static_cast<std::ptrdiff_t>(off),
                         signal.begin() + static_cast<std::ptrdiff_t>(off + window));
    return out;
}

inline DomainDataset dataset_from_segments(const std::string& domain_id,
                                           const std::vector<std::vector<double>>& segs,
                                           std::vector<int> labels = {}) {
    if (segs.empty()) throw data_error("dataset_from_segments: no segments");
    const std::size_t w = segs.front().size();
    for (const auto& s : segs)
        if (s.size() != w) throw dimension_error("dataset_from_segments: ragged segments");
    if (!labels.empty() && labels.size() != segs.size())
        throw dimension_error("dataset_from_segments: label count mismatch");
    DomainDataset ds;
    ds.domain_id = domain_id;
    ds.window_len = w;
    ds.segments = make_tensor({segs.size(), std::size_t{1}, w});
    for (std::size_t i = 0; i < segs.size(); ++i)
        std::copy_n(segs[i].data(), w, &ds.segments->data[i * w]);
    ds.labels = std::move(labels);
    return ds;
}

// --------------------------------------------------------------------------
// External signal files: plain text (one value per line), CSV with column
// select, or raw little-endian float binary with an 8-byte count header.
// --------------------------------------------------------------------------

struct SignalFileSchema {
    enum class Format { Auto, Text, Csv, BinaryF32, BinaryF64 };
    Format format = Format::Auto;
    std::size_t csv_column = 0;
    char delimiter = ',';
};

namespace detail {

inline SignalFileSchema::Format detect_format(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".csv") return SignalFileSchema::Format::Csv;
    if (ext == ".f32") return SignalFileSchema::Format::BinaryF32;
    if (ext == ".f64" || ext == ".bin") return SignalFileSchema::Format::BinaryF64;
    return SignalFileSchema::Format::Text;
}

inline std::vector<double> load_binary_signal(const std::string& path, bool f32) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open signal file: " + path);
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!f) throw format_error(path + ": missing 8-byte count header");
    const std::size_t elem = f32 ? 4 : 8;
    std::vector<char> raw(count * elem);
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    const std::size_t got = static_cast<std::size_t>(f.gcount());
    if (got != raw.size())
        throw format_error(path + ": truncated binary signal, expected " +
                           std::to_string(raw.size()) + " data bytes, found " +
                           std::to_string(got));
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (f32) {
            float v;
            std::memcpy(&v, raw.data() + i * 4, 4);
            out[i] = static_cast<double>(v);
        } else {
            std::memcpy(&out[i], raw.data() + i * 8, 8);
        }
    }
    return out;
}

inline std::vector<double> load_text_signal(const std::string& path, bool csv,
                                            std::size_t column, char delim) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open signal file: " + path);
    std::vector<double> out;
    std::string line;
    std::size_t byte_offset = 0;
    while (std::getline(f, line)) {
        const std::size_t line_start = byte_offset;
        byte_offset += line.size() + 1;
        if (line.empty()) continue;
        std::string field = line;
        if (csv) {
            std::size_t start = 0, col = 0;
            while (col < column) {
                const std::size_t pos = line.find(delim, start);
                if (pos == std::string::npos)
                    throw format_error(path + ": missing column " + std::to_string(column) +
                                       " at byte offset " + std::to_string(line_start));
                start = pos + 1;
                ++col;
            }
            const std::size_t end = line.find(delim, start);
            field = line.substr(start, end == std::string::npos ? std::string::npos
                                                                : end - start);
        }
        try {
            std::size_t used = 0;
            out.push_back(std::stod(field, &used));
        } catch (const std::exception&) {
            throw format_error(path + ": unparsable value at byte offset " +
                               std::to_string(line_start));
        }
    }
    return out;
}

} // namespace detail

inline std::vector<double> load_signal_file(const std::string& path,
                                            const SignalFileSchema& schema = {}) {
    if (!std::filesystem::exists(path))
        throw data_error("signal file does not exist: " + path);
    auto fmt = schema.format == SignalFileSchema::Format::Auto
                   ? detail::detect_format(path)
                   : schema.format;
    std::vector<double> out;
    switch (fmt) {
        case SignalFileSchema::Format::Csv:
            out = detail::load_text_signal(path, true, schema.csv_column, schema.delimiter);
            break;
        case SignalFileSchema::Format::BinaryF32:
            out = detail::load_binary_signal(path, true);
            break;
        case SignalFileSchema::Format::BinaryF64:
            out = detail::load_binary_signal(path, false);
            break;
        default:
            out = detail::load_text_signal(path, false, 0, schema.delimiter);
            break;
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        if (std::isnan(out[i]))
            throw data_error(path + ": NaN at sample " + std::to_string(i));
    return out;
}

// Per-segment standardization to zero mean, unit variance (variance floor
// 1e-8 keeps constant segments finite: they map to all-zero).
inline void normalize_per_segment(Tensor& segments) {
    if (segments.rank() != 3) throw dimension_error("normalize_per_segment: expected [n,1,W]");
    const std::size_t n = segments.dim(0);
    const std::size_t w = segments.dim(1) * segments.dim(2);
    for (std::size_t i = 0; i < n; ++i) {
        double* seg = &segments.data[i * w];
        double mu = 0.0;
        for (std::size_t k = 0; k < w; ++k) mu += seg[k];
        mu /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            const double d = seg[k] - mu;
            var += d * d;
        }
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
        for (std::size_t k = 0; k < w; ++k) seg[k] = (seg[k] - mu) * inv;
    }
}

inline void normalize_per_segment(DomainDataset& ds) {
    if (ds.segments) normalize_per_segment(*ds.segments);
}

// --------------------------------------------------------------------------
// Dataset directory format: manifest.json + segments.bin (+ labels.bin).
// --------------------------------------------------------------------------

namespace detail {

inline void write_f64_file(const std::string& path, const std::vector<double>& v) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot write: " + path);
    std::uint64_t count = v.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof count);
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw data_error("write failed: " + path);
}

inline void write_i32_file(const std::string& path, const std::vector<int>& v) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot write: " + path);
    std::uint64_t count = v.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof count);
    std::vector<std::int32_t> tmp(v.begin(), v.end());
    f.write(reinterpret_cast<const char*>(tmp.data()),
            static_cast<std::streamsize>(tmp.size() * sizeof(std::int32_t)));
    if (!f) throw data_error("write failed: " + path);
}

inline std::vector<int> read_i32_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open: " + path);
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof count);
    std::vector<std::int32_t> tmp(count);
    f.read(reinterpret_cast<char*>(tmp.data()),
           static_cast<std::streamsize>(count * sizeof(std::int32_t)));
    if (!f) throw format_error(path + ": truncated label file");
    return {tmp.begin(), tmp.end()};
}

} // namespace detail

inline void save_dataset(const std::string& dir, const DomainDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest{{"format_version", 1},
                            {"domain_id", ds.domain_id},
                            {"window_len", ds.window_len},
                            {"n_segments", ds.size()},
                            {"labels_present", ds.labeled()}};
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << '\n';
    detail::write_f64_file((fs::path(dir) / "segments.bin").string(), ds.segments->data);
    if (ds.labeled())
        detail::write_i32_file((fs::path(dir) / "labels.bin").string(), ds.labels);
}

inline DomainDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path))
        throw data_error("dataset manifest not found: " + manifest_path.string());
    std::ifstream mf(manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(manifest_path.string() + ": " + e.what());
    }
    DomainDataset ds;
    ds.domain_id = manifest.at("domain_id").get<std::string>();
    ds.window_len = manifest.at("window_len").get<std::size_t>();
    const std::size_t n = manifest.at("n_segments").get<std::size_t>();

    auto raw = detail::load_binary_signal((fs::path(dir) / "segments.bin").string(), false);
    if (raw.size() != n * ds.window_len)
        throw format_error(dir + ": segments.bin holds " + std::to_string(raw.size()) +
                           " values, manifest expects " + std::to_string(n * ds.window_len));
    ds.segments = make_tensor({n, std::size_t{1}, ds.window_len}, std::move(raw));
    if (manifest.at("labels_present").get<bool>()) {
        ds.labels = detail::read_i32_file((fs::path(dir) / "labels.bin").string());
        if (ds.labels.size() != n) throw format_error(dir + ": label count mismatch");
    }
    return ds;
}

// Scenario: the source domain and the ordered target sequence.
struct Scenario {
    std::string source;
    std::vector<std::string> targets;
};

inline void save_scenario(const std::string& path, const Scenario& sc) {
    nlohmann::json j{{"source", sc.source}, {"targets", sc.targets}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw data_error("cannot write scenario: " + path);
    f << j.dump(2) << '\n';
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open scenario: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path + ": " + e.what());
    }
    Scenario sc;
    sc.source = j.at("source").get<std::string>();
    sc.targets = j.at("targets").get<std::vector<std::string>>();
    return sc;
}

} // namespace everadapt
