#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udar/array.hpp"
#include "udar/errors.hpp"
#include "udar/format.hpp"
#include "udar/rng.hpp"

namespace udar {

enum class Domain { source, target };

inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw ParseError("unknown domain tag '" + s + "' (want source|target)");
}

enum class Split { none, train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        default: return "none";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "none") return Split::none;
    throw ParseError("unknown split tag '" + s + "'");
}

/// One continuous multichannel recording for one subject.
struct SensorRecording {
    std::string subject_id;
    Domain domain = Domain::source;
    double sample_rate_hz = 0.0;
    Array channels;           // (C, T)
    std::vector<int> labels;  // per-timestep class ids; empty when unlabeled

    std::size_t channel_count() const { return channels.dim(0); }
    std::size_t length() const { return channels.dim(1); }
    bool labeled() const { return !labels.empty(); }
};

struct Window {
    Array data;  // (C, W)
    std::optional<int> label;
    std::string subject_id;
    Domain domain = Domain::source;
    Split split = Split::none;
    std::size_t offset = 0;  // sample offset in the originating recording
};

struct WindowedDataset {
    std::vector<Window> windows;
    std::size_t num_classes = 0;
    std::size_t channel_count = 0;
    std::size_t window_len = 0;

    std::size_t size() const { return windows.size(); }
};

struct SplitSpec {
    double train = 0.60;
    double val = 0.20;
    double test = 0.20;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0)) {
            throw ContractViolation("SplitSpec: fractions must be positive");
        }
        if (std::abs(train + val + test - 1.0) > 1e-9) {
            throw ContractViolation("SplitSpec: fractions must sum to 1");
        }
    }
};

// ---------------------------------------------------------------------------
// preprocessing

/// Per-channel sliding median with replicate padding; shape preserved.
inline SensorRecording median_filter(const SensorRecording& rec, std::size_t kernel_size) {
    if (kernel_size % 2 == 0) {
        throw ContractViolation("median_filter: kernel_size must be odd, got " +
                                std::to_string(kernel_size));
    }
    if (kernel_size > rec.length()) {
        throw ContractViolation("median_filter: kernel_size " + std::to_string(kernel_size) +
                                " exceeds recording length " + std::to_string(rec.length()));
    }
    SensorRecording out = rec;
    const std::size_t C = rec.channel_count();
    const std::size_t T = rec.length();
    const std::size_t half = kernel_size / 2;
    std::vector<double> buf(kernel_size);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t k = 0; k < kernel_size; ++k) {
                const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t + k) -
                                           static_cast<std::ptrdiff_t>(half);
                const std::size_t clamped =
                    idx < 0 ? 0
                            : (idx >= static_cast<std::ptrdiff_t>(T) ? T - 1
                                                                     : static_cast<std::size_t>(idx));
                buf[k] = rec.channels.at(c, clamped);
            }
            std::nth_element(buf.begin(), buf.begin() + kernel_size / 2, buf.end());
            out.channels.at(c, t) = buf[kernel_size / 2];
        }
    }
    return out;
}

/// Most frequent id; ties break to the lowest class id.
inline int majority_vote(std::span<const int> labels) {
    if (labels.empty()) throw ContractViolation("majority_vote: empty label list");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    int best = labels[0];
    std::size_t best_count = 0;
    for (const auto& [label, count] : counts) {  // map order makes ties pick the lowest id
        if (count > best_count) {
            best = label;
            best_count = count;
        }
    }
    return best;
}

struct WindowingResult {
    std::vector<Window> windows;
    std::vector<std::string> warnings;
};

/// Sliding windows at stride max(1, round(W * (1 - overlap))). Window labels
/// come from majority vote over the covered timesteps.
inline WindowingResult make_windows(const SensorRecording& rec, std::size_t window_len,
                                    double overlap_fraction) {
    WindowingResult result;
    const std::size_t T = rec.length();
    if (window_len > T) {
        result.warnings.push_back("make_windows: window length " + std::to_string(window_len) +
                                  " exceeds recording length " + std::to_string(T) +
                                  " for subject " + rec.subject_id + "; no windows produced");
        return result;
    }
    if (window_len == 0) throw ContractViolation("make_windows: window length must be positive");
    const auto stride = static_cast<std::size_t>(std::max<long>(
        1, std::lround(static_cast<double>(window_len) * (1.0 - overlap_fraction))));
    const std::size_t C = rec.channel_count();
    for (std::size_t off = 0; off + window_len <= T; off += stride) {
        Window w;
        w.subject_id = rec.subject_id;
        w.domain = rec.domain;
        w.offset = off;
        w.data = Array({C, window_len});
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < window_len; ++i) {
                w.data.at(c, i) = rec.channels.at(c, off + i);
            }
        }
        if (rec.labeled()) {
            w.label = majority_vote(
                std::span<const int>(rec.labels.data() + off, window_len));
        }
        result.windows.push_back(std::move(w));
    }
    return result;
}

// ---------------------------------------------------------------------------
// min-max scaling

struct ChannelScaler {
    std::vector<double> mins;
    std::vector<double> maxs;

    double apply_value(std::size_t channel, double v) const {
        const double lo = mins[channel];
        const double hi = maxs[channel];
        if (hi == lo) return 0.0;  // degenerate constant channel maps to 0
        return (v - lo) / (hi - lo);
    }
};

/// Per-channel min/max over the given window subset (all windows when empty).
inline ChannelScaler fit_minmax(const WindowedDataset& ds,
                                const std::vector<std::size_t>& subset = {}) {
    if (ds.windows.empty()) throw ContractViolation("fit_minmax: empty dataset");
    const std::size_t C = ds.channel_count;
    ChannelScaler s;
    s.mins.assign(C, std::numeric_limits<double>::infinity());
    s.maxs.assign(C, -std::numeric_limits<double>::infinity());
    auto scan = [&](const Window& w) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < ds.window_len; ++i) {
                const double v = w.data.at(c, i);
                s.mins[c] = std::min(s.mins[c], v);
                s.maxs[c] = std::max(s.maxs[c], v);
            }
        }
    };
    if (subset.empty()) {
        for (const Window& w : ds.windows) scan(w);
    } else {
        for (std::size_t i : subset) scan(ds.windows.at(i));
    }
    return s;
}

inline WindowedDataset apply_minmax(WindowedDataset ds, const ChannelScaler& s) {
    if (s.mins.size() != ds.channel_count) {
        throw ContractViolation("apply_minmax: scaler has " + std::to_string(s.mins.size()) +
                                " channels, dataset has " + std::to_string(ds.channel_count));
    }
    for (Window& w : ds.windows) {
        for (std::size_t c = 0; c < ds.channel_count; ++c) {
            for (std::size_t i = 0; i < ds.window_len; ++i) {
                w.data.at(c, i) = s.apply_value(c, w.data.at(c, i));
            }
        }
    }
    return ds;
}

/// Fit on the dataset itself and rescale it; callers that must freeze source
/// training statistics fit on that subset and use apply_minmax elsewhere.
inline std::pair<WindowedDataset, ChannelScaler> minmax_normalize(WindowedDataset ds) {
    ChannelScaler s = fit_minmax(ds);
    WindowedDataset out = apply_minmax(std::move(ds), s);
    return {std::move(out), std::move(s)};
}

// ---------------------------------------------------------------------------
// splitting

struct SplitResult {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::vector<std::string> warnings;
};

/// Deterministic stratified 3-way split over window indices. Classes are
/// allocated by largest remainder so the partition is exact; a class with
/// fewer windows than splits goes wholly to train.
inline SplitResult split_dataset(const WindowedDataset& ds, const SplitSpec& spec) {
    if (ds.windows.empty()) throw ContractViolation("split_dataset: empty dataset");
    spec.validate();
    // group indices by label; unlabeled windows form their own stratum (-1)
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
        groups[ds.windows[i].label.value_or(-1)].push_back(i);
    }
    SplitResult result;
    Rng rng(derive_seed(spec.seed, "split"));
    for (auto& [label, idx] : groups) {
        rng.shuffle(idx);
        if (idx.size() < 3) {
            result.warnings.push_back("split: class " + std::to_string(label) + " has only " +
                                      std::to_string(idx.size()) +
                                      " window(s); assigned wholly to train");
            result.train.insert(result.train.end(), idx.begin(), idx.end());
            continue;
        }
        const double n = static_cast<double>(idx.size());
        const double quotas[3] = {spec.train * n, spec.val * n, spec.test * n};
        std::size_t counts[3];
        double fracs[3];
        std::size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            counts[k] = static_cast<std::size_t>(std::floor(quotas[k]));
            fracs[k] = quotas[k] - std::floor(quotas[k]);
            assigned += counts[k];
        }
        // distribute the remainder by largest fractional part, train first on ties
        std::vector<int> order = {0, 1, 2};
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return fracs[a] > fracs[b]; });
        for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) {
            counts[order[r % 3]] += 1;
        }
        std::size_t pos = 0;
        for (std::size_t k = 0; k < counts[0]; ++k) result.train.push_back(idx[pos++]);
        for (std::size_t k = 0; k < counts[1]; ++k) result.val.push_back(idx[pos++]);
        for (std::size_t k = 0; k < counts[2]; ++k) result.test.push_back(idx[pos++]);
    }
    std::sort(result.train.begin(), result.train.end());
    std::sort(result.val.begin(), result.val.end());
    std::sort(result.test.begin(), result.test.end());
    return result;
}

inline void tag_splits(WindowedDataset& ds, const SplitResult& split) {
    for (std::size_t i : split.train) ds.windows[i].split = Split::train;
    for (std::size_t i : split.val) ds.windows[i].split = Split::val;
    for (std::size_t i : split.test) ds.windows[i].split = Split::test;
}

// ---------------------------------------------------------------------------
// batch assembly

inline Array windows_to_batch(const WindowedDataset& ds, std::span<const std::size_t> indices) {
    Array batch({indices.size(), ds.channel_count, ds.window_len});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Window& w = ds.windows[indices[b]];
        std::copy(w.data.values().begin(), w.data.values().end(), batch.row3(b, 0));
    }
    return batch;
}

inline std::vector<std::size_t> indices_with_split(const WindowedDataset& ds, Split s) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
        if (ds.windows[i].split == s) out.push_back(i);
    }
    return out;
}

inline std::vector<std::size_t> all_indices(const WindowedDataset& ds) {
    std::vector<std::size_t> out(ds.windows.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
}

// ---------------------------------------------------------------------------
// recordings CSV  (header: subject,domain,timestamp,label,ch_0,...,ch_{C-1})

inline std::vector<SensorRecording> parse_recordings_csv(std::istream& in,
                                                         const std::string& name) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(name, 1, "empty file");
    const auto header = split_csv_line(line);
    if (header.size() < 5 || header[0] != "subject" || header[1] != "domain" ||
        header[2] != "timestamp" || header[3] != "label") {
        throw ParseError(name, 1,
                         "expected header subject,domain,timestamp,label,ch_0,...");
    }
    const std::size_t C = header.size() - 4;
    for (std::size_t c = 0; c < C; ++c) {
        if (header[4 + c] != "ch_" + std::to_string(c)) {
            throw ParseError(name, 1, "expected channel column ch_" + std::to_string(c) +
                                          ", got '" + header[4 + c] + "'");
        }
    }

    struct Accum {
        Domain domain;
        std::vector<double> timestamps;
        std::vector<std::vector<double>> samples;  // per row, C values
        std::vector<int> labels;
        bool labeled = false;
        std::size_t first_line = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Accum> subjects;

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ParseError(name, lineno,
                             "expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        }
        const std::string subject = fields[0];
        Domain dom;
        try {
            dom = domain_from_string(fields[1]);
        } catch (const ParseError& e) {
            throw ParseError(name, lineno, e.what());
        }
        double ts;
        try {
            ts = std::stod(fields[2]);
        } catch (...) {
            throw ParseError(name, lineno, "bad timestamp '" + fields[2] + "'");
        }
        auto [it, fresh] = subjects.try_emplace(subject);
        Accum& acc = it->second;
        if (fresh) {
            order.push_back(subject);
            acc.domain = dom;
            acc.labeled = !trim(fields[3]).empty();
            acc.first_line = lineno;
        } else {
            if (acc.domain != dom) {
                throw ParseError(name, lineno, "subject '" + subject + "' changes domain");
            }
            if (!acc.timestamps.empty() && ts <= acc.timestamps.back()) {
                throw ParseError(name, lineno,
                                 "timestamps for subject '" + subject + "' not increasing");
            }
            if (acc.labeled != !trim(fields[3]).empty()) {
                throw ParseError(name, lineno,
                                 "subject '" + subject + "' mixes labeled and unlabeled rows");
            }
        }
        if (acc.labeled) {
            int label;
            try {
                label = std::stoi(fields[3]);
            } catch (...) {
                throw ParseError(name, lineno, "bad label '" + fields[3] + "'");
            }
            if (label < 0) throw ParseError(name, lineno, "negative label");
            acc.labels.push_back(label);
        }
        acc.timestamps.push_back(ts);
        std::vector<double> row(C);
        for (std::size_t c = 0; c < C; ++c) {
            try {
                row[c] = std::stod(fields[4 + c]);
            } catch (...) {
                throw ParseError(name, lineno, "bad value '" + fields[4 + c] + "' in ch_" +
                                                   std::to_string(c));
            }
            if (!std::isfinite(row[c])) {
                throw ParseError(name, lineno, "non-finite value in ch_" + std::to_string(c));
            }
        }
        acc.samples.push_back(std::move(row));
    }

    std::vector<SensorRecording> out;
    for (const std::string& subject : order) {
        Accum& acc = subjects[subject];
        const std::size_t T = acc.samples.size();
        SensorRecording rec;
        rec.subject_id = subject;
        rec.domain = acc.domain;
        rec.labels = std::move(acc.labels);
        rec.channels = Array({C, T});
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t c = 0; c < C; ++c) rec.channels.at(c, t) = acc.samples[t][c];
        }
        if (T >= 2) {
            std::vector<double> dts;
            dts.reserve(T - 1);
            for (std::size_t t = 1; t < T; ++t) {
                dts.push_back(acc.timestamps[t] - acc.timestamps[t - 1]);
            }
            std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
            const double dt = dts[dts.size() / 2];
            rec.sample_rate_hz = dt > 0.0 ? 1.0 / dt : 0.0;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<SensorRecording> read_recordings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_recordings_csv(in, path);
}

inline void write_recordings_csv(std::ostream& out, const std::vector<SensorRecording>& recs) {
    if (recs.empty()) throw ContractViolation("write_recordings_csv: no recordings");
    const std::size_t C = recs.front().channel_count();
    out << "subject,domain,timestamp,label";
    for (std::size_t c = 0; c < C; ++c) out << ",ch_" << c;
    out << "\n";
    for (const SensorRecording& rec : recs) {
        const double dt = rec.sample_rate_hz > 0.0 ? 1.0 / rec.sample_rate_hz : 1.0;
        for (std::size_t t = 0; t < rec.length(); ++t) {
            out << rec.subject_id << "," << to_string(rec.domain) << ","
                << format_double(static_cast<double>(t) * dt) << ",";
            if (rec.labeled()) out << rec.labels[t];
            for (std::size_t c = 0; c < C; ++c) {
                out << "," << format_double(rec.channels.at(c, t));
            }
            out << "\n";
        }
    }
}

inline void write_recordings_csv(const std::string& path,
                                 const std::vector<SensorRecording>& recs) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_recordings_csv(out, recs);
}

// ---------------------------------------------------------------------------
// windowed dataset files: <prefix>.meta.json + <prefix>.manifest.csv +
// <prefix>.data.f64 (raw little-endian float64, window-major, C*W row-major)

inline void write_windowed(const std::string& prefix, const WindowedDataset& ds,
                           const ChannelScaler* scaler = nullptr) {
    nlohmann::json meta;
    meta["format"] = "udar-windows";
    meta["version"] = 1;
    meta["channels"] = ds.channel_count;
    meta["window_len"] = ds.window_len;
    meta["num_classes"] = ds.num_classes;
    meta["window_count"] = ds.windows.size();
    if (scaler) {
        meta["scaler"] = {{"mins", scaler->mins}, {"maxs", scaler->maxs}};
    }
    {
        std::ofstream out(prefix + ".meta.json");
        if (!out) throw IoError("cannot write " + prefix + ".meta.json");
        out << meta.dump(2) << "\n";
    }
    {
        std::ofstream out(prefix + ".manifest.csv");
        if (!out) throw IoError("cannot write " + prefix + ".manifest.csv");
        out << "window_id,subject,domain,split,label,offset\n";
        for (std::size_t i = 0; i < ds.windows.size(); ++i) {
            const Window& w = ds.windows[i];
            out << i << "," << w.subject_id << "," << to_string(w.domain) << ","
                << to_string(w.split) << ",";
            if (w.label) out << *w.label;
            out << "," << w.offset << "\n";
        }
    }
    {
        std::ofstream out(prefix + ".data.f64", std::ios::binary);
        if (!out) throw IoError("cannot write " + prefix + ".data.f64");
        for (const Window& w : ds.windows) {
            out.write(reinterpret_cast<const char*>(w.data.data()),
                      static_cast<std::streamsize>(w.data.size() * sizeof(double)));
        }
    }
}

struct LoadedWindows {
    WindowedDataset dataset;
    std::optional<ChannelScaler> scaler;
};

inline LoadedWindows read_windowed(const std::string& prefix) {
    std::ifstream meta_in(prefix + ".meta.json");
    if (!meta_in) throw IoError("cannot open " + prefix + ".meta.json");
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(prefix + ".meta.json: " + e.what());
    }
    if (meta.value("format", "") != "udar-windows") {
        throw FormatError(prefix + ".meta.json: not a udar-windows file");
    }
    if (meta.value("version", 0) != 1) {
        throw FormatError(prefix + ".meta.json: unsupported version " +
                          std::to_string(meta.value("version", 0)));
    }
    LoadedWindows result;
    WindowedDataset& ds = result.dataset;
    ds.channel_count = meta.at("channels").get<std::size_t>();
    ds.window_len = meta.at("window_len").get<std::size_t>();
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
    const auto count = meta.at("window_count").get<std::size_t>();
    if (meta.contains("scaler")) {
        ChannelScaler s;
        s.mins = meta["scaler"]["mins"].get<std::vector<double>>();
        s.maxs = meta["scaler"]["maxs"].get<std::vector<double>>();
        result.scaler = std::move(s);
    }

    std::ifstream manifest(prefix + ".manifest.csv");
    if (!manifest) throw IoError("cannot open " + prefix + ".manifest.csv");
    std::string line;
    std::getline(manifest, line);  // header
    std::size_t lineno = 1;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 6) {
            throw ParseError(prefix + ".manifest.csv", lineno, "expected 6 fields");
        }
        Window w;
        w.subject_id = fields[1];
        w.domain = domain_from_string(fields[2]);
        w.split = split_from_string(fields[3]);
        if (!trim(fields[4]).empty()) w.label = std::stoi(fields[4]);
        w.offset = static_cast<std::size_t>(std::stoull(fields[5]));
        ds.windows.push_back(std::move(w));
    }
    if (ds.windows.size() != count) {
        throw FormatError(prefix + ": manifest lists " + std::to_string(ds.windows.size()) +
                          " windows, meta says " + std::to_string(count));
    }

    std::ifstream data(prefix + ".data.f64", std::ios::binary);
    if (!data) throw IoError("cannot open " + prefix + ".data.f64");
    const std::size_t per_window = ds.channel_count * ds.window_len;
    for (Window& w : ds.windows) {
        w.data = Array({ds.channel_count, ds.window_len});
        data.read(reinterpret_cast<char*>(w.data.data()),
                  static_cast<std::streamsize>(per_window * sizeof(double)));
        if (static_cast<std::size_t>(data.gcount()) != per_window * sizeof(double)) {
            throw FormatError(prefix + ".data.f64: truncated");
        }
    }
    return result;
}

}  // namespace udar
