#pragma once

// Synthetic event streams: per-second feature vectors with query-conditioned
// signal during event spans, plus the window/target rules used for training.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanact/activation.hpp"
#include "spanact/corruption.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/error.hpp"

namespace spanact {

[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct StreamSpec {
    std::string id;
    std::int64_t length_s = 0;
    int query_id = 0;
    std::string task = "single";
    std::vector<EventSpan> events; // every event; label == query_id marks targets
    std::size_t feature_dim = 8;
    double snr = 3.0;                 // signal amplitude over unit noise; inf = noiseless
    std::size_t ramp = 3;             // fade-in/out length in seconds
    std::uint64_t template_seed = 1;  // shared by every stream of a suite
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<EventSpan> target_events() const {
        std::vector<EventSpan> out;
        for (const auto& e : events) {
            if (e.label == query_id) {
                out.push_back(e);
            }
        }
        return out;
    }
};

struct StreamSample {
    StreamSpec spec;
    FeatureBuffer features;
    ActivationSequence activation_gt;
};

inline void validate(const StreamSpec& spec) {
    if (spec.length_s < 1) {
        throw InvalidArgument("stream length must be >= 1");
    }
    if (spec.feature_dim < 2) {
        throw InvalidArgument("feature_dim must be >= 2");
    }
    if (spec.query_id < 0) {
        throw InvalidArgument("query id must be >= 0");
    }
    for (std::size_t i = 0; i < spec.events.size(); ++i) {
        const auto& e = spec.events[i];
        validate(e);
        if (e.end_s >= spec.length_s) {
            throw InvalidArgument("event extends past stream end");
        }
        if (i > 0 && spec.events[i - 1].end_s >= e.start_s) {
            throw InvalidArgument("events must be sorted and non-overlapping");
        }
    }
}

[[nodiscard]] inline ActivationSequence rasterize(const std::vector<EventSpan>& events, std::int64_t length) {
    if (length < 0) {
        throw InvalidArgument("rasterize: negative length");
    }
    ActivationSequence seq(static_cast<std::size_t>(length), ActivationToken::Inactive);
    for (const auto& e : events) {
        validate(e);
        if (e.end_s >= length) {
            throw InvalidArgument("rasterize: span [" + std::to_string(e.start_s) + ", " + std::to_string(e.end_s) +
                                  "] outside [0, " + std::to_string(length) + ")");
        }
        std::fill(seq.begin() + e.start_s, seq.begin() + e.end_s + 1, ActivationToken::Active);
    }
    return seq;
}

// Unit-norm signal direction for a query; identical for every stream sharing `template_seed`.
[[nodiscard]] inline std::vector<double> query_template(std::uint64_t template_seed, int query_id, std::size_t dim) {
    Rng rng(mix_seed(template_seed, static_cast<std::uint64_t>(query_id)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

// Signal envelope of an event at second s: ramps up over the first `ramp`
// seconds and down over the last `ramp`.
[[nodiscard]] inline double event_envelope(const EventSpan& e, std::int64_t s, std::size_t ramp) {
    if (s < e.start_s || s > e.end_s) {
        return 0.0;
    }
    if (ramp == 0) {
        return 1.0;
    }
    const double r = static_cast<double>(ramp);
    const double up = static_cast<double>(s - e.start_s + 1) / r;
    const double down = static_cast<double>(e.end_s - s + 1) / r;
    return std::min({1.0, up, down});
}

[[nodiscard]] inline FeatureBuffer emit_features(const StreamSpec& spec) {
    validate(spec);
    const bool noiseless = std::isinf(spec.snr);
    const double noise = noiseless ? 0.0 : 1.0;
    const double amp = noiseless ? 1.0 : spec.snr;
    Rng rng(mix_seed(spec.seed, 0x5eed));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = spec.feature_dim;
    FeatureBuffer out(d);
    std::vector<double> row(d);
    std::vector<std::vector<double>> templates;
    std::vector<int> template_ids;
    for (const auto& e : spec.events) {
        if (std::find(template_ids.begin(), template_ids.end(), e.label) == template_ids.end()) {
            template_ids.push_back(e.label);
            templates.push_back(query_template(spec.template_seed, e.label, d));
        }
    }
    for (std::int64_t s = 0; s < spec.length_s; ++s) {
        for (auto& x : row) {
            x = noise * normal(rng);
        }
        for (const auto& e : spec.events) {
            const double env = event_envelope(e, s, spec.ramp);
            if (env == 0.0 || amp == 0.0) {
                continue;
            }
            const auto idx = static_cast<std::size_t>(
                std::find(template_ids.begin(), template_ids.end(), e.label) - template_ids.begin());
            for (std::size_t i = 0; i < d; ++i) {
                row[i] += amp * env * templates[idx][i];
            }
        }
        out.push_back(row);
    }
    return out;
}

[[nodiscard]] inline StreamSample make_sample(StreamSpec spec) {
    StreamSample s;
    s.features = emit_features(spec);
    s.activation_gt = rasterize(spec.target_events(), spec.length_s);
    s.spec = std::move(spec);
    return s;
}

// ---------------------------------------------------------------------------
// Training windows and targets
// ---------------------------------------------------------------------------

struct TrainingWindow {
    std::int64_t start = 0;
    std::int64_t length = 0;
};

// Window length uniform in [min(L, 8), min(L, 256)], start uniform in [0, L - len].
[[nodiscard]] inline TrainingWindow sample_training_window(std::int64_t length, Rng& rng) {
    if (length < 1) {
        throw InvalidArgument("sample_training_window: L must be >= 1");
    }
    const std::int64_t lo = std::min<std::int64_t>(length, 8);
    const std::int64_t hi = std::min<std::int64_t>(length, 256);
    std::uniform_int_distribution<std::int64_t> len_dist(lo, hi);
    const std::int64_t len = len_dist(rng);
    std::uniform_int_distribution<std::int64_t> start_dist(0, length - len);
    return {start_dist(rng), len};
}

// Uniform integer second in (prev_end, cur_start].
[[nodiscard]] inline std::int64_t multi_event_cutoff(std::int64_t prev_end, std::int64_t cur_start, Rng& rng) {
    if (prev_end >= cur_start) {
        throw InvalidArgument("multi_event_cutoff: previous event must end before the current one starts");
    }
    std::uniform_int_distribution<std::int64_t> dist(prev_end + 1, cur_start);
    return dist(rng);
}

// Target over seconds [start, start + length): Active where a target event overlaps.
[[nodiscard]] inline ActivationSequence build_target(std::int64_t start, std::int64_t length,
                                                     const std::vector<EventSpan>& targets) {
    if (length < 0 || start < 0) {
        throw InvalidArgument("build_target: invalid window");
    }
    ActivationSequence seq(static_cast<std::size_t>(length), ActivationToken::Inactive);
    for (const auto& e : targets) {
        const std::int64_t lo = std::max(e.start_s, start);
        const std::int64_t hi = std::min(e.end_s, start + length - 1);
        for (std::int64_t s = lo; s <= hi; ++s) {
            seq[static_cast<std::size_t>(s - start)] = ActivationToken::Active;
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct SuiteConfig {
    std::size_t streams = 60;
    std::vector<std::string> tasks{"single", "multi", "short"};
    std::int64_t min_length = 48;
    std::int64_t max_length = 72;
    int num_queries = 4;
    std::size_t feature_dim = 8;
    double snr = 3.0;
    std::size_t ramp = 3;
    double distractor_rate = 0.5;
    std::uint64_t template_seed = 1;
    std::uint64_t seed = 7;
};

inline void validate(const SuiteConfig& cfg) {
    if (cfg.tasks.empty()) {
        throw InvalidArgument("suite needs at least one task");
    }
    for (const auto& t : cfg.tasks) {
        if (t != "single" && t != "multi" && t != "short") {
            throw InvalidArgument("unknown task '" + t + "' (expected single, multi or short)");
        }
    }
    if (cfg.min_length < 32 || cfg.max_length < cfg.min_length) {
        throw InvalidArgument("suite lengths must satisfy 32 <= min_length <= max_length");
    }
    if (cfg.num_queries < 2) {
        throw InvalidArgument("suite needs at least two queries");
    }
    if (cfg.feature_dim < 2) {
        throw InvalidArgument("feature_dim must be >= 2");
    }
    if (!(cfg.snr >= 0.0) || !(cfg.distractor_rate >= 0.0 && cfg.distractor_rate <= 1.0)) {
        throw InvalidArgument("snr must be >= 0 and distractor_rate in [0, 1]");
    }
}

namespace detail {

// Place an event of `len` seconds with at least `gap` free seconds to every existing event.
inline bool place_event(std::vector<EventSpan>& events, std::int64_t len, std::int64_t gap, std::int64_t length,
                        int label, Rng& rng) {
    const std::int64_t lo = 2;
    const std::int64_t hi = length - len - 2;
    if (hi < lo) {
        return false;
    }
    std::uniform_int_distribution<std::int64_t> start_dist(lo, hi);
    for (int attempt = 0; attempt < 200; ++attempt) {
        const std::int64_t s = start_dist(rng);
        const EventSpan cand{s, s + len - 1, label};
        const bool clear = std::all_of(events.begin(), events.end(), [&](const EventSpan& e) {
            return cand.end_s + gap < e.start_s || e.end_s + gap < cand.start_s;
        });
        if (clear) {
            events.push_back(cand);
            return true;
        }
    }
    return false;
}

} // namespace detail

[[nodiscard]] inline StreamSpec make_stream_spec(const SuiteConfig& cfg, std::size_t index) {
    validate(cfg);
    const std::uint64_t seed = mix_seed(cfg.seed, index);
    Rng rng(seed);
    StreamSpec spec;
    spec.id = "s" + std::to_string(index);
    spec.task = cfg.tasks[index % cfg.tasks.size()];
    spec.feature_dim = cfg.feature_dim;
    spec.snr = cfg.snr;
    spec.ramp = cfg.ramp;
    spec.template_seed = cfg.template_seed;
    spec.seed = seed;
    std::uniform_int_distribution<std::int64_t> len_dist(cfg.min_length, cfg.max_length);
    spec.length_s = len_dist(rng);
    std::uniform_int_distribution<int> query_dist(0, cfg.num_queries - 1);
    spec.query_id = query_dist(rng);

    auto uniform = [&](std::int64_t a, std::int64_t b) { return std::uniform_int_distribution<std::int64_t>(a, b)(rng); };
    std::vector<EventSpan> events;
    if (spec.task == "single") {
        detail::place_event(events, uniform(6, 16), 8, spec.length_s, spec.query_id, rng);
    } else if (spec.task == "multi") {
        const auto n = uniform(2, 3);
        for (std::int64_t i = 0; i < n; ++i) {
            detail::place_event(events, uniform(5, 12), 8, spec.length_s, spec.query_id, rng);
        }
    } else {
        const auto n = uniform(1, 2);
        for (std::int64_t i = 0; i < n; ++i) {
            detail::place_event(events, uniform(2, 5), 8, spec.length_s, spec.query_id, rng);
        }
    }
    std::bernoulli_distribution distract(cfg.distractor_rate);
    if (distract(rng)) {
        int other = query_dist(rng);
        if (other == spec.query_id) {
            other = (other + 1) % cfg.num_queries;
        }
        detail::place_event(events, uniform(5, 12), 3, spec.length_s, other, rng);
    }
    std::sort(events.begin(), events.end(), [](const EventSpan& a, const EventSpan& b) { return a.start_s < b.start_s; });
    spec.events = std::move(events);
    return spec;
}

[[nodiscard]] inline std::vector<StreamSample> generate_suite(const SuiteConfig& cfg) {
    std::vector<StreamSample> out;
    out.reserve(cfg.streams);
    for (std::size_t i = 0; i < cfg.streams; ++i) {
        out.push_back(make_sample(make_stream_spec(cfg, i)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL corpus
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json to_json(const StreamSample& s) {
    nlohmann::json events = nlohmann::json::array();
    nlohmann::json distractors = nlohmann::json::array();
    for (const auto& e : s.spec.events) {
        if (e.label == s.spec.query_id) {
            events.push_back({e.start_s, e.end_s});
        } else {
            distractors.push_back({e.start_s, e.end_s, e.label});
        }
    }
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t r = 0; r < s.features.rows(); ++r) {
        const auto row = s.features.row(r);
        features.push_back(std::vector<double>(row.begin(), row.end()));
    }
    nlohmann::json j;
    j["id"] = s.spec.id;
    j["length_s"] = s.spec.length_s;
    j["query_id"] = s.spec.query_id;
    j["task"] = s.spec.task;
    j["events"] = events;
    j["distractors"] = distractors;
    j["snr"] = std::isinf(s.spec.snr) ? nlohmann::json("inf") : nlohmann::json(s.spec.snr);
    j["ramp"] = s.spec.ramp;
    j["template_seed"] = s.spec.template_seed;
    j["seed"] = s.spec.seed;
    j["features"] = features;
    return j;
}

[[nodiscard]] inline StreamSample sample_from_json(const nlohmann::json& j) {
    StreamSample s;
    auto& spec = s.spec;
    spec.id = j.at("id").get<std::string>();
    spec.length_s = j.at("length_s").get<std::int64_t>();
    spec.query_id = j.at("query_id").get<int>();
    spec.task = j.value("task", std::string("single"));
    for (const auto& e : j.at("events")) {
        spec.events.push_back({e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>(), spec.query_id});
    }
    if (j.contains("distractors")) {
        for (const auto& e : j.at("distractors")) {
            spec.events.push_back({e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>(), e.at(2).get<int>()});
        }
    }
    std::sort(spec.events.begin(), spec.events.end(),
              [](const EventSpan& a, const EventSpan& b) { return a.start_s < b.start_s; });
    const auto& snr = j.value("snr", nlohmann::json(1.5));
    spec.snr = snr.is_string() ? std::numeric_limits<double>::infinity() : snr.get<double>();
    spec.ramp = j.value("ramp", std::size_t{3});
    spec.template_seed = j.value("template_seed", std::uint64_t{1});
    spec.seed = j.value("seed", std::uint64_t{0});
    const auto& feats = j.at("features");
    if (feats.empty()) {
        throw InvalidArgument("stream " + spec.id + " has no features");
    }
    spec.feature_dim = feats.at(0).size();
    s.features = FeatureBuffer(spec.feature_dim);
    for (const auto& row : feats) {
        s.features.push_back(row.get<std::vector<double>>());
    }
    if (static_cast<std::int64_t>(s.features.rows()) != spec.length_s) {
        throw InvalidArgument("stream " + spec.id + ": feature rows differ from length_s");
    }
    validate(spec);
    s.activation_gt = rasterize(spec.target_events(), spec.length_s);
    return s;
}

inline void write_corpus(const std::string& path, const std::vector<StreamSample>& corpus) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write corpus " + path);
    }
    for (const auto& s : corpus) {
        out << to_json(s).dump() << '\n';
    }
}

[[nodiscard]] inline std::vector<StreamSample> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open corpus " + path);
    }
    std::vector<StreamSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (out.empty()) {
        throw ConfigError("corpus " + path + " is empty");
    }
    return out;
}

} // namespace spanact
