#pragma once

// Corpus-level evaluation, permutation baseline, ablation tables and config parsing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanact/activation.hpp"
#include "spanact/baseline_ar.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/engine.hpp"
#include "spanact/error.hpp"
#include "spanact/metrics.hpp"
#include "spanact/streamgen.hpp"
#include "spanact/training.hpp"

namespace spanact {

inline constexpr int kReportVersion = 1;

enum class ModelKind { Oracle, Neural, Ar };

struct EvalModel {
    ModelKind kind = ModelKind::Oracle;
    std::string name = "oracle";
    OracleDenoiser::Params oracle{};
    const Denoiser* denoiser = nullptr;
    const ScoreModel* scorer = nullptr;

    static EvalModel make_oracle(OracleDenoiser::Params p, std::string name = "oracle") {
        EvalModel m;
        m.kind = ModelKind::Oracle;
        m.oracle = p;
        m.name = std::move(name);
        return m;
    }
    static EvalModel make_neural(const Denoiser& d, std::string name = "denoiser") {
        EvalModel m;
        m.kind = ModelKind::Neural;
        m.denoiser = &d;
        m.name = std::move(name);
        return m;
    }
    static EvalModel make_ar(const ScoreModel& s, std::string name = "ar") {
        EvalModel m;
        m.kind = ModelKind::Ar;
        m.scorer = &s;
        m.name = std::move(name);
        return m;
    }
};

struct EvalOptions {
    EngineConfig engine{};
    SegmentMatchConfig match{};
    bool keep_traces = false;
};

struct StreamOutcome {
    std::string id;
    std::string task;
    ActivationSequence decisions;
    std::vector<TriggerRecord> triggers;
    std::vector<StepTrace> traces;
    std::size_t frames = 0;
    std::size_t cap_events = 0;
    double retention_ms = 0.0;
    double denoise_ms = 0.0;
    std::size_t predict_calls = 0;
};

struct TaskScore {
    std::string task;
    std::size_t streams = 0;
    SegmentCounts segments;
    SegmentCounts frames;
    double f1 = 0.0;
    double frame_f1 = 0.0;
};

struct LatencyStats {
    std::size_t frames = 0;
    double retention_ms_per_frame = 0.0;
    double denoise_ms_per_frame = 0.0;
    double frame_ms = 0.0;
    double predict_calls_per_frame = 0.0;
    double ms_per_predict = 0.0;
};

struct TriggerStats {
    std::size_t issued = 0;
    std::size_t inside_event = 0;
    std::size_t outside_event = 0;
    std::size_t events = 0;
    std::size_t events_hit = 0;
    double mean_onset_delay_s = 0.0;
};

struct MetricReport {
    std::string model;
    nlohmann::json config;
    std::vector<TaskScore> tasks;
    double mean_f1 = 0.0;
    double frame_f1 = 0.0;
    TransitionHistogram transitions;
    TriggerStats triggers;
    LatencyStats latency; // wall-clock; kept out of the deterministic report JSON
};

// ---------------------------------------------------------------------------
// Per-stream runners
// ---------------------------------------------------------------------------

[[nodiscard]] inline StreamOutcome run_stream(const StreamSample& sample, const EvalModel& model,
                                              const EvalOptions& opts) {
    StreamOutcome out;
    out.id = sample.spec.id;
    out.task = sample.spec.task;
    const std::size_t d = sample.features.dim();
    if (model.kind == ModelKind::Ar) {
        if (model.scorer == nullptr) {
            throw InvalidArgument("AR evaluation needs a score model");
        }
        if (model.scorer->feature_dim() != d) {
            throw InvalidArgument("score model feature dimension differs from corpus");
        }
        auto st = start_ar_stream(opts.engine, sample.spec.query_id, d, model.scorer);
        for (std::size_t r = 0; r < sample.features.rows(); ++r) {
            const auto f = ar_step(st, sample.features.row(r), *model.scorer);
            out.denoise_ms += f.predict_ms;
            out.predict_calls += 1;
        }
        out.decisions = st.decisions;
        out.triggers = st.context_log;
        out.frames = sample.features.rows();
        out.cap_events = st.cap_events;
        return out;
    }
    std::unique_ptr<OracleDenoiser> oracle;
    const Denoiser* den = model.denoiser;
    if (model.kind == ModelKind::Oracle) {
        auto p = model.oracle;
        p.seed = mix_seed(p.seed, std::hash<std::string>{}(sample.spec.id));
        oracle = std::make_unique<OracleDenoiser>(sample.activation_gt, d, p);
        den = oracle.get();
    }
    if (den == nullptr) {
        throw InvalidArgument("neural evaluation needs a denoiser");
    }
    if (den->feature_dim() != d) {
        throw InvalidArgument("denoiser feature dimension (" + std::to_string(den->feature_dim()) +
                              ") differs from corpus (" + std::to_string(d) + ")");
    }
    auto st = start_stream(opts.engine, sample.spec.query_id, d, den);
    for (std::size_t r = 0; r < sample.features.rows(); ++r) {
        auto f = ingest_frame(st, sample.features.row(r), *den);
        out.retention_ms += f.trace.retention_ms;
        out.denoise_ms += f.trace.denoise_ms();
        out.predict_calls += f.trace.predict_calls;
        if (opts.keep_traces) {
            out.traces.push_back(std::move(f.trace));
        }
    }
    out.decisions = finish_stream(st);
    out.triggers = st.context_log;
    out.frames = sample.features.rows();
    out.cap_events = st.cap_events;
    return out;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> task_order(const std::vector<StreamSample>& corpus) {
    std::vector<std::string> tasks;
    for (const auto& s : corpus) {
        if (std::find(tasks.begin(), tasks.end(), s.spec.task) == tasks.end()) {
            tasks.push_back(s.spec.task);
        }
    }
    std::sort(tasks.begin(), tasks.end());
    return tasks;
}

} // namespace detail

// Per-task micro F1 over streams; mean F1 is the mean over tasks.
[[nodiscard]] inline std::vector<TaskScore> score_tasks(const std::vector<StreamSample>& corpus,
                                                        const std::vector<ActivationSequence>& decisions,
                                                        const SegmentMatchConfig& match = {}) {
    if (decisions.size() != corpus.size()) {
        throw InvalidArgument("score_tasks: one decision sequence per stream required");
    }
    std::vector<TaskScore> scores;
    for (const auto& task : detail::task_order(corpus)) {
        TaskScore ts;
        ts.task = task;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            if (corpus[i].spec.task != task) {
                continue;
            }
            ++ts.streams;
            ts.segments += match_segments(spans_from_decisions(decisions[i]), corpus[i].spec.target_events(), match);
            ts.frames += frame_counts(decisions[i], corpus[i].activation_gt);
        }
        ts.f1 = f1_from_counts(ts.segments);
        ts.frame_f1 = f1_from_counts(ts.frames);
        scores.push_back(ts);
    }
    return scores;
}

[[nodiscard]] inline double mean_f1(const std::vector<TaskScore>& tasks) {
    if (tasks.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (const auto& t : tasks) {
        s += t.f1;
    }
    return s / static_cast<double>(tasks.size());
}

[[nodiscard]] inline double mean_f1(const std::vector<StreamSample>& corpus,
                                    const std::vector<ActivationSequence>& decisions,
                                    const SegmentMatchConfig& match = {}) {
    return mean_f1(score_tasks(corpus, decisions, match));
}

[[nodiscard]] inline MetricReport build_report(const std::vector<StreamSample>& corpus,
                                               const std::vector<StreamOutcome>& outcomes, const EvalModel& model,
                                               const EvalOptions& opts) {
    MetricReport rep;
    rep.model = model.name;
    rep.config = {{"engine", to_json(opts.engine)}, {"iou_threshold", opts.match.iou_threshold}};
    if (model.kind == ModelKind::Oracle) {
        rep.config["oracle"] = {{"epsilon", model.oracle.epsilon},
                                {"boundary_blur", model.oracle.boundary_blur},
                                {"blur_strength", model.oracle.blur_strength},
                                {"jitter", model.oracle.jitter},
                                {"seed", model.oracle.seed}};
    }
    std::vector<ActivationSequence> decisions;
    for (const auto& o : outcomes) {
        decisions.push_back(o.decisions);
    }
    rep.tasks = score_tasks(corpus, decisions, opts.match);
    rep.mean_f1 = mean_f1(rep.tasks);
    SegmentCounts frames;
    double delay_sum = 0.0;
    double retention = 0.0;
    double denoise = 0.0;
    std::size_t calls = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto targets = corpus[i].spec.target_events();
        frames += frame_counts(decisions[i], corpus[i].activation_gt);
        rep.transitions += transition_histogram(decisions[i], targets);
        for (const auto& t : outcomes[i].triggers) {
            ++rep.triggers.issued;
            const bool inside = std::any_of(targets.begin(), targets.end(),
                                            [&](const EventSpan& e) { return t.time_s >= e.start_s && t.time_s <= e.end_s; });
            ++(inside ? rep.triggers.inside_event : rep.triggers.outside_event);
        }
        for (const auto& e : targets) {
            ++rep.triggers.events;
            for (const auto& t : outcomes[i].triggers) {
                if (t.time_s >= e.start_s && t.time_s <= e.end_s) {
                    ++rep.triggers.events_hit;
                    delay_sum += static_cast<double>(t.time_s - e.start_s);
                    break;
                }
            }
        }
        rep.latency.frames += outcomes[i].frames;
        retention += outcomes[i].retention_ms;
        denoise += outcomes[i].denoise_ms;
        calls += outcomes[i].predict_calls;
    }
    rep.frame_f1 = f1_from_counts(frames);
    rep.triggers.mean_onset_delay_s = rep.triggers.events_hit > 0 ? delay_sum / static_cast<double>(rep.triggers.events_hit) : 0.0;
    if (rep.latency.frames > 0) {
        const auto n = static_cast<double>(rep.latency.frames);
        rep.latency.retention_ms_per_frame = retention / n;
        rep.latency.denoise_ms_per_frame = denoise / n;
        rep.latency.frame_ms = (retention + denoise) / n;
        rep.latency.predict_calls_per_frame = static_cast<double>(calls) / n;
        rep.latency.ms_per_predict = calls > 0 ? (retention + denoise) / static_cast<double>(calls) : 0.0;
    }
    return rep;
}

struct EvalResult {
    MetricReport report;
    std::vector<StreamOutcome> streams; // corpus order
};

[[nodiscard]] inline EvalResult run_eval(const std::vector<StreamSample>& corpus, const EvalModel& model,
                                         const EvalOptions& opts = {}) {
    validate(opts.engine);
    validate(opts.match);
    if (corpus.empty()) {
        throw InvalidArgument("run_eval: empty corpus");
    }
    EvalResult res;
    res.streams.reserve(corpus.size());
    for (const auto& s : corpus) {
        res.streams.push_back(run_stream(s, model, opts));
    }
    res.report = build_report(corpus, res.streams, model, opts);
    return res;
}

// Mean F1 of within-stream shuffled decisions: mean and central 95% band.
struct PermutationBand {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t permutations = 0;
};

[[nodiscard]] inline PermutationBand permutation_baseline(const std::vector<StreamSample>& corpus,
                                                          const std::vector<ActivationSequence>& decisions,
                                                          std::size_t permutations, std::uint64_t seed,
                                                          const SegmentMatchConfig& match = {}) {
    if (permutations == 0) {
        throw InvalidArgument("permutation_baseline: need at least one permutation");
    }
    Rng rng(seed);
    std::vector<double> values;
    values.reserve(permutations);
    for (std::size_t p = 0; p < permutations; ++p) {
        auto shuffled = decisions;
        for (auto& d : shuffled) {
            std::shuffle(d.begin(), d.end(), rng);
        }
        values.push_back(mean_f1(corpus, shuffled, match));
    }
    std::sort(values.begin(), values.end());
    PermutationBand band;
    band.permutations = permutations;
    band.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(permutations);
    const auto idx = [&](double q) {
        return static_cast<std::size_t>(std::clamp(std::floor(q * static_cast<double>(permutations - 1) + 0.5), 0.0,
                                                   static_cast<double>(permutations - 1)));
    };
    band.lo = values[idx(0.025)];
    band.hi = values[idx(0.975)];
    return band;
}

// ---------------------------------------------------------------------------
// Report IO
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json report_json(const MetricReport& r) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back({{"task", t.task},
                         {"streams", t.streams},
                         {"f1", t.f1},
                         {"frame_f1", t.frame_f1},
                         {"tp", t.segments.tp},
                         {"fp", t.segments.fp},
                         {"fn", t.segments.fn}});
    }
    return {{"schema", "spanact.metric_report"},
            {"version", kReportVersion},
            {"model", r.model},
            {"config", r.config},
            {"tasks", tasks},
            {"mean_f1", r.mean_f1},
            {"frame_f1", r.frame_f1},
            {"transitions", to_json(r.transitions)},
            {"triggers",
             {{"issued", r.triggers.issued},
              {"inside_event", r.triggers.inside_event},
              {"outside_event", r.triggers.outside_event},
              {"events", r.triggers.events},
              {"events_hit", r.triggers.events_hit},
              {"mean_onset_delay_s", r.triggers.mean_onset_delay_s}}}};
}

[[nodiscard]] inline nlohmann::json timing_json(const MetricReport& r) {
    return {{"model", r.model},
            {"frames", r.latency.frames},
            {"retention_ms_per_frame", r.latency.retention_ms_per_frame},
            {"denoise_ms_per_frame", r.latency.denoise_ms_per_frame},
            {"frame_ms", r.latency.frame_ms},
            {"predict_calls_per_frame", r.latency.predict_calls_per_frame},
            {"ms_per_predict", r.latency.ms_per_predict}};
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << text;
}

inline void write_trigger_log(const std::string& path, const std::vector<StreamOutcome>& streams,
                              const std::string& model) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    for (const auto& s : streams) {
        for (const auto& t : s.triggers) {
            auto j = to_json(t, model);
            j["stream"] = s.id;
            out << j.dump() << '\n';
        }
    }
}

// Plot-ready histogram: region, x, count.
[[nodiscard]] inline std::string transitions_tsv(const TransitionHistogram& h) {
    std::string out = "region\tx\tcount\n";
    for (std::size_t i = 0; i < h.pre.size(); ++i) {
        out += "pre\t" + std::to_string(static_cast<int>(i) - static_cast<int>(kTransitionHorizon)) + "\t" +
               std::to_string(h.pre[i]) + "\n";
    }
    for (std::size_t i = 0; i < h.during.size(); ++i) {
        out += "during\t" + std::to_string(i * 100 / kDuringBins) + "\t" + std::to_string(h.during[i]) + "\n";
    }
    for (std::size_t i = 0; i < h.post.size(); ++i) {
        out += "post\t" + std::to_string(i + 1) + "\t" + std::to_string(h.post[i]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string arm;
    double mean_f1 = 0.0;
    TransitionHistogram transitions;
    double frame_ms = 0.0;
    double denoise_ms_per_frame = 0.0;
};

using ArmModels = std::map<std::string, const Denoiser*>;

inline const std::vector<std::string>& ablation_suites() {
    static const std::vector<std::string> names{"masking", "duplication", "remasking", "tau_sweep", "k_sweep"};
    return names;
}

// Model arms each suite needs.
[[nodiscard]] inline std::vector<std::string> ablation_model_arms(const std::string& suite) {
    if (suite == "masking") {
        return {"independent_only", "span_only", "span_full", "mixture"};
    }
    if (suite == "duplication") {
        return {"duplicate", "no_duplicate"};
    }
    if (suite == "remasking" || suite == "tau_sweep" || suite == "k_sweep") {
        return {"mixture"};
    }
    throw ConfigError("unknown ablation suite '" + suite + "'");
}

[[nodiscard]] inline MaskingMix masking_arm_mix(const std::string& arm) {
    if (arm == "independent_only") {
        return MaskingMix::independent_only();
    }
    if (arm == "span_only") {
        return MaskingMix::span_only();
    }
    if (arm == "span_full") {
        return MaskingMix::span_full();
    }
    return MaskingMix::mixture();
}

inline const std::vector<double>& tau_sweep_values() {
    static const std::vector<double> v{0.0, 0.25, 0.5, 0.75, 0.85, 1.0};
    return v;
}

inline const std::vector<std::size_t>& k_sweep_values() {
    static const std::vector<std::size_t> v{1, 2, 4, 8, 16};
    return v;
}

[[nodiscard]] inline std::vector<AblationRow> run_ablation(const std::string& suite,
                                                           const std::vector<StreamSample>& corpus,
                                                           const ArmModels& models, const EvalOptions& base,
                                                           std::size_t timing_repeats = 1) {
    auto need = [&](const std::string& arm) -> const Denoiser& {
        auto it = models.find(arm);
        if (it == models.end() || it->second == nullptr) {
            throw ConfigError("ablation '" + suite + "' is missing the model for arm '" + arm + "'");
        }
        return *it->second;
    };
    auto row = [&](const std::string& arm, const Denoiser& d, const EvalOptions& opts, std::size_t repeats) {
        AblationRow r;
        r.arm = arm;
        r.frame_ms = std::numeric_limits<double>::infinity();
        r.denoise_ms_per_frame = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < std::max<std::size_t>(1, repeats); ++i) {
            const auto res = run_eval(corpus, EvalModel::make_neural(d, arm), opts);
            r.mean_f1 = res.report.mean_f1;
            r.transitions = res.report.transitions;
            r.frame_ms = std::min(r.frame_ms, res.report.latency.frame_ms);
            r.denoise_ms_per_frame = std::min(r.denoise_ms_per_frame, res.report.latency.denoise_ms_per_frame);
        }
        return r;
    };
    std::vector<AblationRow> rows;
    if (suite == "masking" || suite == "duplication") {
        for (const auto& arm : ablation_model_arms(suite)) {
            rows.push_back(row(arm, need(arm), base, 1));
        }
    } else if (suite == "remasking") {
        const auto& d = need("mixture");
        auto opts = base;
        opts.engine.remask = RemaskMode::Selective;
        rows.push_back(row("selective", d, opts, 1));
        opts.engine.remask = RemaskMode::LastOnly;
        rows.push_back(row("last_only", d, opts, 1));
    } else if (suite == "tau_sweep") {
        const auto& d = need("mixture");
        for (double tau : tau_sweep_values()) {
            auto opts = base;
            opts.engine.tau = tau;
            std::ostringstream name;
            name << "tau=" << tau;
            rows.push_back(row(name.str(), d, opts, 1));
        }
    } else if (suite == "k_sweep") {
        const auto& d = need("mixture");
        for (std::size_t k : k_sweep_values()) {
            auto opts = base;
            opts.engine.steps = k;
            rows.push_back(row("K=" + std::to_string(k), d, opts, timing_repeats));
        }
    } else {
        throw ConfigError("unknown ablation suite '" + suite + "'");
    }
    return rows;
}

[[nodiscard]] inline std::string ablation_csv(const std::vector<AblationRow>& rows, bool with_timing) {
    std::ostringstream out;
    out.precision(10);
    out << "arm,mean_f1,transitions_pre,transitions_during,transitions_post,events";
    if (with_timing) {
        out << ",frame_ms,denoise_ms_per_frame";
    }
    out << '\n';
    for (const auto& r : rows) {
        out << r.arm << ',' << r.mean_f1 << ',' << r.transitions.pre_total() << ',' << r.transitions.during_total()
            << ',' << r.transitions.post_total() << ',' << r.transitions.events;
        if (with_timing) {
            out << ',' << r.frame_ms << ',' << r.denoise_ms_per_frame;
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

[[nodiscard]] inline SuiteConfig suite_config_from_json(const nlohmann::json& j, SuiteConfig c = {}) {
    c.streams = j.value("streams", c.streams);
    c.tasks = j.value("tasks", c.tasks);
    c.min_length = j.value("min_length", c.min_length);
    c.max_length = j.value("max_length", c.max_length);
    c.num_queries = j.value("num_queries", c.num_queries);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    if (j.contains("snr")) {
        const auto& s = j.at("snr");
        c.snr = s.is_string() ? std::numeric_limits<double>::infinity() : s.get<double>();
    }
    c.ramp = j.value("ramp", c.ramp);
    c.distractor_rate = j.value("distractor_rate", c.distractor_rate);
    c.template_seed = j.value("template_seed", c.template_seed);
    c.seed = j.value("seed", c.seed);
    validate(c);
    return c;
}

[[nodiscard]] inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.clip = j.value("clip", c.clip);
    if (j.contains("optimizer")) {
        const auto o = j.at("optimizer").get<std::string>();
        if (o == "sgd") {
            c.optimizer = OptimizerKind::Sgd;
        } else if (o == "adam") {
            c.optimizer = OptimizerKind::Adam;
        } else {
            throw ConfigError("unknown optimizer '" + o + "'");
        }
    }
    if (j.contains("masking")) {
        c.mix.strategies.clear();
        for (const auto& s : j.at("masking")) {
            c.mix.strategies.push_back(masking_strategy_from_string(s.get<std::string>()));
        }
    }
    c.margin = j.value("margin", c.margin);
    c.window = j.value("W", c.window);
    c.p_max = j.value("p_max", c.p_max);
    c.seed = j.value("seed", c.seed);
    validate(c);
    return c;
}

} // namespace spanact
